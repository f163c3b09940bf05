import math

import numpy as np
import pytest
import torch

from rfckm.renderer import (
    RadianceOutputs, absorption, aggregating_coeff, contributions, render_channel, render_received,
    render_torch, transmittance,
)
from rfckm.sampler import make_grid

from conftest import central_difference, rel_err


def random_outputs(rng, shape, scale=1.0):
    sigma = rng.exponential(scale, shape)
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return RadianceOutputs(sigma, coeffs)


def random_grid(rng, n_a, n_s):
    g = make_grid(n_a, n_s, 0.5, 5.0)
    # nonuniform intervals exercise the per-radiator delta handling
    return type(g)(g.rays, rng.uniform(0.1, 1.0, (n_a, n_s)), 0.5, 5.0)


def scalar_oracle(grid, out):
    """Entry-by-entry loops over every ray and radiator."""
    n_a, n_s, n_c, n_r, n_t = out.sigma.shape
    h = np.zeros((n_c, n_r, n_t), complex)
    for c in range(n_c):
        for r in range(n_r):
            for t in range(n_t):
                total = 0j
                for i in range(n_a):
                    trans = 1.0
                    for j in range(n_s):
                        a = 1.0 - math.exp(-out.sigma[i, j, c, r, t] * grid.intervals[i, j])
                        total += a * trans * out.coeffs[i, j, c, r, t]
                        trans *= 1.0 - a
                h[c, r, t] = total
    return h


def test_absorption_cases():
    assert absorption(0.0, 1.0) == 0.0
    assert absorption(math.log(2), 1.0) == pytest.approx(0.5, abs=1e-15)
    assert absorption(20.0, 1.0) == pytest.approx(1 - math.exp(-20), abs=1e-15)
    assert absorption(20.0, 1.0) < 1.0
    with pytest.raises(ValueError):
        absorption(-1.0, 1.0)
    with pytest.raises(ValueError):
        absorption(1.0, 0.0)


def test_transmittance_cases():
    np.testing.assert_array_equal(transmittance([0, 0, 0]), [1, 1, 1])
    np.testing.assert_allclose(transmittance([0.5, 0.5, 0.5]), [1, 0.5, 0.25])
    t = transmittance([0.2, 0.999, 0.1, 0.3])
    assert np.all(t[2:] <= 0.001)
    assert np.all(np.diff(t) <= 0)
    with pytest.raises(ValueError):
        transmittance([0.2, 1.0])
    with pytest.raises(ValueError):
        transmittance([-0.1])


def test_single_radiator_is_alpha_times_coeff(rng):
    grid = make_grid(1, 1, 0.0, 2.0)
    out = random_outputs(rng, (1, 1, 2, 2, 2))
    alpha = -np.expm1(-out.sigma[0, 0] * 2.0)
    np.testing.assert_allclose(render_channel(grid, out).data, alpha * out.coeffs[0, 0], rtol=1e-15)


def test_zero_sigma_renders_zero(rng):
    grid = make_grid(3, 4)
    shape = (3, 4, 2, 1, 2)
    out = RadianceOutputs(np.zeros(shape), rng.standard_normal(shape) + 0j)
    assert np.all(render_channel(grid, out).data == 0)


def test_matches_scalar_oracle_small(rng):
    grid = random_grid(rng, 3, 4)
    out = random_outputs(rng, (3, 4, 2, 2, 2))
    assert rel_err(render_channel(grid, out).data, scalar_oracle(grid, out)) < 1e-12


@pytest.mark.parametrize("n_a,n_s", [(1, 64), (64, 1), (8, 8), (5, 7), (16, 4)])
def test_matches_scalar_oracle_up_to_64_radiators(rng, n_a, n_s):
    grid = random_grid(rng, n_a, n_s)
    out = random_outputs(rng, (n_a, n_s, 2, 1, 2), scale=0.7)
    assert rel_err(render_channel(grid, out).data, scalar_oracle(grid, out)) < 1e-12


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        render_channel(make_grid(2, 3), random_outputs(rng, (2, 4, 1, 1, 1)))
    with pytest.raises(ValueError):
        RadianceOutputs(np.ones((1, 1, 1, 1, 1)), np.ones((1, 1, 1, 1, 2)))
    with pytest.raises(ValueError):
        RadianceOutputs(-np.ones((1, 1, 1, 1, 1)), np.ones((1, 1, 1, 1, 1)))


def test_linear_in_coefficients(rng):
    grid = random_grid(rng, 3, 4)
    shape = (3, 4, 2, 2, 3)
    o1, o2 = random_outputs(rng, shape), random_outputs(rng, shape)
    a, b = 1.7, -0.4
    mixed = RadianceOutputs(o1.sigma, a * o1.coeffs + b * o2.coeffs)
    o2s = RadianceOutputs(o1.sigma, o2.coeffs)
    lhs = render_channel(grid, mixed).data
    rhs = a * render_channel(grid, o1).data + b * render_channel(grid, o2s).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-13)


def test_ray_additivity(rng):
    grid = random_grid(rng, 4, 3)
    out = random_outputs(rng, (4, 3, 2, 1, 2))
    total = np.zeros((2, 1, 2), complex)
    for i in range(4):
        sub = type(grid)(type(grid.rays)(grid.rays.directions[i:i + 1]), grid.intervals[i:i + 1], 0.5, 5.0)
        total += render_channel(sub, RadianceOutputs(out.sigma[i:i + 1], out.coeffs[i:i + 1])).data
    np.testing.assert_allclose(render_channel(grid, out).data, total, rtol=1e-12)


def test_occlusion_monotone(rng):
    grid = random_grid(rng, 2, 5)
    out = random_outputs(rng, (2, 5, 1, 1, 1))
    tau = out.sigma * grid.intervals[:, :, None, None, None]
    base = transmittance(-np.expm1(-tau), axis=1)
    sigma = out.sigma.copy()
    sigma[1, 2] += 3.0
    more = transmittance(-np.expm1(-sigma * grid.intervals[:, :, None, None, None]), axis=1)
    assert np.all(more[1, 3:] <= base[1, 3:])
    np.testing.assert_array_equal(more[1, :3], base[1, :3])
    np.testing.assert_array_equal(more[0], base[0])


def test_contributions_sum_to_channel(rng):
    grid = random_grid(rng, 2, 3)
    out = random_outputs(rng, (2, 3, 2, 1, 1))
    np.testing.assert_allclose(contributions(grid, out).sum(axis=(0, 1)), render_channel(grid, out).data)


def test_render_received(rng):
    grid = random_grid(rng, 2, 3)
    out = random_outputs(rng, (2, 3, 4, 2, 3))
    h = scalar_oracle(grid, out)
    x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    np.testing.assert_allclose(render_received(grid, out, x), np.stack([hc @ x for hc in h]), rtol=1e-12)
    assert np.all(render_received(grid, out, np.zeros(3)) == 0)
    siso = random_outputs(rng, (2, 3, 4, 1, 1))
    y = render_received(grid, siso, np.array([2.0 - 1j]))
    np.testing.assert_allclose(y / (2.0 - 1j), render_channel(grid, siso).data[:, :, 0], rtol=1e-12)
    with pytest.raises(ValueError):
        render_received(grid, out, np.array([np.inf, 0, 0]))


def test_aggregating_coeff(rng):
    u = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    h = np.outer(u, v.conj())
    x = (0.3 - 2j) * v
    np.testing.assert_allclose(aggregating_coeff(h @ x, x), h, rtol=1e-12)
    assert np.all(aggregating_coeff(np.zeros(2), x) == 0)
    s = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    c = aggregating_coeff(s, x, power=2.5)
    assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(s) * np.linalg.norm(x) / 2.5)
    with pytest.raises(ValueError):
        aggregating_coeff(s, np.zeros(3))


def _torch_inputs(rng, shape):
    out = random_outputs(rng, shape)
    return (torch.tensor(out.sigma, requires_grad=True), torch.tensor(out.coeffs.real, requires_grad=True),
            torch.tensor(out.coeffs.imag, requires_grad=True), out)


def test_torch_matches_numpy(rng):
    grid = random_grid(rng, 3, 4)
    sigma, re, im, out = _torch_inputs(rng, (3, 4, 2, 2, 2))
    r, i = render_torch(sigma, re, im, torch.tensor(grid.intervals))
    h = render_channel(grid, out).data
    np.testing.assert_allclose(r.detach().numpy() + 1j * i.detach().numpy(), h, rtol=1e-12)
    batched = render_torch(sigma[None].expand(2, -1, -1, -1, -1, -1), re[None].expand(2, *re.shape),
                           im[None].expand(2, *im.shape), torch.tensor(grid.intervals))[0]
    assert batched.shape == (2, 2, 2, 2)


def test_torch_gradients_match_finite_differences(rng):
    grid = random_grid(rng, 2, 3)
    sigma, re, im, _ = _torch_inputs(rng, (2, 3, 2, 1, 2))
    delta = torch.tensor(grid.intervals)
    w_re = torch.tensor(rng.standard_normal((2, 1, 2)))
    w_im = torch.tensor(rng.standard_normal((2, 1, 2)))

    def loss():
        r, i = render_torch(sigma, re, im, delta)
        return (w_re * r + w_im * i).sum()

    loss().backward()
    analytic = [sigma.grad.numpy().ravel(), re.grad.numpy().ravel(), im.grad.numpy().ravel()]
    with torch.no_grad():
        numeric = central_difference(loss, [sigma, re, im], step=1e-6)
    for a, n in zip(analytic, numeric):
        assert rel_err(a, n) < 1e-5
