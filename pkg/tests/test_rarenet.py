import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch import nn

from rfckm.adm import observe_partial_downlink
from rfckm.csi import CsiTensor, Record, pack
from rfckm.rarenet import (
    ChannelPredictor, ConvBlock, FrequencyAttention, ModelConfig, RadiatorNet, ResidualBlock, conv3,
    group_count, predict_batch, predict_downlink,
)
from rfckm.training import nmse_loss, tensorize

from conftest import central_difference, param_gradient_error, random_csi, rel_err

FREQS = np.array([6.7635, 6.764, 6.7645, 6.765, 6.7655, 6.766, 6.7665, 6.767]) * 1e9


def input_gradient_error(rng, fn, x, n_check=12):
    x = x.clone().requires_grad_()
    w = torch.tensor(rng.standard_normal(tuple(fn(x).shape)), dtype=torch.float64)
    (fn(x) * w).sum().backward()
    idx = rng.choice(x.numel(), size=min(n_check, x.numel()), replace=False)
    with torch.no_grad():
        num = central_difference(lambda: (fn(x) * w).sum(), [x], indices=[idx])[0]
    return rel_err(x.grad.reshape(-1)[idx].numpy(), num)


def randomize(module, scale=0.3, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def shapes(seed):
    rng = np.random.default_rng(seed)
    return [(int(rng.integers(1, 4)), int(rng.integers(1, 4)) * 2, int(rng.integers(2, 4)), int(rng.integers(1, 5)))
            for _ in range(5)]


LAYERS = {
    "conv": lambda c: conv3(c, c + 2),
    "conv_block": lambda c: ConvBlock(c, 2 * c),
    "residual_same": lambda c: ResidualBlock(c, c),
    "residual_project": lambda c: ResidualBlock(c, c + 2),
    "group_norm": lambda c: nn.GroupNorm(group_count(c), c),
}


@pytest.mark.parametrize("name", sorted(LAYERS))
def test_layer_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    for m, c, r, t in shapes(len(name)):
        torch.manual_seed(m * 7 + c)
        layer = LAYERS[name](c).double()
        if name == "group_norm":
            randomize(layer, seed=c)
        x = torch.tensor(rng.standard_normal((m, c, r, t)))
        assert param_gradient_error(rng, layer, (x,)) < 1e-5
        assert input_gradient_error(rng, layer, x) < 1e-5


@pytest.mark.parametrize("fn", [F.gelu, F.softplus], ids=["gelu", "softplus"])
def test_pointwise_gradients(fn):
    rng = np.random.default_rng(5)
    for m, c, r, t in shapes(3):
        x = torch.tensor(rng.standard_normal((m, c, r, t)) * 3)
        assert input_gradient_error(rng, fn, x) < 1e-5


def test_frequency_attention_gradients():
    rng = np.random.default_rng(9)
    freqs = torch.tensor(FREQS / 1e9)
    for k, (m, mult, r, t) in enumerate(shapes(11)):
        n_c = int(rng.integers(1, 5))
        fa = randomize(FrequencyAttention(mult * n_c, n_c).double(), seed=k)
        f = freqs[:n_c]
        x = torch.tensor(rng.standard_normal((m + 1, mult * n_c, r, t)))
        fn = lambda inp: fa(inp, f)
        assert input_gradient_error(rng, fn, x) < 1e-5
        assert param_gradient_error(rng, fa, (x, f)) < 1e-5


def test_frequency_attention_identity_and_sensitivity(rng):
    fa = FrequencyAttention(16, 8).double()
    x = torch.tensor(rng.standard_normal((5, 16, 1, 8)))
    f = torch.tensor(FREQS / 1e9)
    out = fa(x, f)
    assert out.shape == x.shape
    assert torch.equal(out, x)
    randomize(fa, seed=3)
    f2 = f.clone()
    f2[3] += 0.01
    assert (fa(x, f2) - fa(x, f)).abs().max() > 0
    with pytest.raises(ValueError):
        fa(x, f[:4])


def test_radiator_net_shapes_and_nonnegative_sigma(rng):
    net = RadiatorNet(8).double()
    randomize(net, scale=1.0)
    q = torch.tensor(rng.standard_normal((32, 16, 1, 8)) * 5)
    ang = torch.tensor(rng.standard_normal((32, 3, 1, 8)))
    sigma, coeff = net(q, ang, torch.tensor(FREQS / 1e9))
    assert sigma.shape == (32, 8, 1, 8) and coeff.shape == (32, 16, 1, 8)
    assert torch.all(sigma >= 0)
    with pytest.raises(ValueError):
        net(q[:, :8], ang, torch.tensor(FREQS / 1e9))


def test_radiator_permutation_equivariance(rng):
    torch.manual_seed(1)
    net = randomize(RadiatorNet(4).double(), seed=2)
    q = torch.tensor(rng.standard_normal((6, 8, 2, 3)))
    ang = torch.tensor(rng.standard_normal((6, 3, 2, 3)))
    f = torch.tensor(FREQS[:4] / 1e9)
    perm = torch.tensor([0, 4, 2, 3, 1, 5])
    with torch.no_grad():
        s, c = net(q, ang, f)
        sp, cp = net(q[perm], ang[perm], f)
    np.testing.assert_allclose(sp.numpy(), s[perm].numpy(), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(cp.numpy(), c[perm].numpy(), rtol=1e-12, atol=1e-14)


def small_config(**kw):
    base = dict(n_c=4, n_r=1, n_t=2, n_a=4, n_s=3, r_min=0.5, r_max=10.0, subcarrier_stride=2, antenna_stride=1)
    base.update(kw)
    return ModelConfig(**base)


def test_parameter_count_depends_only_on_config():
    torch.manual_seed(0)
    a = ChannelPredictor(small_config(), FREQS[:4])
    torch.manual_seed(1)
    b = ChannelPredictor(small_config(), FREQS[:4])
    count = lambda m: sum(p.numel() for p in m.parameters())
    assert count(a) == count(b)
    assert count(ChannelPredictor(small_config(n_t=4), FREQS[:4])) == count(a)
    assert count(ChannelPredictor(small_config(n_c=8), FREQS)) != count(a)


def _sample(rng, cfg):
    h_up = random_csi(rng, (cfg.n_c, cfg.n_r, cfg.n_t))
    h_down = random_csi(rng, (cfg.n_c, cfg.n_r, cfg.n_t))
    return h_up, observe_partial_downlink(h_down, cfg.pattern), h_down


def test_zero_coefficient_head_predicts_zero(rng):
    cfg = small_config()
    model = ChannelPredictor(cfg, FREQS[:4])
    with torch.no_grad():
        model.net.coeff_head.weight.zero_()
        model.net.coeff_head.bias.zero_()
    h_up, part, _ = _sample(rng, cfg)
    assert np.all(predict_downlink(model, h_up, part).data == 0)


def test_prediction_deterministic_and_batch_consistent(rng):
    torch.manual_seed(4)
    cfg = small_config()
    model = ChannelPredictor(cfg, FREQS[:4])
    samples = [_sample(rng, cfg) for _ in range(3)]
    one = predict_downlink(model, samples[0][0], samples[0][1])
    assert one == predict_downlink(model, samples[0][0], samples[0][1])
    batch = predict_batch(model, [s[0] for s in samples], [s[1] for s in samples], batch_size=2)
    assert len(batch) == 3
    np.testing.assert_allclose(batch[0].data, one.data, rtol=1e-5, atol=1e-7)


def test_output_scales_with_uplink(rng):
    torch.manual_seed(2)
    cfg = small_config()
    model = ChannelPredictor(cfg, FREQS[:4])
    h_up, part, _ = _sample(rng, cfg)
    base = predict_downlink(model, h_up, part).data
    scaled = predict_downlink(model, CsiTensor(3 * h_up.data), CsiTensor(3 * part.data)).data
    np.testing.assert_allclose(scaled, 3 * base, rtol=1e-5, atol=1e-7)


def test_full_pipeline_gradient(rng):
    torch.manual_seed(7)
    cfg = small_config()
    model = randomize(ChannelPredictor(cfg, FREQS[:4]).double(), scale=0.2, seed=7)
    h_up, part, _ = _sample(rng, cfg)
    up = torch.tensor(pack(h_up))[None]
    pt = torch.tensor(pack(part))[None]

    def loss():
        re, im = model(up, pt)
        return (re ** 2 + im ** 2).sum()

    model.zero_grad()
    loss().backward()
    params = list(model.parameters())
    sizes = np.array([p.numel() for p in params])
    flat = rng.choice(sizes.sum(), size=20, replace=False)
    owner = np.searchsorted(np.cumsum(sizes), flat, side="right")
    offset = flat - np.concatenate([[0], np.cumsum(sizes)])[owner]
    picks = [offset[owner == k] for k in range(len(params))]
    analytic = np.concatenate([p.grad.reshape(-1)[idx].numpy() for p, idx in zip(params, picks)])
    with torch.no_grad():
        numeric = np.concatenate(central_difference(loss, params, indices=picks))
    assert rel_err(analytic, numeric) < 1e-4


def test_small_step_decreases_loss(rng):
    torch.manual_seed(3)
    cfg = small_config()
    model = ChannelPredictor(cfg, FREQS[:4]).double()
    recs = []
    for _ in range(2):
        h_up, _, h_down = _sample(rng, cfg)
        recs.append(Record(0, np.zeros(3), h_up, h_down))
    up, part, t_re, t_im = (x.double() for x in tensorize(recs, cfg.pattern))
    opt = torch.optim.Adam(model.parameters(), lr=1e-7)

    def batch_loss():
        return nmse_loss(*model(up, part), t_re, t_im)

    before = batch_loss()
    opt.zero_grad()
    before.backward()
    opt.step()
    with torch.no_grad():
        assert batch_loss().item() < before.item()
