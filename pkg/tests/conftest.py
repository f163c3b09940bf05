import numpy as np
import pytest
import torch

from rfckm.csi import CsiTensor


def random_csi(rng, shape=(4, 2, 3)):
    return CsiTensor(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def central_difference(fn, tensors, step=1e-6, indices=None):
    """Numerical gradient of scalar ``fn()`` w.r.t. entries of ``tensors`` (modified in place).

    ``indices`` optionally restricts each tensor to a list of flat indices.
    Returns a list of flat numpy arrays, one per tensor.
    """
    grads = []
    for k, t in enumerate(tensors):
        flat = t.data.view(-1)
        idx = range(flat.numel()) if indices is None else indices[k]
        g = np.zeros(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + step
            up = float(fn())
            flat[i] = orig - step
            down = float(fn())
            flat[i] = orig
            g[n] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def param_gradient_error(rng, module, inputs, n_check=12):
    """Relative error between autograd and central differences for a random
    linear functional of ``module(*inputs)``, over sampled parameter entries."""
    w = torch.tensor(rng.standard_normal(tuple(module(*inputs).shape)), dtype=torch.float64)

    def loss():
        return (module(*inputs) * w).sum()

    module.zero_grad()
    loss().backward()
    params = list(module.parameters())
    picks = [rng.choice(p.numel(), size=min(n_check, p.numel()), replace=False) for p in params]
    analytic = np.concatenate([p.grad.reshape(-1)[idx].numpy() for p, idx in zip(params, picks)])
    with torch.no_grad():
        numeric = np.concatenate(central_difference(loss, params, indices=picks))
    return rel_err(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield
