import numpy as np
import pytest

from splatloc import tensor as T


def numeric_grad(fn, x, eps=1e-6):
    """Central finite differences of a scalar-valued fn at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = fn(x)
        flat[i] = old - eps
        fm = fn(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_gradients(build_loss, arrays, rtol=1e-4, eps=1e-6):
    """Compare autodiff grads of build_loss(*tensors) against finite differences.

    `arrays`: list of float64 numpy arrays; all get requires_grad. Returns
    the worst relative error seen.
    """
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    T.backward(loss, leaves=tensors)
    worst = 0.0
    for k, t in enumerate(tensors):
        def fn(x, k=k):
            probe = [T.Tensor(a.copy()) for a in arrays]
            probe[k] = T.Tensor(x)
            return build_loss(*probe).item()

        num = numeric_grad(fn, arrays[k], eps)
        denom = np.maximum(np.abs(num), 1.0)
        rel = np.abs(t.grad - num) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert rel.max() < rtol, f"arg {k}: rel err {rel.max():.2e} (autodiff {t.grad.ravel()[:3]}, numeric {num.ravel()[:3]})"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
