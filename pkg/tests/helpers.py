"""Shared test utilities: finite differences and naive reference loops."""

from __future__ import annotations

import numpy as np

from nilmkit.tensor import Tensor


def finite_diff(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Elementwise relative error with an absolute floor on the denominator."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(build_loss, arrays: dict[str, np.ndarray], h: float = 1e-4) -> float:
    """Compare taped gradients against central differences.

    ``build_loss`` maps a dict of Tensors (same keys as ``arrays``) to a
    scalar Tensor. Returns the worst relative error over all inputs.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = build_loss(tensors)
    loss.backward()
    worst = 0.0
    for key, arr in arrays.items():
        def scalar_f(x, key=key):
            probe = {k: Tensor(x if k == key else v) for k, v in arrays.items()}
            return build_loss(probe).item()

        fd = finite_diff(scalar_f, arr.copy(), h=h)
        assert tensors[key].grad is not None, f"no gradient reached input {key!r}"
        worst = max(worst, max_rel_err(tensors[key].grad, fd))
    return worst


def conv1d_loop(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None,
                dilation: int, padding: str) -> np.ndarray:
    """Naive O(n*k) reference convolution for [C_in, T] inputs."""
    c_out, c_in, ksz = k.shape
    t = x.shape[-1]
    span = (ksz - 1) * dilation + 1
    if padding == "same":
        pad = (ksz - 1) * dilation // 2
        xp = np.pad(x, [(0, 0), (pad, pad)])
        t_out = t
    else:
        xp = x
        t_out = t - span + 1
    out = np.zeros((c_out, t_out))
    for o in range(c_out):
        for pos in range(t_out):
            acc = 0.0
            for c in range(c_in):
                for j in range(ksz):
                    acc += k[o, c, j] * xp[c, pos + j * dilation]
            out[o, pos] = acc
        if bias is not None:
            out[o] += bias[o]
    return out
