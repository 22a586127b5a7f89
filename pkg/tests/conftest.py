"""Shared fixtures and independent oracles.

The oracles here are deliberately written as direct, slow transliterations
of the defining formulas (scalar Hamilton loops, naive windowed statistics,
central finite differences) so they stay independent of the vectorized
implementations they check.
"""

import numpy as np
import pytest

from quatpaint.quat import Quaternion, hamilton
from quatpaint.runtime import tune_malloc_for_large_arrays

tune_malloc_for_large_arrays()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# ---------------------------------------------------------------------------
# scalar quaternion convolution oracle
# ---------------------------------------------------------------------------

def scalar_qconv(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Direct nested-loop evaluation: out[co, r1, r2] = sum over ci, m, n of
    the Hamilton product k[co, ci, m, n] * x[ci, r1*s + m - p, r2*s + n - p]."""
    _, ci_n, h, w = x.shape
    _, co_n, _, kh, kw = k.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((4, co_n, oh, ow))
    for co in range(co_n):
        for r1 in range(oh):
            for r2 in range(ow):
                acc = Quaternion(0.0, 0.0, 0.0, 0.0)
                for ci in range(ci_n):
                    for m in range(kh):
                        for n in range(kw):
                            kq = Quaternion(*k[:, co, ci, m, n])
                            xq = Quaternion(*xp[:, ci, r1 * stride + m, r2 * stride + n])
                            acc = acc + hamilton(kq, xq)
                out[:, co, r1, r2] = (acc.w, acc.x, acc.y, acc.z)
    return out


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def central_diff(f, arr: np.ndarray, idx, h: float = 1e-6) -> float:
    """(f(x+h) - f(x-h)) / 2h at one entry of arr, restoring arr afterwards."""
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_grad_entries(f, arr: np.ndarray, grad: np.ndarray, rng,
                       n_samples: int = 12, tol: float = 1e-5, h: float = 1e-6):
    """Spot-check n random entries of an analytic gradient against central
    differences of the scalar function f (which reads arr in place)."""
    idxs = {tuple(rng.integers(0, d) for d in arr.shape) for _ in range(n_samples)}
    for idx in idxs:
        fd = central_diff(f, arr, idx, h)
        assert rel_err(fd, grad[idx]) <= tol, \
            f"grad mismatch at {idx}: fd={fd!r} analytic={grad[idx]!r}"


# ---------------------------------------------------------------------------
# naive SSIM reference
# ---------------------------------------------------------------------------

def naive_ssim(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5,
               c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Double loop over window positions; weighted moments computed per
    window from scratch. a, b are 2-D [0,1] arrays."""
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    w = w / w.sum()
    h_, w_ = a.shape
    vals = []
    for i in range(h_ - size + 1):
        for j in range(w_ - size + 1):
            wa = a[i:i + size, j:j + size]
            wb = b[i:i + size, j:j + size]
            mx, my = (w * wa).sum(), (w * wb).sum()
            sxx = (w * wa * wa).sum() - mx * mx
            syy = (w * wb * wb).sum() - my * my
            sxy = (w * wa * wb).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * sxy + c2))
                        / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# scalar Adam reference
# ---------------------------------------------------------------------------

def scalar_adam_trajectory(theta0: float, grads, lr: float,
                           b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """Hand-rolled single-parameter Adam; returns the value after each step."""
    theta, m, v = theta0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(theta)
    return out
