"""Independent float64 reference computations used as test oracles.

These deliberately avoid the package's own code paths: convolution uses
sliding windows + einsum, reductions use plain numpy in float64.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_ref(x, w, stride=1, padding=0):
    """float64 NCHW cross-correlation via sliding windows."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    kh, kw = w.shape[2], w.shape[3]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return np.einsum("nchwkl,fckl->nfhw", windows, w)


def upsample2_ref(x):
    return np.repeat(np.repeat(np.asarray(x, dtype=np.float64), 2, axis=2), 2, axis=3)


def finite_diff_grad(fn, x, h=1e-3):
    """Central finite differences of scalar fn at float64 array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
