"""Pure-numpy kernel backend (im2col + BLAS matmul)."""

import numpy as np


def _im2col(xp, kh, kw, sh, sw, ho, wo):
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx] = xp[:, :, ky : ky + sh * ho : sh, kx : kx + sw * wo : sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d_forward(x, w, sh, sw, ph, pw, ho, wo):
    n, c, _, _ = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    out = np.matmul(w.reshape(f, c * kh * kw), cols)
    return np.ascontiguousarray(out.reshape(n, f, ho, wo))


def conv2d_backward(x, w, dout, sh, sw, ph, pw):
    n, c, h, ww = x.shape
    f, _, kh, kw = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    dmat = dout.reshape(n, f, ho * wo)

    dw = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(f, c, kh, kw)

    dcols = np.matmul(w.reshape(f, c * kh * kw).T, dmat)
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros_like(xp)
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, :, ky : ky + sh * ho : sh, kx : kx + sw * wo : sw] += dcols[:, :, ky, kx]
    if ph or pw:
        dxp = dxp[:, :, ph : ph + h, pw : pw + ww]
    return np.ascontiguousarray(dxp), np.ascontiguousarray(dw)


def add_sinc_taps(rir, delays, gains, half_width):
    """Accumulate Hann-windowed sinc taps at fractional sample delays."""
    length = rir.shape[0]
    for d, g in zip(delays, gains):
        n0 = max(int(np.floor(d - half_width)) + 1, 0)
        n1 = min(int(np.ceil(d + half_width)) - 1, length - 1)
        if n1 < n0:
            continue
        t = np.arange(n0, n1 + 1, dtype=np.float64) - d
        window = 0.5 * (1.0 + np.cos(np.pi * t / half_width))
        rir[n0 : n1 + 1] += g * np.sinc(t) * window
    return rir
