"""Real-plane block engine for quaternion convolution.

One quaternion convolution is a 4x4 signed block of real cross-correlations:
the output component planes are signed sums of plane-by-plane convolutions,
with the sign/permutation pattern of left Hamilton multiplication,

        [ K0 -K1 -K2 -K3 ]
    A = [ K1  K0 -K3  K2 ]
        [ K2  K3  K0 -K1 ]
        [ K3 -K2  K1  K0 ]

This module flattens that block structure into per-tap (4*O, 4*I) real
matrices and evaluates a convolution as one GEMM over a K-major patch
matrix ("im2row": rows ordered tap-then-plane-channel, gathered with nine
strided assignments, no transposes). A stride-1 layer whose patch matrix
would blow the byte budget falls back to a tap loop of full-plane GEMMs.
Transposed convolution is the exact adjoint map, realized in scatter form.

Everything here works on bare float plane arrays of shape (4, C, H, W) and
preserves their dtype (float64 throughout the library; float32 exists as an
opt-in speed lane for long optimization runs). The quaternion-level API
lives in `layers`.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError, ShapeMismatch

# Component index and sign of each cell of the Hamilton block matrix A,
# indexed [out_component][in_component].
COMP = ((0, 1, 2, 3),
        (1, 0, 3, 2),
        (2, 3, 0, 1),
        (3, 2, 1, 0))
SIGN = ((1.0, -1.0, -1.0, -1.0),
        (1.0, 1.0, -1.0, 1.0),
        (1.0, 1.0, 1.0, -1.0),
        (1.0, -1.0, 1.0, 1.0))

# Upper bound on any single patch/column slab, in bytes.
PATCH_BUDGET = 340 * 2**20


def conv_output_size(extent: int, kernel: int, stride: int, padding: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise GeometryError(
            f"convolution output extent {out} for input {extent}, "
            f"kernel {kernel}, stride {stride}, padding {padding}")
    return out


def deconv_output_size(extent: int, kernel: int, stride: int, padding: int,
                       output_padding: int) -> int:
    if not 0 <= output_padding < stride:
        raise GeometryError(
            f"output_padding {output_padding} must satisfy 0 <= op < stride ({stride})")
    out = (extent - 1) * stride - 2 * padding + kernel + output_padding
    if out < 1:
        raise GeometryError(
            f"transposed convolution output extent {out} for input {extent}, "
            f"kernel {kernel}, stride {stride}, padding {padding}, "
            f"output_padding {output_padding}")
    return out


# ---------------------------------------------------------------------------
# kernel expansion / gradient folding
# ---------------------------------------------------------------------------

def expand_tap_kernels(k: np.ndarray, dtype) -> np.ndarray:
    """Per-tap Hamilton block matrices: (4,O,I,kh,kw) -> (kh, kw, 4O, 4I)."""
    _, o, i, kh, kw = k.shape
    b = np.empty((kh, kw, 4, o, 4, i), dtype=dtype)
    for lo in range(4):
        for li in range(4):
            b[:, :, lo, :, li, :] = SIGN[lo][li] * k[COMP[lo][li]].transpose(2, 3, 0, 1)
    return b.reshape(kh, kw, 4 * o, 4 * i)


def fold_tap_kernel_grad(dw_taps: np.ndarray, o: int, i: int) -> np.ndarray:
    """Adjoint of expand_tap_kernels: (kh, kw, 4O, 4I) -> (4, O, I, kh, kw)."""
    kh, kw = dw_taps.shape[:2]
    db = dw_taps.reshape(kh, kw, 4, o, 4, i)
    dk = np.zeros((4, o, i, kh, kw), dtype=dw_taps.dtype)
    for lo in range(4):
        for li in range(4):
            dk[COMP[lo][li]] += SIGN[lo][li] * db[:, :, lo, :, li, :].transpose(2, 3, 0, 1)
    return dk


def _pad_planes(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _taps(kh: int, kw: int):
    return [(u, v) for u in range(kh) for v in range(kw)]


def _row_chunks(n_rows: int, row_bytes: int):
    step = max(1, PATCH_BUDGET // max(1, row_bytes))
    for r0 in range(0, n_rows, step):
        yield r0, min(n_rows, r0 + step)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_planes(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
                  stride: int, padding: int, keep_patches: bool = False):
    """Quaternion convolution on plane arrays.

    x: (4, I, H, W); kernel: (4, O, I, kh, kw); bias: (4, O) or None.
    Returns (y, cache); the cache carries the patch matrix when it was both
    requested and small enough for a following backward pass to reuse.
    """
    _, i, h, w = x.shape
    _, o, ki, kh, kw = kernel.shape
    if ki != i:
        raise ShapeMismatch("conv input channels vs kernel", (i,), (ki,))
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    dt = x.dtype

    xp = _pad_planes(x, padding).reshape(4 * i, h + 2 * padding, w + 2 * padding)
    w_taps = expand_tap_kernels(kernel, dt)
    kdim = kh * kw * 4 * i
    y = np.empty((4, o, oh, ow), dtype=dt)
    y2 = y.reshape(4 * o, oh * ow)
    pcol_bytes = kdim * oh * ow * dt.itemsize
    patches = None

    if stride == 1 and pcol_bytes > PATCH_BUDGET:
        # tap loop over full-plane GEMMs; no patch matrix at all
        y3 = y.reshape(4 * o, oh, ow)
        y3[:] = 0.0
        xe = xp.reshape(4 * i, -1)
        buf = np.empty((4 * o, xe.shape[1]), dtype=dt)
        hp, wp = xp.shape[1], xp.shape[2]
        for u, v in _taps(kh, kw):
            np.matmul(w_taps[u, v], xe, out=buf)
            y3 += buf.reshape(4 * o, hp, wp)[:, u:u + oh, v:v + ow]
    else:
        w_row = np.ascontiguousarray(
            w_taps.reshape(kh * kw, 4 * o, 4 * i).transpose(1, 0, 2)
        ).reshape(4 * o, kdim)
        whole = pcol_bytes <= PATCH_BUDGET
        for r0, r1 in _row_chunks(oh, kdim * ow * dt.itemsize):
            pcol = _gather_rows(xp, kh, kw, stride, r0, r1, ow, dt)
            if whole and r0 == 0 and r1 == oh:
                np.matmul(w_row, pcol, out=y2)
                if keep_patches:
                    patches = pcol
            else:
                y2[:, r0 * ow:r1 * ow] = w_row @ pcol

    if bias is not None:
        y += bias.astype(dt)[:, :, None, None]
    return y, {"patches": patches, "oh": oh, "ow": ow}


def _gather_rows(xp: np.ndarray, kh: int, kw: int, stride: int,
                 r0: int, r1: int, ow: int, dt) -> np.ndarray:
    """K-major patch slab for output rows [r0, r1): shape (kh*kw*4I, rows*ow)."""
    c4 = xp.shape[0]
    rows = r1 - r0
    pcol = np.empty((kh * kw * c4, rows * ow), dtype=dt)
    for ti, (u, v) in enumerate(_taps(kh, kw)):
        dst = pcol[ti * c4:(ti + 1) * c4].reshape(c4, rows, ow)
        dst[...] = xp[:, u + stride * r0: u + stride * r1: stride,
                      v: v + stride * ow: stride]
    return pcol


def conv2d_planes_backward(x: np.ndarray, kernel: np.ndarray, grad_y: np.ndarray,
                           stride: int, padding: int, cache: dict | None = None,
                           need_grad_input: bool = True):
    """Gradients of a scalar loss through `conv2d_planes`.

    Returns (grad_x, grad_kernel, grad_bias); grad_x is None when
    need_grad_input is False.
    """
    _, i, h, w = x.shape
    _, o, _, kh, kw = kernel.shape
    oh, ow = grad_y.shape[2], grad_y.shape[3]
    dt = x.dtype

    grad_bias = grad_y.sum(axis=(2, 3), dtype=np.float64).astype(dt)
    dy2 = grad_y.reshape(4 * o, oh * ow)
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((4 * i, hp, wp), dtype=dt) if need_grad_input else None
    kdim = kh * kw * 4 * i
    pcol_bytes = kdim * oh * ow * dt.itemsize
    w_taps = expand_tap_kernels(kernel, dt)

    if stride == 1 and pcol_bytes > PATCH_BUDGET:
        xp = _pad_planes(x, padding).reshape(4 * i, hp, wp)
        xe = xp.reshape(4 * i, hp * wp)
        dw_taps = np.empty_like(w_taps)
        dy3 = grad_y.reshape(4 * o, oh, ow)
        buf = np.empty((4 * i, oh * ow), dtype=dt)
        embed_dy = o <= i      # write the smaller operand onto the padded canvas
        if embed_dy:
            dye = np.zeros((4 * o, hp, wp), dtype=dt)
        else:
            win = np.empty((4 * i, oh, ow), dtype=dt)
        for u, v in _taps(kh, kw):
            if embed_dy:
                dye[:, u:u + oh, v:v + ow] = dy3
                np.matmul(dye.reshape(4 * o, -1), xe.T, out=dw_taps[u, v])
                dye[:, u:u + oh, v:v + ow] = 0.0
            else:
                win[...] = xp[:, u:u + oh, v:v + ow]
                np.matmul(dy2, win.reshape(4 * i, -1).T, out=dw_taps[u, v])
            if need_grad_input:
                np.matmul(w_taps[u, v].T, dy2, out=buf)
                dxp[:, u:u + oh, v:v + ow] += buf.reshape(4 * i, oh, ow)
    else:
        w_row = np.ascontiguousarray(
            w_taps.reshape(kh * kw, 4 * o, 4 * i).transpose(1, 0, 2)
        ).reshape(4 * o, kdim)
        dw_row = np.zeros((4 * o, kdim), dtype=dt)
        patches = cache.get("patches") if cache else None
        xp = None
        if patches is None:
            xp = _pad_planes(x, padding).reshape(4 * i, hp, wp)
        for r0, r1 in _row_chunks(oh, kdim * ow * dt.itemsize):
            if patches is not None:
                pcol = patches[:, r0 * ow:r1 * ow]
            else:
                pcol = _gather_rows(xp, kh, kw, stride, r0, r1, ow, dt)
            dyb = dy2[:, r0 * ow:r1 * ow]
            dw_row += dyb @ pcol.T
            if need_grad_input:
                dpcol = w_row.T @ dyb
                for ti, (u, v) in enumerate(_taps(kh, kw)):
                    dxp[:, u + stride * r0: u + stride * r1: stride,
                        v: v + stride * ow: stride] += \
                        dpcol[ti * 4 * i:(ti + 1) * 4 * i].reshape(4 * i, r1 - r0, ow)
        dw_taps = np.ascontiguousarray(
            dw_row.reshape(4 * o, kh * kw, 4 * i).transpose(1, 0, 2)
        ).reshape(kh, kw, 4 * o, 4 * i)

    grad_kernel = fold_tap_kernel_grad(dw_taps, o, i)
    grad_x = None
    if need_grad_input:
        grad_x = dxp[:, padding:padding + h, padding:padding + w]
        grad_x = np.ascontiguousarray(grad_x).reshape(4, i, h, w)
    return grad_x, grad_kernel, grad_bias


# ---------------------------------------------------------------------------
# transposed convolution
# ---------------------------------------------------------------------------

def _canvas_extents(h: int, w: int, kh: int, kw: int, stride: int, padding: int,
                    oh: int, ow: int):
    hc = max((h - 1) * stride + kh, padding + oh)
    wc = max((w - 1) * stride + kw, padding + ow)
    return hc, wc


def deconv2d_planes(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
                    stride: int, padding: int, output_padding: int):
    """Quaternion transposed convolution (adjoint of the strided conv map).

    x: (4, I, h, w); kernel: (4, O, I, kh, kw). Every input quaternion is
    Hamilton-multiplied by each kernel tap and scattered onto the stride
    grid, so a 1x1/stride-1 transposed conv coincides with the 1x1 conv.
    """
    _, i, h, w = x.shape
    _, o, ki, kh, kw = kernel.shape
    if ki != i:
        raise ShapeMismatch("deconv input channels vs kernel", (i,), (ki,))
    oh = deconv_output_size(h, kh, stride, padding, output_padding)
    ow = deconv_output_size(w, kw, stride, padding, output_padding)
    dt = x.dtype

    # rows of w_dec are ordered (tap, out-plane-channel), matching the
    # column slabs scattered onto the canvas
    w_dec = expand_tap_kernels(kernel, dt).reshape(kh * kw * 4 * o, 4 * i)
    x_flat = x.reshape(4 * i, h * w)
    hc, wc = _canvas_extents(h, w, kh, kw, stride, padding, oh, ow)
    canvas = np.zeros((4 * o, hc, wc), dtype=dt)

    for r0, r1 in _row_chunks(h, kh * kw * 4 * o * w * dt.itemsize):
        cols = w_dec @ x_flat[:, r0 * w:r1 * w]
        for ti, (u, v) in enumerate(_taps(kh, kw)):
            canvas[:, u + stride * r0: u + stride * r1: stride,
                   v: v + stride * w: stride] += \
                cols[ti * 4 * o:(ti + 1) * 4 * o].reshape(4 * o, r1 - r0, w)

    y = np.ascontiguousarray(
        canvas[:, padding:padding + oh, padding:padding + ow]).reshape(4, o, oh, ow)
    if bias is not None:
        y += bias.astype(dt)[:, :, None, None]
    return y, {"oh": oh, "ow": ow}


def deconv2d_planes_backward(x: np.ndarray, kernel: np.ndarray, grad_y: np.ndarray,
                             stride: int, padding: int, output_padding: int,
                             need_grad_input: bool = True):
    """Gradients of a scalar loss through `deconv2d_planes`."""
    _, i, h, w = x.shape
    _, o, _, kh, kw = kernel.shape
    oh, ow = grad_y.shape[2], grad_y.shape[3]
    dt = x.dtype

    grad_bias = grad_y.sum(axis=(2, 3), dtype=np.float64).astype(dt)
    hc, wc = _canvas_extents(h, w, kh, kw, stride, padding, oh, ow)
    dcanvas = np.zeros((4 * o, hc, wc), dtype=dt)
    dcanvas[:, padding:padding + oh, padding:padding + ow] = \
        grad_y.reshape(4 * o, oh, ow)

    w_dec = expand_tap_kernels(kernel, dt).reshape(kh * kw * 4 * o, 4 * i)
    x_flat = x.reshape(4 * i, h * w)
    dw_dec = np.zeros_like(w_dec)
    dx_flat = np.empty((4 * i, h * w), dtype=dt) if need_grad_input else None

    for r0, r1 in _row_chunks(h, kh * kw * 4 * o * w * dt.itemsize):
        dcols = np.empty((kh * kw * 4 * o, (r1 - r0) * w), dtype=dt)
        for ti, (u, v) in enumerate(_taps(kh, kw)):
            dst = dcols[ti * 4 * o:(ti + 1) * 4 * o].reshape(4 * o, r1 - r0, w)
            dst[...] = dcanvas[:, u + stride * r0: u + stride * r1: stride,
                               v: v + stride * w: stride]
        dw_dec += dcols @ x_flat[:, r0 * w:r1 * w].T
        if need_grad_input:
            np.matmul(w_dec.T, dcols, out=dx_flat[:, r0 * w:r1 * w])

    grad_kernel = fold_tap_kernel_grad(dw_dec.reshape(kh, kw, 4 * o, 4 * i), o, i)
    grad_x = dx_flat.reshape(4, i, h, w) if need_grad_input else None
    return grad_x, grad_kernel, grad_bias
