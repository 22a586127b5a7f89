"""Quaternion network layers and the encoder-decoder assembly.

Each layer is a pair of pure functions (forward, backward). The network
forward optionally records onto a tape (a plain list of per-stage records)
that the backward pass consumes in reverse to produce exact gradients for
every parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import blockconv as bc
from .errors import GeometryError, ShapeMismatch
from .quat import QTensor

DEFAULT_BN_EPS = 1e-5
DEFAULT_SLOPE = 0.2


# ---------------------------------------------------------------------------
# kernels and parameters
# ---------------------------------------------------------------------------

@dataclass
class QKernel:
    """Quaternion convolution weights: four planes of (O, I, kh, kw) plus a
    quaternion bias per output channel, stored as (4, O)."""

    planes: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.planes.ndim != 5 or self.planes.shape[0] != 4:
            raise ValueError(f"kernel planes must be (4, O, I, kh, kw), got {self.planes.shape}")
        if self.bias.shape != (4, self.planes.shape[1]):
            raise ShapeMismatch("kernel bias", self.bias.shape, (4, self.planes.shape[1]))

    @property
    def out_channels(self) -> int:
        return self.planes.shape[1]

    @property
    def in_channels(self) -> int:
        return self.planes.shape[2]

    @property
    def kernel_size(self) -> tuple:
        return self.planes.shape[3], self.planes.shape[4]

    @property
    def body_weight_count(self) -> int:
        """Real parameters in the kernel body (bias excluded)."""
        return int(np.prod(self.planes.shape))

    @classmethod
    def zeros(cls, out_channels: int, in_channels: int, k: int) -> "QKernel":
        return cls(np.zeros((4, out_channels, in_channels, k, k)),
                   np.zeros((4, out_channels)))


# ---------------------------------------------------------------------------
# convolution / transposed convolution
# ---------------------------------------------------------------------------

def qconv2d_forward(x: QTensor, kernel: QKernel, stride: int = 1,
                    padding: int = 0) -> QTensor:
    y, _ = bc.conv2d_planes(x.planes, kernel.planes, kernel.bias, stride, padding)
    return QTensor(y)


def qconv2d_backward(x: QTensor, kernel: QKernel, grad_out: QTensor,
                     stride: int = 1, padding: int = 0):
    """Returns (grad_input, grad_kernel_planes, grad_bias)."""
    oh = bc.conv_output_size(x.height, kernel.planes.shape[3], stride, padding)
    ow = bc.conv_output_size(x.width, kernel.planes.shape[4], stride, padding)
    if grad_out.planes.shape != (4, kernel.out_channels, oh, ow):
        raise ShapeMismatch("conv grad_out", grad_out.planes.shape,
                            (4, kernel.out_channels, oh, ow))
    gx, gk, gb = bc.conv2d_planes_backward(x.planes, kernel.planes, grad_out.planes,
                                           stride, padding)
    return QTensor(gx), gk, gb


def qdeconv2d_forward(x: QTensor, kernel: QKernel, stride: int = 1,
                      padding: int = 0, output_padding: int = 0) -> QTensor:
    y, _ = bc.deconv2d_planes(x.planes, kernel.planes, kernel.bias, stride,
                              padding, output_padding)
    return QTensor(y)


def qdeconv2d_backward(x: QTensor, kernel: QKernel, grad_out: QTensor,
                       stride: int = 1, padding: int = 0, output_padding: int = 0):
    oh = bc.deconv_output_size(x.height, kernel.planes.shape[3], stride, padding,
                               output_padding)
    ow = bc.deconv_output_size(x.width, kernel.planes.shape[4], stride, padding,
                               output_padding)
    if grad_out.planes.shape != (4, kernel.out_channels, oh, ow):
        raise ShapeMismatch("deconv grad_out", grad_out.planes.shape,
                            (4, kernel.out_channels, oh, ow))
    gx, gk, gb = bc.deconv2d_planes_backward(x.planes, kernel.planes, grad_out.planes,
                                             stride, padding, output_padding)
    return QTensor(gx), gk, gb


# ---------------------------------------------------------------------------
# split activations
# ---------------------------------------------------------------------------

def _act_eval(name: str, x: np.ndarray, slope: float) -> np.ndarray:
    if name == "leaky_relu":
        if 0.0 <= slope < 1.0:
            return np.maximum(x, slope * x)
        return np.where(x >= 0.0, x, slope * x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name: str, x: np.ndarray, slope: float) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(x >= 0.0, 1.0, slope)
    if name == "relu":
        return (x >= 0.0).astype(np.float64)
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-x))
        return s * (1.0 - s)
    if name == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {name!r}")


ACTIVATIONS = ("leaky_relu", "relu", "sigmoid", "tanh")


def split_activation_forward(x: QTensor, f: str, slope: float = DEFAULT_SLOPE) -> QTensor:
    """Apply a real nonlinearity independently to all four component planes."""
    return QTensor(_act_eval(f, x.planes, slope))


def split_activation_backward(x: QTensor, f: str, grad_out: QTensor,
                              slope: float = DEFAULT_SLOPE) -> QTensor:
    """grad wrt the pre-activation x."""
    if grad_out.planes.shape != x.planes.shape:
        raise ShapeMismatch("activation grad_out", grad_out.planes.shape, x.planes.shape)
    return QTensor(grad_out.planes * _act_deriv(f, x.planes, slope))


# ---------------------------------------------------------------------------
# quaternion batch normalization (split form)
# ---------------------------------------------------------------------------

def _qbn_core(x: np.ndarray, epsilon: float):
    n = x.shape[2] * x.shape[3]
    if n == 1:
        # single spatial sample: mean removal zeroes it, the exact limit of
        # the normalization; lets the encoder bottleneck shrink to 1x1
        inv = np.full(x.shape[:2] + (1, 1), 1.0 / np.sqrt(epsilon), dtype=x.dtype)
        return np.zeros_like(x), inv
    xf = x.reshape(x.shape[0] * x.shape[1], n)
    mu = xf.sum(axis=1) / n
    var = np.einsum("ij,ij->i", xf, xf) / n - mu * mu
    shape4 = (x.shape[0], x.shape[1], 1, 1)
    mu = mu.reshape(shape4)
    inv = 1.0 / np.sqrt(var.reshape(shape4) + epsilon)
    xhat = x - mu
    xhat *= inv
    return xhat, inv


def qbn_forward(x: QTensor, scale: np.ndarray, shift: np.ndarray,
                epsilon: float = DEFAULT_BN_EPS) -> QTensor:
    """Per-channel, per-component normalization over the spatial extent.

    scale and shift have shape (4, C): one learned affine pair for every
    component plane of every quaternion channel.
    """
    if x.height * x.width < 2:
        raise GeometryError("QBN needs spatial extent >= 2 for a defined variance")
    xhat, _ = _qbn_core(x.planes, epsilon)
    return QTensor(scale[:, :, None, None] * xhat + shift[:, :, None, None])


def qbn_backward(x: QTensor, scale: np.ndarray, shift: np.ndarray,
                 grad_out: QTensor, epsilon: float = DEFAULT_BN_EPS):
    """Returns (grad_input, grad_scale, grad_shift), with the full dependence
    of mean and variance on the input."""
    if x.height * x.width < 2:
        raise GeometryError("QBN needs spatial extent >= 2 for a defined variance")
    if grad_out.planes.shape != x.planes.shape:
        raise ShapeMismatch("QBN grad_out", grad_out.planes.shape, x.planes.shape)
    xhat, inv = _qbn_core(x.planes, epsilon)
    gx, gs, gb = _qbn_backward_planes(grad_out.planes, xhat, inv, scale)
    return QTensor(gx), gs, gb


def _qbn_backward_planes(dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray,
                         scale: np.ndarray):
    n = dy.shape[2] * dy.shape[3]
    grad_scale = np.einsum("lcij,lcij->lc", dy, xhat)
    grad_shift = dy.sum(axis=(2, 3))
    dxhat = dy * scale[:, :, None, None]
    m1 = (dxhat.sum(axis=(2, 3)) / n)[:, :, None, None]
    m2 = (np.einsum("lcij,lcij->lc", dxhat, xhat) / n)[:, :, None, None]
    grad_x = dxhat
    grad_x -= m1
    grad_x -= xhat * m2
    grad_x *= inv
    return grad_x, grad_scale, grad_shift


# ---------------------------------------------------------------------------
# network specification
# ---------------------------------------------------------------------------

@dataclass
class LayerSpec:
    """One composite stage: conv or deconv, optionally followed by QBN and a
    split activation."""

    kind: str                       # "qconv" | "qdeconv"
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    batch_norm: bool = True
    activation: Optional[str] = "leaky_relu"
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.kind not in ("qconv", "qdeconv"):
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.slope < 1.0:
            raise ValueError(f"leaky slope must be in [0, 1), got {self.slope}")

    @property
    def padding(self) -> int:
        return self.kernel_size // 2

    @property
    def output_padding(self) -> int:
        return self.stride - 1 if self.kind == "qdeconv" else 0


@dataclass
class NetworkSpec:
    """Ordered stage list of the encoder-decoder, plus global settings."""

    stages: list = field(default_factory=list)
    in_channels: int = 1
    bn_epsilon: float = DEFAULT_BN_EPS

    @classmethod
    def default(cls) -> "NetworkSpec":
        """The shipped 11-stage encoder-decoder: a stride-1 quaternion conv,
        four stride-2 downsampling convs, a stride-1 conv, four stride-2
        transposed convs back to full size, and a bare 1-channel conv head.
        All hidden stages are 64 quaternion channels with QBN + leaky ReLU."""
        conv = lambda c, s: LayerSpec("qconv", c, 3, s)
        deconv = lambda c, s: LayerSpec("qdeconv", c, 3, s)
        stages = [conv(64, 1)]
        stages += [conv(64, 2) for _ in range(4)]
        stages += [conv(64, 1)]
        stages += [deconv(64, 2) for _ in range(4)]
        stages += [LayerSpec("qconv", 1, 3, 1, batch_norm=False, activation=None)]
        return cls(stages=stages)

    # -- geometry ---------------------------------------------------------

    def spatial_divisor(self) -> int:
        """Smallest D such that any H, W divisible by D traverse the network
        and come back to the input size."""
        cur, worst = 1, 1
        for st in self.stages:
            if st.kind == "qconv":
                cur *= st.stride
            else:
                if cur % st.stride != 0:
                    raise GeometryError("spec upsamples beyond the input resolution")
                cur //= st.stride
            worst = max(worst, cur)
        if cur != 1:
            raise GeometryError("spec does not return to the input resolution")
        return worst

    def check_input_size(self, height: int, width: int) -> None:
        d = self.spatial_divisor()
        if height % d or width % d:
            raise GeometryError(
                f"input size {height}x{width} is not divisible by {d}; "
                f"this network requires both sides to be multiples of {d}")

    def trace_shapes(self, height: int, width: int):
        """Spatial size after each stage."""
        self.check_input_size(height, width)
        out, h, w = [], height, width
        for st in self.stages:
            if st.kind == "qconv":
                h = bc.conv_output_size(h, st.kernel_size, st.stride, st.padding)
                w = bc.conv_output_size(w, st.kernel_size, st.stride, st.padding)
            else:
                h = bc.deconv_output_size(h, st.kernel_size, st.stride, st.padding,
                                          st.output_padding)
                w = bc.deconv_output_size(w, st.kernel_size, st.stride, st.padding,
                                          st.output_padding)
            out.append((h, w))
        return out

    def stage_channels(self):
        """(in_channels, out_channels) per stage."""
        pairs, c = [], self.in_channels
        for st in self.stages:
            pairs.append((c, st.out_channels))
            c = st.out_channels
        return pairs

    def num_parameters(self) -> int:
        """Total learnable real scalars (kernel bodies, biases, QBN affines)."""
        n = 0
        for (ci, co), st in zip(self.stage_channels(), self.stages):
            n += 4 * co * ci * st.kernel_size * st.kernel_size + 4 * co
            if st.batch_norm:
                n += 8 * co
        return n

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels,
                "bn_epsilon": self.bn_epsilon,
                "stages": [asdict(st) for st in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(stages=[LayerSpec(**st) for st in d["stages"]],
                   in_channels=d.get("in_channels", 1),
                   bn_epsilon=d.get("bn_epsilon", DEFAULT_BN_EPS))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def of(cls, name: str, value: np.ndarray) -> "Param":
        return cls(name, value, np.zeros_like(value))


class ParameterSet:
    """All trainable arrays of one network, with parallel gradient buffers."""

    def __init__(self, by_stage: list):
        self.by_stage = by_stage            # list[dict[str, Param]]
        self.flat = [p for stage in by_stage for p in stage.values()]

    def zero_grads(self) -> None:
        for p in self.flat:
            p.grad[...] = 0.0

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.flat)

    def state_arrays(self):
        """(name, value) pairs in a stable order, for checkpoints."""
        return [(p.name, p.value) for p in self.flat]


def init_parameters(spec: NetworkSpec, seed) -> ParameterSet:
    """He-style initialization: every real weight component is drawn from a
    zero-mean normal with std sqrt(2 / (4 * in_channels * kh * kw)); the
    fan-in counts all four component planes. Biases start at zero, QBN scale
    at one and shift at zero. Fully determined by the seed."""
    rng = np.random.default_rng(seed)
    by_stage = []
    for idx, ((ci, co), st) in enumerate(zip(spec.stage_channels(), spec.stages)):
        k = st.kernel_size
        std = np.sqrt(2.0 / (4.0 * ci * k * k))
        stage = {
            "kernel": Param.of(f"stage{idx}.kernel",
                               rng.normal(0.0, std, (4, co, ci, k, k))),
            "bias": Param.of(f"stage{idx}.bias", np.zeros((4, co))),
        }
        if st.batch_norm:
            stage["gamma"] = Param.of(f"stage{idx}.gamma", np.ones((4, co)))
            stage["beta"] = Param.of(f"stage{idx}.beta", np.zeros((4, co)))
        by_stage.append(stage)
    return ParameterSet(by_stage)


# ---------------------------------------------------------------------------
# whole-network forward / backward
# ---------------------------------------------------------------------------

def network_forward(spec: NetworkSpec, params: ParameterSet, z: QTensor,
                    tape: Optional[list] = None) -> QTensor:
    """Run all stages in order. When `tape` is a list, per-stage records are
    appended so `network_backward` can replay them in reverse."""
    if z.channels != spec.in_channels:
        raise ShapeMismatch("network input channels", (z.channels,), (spec.in_channels,))
    spec.check_input_size(z.height, z.width)

    x = z.planes
    dt = x.dtype
    for st, stage in zip(spec.stages, params.by_stage):
        rec = {"x": x}
        kernel = stage["kernel"].value
        if kernel.dtype != dt:
            kernel = kernel.astype(dt)
        # A conv bias feeding QBN is a per-channel constant shift that the
        # mean subtraction removes exactly; it stays at its zero init, so
        # skip the add (and its backward) for those stages.
        bias = None if st.batch_norm else stage["bias"].value
        if st.kind == "qconv":
            x, cache = bc.conv2d_planes(x, kernel, bias, st.stride, st.padding,
                                        keep_patches=tape is not None)
        else:
            x, cache = bc.deconv2d_planes(x, kernel, bias, st.stride, st.padding,
                                          st.output_padding)
        rec["conv_cache"] = cache
        if st.batch_norm:
            xhat, inv = _qbn_core(x, spec.bn_epsilon)
            rec["bn"] = (xhat, inv)
            gamma = stage["gamma"].value.astype(dt, copy=False)
            beta = stage["beta"].value.astype(dt, copy=False)
            x = gamma[:, :, None, None] * xhat + beta[:, :, None, None]
        if st.activation is not None:
            rec["pre"] = x
            x = _act_eval(st.activation, x, st.slope)
        if tape is not None:
            tape.append(rec)
    return QTensor(x)


def network_backward(spec: NetworkSpec, params: ParameterSet, tape: list,
                     grad_out: QTensor, need_input_grad: bool = True):
    """Backpropagate through a recorded forward pass. Accumulates into the
    ParameterSet gradient buffers and returns the gradient wrt the input
    (None when need_input_grad is False). Consumes the tape."""
    g = grad_out.planes.copy()
    dt = g.dtype
    for idx in range(len(spec.stages) - 1, -1, -1):
        st, stage, rec = spec.stages[idx], params.by_stage[idx], tape.pop()
        if st.activation is not None:
            if st.activation == "leaky_relu":
                # masked in-place scale; g is owned by the backward pass
                np.multiply(g, st.slope, out=g, where=rec["pre"] < 0.0)
            else:
                g = g * _act_deriv(st.activation, rec["pre"], st.slope)
        if st.batch_norm:
            xhat, inv = rec["bn"]
            gamma = stage["gamma"].value
            g, gs, gb = _qbn_backward_planes(g, xhat, inv,
                                             gamma.astype(dt) if gamma.dtype != dt else gamma)
            stage["gamma"].grad += gs
            stage["beta"].grad += gb
        kernel = stage["kernel"].value
        if kernel.dtype != dt:
            kernel = kernel.astype(dt)
        want_gx = need_input_grad or idx > 0
        if st.kind == "qconv":
            g, gk, gbias = bc.conv2d_planes_backward(
                rec["x"], kernel, g, st.stride, st.padding,
                cache=rec["conv_cache"], need_grad_input=want_gx)
        else:
            g, gk, gbias = bc.deconv2d_planes_backward(
                rec["x"], kernel, g, st.stride, st.padding,
                st.output_padding, need_grad_input=want_gx)
        stage["kernel"].grad += gk
        if not st.batch_norm:
            # bias is skipped in forward under QBN (see network_forward)
            stage["bias"].grad += gbias
        rec.clear()
    return QTensor(g) if need_input_grad else None
