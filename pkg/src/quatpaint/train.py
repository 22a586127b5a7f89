"""Masked-fidelity optimization of the untrained quaternion network.

The recovery problem is min_theta ||P_Omega(f_theta(Z) - Q)||_F^2 where Q is
the observed pure-quaternion image, Omega the observed pixel set and Z a
fixed random quaternion input. The network output at the optimum fills the
missing pixels; observed pixels are copied back verbatim at the end.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DivergenceError, ShapeMismatch
from .imaging import Mask
from .layers import NetworkSpec, ParameterSet, init_parameters, network_backward, network_forward
from .quat import QTensor
from .runtime import blas_threads, thread_count_from_env, tune_malloc_for_large_arrays

logger = logging.getLogger("quatpaint")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    iterations: int = 5000
    seed: int = 0
    input_amplitude: float = 0.1
    log_interval: int = 100
    deterministic: bool = True
    checkpoint_interval: int = 0            # 0 disables checkpoints
    checkpoint_dir: Optional[str] = None
    dtype: str = "float64"                  # "float32" halves the CPU time of
                                            # long runs; gradient checks need float64

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype}")


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def _check_loss_shapes(pred: QTensor, target: QTensor, mask: Mask) -> None:
    if pred.planes.shape != target.planes.shape:
        raise ShapeMismatch("masked loss pred vs target", pred.planes.shape,
                            target.planes.shape)
    if mask.data.shape != (pred.height, pred.width):
        raise ShapeMismatch("masked loss mask", mask.data.shape,
                            (pred.height, pred.width))


def masked_loss(pred: QTensor, target: QTensor, mask: Mask) -> float:
    """||P_Omega(pred - target)||_F^2: squared quaternion modulus of the
    difference, summed over observed pixels. The real plane participates."""
    _check_loss_shapes(pred, target, mask)
    diff = pred.planes - target.planes
    return float(np.sum(diff * diff * mask.data))


def loss_backward(pred: QTensor, target: QTensor, mask: Mask) -> QTensor:
    """Gradient of masked_loss wrt pred: 2*(pred - target) on Omega, else 0."""
    _check_loss_shapes(pred, target, mask)
    return QTensor(2.0 * (pred.planes - target.planes) * mask.data)


def compose_output(q_observed: QTensor, x_opt: QTensor, mask: Mask) -> QTensor:
    """Observed pixels verbatim from the observation, the rest from x_opt."""
    if q_observed.planes.shape != x_opt.planes.shape:
        raise ShapeMismatch("compose", q_observed.planes.shape, x_opt.planes.shape)
    if mask.data.shape != (q_observed.height, q_observed.width):
        raise ShapeMismatch("compose mask", mask.data.shape,
                            (q_observed.height, q_observed.width))
    return QTensor(np.where(mask.data, q_observed.planes, x_opt.planes))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParameterSet) -> "AdamState":
        return cls(m=[np.zeros_like(p.value) for p in params.flat],
                   v=[np.zeros_like(p.value) for p in params.flat])


def adam_step(params: ParameterSet, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update on every real component."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if len(state.m) != len(params.flat):
        raise ShapeMismatch("adam state", (len(state.m),), (len(params.flat),))
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, m, v in zip(params.flat, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------

def draw_network_input(channels: int, height: int, width: int, amplitude: float,
                       seed) -> QTensor:
    """The fixed random input Z: all four component planes i.i.d. uniform on
    [0, amplitude]."""
    rng = np.random.default_rng(seed)
    return QTensor(rng.uniform(0.0, amplitude, (4, channels, height, width)))


def optimize(q_observed: QTensor, mask: Mask, spec: NetworkSpec, cfg: TrainConfig,
             params: Optional[ParameterSet] = None):
    """Fit the network to the masked observation.

    Draws Z once from the config seed, then runs cfg.iterations of
    {forward, masked loss, backward, Adam step}. Returns (x_opt, loss_trace)
    where x_opt is the network output after the final update and loss_trace
    has one pre-update loss value per iteration.

    A non-finite loss aborts with DivergenceError carrying the iteration
    index. q_observed and mask are never mutated.
    """
    if not q_observed.is_pure(tol=1e-12):
        raise ValueError("observed tensor must be a pure quaternion image")
    spec.check_input_size(q_observed.height, q_observed.width)
    _check_loss_shapes(q_observed, q_observed, mask)

    init_seed, z_seed = (int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(2))
    if params is None:
        params = init_parameters(spec, init_seed)
    z = draw_network_input(spec.in_channels, q_observed.height, q_observed.width,
                           cfg.input_amplitude, z_seed)

    dt = np.dtype(cfg.dtype)
    target = q_observed
    if dt != np.float64:
        for p in params.flat:
            p.value = p.value.astype(dt)
            p.grad = p.grad.astype(dt)
        z = QTensor(z.planes.astype(dt))
        target = QTensor(q_observed.planes.astype(dt))

    state = AdamState.for_params(params)
    trace = []
    tune_malloc_for_large_arrays()
    pin = thread_count_from_env() if cfg.deterministic else None
    with blas_threads(pin):
        for it in range(1, cfg.iterations + 1):
            tape = []
            y = network_forward(spec, params, z, tape)
            loss = masked_loss(y, target, mask)
            if not np.isfinite(loss):
                raise DivergenceError(it, loss)
            trace.append(loss)
            g = loss_backward(y, target, mask)
            params.zero_grads()
            network_backward(spec, params, tape, g, need_input_grad=False)
            adam_step(params, state, cfg.learning_rate)
            if cfg.log_interval and it % cfg.log_interval == 0:
                logger.info("iter %d/%d loss %.6g", it, cfg.iterations, loss)
            if cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
                base = os.path.join(cfg.checkpoint_dir or ".", f"checkpoint_{it:06d}")
                save_checkpoint(params, base, step=it)
        x_opt = network_forward(spec, params, z)
    if x_opt.planes.dtype != np.float64:
        x_opt = QTensor(x_opt.planes.astype(np.float64))
    return x_opt, trace


# ---------------------------------------------------------------------------
# artifacts: loss trace and checkpoints
# ---------------------------------------------------------------------------

def save_loss_trace(trace, path) -> None:
    with open(path, "w") as f:
        f.write("iter,loss\n")
        for i, v in enumerate(trace, start=1):
            f.write(f"{i},{v!r}\n")


def load_loss_trace(path):
    out = []
    with open(path) as f:
        header = f.readline()
        if header.strip() != "iter,loss":
            raise ValueError(f"{path}: not a loss trace (header {header!r})")
        for line in f:
            _, v = line.rstrip("\n").split(",", 1)
            out.append(float(v))
    return out


def save_checkpoint(params: ParameterSet, path_base: str, step: int = 0) -> None:
    """Dump all parameter arrays as one flat float64 binary plus a JSON
    manifest describing name, shape and offset of every array."""
    entries, offset = [], 0
    with open(path_base + ".bin", "wb") as f:
        for name, value in params.state_arrays():
            raw = np.ascontiguousarray(value, dtype="<f8")
            f.write(raw.tobytes())
            entries.append({"name": name, "shape": list(value.shape), "offset": offset})
            offset += raw.size
    manifest = {"format": "quatpaint-checkpoint-v1", "dtype": "<f8",
                "step": step, "total_values": offset, "arrays": entries}
    with open(path_base + ".json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def load_checkpoint(params: ParameterSet, path_base: str) -> int:
    """Restore values saved by save_checkpoint into an initialized
    ParameterSet (shapes must match). Returns the stored step."""
    with open(path_base + ".json") as f:
        manifest = json.load(f)
    flat = np.fromfile(path_base + ".bin", dtype="<f8")
    if flat.size != manifest["total_values"]:
        raise ValueError(f"checkpoint size mismatch: {flat.size} values on disk, "
                         f"manifest says {manifest['total_values']}")
    by_name = {p.name: p for p in params.flat}
    for entry in manifest["arrays"]:
        p = by_name.get(entry["name"])
        if p is None:
            raise KeyError(f"checkpoint array {entry['name']!r} not in parameter set")
        shape = tuple(entry["shape"])
        if p.value.shape != shape:
            raise ShapeMismatch(f"checkpoint array {entry['name']}", shape, p.value.shape)
        n = int(np.prod(shape))
        p.value[...] = flat[entry["offset"]:entry["offset"] + n].reshape(shape)
    return int(manifest.get("step", 0))
