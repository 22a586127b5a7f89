"""quatpaint: color image inpainting with an untrained quaternion CNN.

The package is organized as:

- `quat`      exact quaternion scalar/tensor algebra (planar storage)
- `blockconv` the real-plane GEMM engine behind every quaternion conv
- `layers`    quaternion layers, their backwards, and the encoder-decoder
- `train`     masked-fidelity objective, Adam, the optimization loop
- `imaging`   RGB <-> pure-quaternion encoding, masks, PNG files
- `metrics`   PSNR and SSIM
- `cli`       the `quatpaint` command
"""

__version__ = "0.1.0"

from .errors import DivergenceError, GeometryError, QuatpaintError, ShapeMismatch
from .quat import QTensor, Quaternion, conjugate, frobenius_norm_sq, hamilton, modulus
from .layers import (LayerSpec, NetworkSpec, ParameterSet, QKernel, init_parameters,
                     network_backward, network_forward, qbn_backward, qbn_forward,
                     qconv2d_backward, qconv2d_forward, qdeconv2d_backward,
                     qdeconv2d_forward, split_activation_backward,
                     split_activation_forward)
from .imaging import (Mask, RgbImage, apply_mask, decode, encode, gen_random_mask,
                      gen_scratch_mask, gen_text_mask, load_mask, load_png,
                      save_mask, save_png)
from .train import (AdamState, TrainConfig, adam_step, compose_output,
                    draw_network_input, load_checkpoint, loss_backward, masked_loss,
                    optimize, save_checkpoint, save_loss_trace)
from .metrics import MetricsReport, psnr, ssim

__all__ = [
    "__version__",
    "QuatpaintError", "ShapeMismatch", "GeometryError", "DivergenceError",
    "Quaternion", "QTensor", "hamilton", "conjugate", "modulus", "frobenius_norm_sq",
    "QKernel", "LayerSpec", "NetworkSpec", "ParameterSet", "init_parameters",
    "network_forward", "network_backward",
    "qconv2d_forward", "qconv2d_backward", "qdeconv2d_forward", "qdeconv2d_backward",
    "split_activation_forward", "split_activation_backward",
    "qbn_forward", "qbn_backward",
    "TrainConfig", "AdamState", "adam_step", "masked_loss", "loss_backward",
    "optimize", "compose_output", "draw_network_input",
    "save_checkpoint", "load_checkpoint", "save_loss_trace",
    "RgbImage", "Mask", "encode", "decode", "apply_mask",
    "gen_random_mask", "gen_scratch_mask", "gen_text_mask",
    "load_mask", "save_mask", "load_png", "save_png",
    "psnr", "ssim", "MetricsReport",
]
