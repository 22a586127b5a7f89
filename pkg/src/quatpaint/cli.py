"""Command-line surface: mask generation, inpainting runs, evaluation, and
the sampling-rate benchmark grid.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import GeometryError, QuatpaintError
from .imaging import (Mask, RgbImage, apply_mask, decode, encode, gen_random_mask,
                      gen_scratch_mask, gen_text_mask, load_mask, load_png,
                      save_mask, save_png)
from .layers import NetworkSpec
from .metrics import MetricsReport
from .runtime import blas_threads, thread_count_from_env, tune_malloc_for_large_arrays
from .train import TrainConfig, compose_output, optimize, save_loss_trace

logger = logging.getLogger("quatpaint")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(ValueError):
    """Bad flag combination or malformed argument value."""


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _split_seeds(user_seed: int):
    mask_seed, train_seed = np.random.SeedSequence(user_seed).generate_state(2)
    return int(mask_seed), int(train_seed)


def _parse_size(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise UsageError(f"size must look like 256x256, got {text!r}")


# ---------------------------------------------------------------------------
# inpaint jobs
# ---------------------------------------------------------------------------

@dataclass
class MaskSource:
    kind: str                   # "file" | "random" | "scratch-lines" | "text-overlay"
    path: Optional[str] = None
    sr: Optional[float] = None
    lines: int = 8
    stroke_width: int = 3
    text: str = "TEXT"
    text_scale: int = 2
    seed: int = 0

    def build(self, height: int, width: int) -> Mask:
        if self.kind == "file":
            m = load_mask(self.path)
            if m.data.shape != (height, width):
                raise GeometryError(f"mask {self.path} is {m.height}x{m.width}, "
                                    f"image is {height}x{width}")
            return m
        if self.kind == "random":
            return gen_random_mask(height, width, self.sr, self.seed)
        if self.kind == "scratch-lines":
            return gen_scratch_mask(height, width, self.lines, self.stroke_width,
                                    self.seed)
        if self.kind == "text-overlay":
            return gen_text_mask(height, width, self.text, self.text_scale)
        raise ValueError(f"unknown mask source {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "file":
            d["path"] = self.path
        elif self.kind == "random":
            d.update(sr=self.sr, seed=self.seed)
        elif self.kind == "scratch-lines":
            d.update(lines=self.lines, stroke_width=self.stroke_width, seed=self.seed)
        elif self.kind == "text-overlay":
            d.update(text=self.text, text_scale=self.text_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MaskSource":
        return cls(**d)


@dataclass
class InpaintJob:
    input_path: str
    output_path: str
    trace_path: str
    manifest_path: str
    mask_source: MaskSource
    train: TrainConfig
    user_seed: int
    ground_truth: Optional[str] = None
    pad: str = "reject"                     # "reject" | "reflect"
    network: NetworkSpec = field(default_factory=NetworkSpec.default)

    def run(self) -> dict:
        t0 = time.perf_counter()
        img = load_png(self.input_path)
        h0, w0 = img.height, img.width

        divisor = self.network.spatial_divisor()
        padded = None
        if h0 % divisor or w0 % divisor:
            if self.pad != "reflect":
                raise GeometryError(
                    f"input size {h0}x{w0} is not divisible by {divisor}; this "
                    f"network requires multiples of {divisor} "
                    f"(use --pad reflect to opt into reflective padding)")
            ph = (-h0) % divisor
            pw = (-w0) % divisor
            img = RgbImage(np.pad(img.planes, ((0, 0), (0, ph), (0, pw)), mode="reflect"))
            padded = [img.height, img.width]

        mask = self.mask_source.build(h0, w0)
        if padded:
            # synthetic border pixels are treated as observed
            mask = Mask(np.pad(mask.data, ((0, padded[0] - h0), (0, padded[1] - w0)),
                               constant_values=True))

        q_full = encode(img)
        q_obs = apply_mask(q_full, mask)
        x_opt, trace = optimize(q_obs, mask, self.network, self.train)
        result = compose_output(q_obs, x_opt, mask)
        out_img = decode(result)
        if padded:
            out_img = RgbImage(out_img.planes[:, :h0, :w0])

        save_png(out_img, self.output_path)
        save_loss_trace(trace, self.trace_path)

        metrics = None
        if self.ground_truth:
            gt = load_png(self.ground_truth)
            quantized = RgbImage(np.floor(np.clip(out_img.planes, 0, 1) * 255 + 0.5) / 255.0)
            report = MetricsReport.compute(quantized, gt, image=self.output_path,
                                           reference=self.ground_truth)
            metrics = {"psnr_db": report.psnr_db, "ssim": report.ssim,
                       "cell": report.cell()}

        manifest = {
            "format": "quatpaint-run-v1",
            "engine_version": __version__,
            "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "input": str(Path(self.input_path).resolve()),
            "ground_truth": str(Path(self.ground_truth).resolve()) if self.ground_truth else None,
            "pad": self.pad,
            "original_size": [h0, w0],
            "padded_size": padded,
            "mask": self.mask_source.to_dict(),
            "network": self.network.to_dict(),
            "train": {
                "learning_rate": self.train.learning_rate,
                "iterations": self.train.iterations,
                "seed": self.train.seed,
                "input_amplitude": self.train.input_amplitude,
                "log_interval": self.train.log_interval,
                "deterministic": self.train.deterministic,
                "dtype": self.train.dtype,
            },
            "seeds": {"user": self.user_seed},
            "outputs": {"image": str(Path(self.output_path).resolve()),
                        "trace": str(Path(self.trace_path).resolve())},
            "metrics": metrics,
            "final_loss": trace[-1],
            "duration_seconds": time.perf_counter() - t0,
        }
        with open(self.manifest_path, "w") as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")
        return manifest


def _job_from_args(args) -> InpaintJob:
    sources = [s for s in (args.mask, args.sr, args.pattern) if s is not None]
    if len(sources) != 1:
        raise UsageError("exactly one mask source required: --mask, --sr or --pattern")

    mask_seed, train_seed = _split_seeds(args.seed)
    if args.mask is not None:
        src = MaskSource("file", path=args.mask)
    elif args.sr is not None:
        src = MaskSource("random", sr=args.sr, seed=mask_seed)
    elif args.pattern == "scratch-lines":
        src = MaskSource("scratch-lines", lines=args.lines,
                         stroke_width=args.stroke_width, seed=mask_seed)
    else:
        src = MaskSource("text-overlay", text=args.text, text_scale=args.text_scale)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    out = Path(args.output) if args.output else outdir / f"{stem}_inpainted.png"
    cfg = TrainConfig(learning_rate=args.lr, iterations=args.iters, seed=train_seed,
                      input_amplitude=args.amplitude, log_interval=args.log_interval,
                      deterministic=not args.no_deterministic,
                      checkpoint_interval=args.checkpoint_every,
                      checkpoint_dir=str(outdir), dtype=args.dtype)
    network = NetworkSpec.load(args.network) if args.network else NetworkSpec.default()
    return InpaintJob(
        input_path=args.input,
        output_path=str(out),
        trace_path=str(outdir / f"{stem}_trace.csv"),
        manifest_path=str(outdir / f"{stem}_manifest.json"),
        mask_source=src,
        train=cfg,
        user_seed=args.seed,
        ground_truth=args.gt,
        pad=args.pad,
        network=network,
    )


def _job_from_manifest(path: str, outdir: Optional[str]) -> InpaintJob:
    with open(path) as f:
        m = json.load(f)
    tr = m["train"]
    cfg = TrainConfig(learning_rate=tr["learning_rate"], iterations=tr["iterations"],
                      seed=tr["seed"], input_amplitude=tr["input_amplitude"],
                      log_interval=tr.get("log_interval", 100),
                      deterministic=tr.get("deterministic", True),
                      dtype=tr.get("dtype", "float64"))
    base = Path(outdir) if outdir else Path(path).parent / "replay"
    base.mkdir(parents=True, exist_ok=True)
    stem = Path(m["input"]).stem
    return InpaintJob(
        input_path=m["input"],
        output_path=str(base / f"{stem}_inpainted.png"),
        trace_path=str(base / f"{stem}_trace.csv"),
        manifest_path=str(base / f"{stem}_manifest.json"),
        mask_source=MaskSource.from_dict(m["mask"]),
        train=cfg,
        user_seed=m["seeds"]["user"],
        ground_truth=m.get("ground_truth"),
        pad=m.get("pad", "reject"),
        network=NetworkSpec.from_dict(m["network"]) if "network" in m
        else NetworkSpec.default(),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_inpaint(args) -> int:
    if args.replay:
        job = _job_from_manifest(args.replay, args.outdir_set and args.outdir or None)
    else:
        if not args.input:
            raise UsageError("--input is required (or --replay MANIFEST)")
        job = _job_from_args(args)
    manifest = job.run()
    line = f"wrote {manifest['outputs']['image']}"
    if manifest["metrics"]:
        line += f"  PSNR/SSIM {manifest['metrics']['cell']}"
    print(line)
    return EXIT_OK


def cmd_mask(args) -> int:
    h, w = _parse_size(args.size)
    if (args.sr is None) == (args.pattern is None):
        raise UsageError("exactly one of --sr or --pattern is required")
    if args.sr is not None:
        m = gen_random_mask(h, w, args.sr, args.seed)
    elif args.pattern == "scratch-lines":
        m = gen_scratch_mask(h, w, args.lines, args.stroke_width, args.seed)
    else:
        m = gen_text_mask(h, w, args.text, args.text_scale)
    save_mask(m, args.out)
    print(f"wrote {args.out}  observed {m.observed_count}/{m.data.size} "
          f"(sampling rate {m.sampling_rate:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = []
    if args.batch:
        ref_dir, test_dir = map(Path, args.batch)
        names = sorted(p.name for p in ref_dir.glob("*.png"))
        if not names:
            raise ValueError(f"no .png files in {ref_dir}")
        pairs = [(ref_dir / n, test_dir / n) for n in names if (test_dir / n).exists()]
    else:
        if not args.images or len(args.images) != 2:
            raise UsageError("eval needs REFERENCE and TEST images (or --batch)")
        pairs = [(Path(args.images[0]), Path(args.images[1]))]

    for ref_path, test_path in pairs:
        report = MetricsReport.compute(load_png(test_path), load_png(ref_path),
                                       image=str(test_path), reference=str(ref_path))
        print(f"{test_path}: {report.cell()}")
        rows.append(report)

    if args.csv:
        with open(args.csv, "w") as f:
            f.write(MetricsReport.CSV_HEADER + "\n")
            for r in rows:
                f.write(r.csv_row() + "\n")
    return EXIT_OK


def _reproduce_cell(cell) -> dict:
    """One (image, sr) grid cell; runs in a worker process."""
    img_path, sr, user_seed, img_idx, iters, lr, outdir = cell
    ss = np.random.SeedSequence([user_seed, img_idx, int(round(sr * 10000))])
    mask_seed, train_seed = (int(s) for s in ss.generate_state(2))
    stem = f"{Path(img_path).stem}_sr{int(round(sr * 100)):02d}"
    job = InpaintJob(
        input_path=str(img_path),
        output_path=str(Path(outdir) / f"{stem}.png"),
        trace_path=str(Path(outdir) / f"{stem}_trace.csv"),
        manifest_path=str(Path(outdir) / f"{stem}_manifest.json"),
        mask_source=MaskSource("random", sr=sr, seed=mask_seed),
        train=TrainConfig(iterations=iters, learning_rate=lr, seed=train_seed),
        user_seed=user_seed,
        ground_truth=str(img_path),
    )
    manifest = job.run()
    return {"image": Path(img_path).stem, "sr": sr,
            "psnr_db": manifest["metrics"]["psnr_db"],
            "ssim": manifest["metrics"]["ssim"],
            "iters": iters, "seconds": manifest["duration_seconds"]}


def cmd_reproduce(args) -> int:
    images = sorted(Path(args.images).glob("*.png"))
    if not images:
        raise ValueError(f"no .png images found in {args.images}")
    srs = [float(s) for s in args.srs.split(",")]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    cells = [(img, sr, args.seed, idx, args.iters, args.lr, str(outdir))
             for idx, img in enumerate(images) for sr in srs]
    rows, failures = [], []

    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as ex:
            futs = {ex.submit(_reproduce_cell, c): c for c in cells}
            for fut in concurrent.futures.as_completed(futs):
                cell = futs[fut]
                try:
                    rows.append(fut.result())
                except Exception as e:
                    failures.append((cell[0], cell[1], e))
                    logger.error("cell %s sr=%.2f failed: %s", cell[0], cell[1], e)
    else:
        for cell in cells:
            try:
                rows.append(_reproduce_cell(cell))
            except Exception as e:
                failures.append((cell[0], cell[1], e))
                logger.error("cell %s sr=%.2f failed: %s", cell[0], cell[1], e)

    rows.sort(key=lambda r: (r["image"], r["sr"]))
    csv_path = outdir / "results.csv"
    with open(csv_path, "w") as f:
        f.write("image,sr,psnr_db,ssim,iters,seconds\n")
        for r in rows:
            f.write(f"{r['image']},{r['sr']:.2f},{r['psnr_db']:.3f},"
                    f"{r['ssim']:.3f},{r['iters']},{r['seconds']:.1f}\n")
    print(f"wrote {csv_path} ({len(rows)} rows, {len(failures)} failures)")
    return EXIT_OK if rows else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quatpaint",
                description="Color image inpainting with an untrained quaternion "
                            "convolutional network")
    p.add_argument("--version", action="version", version=f"quatpaint {__version__}")
    p.add_argument("--quiet", action="store_true", help="suppress progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    ip = sub.add_parser("inpaint", help="recover missing pixels of an image")
    ip.add_argument("--input", help="degraded or clean input PNG")
    ip.add_argument("--mask", help="mask PNG (white=observed, black=missing)")
    ip.add_argument("--sr", type=float, help="random sampling rate in [0,1]")
    ip.add_argument("--pattern", choices=["scratch-lines", "text-overlay"],
                    help="structural mask generator")
    ip.add_argument("--lines", type=int, default=8)
    ip.add_argument("--stroke-width", type=int, default=3)
    ip.add_argument("--text", default="TEXT")
    ip.add_argument("--text-scale", type=int, default=2)
    ip.add_argument("--seed", type=int, default=0)
    ip.add_argument("--iters", type=int, default=5000)
    ip.add_argument("--lr", type=float, default=0.01)
    ip.add_argument("--amplitude", type=float, default=0.1)
    ip.add_argument("--log-interval", type=int, default=100)
    ip.add_argument("--checkpoint-every", type=int, default=0)
    ip.add_argument("--gt", help="ground-truth PNG for PSNR/SSIM reporting")
    ip.add_argument("--outdir", default=".")
    ip.add_argument("--output", help="output image path (default derived)")
    ip.add_argument("--pad", choices=["reject", "reflect"], default="reject",
                    help="how to handle sizes not divisible by the network factor")
    ip.add_argument("--network", help="network spec JSON (default: shipped 11-stage)")
    ip.add_argument("--no-deterministic", action="store_true")
    ip.add_argument("--dtype", choices=["float64", "float32"], default="float64",
                    help="float32 roughly halves CPU time of long runs")
    ip.add_argument("--replay", help="re-run a recorded manifest")
    ip.set_defaults(func=cmd_inpaint)

    mk = sub.add_parser("mask", help="generate an observation mask PNG")
    mk.add_argument("--size", required=True, help="HxW, e.g. 256x256")
    mk.add_argument("--sr", type=float)
    mk.add_argument("--pattern", choices=["scratch-lines", "text-overlay"])
    mk.add_argument("--lines", type=int, default=8)
    mk.add_argument("--stroke-width", type=int, default=3)
    mk.add_argument("--text", default="TEXT")
    mk.add_argument("--text-scale", type=int, default=2)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--out", required=True)
    mk.set_defaults(func=cmd_mask)

    ev = sub.add_parser("eval", help="PSNR/SSIM between two images")
    ev.add_argument("images", nargs="*", help="REFERENCE TEST")
    ev.add_argument("--batch", nargs=2, metavar=("REF_DIR", "TEST_DIR"),
                    help="evaluate matching filenames in two directories")
    ev.add_argument("--csv", help="write rows to this CSV file")
    ev.set_defaults(func=cmd_eval)

    rp = sub.add_parser("reproduce", help="run the sampling-rate grid over a directory")
    rp.add_argument("--images", required=True, help="directory of ground-truth PNGs")
    rp.add_argument("--outdir", required=True)
    rp.add_argument("--srs", default="0.1,0.3,0.5")
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--iters", type=int, default=5000)
    rp.add_argument("--lr", type=float, default=0.01)
    rp.add_argument("--workers", type=int, default=1)
    rp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    tune_malloc_for_large_arrays()
    # keep track of whether --outdir was explicitly given (replay default differs)
    args.outdir_set = "--outdir" in (argv if argv is not None else sys.argv)
    try:
        with blas_threads(thread_count_from_env()):
            return args.func(args)
    except UsageError as e:
        logger.error("usage error: %s", e)
        return EXIT_USAGE
    except (QuatpaintError, ValueError, OSError, KeyError) as e:
        logger.error("error: %s", e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
