"""Command-line entry point: ``varfusion <subcommand> [options]``.

Exit status is 0 on success, 2 on invalid input or configuration and 3 when
a numerical solver fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import FusionConfig
from .fuse import DescentError, InfeasibleError, run_extrapolation, run_interpolation, run_restoration
from .geometry import normal_field
from .metrics import band_report, haarpsi, ndvi, rmse, ssim
from .predict import PredictionProblem, SolverError, predict_prototype
from .prototype import build_prototypes
from .raster import J1, BandTag, MultiBandImage
from .synth import DEFAULT_TAGS, make_instance
from .texture import delta_lower_bound, l2_norm_sq, texture_index_static

log = logging.getLogger("varfusion")

METRIC_ROWS = [("RMSE", "rmse"), ("RMSE_sqrt", "rmse_sqrt"), ("Corr", "corr"),
               ("CorrLaplace", "corr_laplace"), ("SSIM", "ssim"), ("HaarPSI", "haarpsi"), ("PSNR", "psnr")]


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# loading


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _config(args) -> FusionConfig:
    return io.read_config(_require(args.config)) if args.config else FusionConfig()


def _tags(args):
    tags = io.parse_bands(args.bands)
    if len({t.name for t in tags}) != len(tags):
        raise UsageError(f"duplicate band names in --bands {args.bands!r}")
    return tags


class Inputs:
    """Series, masks, coarse image and optional truth named by a manifest."""

    def __init__(self, manifest_path, tags):
        manifest = io.read_manifest(_require(manifest_path))
        self.series, self.masks = [], []
        for entry in manifest.entries:
            img = io.read_sfr(_require(entry.image), tags)
            if img.day != entry.day:
                raise UsageError(f"{entry.image}: header day {img.day} but manifest says {entry.day}")
            self.series.append(img)
            self.masks.append(None if entry.mask is None else io.read_mask(_require(entry.mask)))
        grid = self.series[0].grid
        for path, m in zip([e.mask for e in manifest.entries], self.masks):
            if m is not None and m.shape != grid.shape:
                raise UsageError(f"{path}: mask shape {m.shape} does not match image {grid.shape}")
        self.days = [img.day for img in self.series]
        self.modis = None
        if manifest.modis is not None:
            j1 = [t for t in tags if t.group == J1]
            low = io.read_sfr(_require(manifest.modis), j1)
            h, w = low.bands.shape[1:]
            if grid.width % w or grid.height % h:
                raise UsageError(f"{manifest.modis}: {w}x{h} does not divide the image grid "
                                 f"{grid.width}x{grid.height}")
            pitch = (grid.width // w * grid.pitch_x, grid.height // h * grid.pitch_y)
            day = low.day if manifest.modis_day is None else manifest.modis_day
            self.modis = MultiBandImage(low.bands, low.tags, day, pitch)
        self.truth = None if manifest.truth is None else io.read_sfr(_require(manifest.truth), tags)

    def need_modis(self) -> MultiBandImage:
        if self.modis is None:
            raise UsageError("manifest names no coarse image (modis=...)")
        return self.modis


def _infer_mode(days, target: int) -> str:
    if target in days:
        return "a1"
    if days[0] < target < days[-1]:
        return "a2"
    if target > days[-1]:
        return "a3"
    raise UsageError(f"target day {target} precedes the first acquisition day {days[0]}")


def _target_day(args, inputs: Inputs) -> int:
    if args.target_day is not None:
        return args.target_day
    if inputs.modis is not None:
        return inputs.modis.day
    raise UsageError("--target-day is required when the manifest has no coarse image")


# --------------------------------------------------------------------------
# writers


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return repr(float(x))


def write_trace_csv(path, solves) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["band", "iteration", "total", "directional", "geometry", "observed", "coarse"])
        for name, res in solves.items():
            for it, total, parts in res.trace:
                out.writerow([name, it, _fmt(total)] + [_fmt(p) for p in parts])


def metric_table(truth: MultiBandImage, estimate: MultiBandImage, cap: float):
    """Per-band metric rows plus the NDVI rows (when B4 and B8a exist)."""
    if truth.names != estimate.names:
        raise UsageError(f"band layouts differ: {truth.names} vs {estimate.names}")
    if truth.bands.shape != estimate.bands.shape:
        raise UsageError(f"grids differ: {truth.bands.shape} vs {estimate.bands.shape}")
    per_band = {name: band_report(truth.bands[j], estimate.bands[j], cap)
                for j, name in enumerate(truth.names)}
    ndvi_rows = {}
    if {"B4", "B8a"} <= set(truth.names):
        a, b = ndvi(truth), ndvi(estimate)
        ndvi_rows = {"RMSE": rmse(a, b),
                     "SSIM": ssim(a, b, 2.0) if min(a.shape) >= 11 else math.nan,
                     "HaarPSI": haarpsi(a, b) if min(a.shape) >= 8 else math.nan}
    return per_band, ndvi_rows


def write_metrics_csv(path, per_band, ndvi_rows) -> None:
    names = list(per_band)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["metric"] + names)
        for label, key in METRIC_ROWS:
            out.writerow([label] + [_fmt(per_band[n][key]) for n in names])
        for label, value in ndvi_rows.items():
            out.writerow([f"NDVI_{label}", _fmt(value)])


def _stationarity_lines(solves) -> list[str]:
    lines = []
    for name, sol in solves.items():
        scale = abs(sol.trace[0][1])
        rel = sol.stationarity / scale if scale > 0 else 0.0
        lines.append(f"{name}: {sol.stationarity:.6g} ({rel:.3e} of the initial energy)")
    return lines


def _table_text(per_band, ndvi_rows) -> list[str]:
    names = list(per_band)
    lines = ["metric".ljust(12) + "".join(n.rjust(14) for n in names)]
    for label, key in METRIC_ROWS:
        lines.append(label.ljust(12) + "".join(f"{per_band[n][key]:14.4f}" for n in names))
    if ndvi_rows:
        lines.append("")
        lines.append("NDVI".ljust(12) + "value".rjust(14))
        for label, value in ndvi_rows.items():
            lines.append(label.ljust(12) + f"{value:14.4f}")
    return lines


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inst = make_instance(args.seed, args.size, args.ratio, args.mode, n_fields=args.fields,
                         bands=len(DEFAULT_TAGS), coverage=args.coverage, evolution=args.evolution,
                         noise_sd=args.noise)
    entries = []
    for img, mask in zip(inst.series, inst.masks):
        image_path = out / f"image_{img.day:03d}.sfr"
        io.write_sfr(image_path, img)
        mask_path = None
        if mask.any():
            mask_path = out / f"mask_{img.day:03d}.pgm"
            io.write_mask(mask_path, mask)
        entries.append(io.ManifestEntry(image_path, mask_path, img.day))
    io.write_sfr(out / "modis.sfr", inst.modis)
    io.write_sfr(out / "truth.sfr", inst.truth)
    io.write_manifest(out / "manifest.txt",
                      io.Manifest(entries, out / "modis.sfr", inst.target_day, out / "truth.sfr"))
    print(f"wrote {len(entries)} images, target day {inst.target_day}: {out / 'manifest.txt'}")
    return 0


def cmd_prototype(args) -> int:
    inputs = Inputs(args.manifest, _tags(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for proto in build_prototypes(list(zip(inputs.series, inputs.masks))):
        io.write_sfr(out / f"prototype_{proto.day:03d}.sfr", proto)
    print(f"wrote {len(inputs.series)} prototypes to {out}")
    return 0


def _single_band(args):
    img = io.read_sfr(_require(args.input), _tags(args) if args.bands else None)
    try:
        j = img.index(args.band)
    except (KeyError, ValueError):
        try:
            j = int(args.band)
        except ValueError:
            raise UsageError(f"unknown band {args.band!r}; have {img.names}") from None
    if not 0 <= j < len(img.tags):
        raise UsageError(f"band index {j} out of range")
    return img, j


def cmd_texture(args) -> int:
    cfg = _config(args)
    img, j = _single_band(args)
    q = texture_index_static(img.bands[j], cfg, img.pitch)
    delta = delta_lower_bound(cfg, img.grid, l2_norm_sq(img.bands[j], img.pitch))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sfr(out / "texture.sfr", MultiBandImage(q[None], [BandTag("q")], img.day, img.pitch))
    print(f"q in [{q.min():.6g}, {q.max():.6g}], lower bound 1+{delta:.3e}")
    return 0


def cmd_normals(args) -> int:
    cfg = _config(args)
    img, j = _single_band(args)
    theta = normal_field(img.bands[j], cfg.eps, cfg.normal_steps * cfg.flow_dt, cfg.flow_dt, img.pitch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sfr(out / "normals.sfr",
                 MultiBandImage(theta, [BandTag("theta_x"), BandTag("theta_y")], img.day, img.pitch))
    print(f"max |theta| = {np.sqrt((theta**2).sum(0)).max():.6g}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    inputs = Inputs(args.manifest, _tags(args))
    target = _target_day(args, inputs)
    if _infer_mode(inputs.days, target) != "a2":
        raise UsageError(f"target day {target} is not strictly between two acquisition days {inputs.days}")
    i = max(k for k, d in enumerate(inputs.days) if d < target)
    protos = build_prototypes(list(zip(inputs.series, inputs.masks)))
    pred = predict_prototype(PredictionProblem(protos[i], protos[i + 1], target, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sfr(out / f"predicted_{target:03d}.sfr", pred.image)
    for name, score in zip(pred.image.names, pred.endpoint_psnr):
        print(f"{name}: endpoint PSNR {score:.2f} dB")
    return 0


def _run_fusion(cfg, inputs: Inputs, mode: str, target: int, threads: int):
    modis = inputs.need_modis()
    if modis.day != target:
        log.warning("coarse image day %d differs from target day %d", modis.day, target)
    expected = _infer_mode(inputs.days, target)
    if mode != expected:
        raise UsageError(f"--mode {mode} does not fit target day {target} with acquisitions {inputs.days} "
                         f"(expected {expected})")
    if mode == "a1":
        return run_restoration(inputs.series, inputs.masks, modis, inputs.days.index(target), cfg, threads)
    if mode == "a2":
        return run_interpolation(inputs.series, inputs.masks, modis, target, cfg, threads)
    return run_extrapolation(inputs.series, inputs.masks, modis, target, cfg, threads)


def cmd_fuse(args) -> int:
    cfg = _config(args)
    inputs = Inputs(args.manifest, _tags(args))
    target = _target_day(args, inputs)
    mode = args.mode or _infer_mode(inputs.days, target)
    res = _run_fusion(cfg, inputs, mode, target, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sfr(out / "fused.sfr", res.image)
    write_trace_csv(out / "energy_trace.csv", res.solves)
    print("\n".join(_stationarity_lines(res.solves)))
    print(f"fused day {target} ({mode}) -> {out / 'fused.sfr'}")
    return 0


def cmd_metrics(args) -> int:
    tags = _tags(args)
    truth = io.read_sfr(_require(args.truth), tags)
    estimate = io.read_sfr(_require(args.estimate), tags)
    cap = _config(args).cap
    per_band, ndvi_rows = metric_table(truth, estimate, cap)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", per_band, ndvi_rows)
    print("\n".join(_table_text(per_band, ndvi_rows)))
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = args.manifest
    if manifest is None:
        synth_args = argparse.Namespace(**vars(args))
        synth_args.out = str(out / "input")
        synth_args.mode = args.mode or "a2"
        cmd_synth(synth_args)
        manifest = out / "input" / "manifest.txt"
    inputs = Inputs(manifest, _tags(args))
    target = _target_day(args, inputs)
    mode = args.mode or _infer_mode(inputs.days, target)
    res = _run_fusion(cfg, inputs, mode, target, args.threads)

    io.write_sfr(out / "fused.sfr", res.image)
    io.write_sfr(out / "prototype.sfr", res.prototype)
    write_trace_csv(out / "energy_trace.csv", res.solves)
    report = [f"mode {mode}, target day {target}, acquisitions {inputs.days}",
              f"grid {res.image.grid.width}x{res.image.grid.height}, bands {','.join(res.image.names)}",
              "", "[config]"]
    report += [f"{k}={v}" for k, v in sorted(vars(cfg).items())]
    report += ["", "[descent]"]
    for name, sol in res.solves.items():
        report.append(f"{name}: {sol.iterations} steps, energy {sol.trace[0][1]:.6g} -> {sol.trace[-1][1]:.6g}, "
                      f"beta {res.betas[name]:.6f}, converged {sol.converged}")
    report += ["", "[stationarity: min <grad F(u), v - u> over 100 random feasible v]"]
    report += _stationarity_lines(res.solves)
    if "endpoint_psnr" in res.diagnostics:
        report += ["", "[prediction endpoint PSNR, dB]"]
        report += [f"{n}: {v:.2f}" for n, v in res.diagnostics["endpoint_psnr"].items()]
    if inputs.truth is not None:
        per_band, ndvi_rows = metric_table(inputs.truth, res.image, cfg.cap)
        write_metrics_csv(out / "metrics.csv", per_band, ndvi_rows)
        report += ["", "[fused vs truth]"] + _table_text(per_band, ndvi_rows)
        base_band, base_ndvi = metric_table(inputs.truth, res.prototype, cfg.cap)
        report += ["", "[prototype vs truth]"] + _table_text(base_band, base_ndvi)
    (out / "report.txt").write_text("\n".join(report) + "\n")
    print(f"report: {out / 'report.txt'}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False):
        p.add_argument("--config", help="key=value parameter file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--bands", default=io.format_bands(DEFAULT_TAGS),
                       help="band layout NAME:GROUP,... (default %(default)s)")
        if manifest:
            p.add_argument("--manifest", required=True)
        return p

    def fusion_flags(p):
        p.add_argument("--mode", choices=("a1", "a2", "a3"))
        p.add_argument("--target-day", type=int)
        p.add_argument("--threads", type=int, default=1)

    def synth_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--size", type=int, default=128)
        p.add_argument("--ratio", type=int, default=8)
        p.add_argument("--fields", type=int, default=20)
        p.add_argument("--coverage", type=float, default=0.3)
        p.add_argument("--evolution", choices=("constant", "linear", "logistic"), default="logistic")
        p.add_argument("--noise", type=float, default=0.0)

    p = common(sub.add_parser("synth", help="write a synthetic test case and its manifest"))
    synth_flags(p)
    p.add_argument("--mode", choices=("a1", "a2", "a3"), default="a2")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("prototype", help="structural prototypes of a series"), manifest=True)
    p.set_defaults(func=cmd_prototype)

    for name, func, text in (("texture", cmd_texture, "texture index of one band"),
                             ("normals", cmd_normals, "unit normal field of one band")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--input", required=True)
        p.add_argument("--band", default="0", help="band name or index")
        p.set_defaults(func=func)
        p.set_defaults(bands="")

    p = common(sub.add_parser("predict", help="predict the prototype for a day between acquisitions"),
               manifest=True)
    p.add_argument("--target-day", type=int)
    p.set_defaults(func=cmd_predict)

    p = common(sub.add_parser("fuse", help="fuse the series with the coarse image"), manifest=True)
    fusion_flags(p)
    p.set_defaults(func=cmd_fuse)

    p = common(sub.add_parser("metrics", help="compare two SFR1 images band by band"))
    p.add_argument("--truth", required=True)
    p.add_argument("--estimate", required=True)
    p.set_defaults(func=cmd_metrics, out=None)

    p = common(sub.add_parser("pipeline", help="synthesize or load, fuse, score and report"))
    p.add_argument("--manifest")
    fusion_flags(p)
    synth_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (SolverError, DescentError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (InfeasibleError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
