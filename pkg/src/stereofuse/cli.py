"""``stereofuse`` command line: run, bench, sweep, convert, inspect, synth.

Settings come from three layers, later ones winning: built-in defaults, a
``--config`` file (``key = value`` lines; FusionParams field names plus the
run keys listed in :data:`RUN_KEYS`), then command-line flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .core import (
    PARAM_TYPES,
    FusionParams,
    SeedSet,
    parse_kv,
    parse_value,
    params_from_dict,
    read_seeds,
    serialize_params,
    set_workers,
    write_seeds,
)
from .datasets import (
    SplitSpec,
    StereoSample,
    depth_image_to_seeds,
    load_dataset,
    pfm_header,
    png_header,
    read_depth_image,
    read_gray,
    read_middlebury_calib,
    read_pfm,
    sample_split,
    write_middlebury_sample,
    write_pfm,
)
from .evaluation import (
    colorize,
    error_rates,
    mean_rows,
    rows_to_csv,
    sample_sweep,
    write_color_png,
    write_json,
)
from .pipeline import METHODS, Method, run_method

SWEEP_FRACTIONS = (0.05, 0.10, 0.15, 0.25)

# flag dest -> FusionParams field
PARAM_FLAGS = {
    "paths": "num_paths", "p1": "p1", "p2": "p2", "dmax": "d_max", "census_radius": "census_radius",
    "tau_d": "tau_d", "tau_n": "tau_n", "tau_l": "tau_l", "tau_u": "tau_u", "sigma_r": "sigma_r",
    "sigma_d": "sigma_d", "kw": "k_w", "kinterp": "k_interp",
}

# run-level config keys and their value kinds
RUN_KEYS = {
    "method": "str", "fraction": "str", "noise": "float", "noise_on": "str", "rng": "int",
    "dataset": "str", "data": "str", "relative_tolerance": "bool", "workers": "int", "out": "str",
}
RUN_DEFAULTS = {
    "noise": 0.0, "noise_on": "disparity", "rng": 0, "relative_tolerance": False, "workers": None,
}


class CliError(RuntimeError):
    pass


@contextmanager
def stage(name: str, target=None):
    """Re-raise any failure as a CliError naming the stage and the file involved."""
    try:
        yield
    except CliError:
        raise
    except (OSError, ValueError) as exc:
        where = f" ({target})" if target is not None else ""
        raise CliError(f"{name} failed{where}: {exc}") from exc


# -- argument parsing ------------------------------------------------------------------

def _param_group(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("matching and fusion parameters")
    g.add_argument("--paths", type=int, choices=(4, 8), help="number of aggregation paths (default 8)")
    g.add_argument("--p1", type=int, help="penalty for 1-level disparity changes (default 7)")
    g.add_argument("--p2", type=int, help="penalty for larger disparity jumps (default 100)")
    g.add_argument("--dmax", type=int, help="maximum disparity level (default 256)")
    g.add_argument("--census-radius", type=int, help="census window radius, 1..3 (default 2)")
    g.add_argument("--tau-d", type=float, help="disparity agreement band in levels (default 2)")
    g.add_argument("--tau-n", type=float, help="neighbour similarity threshold (default 0.5)")
    g.add_argument("--tau-l", type=float, help="low-confidence cutoff (default 0.1)")
    g.add_argument("--tau-u", type=float, help="high-confidence cutoff (default 0.9)")
    g.add_argument("--sigma-r", type=float, help="intensity Gaussian width (default 10)")
    g.add_argument("--sigma-d", type=float, help="spatial Gaussian width in pixels (default kinterp/2)")
    g.add_argument("--kw", type=int, help="neighbourhood window radius (default 7)")
    g.add_argument("--kinterp", type=int, help="interpolation radius (default 15)")


def _common(parser: argparse.ArgumentParser, *, evaluation: bool) -> None:
    parser.add_argument("--config", type=Path, help="key = value settings file; flags override it")
    parser.add_argument("--workers", type=int, help="worker threads (default: available CPUs; at most the pool size, NUMBA_NUM_THREADS)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--dataset", choices=("middlebury", "kitti"), help="dataset layout under --data")
    parser.add_argument("--data", type=Path, help="dataset root directory")
    parser.add_argument("--fraction", help="ground-truth fraction used as seeds (comma list for bench/sweep)")
    parser.add_argument("--noise", type=float, help="multiplicative seed noise bound, e.g. 0.05 (default 0)")
    parser.add_argument("--noise-on", choices=("disparity", "depth"), help="quantity the noise perturbs")
    parser.add_argument("--rng", type=int, help="random seed for the seed/eval split (default 0)")
    parser.add_argument("--relative-tolerance", action="store_true", default=None,
                        help="outliers must also exceed 5%% of the true disparity")
    if evaluation:
        parser.add_argument("--no-timings", action="store_true",
                            help="leave timing columns empty so reports are byte-reproducible")
    _param_group(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereofuse",
                                     description="Stereo matching fused with sparse range measurements.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run = sub.add_parser("run", help="compute disparity maps for a pair or a dataset")
    run.add_argument("--method", help=f"one of {', '.join(METHODS)} (default diffusion)")
    run.add_argument("--pair", nargs=2, type=Path, metavar=("LEFT", "RIGHT"), help="rectified image pair")
    run.add_argument("--seeds", type=Path, help="seed file for --pair (header 'stereofuse-seeds W H', then 'x y d')")
    run.add_argument("--gt", type=Path, help="ground-truth PFM for --pair; enables the error report")
    _common(run, evaluation=True)

    for name, text in (("bench", "error table over a dataset (per-sample and mean rows)"),
                       ("sweep", "error versus seed fraction (default fractions 5, 10, 15, 25%%)")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--method", help="comma-separated methods or 'all' (default all)")
        p.add_argument("--json", action="store_true", help="also write a JSON report")
        _common(p, evaluation=True)

    conv = sub.add_parser("convert", help="depth image + calibration -> seed file")
    conv.add_argument("depth", type=Path, help="depth image (16-bit PNG or PFM in metres)")
    conv.add_argument("--calib", type=Path, help="Middlebury-style calib.txt (focal, baseline in mm)")
    conv.add_argument("--focal", type=float, help="focal length in pixels (overrides --calib)")
    conv.add_argument("--baseline", type=float, help="baseline in metres (overrides --calib)")
    conv.add_argument("--depth-scale", type=float, default=0.001, help="PNG depth units in metres (default 0.001)")
    conv.add_argument("--dmax", type=float, help="drop seeds above this disparity")
    conv.add_argument("--out", type=Path, required=True, help="seed file to write")

    insp = sub.add_parser("inspect", help="print PFM/PNG headers")
    insp.add_argument("files", nargs="+", type=Path)

    syn = sub.add_parser("synth", help="write synthetic Middlebury-style samples")
    syn.add_argument("--out", type=Path, required=True, help="output root")
    syn.add_argument("--count", type=int, default=3, help="number of samples (default 3)")
    syn.add_argument("--rng", type=int, default=0, help="first scene seed (default 0)")
    syn.add_argument("--width", type=int, default=320)
    syn.add_argument("--height", type=int, default=240)
    syn.add_argument("--max-disparity", type=float, default=48.0)
    return parser


# -- settings resolution ---------------------------------------------------------------------

def resolve(args: argparse.Namespace) -> tuple[dict, FusionParams]:
    """Merge defaults, config file and flags into run settings plus FusionParams."""
    settings = dict(RUN_DEFAULTS)
    param_values: dict = {}
    if getattr(args, "config", None) is not None:
        with stage("reading config", args.config):
            raw = parse_kv(args.config.read_text(encoding="utf-8"))
            for key, text in raw.items():
                if key in PARAM_TYPES:
                    param_values[key] = parse_value(text, PARAM_TYPES[key])
                elif key in RUN_KEYS:
                    settings[key] = parse_value(text, RUN_KEYS[key])
                else:
                    raise ValueError(f"unknown key {key!r}")
    for dest, field_name in PARAM_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            param_values[field_name] = value
    for key in RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = str(value) if isinstance(value, Path) else value
    with stage("validating parameters"):
        params = params_from_dict(param_values)
    return settings, params


def _methods(text: str | None, default) -> list[str]:
    if text is None:
        return list(default)
    if text == "all":
        return list(METHODS)
    names = [t.strip() for t in text.split(",") if t.strip()]
    for name in names:
        if name not in METHODS:
            raise CliError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return names


def _fractions(text, default) -> list[float]:
    if text is None:
        return list(default)
    try:
        values = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise CliError(f"bad --fraction value {text!r}") from exc
    for v in values:
        if not 0 < v < 1:
            raise CliError(f"seed fraction must lie in (0, 1), got {v}")
    return values


def _load_samples(settings: dict, params: FusionParams) -> tuple[str, list[StereoSample]]:
    kind, root = settings.get("dataset"), settings.get("data")
    if kind is None or root is None:
        raise CliError("--dataset and --data are required")
    with stage("loading dataset", root):
        return kind, load_dataset(kind, root, d_max=params.d_max)


def _prepare(args) -> tuple[dict, FusionParams]:
    settings, params = resolve(args)
    with stage("setting workers"):
        set_workers(settings["workers"])
    return settings, params


def _write_maps(disp, out_dir: Path, params: FusionParams) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("writing disparity", out_dir / "disparity.pfm"):
        write_pfm(disp, out_dir / "disparity.pfm")
    with stage("writing colour map", out_dir / "disparity.png"):
        write_color_png(colorize(disp, 0.0, float(params.d_max)), out_dir / "disparity.png")


# -- subcommands -------------------------------------------------------------------------

def cmd_run(args) -> int:
    settings, params = _prepare(args)
    method = _methods(settings.get("method"), ["diffusion"])
    if len(method) != 1:
        raise CliError("run takes a single --method")
    method = Method(method[0])
    out = Path(settings.get("out") or "stereofuse-out")
    timings = not args.no_timings
    report = []

    if args.pair is not None:
        left_path, right_path = args.pair
        with stage("reading left image", left_path):
            left = read_gray(left_path)
        right = None
        if method.uses_stereo:
            with stage("reading right image", right_path):
                right = read_gray(right_path)
        seeds = None
        if args.seeds is not None:
            with stage("reading seeds", args.seeds):
                seeds = read_seeds(args.seeds, d_max=params.d_max)
        elif method.uses_seeds:
            raise CliError(f"method {method} needs --seeds with --pair")
        with stage(f"running {method}", left_path):
            result = run_method(method, left, right, seeds, params)
        _write_maps(result.disparity, out, params)
        entry = {"sample": left_path.stem, "method": str(method)}
        if args.gt is not None:
            with stage("reading ground truth", args.gt):
                gt = read_pfm(args.gt).clipped(params.d_max)
                rep = error_rates(result.disparity, gt, relative=settings["relative_tolerance"])
            entry.update(gt_eval_count=rep.count,
                         errors={f"{t:g}px": round(p, 4) for t, p in zip(rep.thresholds, rep.percentages)})
        if timings:
            entry["ms"] = {k: round(v, 4) for k, v in result.timings.as_ms().items()}
        report.append(entry)
    else:
        kind, samples = _load_samples(settings, params)
        fraction = _fractions(settings.get("fraction"), [0.15 if kind == "kitti" else 0.025])
        if len(fraction) != 1:
            raise CliError("run takes a single --fraction")
        split = SplitSpec(fraction[0], settings["noise"], settings["rng"], settings["noise_on"])
        for sample in samples:
            with stage(f"running {method}", sample.name):
                seeds, held_out = sample_split(sample.ground_truth, split, d_max=params.d_max)
                result = run_method(method, sample.left, sample.right, seeds, params)
                rep = error_rates(result.disparity, held_out, relative=settings["relative_tolerance"])
            _write_maps(result.disparity, out / sample.name, params)
            entry = {"sample": sample.name, "method": str(method), "fraction": fraction[0],
                     "seed": settings["rng"], "gt_eval_count": rep.count,
                     "errors": {f"{t:g}px": round(p, 4) for t, p in zip(rep.thresholds, rep.percentages)}}
            if timings:
                entry["ms"] = {k: round(v, 4) for k, v in result.timings.as_ms().items()}
            report.append(entry)

    out.mkdir(parents=True, exist_ok=True)
    with stage("writing report", out / "report.json"):
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "params.cfg").write_text(serialize_params(params), encoding="utf-8")
    for entry in report:
        errs = entry.get("errors")
        text = ", ".join(f">{k} {v:.2f}%" for k, v in errs.items()) if errs else "no ground truth"
        print(f"{entry['sample']}: {entry['method']}: {text}")
    print(f"wrote {out}")
    return 0


def _table(args, default_fractions, name: str) -> int:
    settings, params = _prepare(args)
    methods = _methods(settings.get("method"), METHODS)
    kind, samples = _load_samples(settings, params)
    fractions = _fractions(settings.get("fraction"), default_fractions)
    rows = []
    for sample in samples:
        with stage("evaluating", sample.name):
            rows += sample_sweep(sample, fractions, methods, params, settings["rng"], noise=settings["noise"],
                                 noise_on=settings["noise_on"], relative=settings["relative_tolerance"],
                                 dataset=kind)
    rows.sort(key=lambda r: r.sort_key())
    rows += mean_rows(rows)
    timings = not args.no_timings
    out = Path(settings.get("out") or "stereofuse-out")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    with stage("writing report", csv_path):
        csv_path.write_text(rows_to_csv(rows, timings=timings), encoding="utf-8")
        if args.json:
            write_json(rows, out / f"{name}.json", timings=timings)
    for row in rows:
        if row.sample == "mean":
            print(f"{row.method:>15} {row.fraction:6.3f}  "
                  + "  ".join(f">{t:g}px {p:7.3f}%" for t, p in zip(row.report.thresholds, row.report.percentages)))
    print(f"wrote {csv_path}")
    return 0


def cmd_bench(args) -> int:
    return _table(args, [0.025], "bench")


def cmd_sweep(args) -> int:
    return _table(args, SWEEP_FRACTIONS, "sweep")


def cmd_convert(args) -> int:
    focal, baseline = args.focal, args.baseline
    if args.calib is not None and (focal is None or baseline is None):
        with stage("reading calibration", args.calib):
            calib = read_middlebury_calib(args.calib)
        focal = calib["focal"] if focal is None else focal
        baseline = calib["baseline_m"] if baseline is None else baseline
    if focal is None or baseline is None:
        raise CliError("convert needs --calib or both --focal and --baseline")
    with stage("reading depth image", args.depth):
        depth = read_depth_image(args.depth, args.depth_scale)
    with stage("projecting depth", args.depth):
        seeds: SeedSet = depth_image_to_seeds(depth, focal, baseline, args.dmax)
    with stage("writing seeds", args.out):
        write_seeds(seeds, args.out)
    print(f"wrote {len(seeds)} seeds to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    for path in args.files:
        with stage("reading header", path):
            if path.suffix.lower() == ".pfm":
                header = pfm_header(path)
            else:
                header = png_header(path)
        print(f"{path}: " + " ".join(f"{k}={v}" for k, v in header.items()))
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_scene

    for i in range(args.count):
        scene = make_scene(args.rng + i, width=args.width, height=args.height, max_disparity=args.max_disparity)
        with stage("writing sample", args.out / scene.name):
            write_middlebury_sample(scene, args.out / scene.name)
    print(f"wrote {args.count} samples under {args.out}")
    return 0


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "sweep": cmd_sweep, "convert": cmd_convert,
            "inspect": cmd_inspect, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"stereofuse {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
