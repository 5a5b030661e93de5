"""Command-line entry point.

Subcommands: ``run``, ``ablate``, ``synth``, ``convert``, ``inspect``.
Parameters resolve as flags > ``--config`` file > built-in defaults; a
``scene`` name fills window size, principal components and beta1 from the
per-scene table unless those are set explicitly.

Exit codes: 0 success, 1 configuration or input error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .core import ValidationError
from .evaluation import format_table
from .io import (
    FormatError,
    SyntheticSceneSpec,
    convert_raw,
    export_error_map,
    export_report,
    export_trials,
    generate_synthetic,
    neighbour_agreement,
    read_cube,
    read_labels,
    write_cube,
    write_labels,
)
from .pipeline import (
    STAGES,
    StageError,
    ablate,
    config_from_kv,
    config_to_kv,
    format_kv_text,
    load_inputs,
    normalize_stages,
    parse_kv_text,
    stage_name,
)

logger = logging.getLogger("hsiclass")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2

# (config key, type, help); the flag is --<key>
_PARAM_FLAGS = [
    ("scene", str, "scene name selecting tuned defaults (indian_pines, salinas, ...)"),
    ("cube", str, "HSIC cube file"),
    ("labels", str, "HSIL ground-truth file"),
    ("stages", str, f"comma list out of {','.join(STAGES)} (svc is mandatory)"),
    ("nsw-window", int, "NSW window side (odd)"),
    ("nsw-offset-min", int, "smallest window offset searched"),
    ("nsw-eps", float, "variance floor for the correlation"),
    ("pca-dims", int, "number of principal components"),
    ("svc-grid-nu", str, "comma list of nu values for cross-validation"),
    ("svc-grid-gamma", str, "comma list of RBF gamma values for cross-validation"),
    ("svc-tol", float, "SMO stopping tolerance"),
    ("svc-folds", int, "cross-validation folds"),
    ("beta1", float, "weight of the l1 gradient term"),
    ("beta2", float, "weight of the squared gradient term"),
    ("admm-mu", float, "ADMM penalty"),
    ("stv-tol", float, "ADMM stopping tolerance"),
    ("stv-max-iters", int, "ADMM iteration cap"),
    ("per-class", int, "training pixels per class"),
    ("trials", int, "number of randomized trials"),
    ("seed", int, "master seed"),
    ("synth-rows", int, "synthetic scene rows"),
    ("synth-cols", int, "synthetic scene columns"),
    ("synth-bands", int, "synthetic scene bands"),
    ("synth-classes", int, "synthetic scene classes"),
    ("synth-patch", float, "synthetic patch side in pixels"),
    ("synth-noise", float, "synthetic white-noise sigma"),
    ("synth-cov-scale", float, "synthetic band-correlated variability"),
    ("synth-seed", int, "synthetic scene seed"),
]
_BOOL_FLAGS = [
    ("pca-no-center", "skip mean-centring before PCA"),
    ("stv-isotropic", "use the isotropic TV norm"),
]


def _dest(key: str) -> str:
    return "kv_" + key.replace("-", "_")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value parameter file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    g = p.add_argument_group("parameters")
    for key, typ, text in _PARAM_FLAGS:
        g.add_argument(f"--{key}", dest=_dest(key), type=typ, default=None, help=text)
    for key, text in _BOOL_FLAGS:
        g.add_argument(f"--{key}", dest=_dest(key), action="store_const", const="true", default=None, help=text)


def _synth_needs_explicit(kv: dict[str, str], stages) -> None:
    if "scene" in kv or not any(k.startswith("synth-") for k in kv):
        return
    if stages is None:
        stages = normalize_stages(kv.get("stages", ",".join(STAGES)).replace("+", ",").split(","))
    need = {"nsw": "nsw-window", "pca": "pca-dims", "stv": "beta1"}
    missing = [need[s] for s in need if s in stages and need[s] not in kv]
    if missing:
        raise ValidationError(f"synthetic runs need explicit {', '.join(missing)}")


def resolve_config(args: argparse.Namespace, stages=None):
    """Merge defaults, the config file and flags into a PipelineConfig.

    ``stages`` (the union of ablation stage sets) decides which parameters a
    synthetic run must state explicitly; defaults to the configured stages.
    """
    kv: dict[str, str] = {}
    if args.config:
        kv.update(parse_kv_text(Path(args.config).read_text()))
    for key, _, _ in _PARAM_FLAGS + [(k, None, None) for k, _ in _BOOL_FLAGS]:
        v = getattr(args, _dest(key))
        if v is not None:
            kv[key] = repr(v) if isinstance(v, float) else str(v)
    _synth_needs_explicit(kv, stages)
    return config_from_kv(kv)


def _write_outputs(out: Path, config, reports) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_kv_text(config_to_kv(config)))
    export_report(reports, out / "report.csv")
    for name, rep in reports.items():
        tag = name.replace("+", "_").replace("#", "_")
        export_trials(rep, out / f"trials_{tag}.csv")
        export_error_map(rep.error_counts, out / f"errors_{tag}.pgm", trials=rep.n_trials)


def _report(reports) -> None:
    print(format_table(reports))
    for name, rep in reports.items():
        if not rep.info.get("stv_converged", True):
            print(f"note: {name}: STV hit its iteration cap in at least one trial", file=sys.stderr)


def cmd_run(args) -> int:
    config = resolve_config(args)
    cube, gt = load_inputs(config)
    reports = ablate(cube, gt, config, {stage_name(config.stages): config.stages})
    _write_outputs(Path(args.out), config, reports)
    _report(reports)
    return EXIT_OK


def cmd_ablate(args) -> int:
    sets = [normalize_stages(s.replace("+", ",").split(",")) for s in args.sets]
    if len(sets) < 2:
        raise ValidationError("ablate needs at least two stage sets")
    config = resolve_config(args, frozenset().union(*sets))
    cube, gt = load_inputs(config)
    reports = ablate(cube, gt, config, sets)
    _write_outputs(Path(args.out), config, reports)
    _report(reports)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSceneSpec(
        rows=args.rows, cols=args.cols, bands=args.bands, classes=args.classes,
        patch_size=args.patch, noise=args.noise, covariance_scale=args.cov_scale, seed=args.seed,
    )
    cube, gt = generate_synthetic(spec)
    write_cube(cube, args.cube)
    write_labels(gt, args.labels)
    print(f"{cube.rows}x{cube.cols}x{cube.bands}, {gt.n_classes} classes, "
          f"neighbour agreement {neighbour_agreement(gt.labels):.4f}")
    return EXIT_OK


def cmd_convert(args) -> int:
    if args.kind == "labels":
        arr = np.fromfile(args.src, dtype=np.dtype(args.dtype or "<u2"))
        if arr.size != args.rows * args.cols:
            raise FormatError(f"{args.src}: expected {args.rows * args.cols} samples, found {arr.size}")
        write_labels(arr.astype(np.int64).reshape(args.rows, args.cols), args.dst)
    else:
        if args.bands is None:
            raise ValidationError("--bands is required for cubes")
        convert_raw(args.src, args.dst, args.rows, args.cols, args.bands,
                    dtype=args.dtype or "<f4", interleave=args.interleave)
    print(f"wrote {args.dst}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    for path in args.paths:
        with open(path, "rb") as fh:
            magic = fh.read(4)
        if magic == b"HSIC":
            cube = read_cube(path)
            v = cube.values
            print(f"{path}: cube {cube.rows}x{cube.cols}x{cube.bands}, "
                  f"min {v.min():.6g} max {v.max():.6g} mean {v.mean():.6g}")
        elif magic == b"HSIL":
            gt = read_labels(path)
            counts = ", ".join(f"{k}:{n}" for k, n in enumerate(gt.class_counts(), start=1))
            print(f"{path}: labels {gt.rows}x{gt.cols}, {gt.n_classes} classes, "
                  f"background {int((~gt.foreground).sum())}, counts {counts}")
        else:
            raise FormatError(f"{path}: unrecognized container")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsiclass", description="Spectral-spatial HSI classification")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured pipeline over randomized trials")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="compare stage sets on shared training samples")
    p.add_argument("sets", nargs="+", metavar="STAGES", help="stage sets such as svc or nsw,pca,svc,stv")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("cube")
    p.add_argument("labels")
    base = SyntheticSceneSpec()
    p.add_argument("--rows", type=int, default=base.rows)
    p.add_argument("--cols", type=int, default=base.cols)
    p.add_argument("--bands", type=int, default=base.bands)
    p.add_argument("--classes", type=int, default=base.classes)
    p.add_argument("--patch", type=float, default=base.patch_size)
    p.add_argument("--noise", type=float, default=base.noise)
    p.add_argument("--cov-scale", type=float, default=base.covariance_scale)
    p.add_argument("--seed", type=int, default=base.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="wrap a headerless raw dump into an HSIC/HSIL file")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--kind", choices=("cube", "labels"), default="cube")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--bands", type=int)
    p.add_argument("--dtype", help="numpy dtype string of the raw samples (default <f4, labels <u2)")
    p.add_argument("--interleave", choices=("bip", "bil", "bsq"), default="bip")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("inspect", help="print cube or label statistics")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValidationError, FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
