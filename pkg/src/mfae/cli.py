"""Command-line entry points.

    mfae run <config> --out <dir> [--<key> <value> ...]
    mfae compare <emp.csv> <pred.csv> --tol <file> [--verdict <path>]
    mfae ingest-idx <images> --out <dir>
    mfae spectrum <data.csv|idx> --out <file>

Exit codes: 0 success/pass, 1 comparison failure, 2 runtime error.
Every config key has a same-named flag that overrides the file value.
"""

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import runner
from .idx import IdxPreprocessor, images_as_rows, parse_idx, save_basis
from .spectral import save_spectrum


def _build_parser():
    parser = argparse.ArgumentParser(prog="mfae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", required=True, help="output directory")
    for key in config_mod._SCHEMA:
        p_run.add_argument(f"--{key}", dest=f"key_{key}", metavar="VALUE")

    p_cmp = sub.add_parser("compare", help="compare empirical and predicted CSVs")
    p_cmp.add_argument("emp")
    p_cmp.add_argument("pred")
    p_cmp.add_argument("--tol", required=True, help="tolerance file (metric = bound)")
    p_cmp.add_argument("--verdict", default=None, help="where to write the verdict JSON")

    p_idx = sub.add_parser("ingest-idx", help="fit the preprocessor to an IDX image file")
    p_idx.add_argument("images")
    p_idx.add_argument("--out", required=True, help="output directory")

    p_spec = sub.add_parser("spectrum", help="estimate a covariance spectrum file")
    p_spec.add_argument("data", help="IDX image file or CSV of data rows")
    p_spec.add_argument("--out", required=True, help="spectrum file to write")
    return parser


def _cmd_run(args):
    overrides = {
        key: getattr(args, f"key_{key}")
        for key in config_mod._SCHEMA
        if getattr(args, f"key_{key}") is not None
    }
    cfg = config_mod.load_config(args.config, overrides=overrides)
    manifest = runner.run(cfg, args.out)
    print(f"{cfg.kind}: wrote {len(manifest['outputs'])} files to {args.out}")
    return 0


def _cmd_compare(args):
    tolerances = runner.load_tolerances(args.tol)
    verdict = args.verdict or (os.path.splitext(args.emp)[0] + "_verdict.json")
    report = runner.compare(args.emp, args.pred, tolerances, verdict_path=verdict)
    for metric, (gap, tol, ok) in sorted(report.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {metric}: sup gap {gap:.6g} vs tolerance {tol:.6g}")
    return 0 if report.passed else 1


def _cmd_ingest_idx(args):
    with open(args.images, "rb") as fh:
        tensor = parse_idx(fh.read())
    rows = images_as_rows(tensor)
    prep = IdxPreprocessor().fit(rows)
    os.makedirs(args.out, exist_ok=True)
    save_spectrum(os.path.join(args.out, "spectrum.txt"), prep.eigvals_)
    save_basis(os.path.join(args.out, "basis.bin"), prep.basis_)
    np.savetxt(os.path.join(args.out, "mean.txt"), prep.mean_, fmt="%.17g")
    print(f"ingested {tensor.n_items} images of {prep.dim_} pixels into {args.out}")
    return 0


def _cmd_spectrum(args):
    with open(args.data, "rb") as fh:
        blob = fh.read()
    if len(blob) >= 4 and blob[0] == 0 and blob[1] == 0:
        rows = images_as_rows(parse_idx(blob))
        eigvals = IdxPreprocessor().fit(rows).eigvals_
    else:
        rows = np.loadtxt(args.data, delimiter=",", ndmin=2)
        d = rows.shape[1]
        centered = rows - rows.mean(axis=0)
        cov = centered.T @ centered / rows.shape[0]
        eigvals = np.sort(np.linalg.eigvalsh(d * cov))[::-1]
        eigvals = np.maximum(eigvals, 1e-5)
    save_spectrum(args.out, eigvals)
    print(f"wrote {eigvals.size} eigenvalues to {args.out}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "ingest-idx": _cmd_ingest_idx,
        "spectrum": _cmd_spectrum,
    }[args.command]
    try:
        return handler(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
