"""Experiment orchestration: run configs, join curves, compare with tolerances.

Every run writes, inside its output directory only:

  emp_metrics.csv   step, time, rec_err_mean, rec_err_se, block_norm_1..k
  pred_metrics.csv  t plus the kind's prediction columns
  compare.csv       t, metric, emp, emp_se, pred, abs_gap, rel_gap
  manifest.json     config, seeds, package version, output list

plus kind-specific extras (two-stage table, coupling error series and
scaling summary, real-data spectrum export).  Floats are printed with 17
significant digits so reruns are byte-identical and values round-trip.
"""

import csv
import json
import math
import os

import numpy as np

from . import __version__, bounded_mf, relu_mf, sgd, two_stage
from .activations import parse_activation
from .config import ConfigError, ExperimentConfig
from .coupling import scaling_study
from .estimator import TiedAutoencoder
from .idx import IdxPreprocessor, images_as_rows, parse_idx, save_basis
from .spectral import TwoBlockModel, load_spectrum, make_spectral_model, save_spectrum

__all__ = ["run", "compare", "CompareReport", "load_tolerances"]


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _build_model(cfg):
    if cfg.get("spectrum") is not None:
        return make_spectral_model(load_spectrum(cfg.resolve(cfg.spectrum)))
    eigvals = np.concatenate([np.full(count, value) for count, value in cfg.blocks])
    return make_spectral_model(eigvals)


def _norm_blocks(cfg, dim):
    if cfg.get("norm_blocks") is not None:
        return tuple(cfg.norm_blocks)
    if cfg.get("blocks") is not None:
        return tuple(count for count, _ in cfg.blocks)
    return (dim,)


def _checkpoints(cfg):
    cps = cfg.checkpoints
    if isinstance(cps, tuple) and len(cps) == 2 and cps[0] == "log":
        return sgd.default_checkpoints(cfg.steps, cps[1])
    return tuple(cps)


def _estimator(cfg, norm_blocks):
    return TiedAutoencoder(
        n_neurons=cfg.n_neurons,
        activation=cfg.activation,
        l2=cfg.values["lambda"],
        learning_rate=cfg.epsilon,
        batch_size=cfg.batch_size,
        n_steps=cfg.steps,
        r0=cfg.r0,
        seed=cfg.seed,
        checkpoints=_checkpoints(cfg),
        mc_samples=cfg.mc_samples,
        norm_blocks=norm_blocks,
    )


def _emp_rows(history, n_blocks):
    header = ["step", "time", "rec_err_mean", "rec_err_se"]
    header += [f"block_norm_{j + 1}" for j in range(n_blocks)]
    rows = [
        [c.step, c.time, c.rec_err.mean, c.rec_err.std_error, *c.block_norms] for c in history
    ]
    return header, rows


def _compare_rows(times, emp_by_metric, pred_by_metric):
    rows = []
    for metric in sorted(set(emp_by_metric) & set(pred_by_metric)):
        emp, emp_se = emp_by_metric[metric]
        pred = pred_by_metric[metric]
        for i, t in enumerate(times):
            gap = abs(emp[i] - pred[i])
            rel = gap / abs(pred[i]) if pred[i] != 0 else math.inf
            rows.append([t, metric, emp[i], emp_se[i], pred[i], gap, rel])
    return rows


def run(cfg, out_dir):
    """Execute one experiment config, writing all artifacts under out_dir."""
    if not isinstance(cfg, ExperimentConfig):
        raise TypeError("run() expects a loaded ExperimentConfig")
    os.makedirs(out_dir, exist_ok=True)
    runner = {
        "relu_dynamics": _run_relu_dynamics,
        "bounded_dynamics": _run_bounded_dynamics,
        "coupling": _run_coupling,
        "two_stage": _run_two_stage,
        "real_data": _run_real_data,
    }[cfg.kind]
    outputs = runner(cfg, out_dir)
    manifest = {
        "artifact": "mfae",
        "version": __version__,
        "kind": cfg.kind,
        "config": cfg.raw,
        "resolved": {k: _jsonable(v) for k, v in sorted(cfg.values.items())},
        "outputs": sorted(outputs),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def _require_relu(cfg):
    if cfg.activation != "relu":
        raise ConfigError(f"kind {cfg.kind!r} uses the closed-form ReLU theory; set activation = relu")


def _dynamics_outputs(out_dir, history, times, pred_header, pred_columns, emp_blocks, pred_blocks):
    emp_header, emp_rows = _emp_rows(history, len(emp_blocks))
    _write_csv(os.path.join(out_dir, "emp_metrics.csv"), emp_header, emp_rows)

    pred_rows = list(zip(times, *pred_columns))
    _write_csv(os.path.join(out_dir, "pred_metrics.csv"), pred_header, pred_rows)

    emp_by_metric = {
        "rec_err": (
            [c.rec_err.mean for c in history],
            [c.rec_err.std_error for c in history],
        )
    }
    for j in range(len(emp_blocks)):
        emp_by_metric[f"block_norm_{j + 1}"] = (
            [c.block_norms[j] for c in history],
            [0.0] * len(history),
        )
    pred_by_metric = {"rec_err": pred_columns[0]}
    for j, col in enumerate(pred_blocks):
        pred_by_metric[f"block_norm_{j + 1}"] = col
    rows = _compare_rows(times, emp_by_metric, pred_by_metric)
    _write_csv(
        os.path.join(out_dir, "compare.csv"),
        ["t", "metric", "emp", "emp_se", "pred", "abs_gap", "rel_gap"],
        rows,
    )
    return ["emp_metrics.csv", "pred_metrics.csv", "compare.csv", "manifest.json"]


def _run_relu_dynamics(cfg, out_dir):
    _require_relu(cfg)
    model = _build_model(cfg)
    blocks = _norm_blocks(cfg, model.dim)
    est = _estimator(cfg, blocks).fit(model)
    times = [c.time for c in est.history_]
    l2 = cfg.values["lambda"]

    risk_pred = [relu_mf.risk(model, l2, cfg.r0, t) for t in times]
    block_pred = np.array(
        [relu_mf.block_norm_prediction(model, l2, cfg.r0, t, blocks) for t in times]
    )
    pred_header = ["t", "rec_err_pred"] + [f"block_pred_{j + 1}" for j in range(len(blocks))]
    pred_columns = [risk_pred] + [block_pred[:, j].tolist() for j in range(len(blocks))]
    return _dynamics_outputs(
        out_dir, est.history_, times, pred_header, pred_columns, blocks, pred_columns[1:]
    )


def _run_bounded_dynamics(cfg, out_dir):
    (d1, s1_sq), (d2, s2_sq) = cfg.blocks
    model = TwoBlockModel(d1=d1, d2=d2, sigma1_sq=s1_sq, sigma2_sq=s2_sq)
    blocks = _norm_blocks(cfg, model.dim)
    est = _estimator(cfg, blocks).fit(model)
    times = [c.time for c in est.history_]
    l2 = cfg.values["lambda"]

    kernel = bounded_mf.QKernel(parse_activation(cfg.activation), model.alpha, 1.0 - model.alpha)
    states = bounded_mf.integrate_two_scalar(kernel, s1_sq, s2_sq, l2, cfg.r0, times)
    risk_pred = [bounded_mf.bounded_risk(kernel, s, s1_sq, s2_sq) for s in states]
    block1 = [s.r1**2 / kernel.alpha1 for s in states]
    block2 = [s.r2**2 / kernel.alpha2 for s in states]

    pred_header = ["t", "r1", "r2", "risk_pred", "block_pred_1", "block_pred_2"]
    pred_columns = [
        [s.r1 for s in states],
        [s.r2 for s in states],
        risk_pred,
        block1,
        block2,
    ]
    for i, (q1_sq, q2_sq) in enumerate(cfg.get("q_blocks", ()) or ()):
        pred_header.append(f"risk_q_pred_{i + 1}")
        pred_columns.append(
            [bounded_mf.out_of_sample_risk(kernel, s, q1_sq, q2_sq) for s in states]
        )

    emp_header, emp_rows = _emp_rows(est.history_, len(blocks))
    _write_csv(os.path.join(out_dir, "emp_metrics.csv"), emp_header, emp_rows)
    _write_csv(
        os.path.join(out_dir, "pred_metrics.csv"),
        pred_header,
        list(zip(times, *pred_columns)),
    )
    emp_by_metric = {
        "rec_err": (
            [c.rec_err.mean for c in est.history_],
            [c.rec_err.std_error for c in est.history_],
        ),
        "block_norm_1": ([c.block_norms[0] for c in est.history_], [0.0] * len(times)),
        "block_norm_2": ([c.block_norms[1] for c in est.history_], [0.0] * len(times)),
    }
    pred_by_metric = {"rec_err": risk_pred, "block_norm_1": block1, "block_norm_2": block2}
    _write_csv(
        os.path.join(out_dir, "compare.csv"),
        ["t", "metric", "emp", "emp_se", "pred", "abs_gap", "rel_gap"],
        _compare_rows(times, emp_by_metric, pred_by_metric),
    )
    return ["emp_metrics.csv", "pred_metrics.csv", "compare.csv", "manifest.json"]


def _run_coupling(cfg, out_dir):
    _require_relu(cfg)
    model = _build_model(cfg)
    study = scaling_study(
        model,
        cfg.n_list,
        cfg.eps_list,
        cfg.horizon,
        seeds=[cfg.seed + k for k in range(cfg.n_seeds)],
        l2=cfg.values["lambda"],
        r0=cfg.r0,
        batch_size=cfg.batch_size,
        checkpoints=sgd.default_checkpoints(max(1, round(cfg.horizon / min(cfg.eps_list)))),
    )
    series_rows = []
    for report in study.reports:
        for k, t, err in zip(report.steps, report.times, report.errors):
            series_rows.append(
                [report.n_neurons, report.learning_rate, report.seed, k, t, err]
            )
    _write_csv(
        os.path.join(out_dir, "coupling_errors.csv"),
        ["n_neurons", "learning_rate", "seed", "k", "t", "coupling_error"],
        series_rows,
    )
    summary_rows = [
        [axis, value, med, study.slopes.get(axis, math.nan)] for axis, value, med in study.rows
    ]
    _write_csv(
        os.path.join(out_dir, "scaling_summary.csv"),
        ["axis", "value", "median_terminal_E", "fitted_slope"],
        summary_rows,
    )

    # The standard emp/pred pair reports the most favorable run against the
    # mean-field limit (coupling error identically zero in the limit).
    best = max(study.reports, key=lambda r: (r.n_neurons, -r.learning_rate))
    emp_header = ["step", "time", "coupling_error"]
    emp_rows = [[k, t, e] for k, t, e in zip(best.steps, best.times, best.errors)]
    _write_csv(os.path.join(out_dir, "emp_metrics.csv"), emp_header, emp_rows)
    _write_csv(
        os.path.join(out_dir, "pred_metrics.csv"),
        ["t", "coupling_error_pred"],
        [[t, 0.0] for t in best.times],
    )
    emp_by_metric = {"coupling_error": (list(best.errors), [0.0] * len(best.errors))}
    pred_by_metric = {"coupling_error": [0.0] * len(best.errors)}
    _write_csv(
        os.path.join(out_dir, "compare.csv"),
        ["t", "metric", "emp", "emp_se", "pred", "abs_gap", "rel_gap"],
        _compare_rows(list(best.times), emp_by_metric, pred_by_metric),
    )
    return [
        "coupling_errors.csv",
        "scaling_summary.csv",
        "emp_metrics.csv",
        "pred_metrics.csv",
        "compare.csv",
        "manifest.json",
    ]


def _run_two_stage(cfg, out_dir):
    _require_relu(cfg)
    model = _build_model(cfg)
    blocks = _norm_blocks(cfg, model.dim)
    act = parse_activation(cfg.activation)
    l2 = cfg.values["lambda"]
    d = model.dim

    train_cfg = sgd.TrainConfig(
        l2=l2,
        learning_rate=cfg.epsilon,
        batch_size=cfg.batch_size,
        steps=cfg.steps,
        r0=cfg.r0,
        seed=cfg.seed,
        checkpoints=_checkpoints(cfg),
    )
    weights0 = sgd.init_weights(cfg.n_neurons, d, cfg.r0, cfg.seed)
    history = []
    stage_rows = []
    for record in sgd.train(
        weights0, train_cfg, model, act, mc_samples=cfg.mc_samples, norm_blocks=blocks
    ):
        history.append(
            sgd.Checkpoint(
                step=record.step,
                time=record.time,
                rec_err=record.rec_err,
                block_norms=record.block_norms,
                weights=None,
            )
        )
        study = two_stage.resample_study(
            record.weights,
            model,
            act,
            cfg.m_list,
            repeats=cfg.resamples,
            n_mc=cfg.mc_samples,
            seed=cfg.seed + 7_000_000 + record.step,
        )
        for m, mu, mean, se in study:
            pred = relu_mf.two_stage_risk(model, l2, cfg.r0, record.time, mu)
            stage_rows.append([record.time, m, mu, mean, se, pred])
    _write_csv(
        os.path.join(out_dir, "two_stage.csv"),
        ["t", "M", "mu", "derived_risk_mean", "derived_risk_se", "predicted_Rstar"],
        stage_rows,
    )

    times = [c.time for c in history]
    risk_pred = [relu_mf.risk(model, l2, cfg.r0, t) for t in times]
    block_pred = np.array(
        [relu_mf.block_norm_prediction(model, l2, cfg.r0, t, blocks) for t in times]
    )
    pred_header = ["t", "rec_err_pred"] + [f"block_pred_{j + 1}" for j in range(len(blocks))]
    pred_columns = [risk_pred] + [block_pred[:, j].tolist() for j in range(len(blocks))]
    outputs = _dynamics_outputs(
        out_dir, history, times, pred_header, pred_columns, blocks, pred_columns[1:]
    )
    return outputs + ["two_stage.csv"]


def _run_real_data(cfg, out_dir):
    _require_relu(cfg)
    with open(cfg.resolve(cfg.idx_images), "rb") as fh:
        train_rows = images_as_rows(parse_idx(fh.read()))
    prep = IdxPreprocessor().fit(train_rows)
    transformed = prep.transform(train_rows)
    if cfg.get("idx_eval") is not None:
        with open(cfg.resolve(cfg.idx_eval), "rb") as fh:
            eval_rows = prep.transform(images_as_rows(parse_idx(fh.read())))
    else:
        eval_rows = transformed
    model = prep.to_spectral_model()
    blocks = _norm_blocks(cfg, model.dim)

    est = _estimator(cfg, blocks).fit(transformed, eval_data=eval_rows)
    times = [c.time for c in est.history_]
    l2 = cfg.values["lambda"]
    risk_pred = [relu_mf.risk(model, l2, cfg.r0, t) for t in times]
    block_pred = np.array(
        [relu_mf.block_norm_prediction(model, l2, cfg.r0, t, blocks) for t in times]
    )
    pred_header = ["t", "rec_err_pred"] + [f"block_pred_{j + 1}" for j in range(len(blocks))]
    pred_columns = [risk_pred] + [block_pred[:, j].tolist() for j in range(len(blocks))]
    outputs = _dynamics_outputs(
        out_dir, est.history_, times, pred_header, pred_columns, blocks, pred_columns[1:]
    )
    save_spectrum(os.path.join(out_dir, "spectrum.txt"), prep.eigvals_)
    save_basis(os.path.join(out_dir, "basis.bin"), prep.basis_)
    return outputs + ["spectrum.txt", "basis.bin"]


# ---------------------------------------------------------------------------
# comparison

_EMP_METRICS = {
    "rec_err_mean": ("rec_err", "rec_err_se"),
    "coupling_error": ("coupling_error", None),
}
_PRED_METRICS = {
    "rec_err_pred": "rec_err",
    "risk_pred": "rec_err",
    "coupling_error_pred": "coupling_error",
}


def _canonical_emp(name):
    if name in _EMP_METRICS:
        return _EMP_METRICS[name][0]
    if name.startswith("block_norm_"):
        return name
    return None


def _canonical_pred(name):
    if name in _PRED_METRICS:
        return _PRED_METRICS[name]
    if name.startswith("block_pred_"):
        return "block_norm_" + name[len("block_pred_") :]
    return None


def _read_metric_csv(path, time_column_candidates, canonical):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    time_col = next((header.index(c) for c in time_column_candidates if c in header), None)
    if time_col is None:
        raise ValueError(f"{path}: no time column (expected one of {time_column_candidates})")
    times = [row[time_col] for row in rows]
    series = {}
    for j, name in enumerate(header):
        metric = canonical(name)
        if metric is not None:
            series[metric] = [row[j] for row in rows]
    return times, series, header, rows


class CompareReport(dict):
    """metric -> (sup_gap, tolerance, passed); overall in .passed."""

    @property
    def passed(self):
        return all(ok for _, _, ok in self.values())


def load_tolerances(path):
    tols = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, _, value = text.partition("=")
            try:
                tols[key.strip()] = float(value.strip())
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad tolerance {text!r}") from None
    return tols


def compare(emp_csv, pred_csv, tolerances, verdict_path=None):
    """Sup-norm gap of every shared metric on the shared time grid.

    tolerances maps canonical metric names to bounds; a "default" entry
    applies to metrics without their own bound.  Raises if the two files
    have no common times.
    """
    emp_times, emp_series, _, _ = _read_metric_csv(emp_csv, ("time", "t"), _canonical_emp)
    pred_times, pred_series, _, _ = _read_metric_csv(pred_csv, ("t", "time"), _canonical_pred)

    emp_index = {t: i for i, t in enumerate(emp_times)}
    shared = [(emp_index[t], j) for j, t in enumerate(pred_times) if t in emp_index]
    if not shared:
        raise ValueError("empirical and predicted CSVs share no time points")

    report = CompareReport()
    default = tolerances.get("default")
    for metric in sorted(set(emp_series) & set(pred_series)):
        tol = tolerances.get(metric, default)
        if tol is None:
            continue
        gap = max(
            abs(emp_series[metric][i] - pred_series[metric][j]) for i, j in shared
        )
        report[metric] = (gap, tol, gap <= tol)
    for metric in tolerances:
        if metric != "default" and metric not in report:
            raise ValueError(f"tolerance given for unknown metric {metric!r}")

    if verdict_path is not None:
        payload = {
            "pass": report.passed,
            "metrics": {
                m: {"sup_gap": gap, "tolerance": tol, "pass": ok}
                for m, (gap, tol, ok) in report.items()
            },
        }
        with open(verdict_path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
