"""Config-driven simulate / reconstruct / evaluate runs.

Output layout under ``output_dir``::

    runs/<image>__r<rate>__<method>/estimate.png
    runs/<image>__r<rate>__<method>/trace.csv      (iterative methods)
    runs/<image>__r<rate>__<method>/report.json    (includes wall time)
    metrics.json                                    (deterministic, no timings)
    table.csv
"""
import csv
import io
import json
import logging
import math
import os
from dataclasses import replace

import numpy as np

from ..errors import ConfigError, FormatError, NumericError, ParameterError
from ..imaging import (
    DenseSensingOperator,
    MaskOperator,
    RowSensingOperator,
    SeparableOperator,
    clip_unit,
    make_flatcam_operator,
    make_lisens_operator,
    make_mask,
    make_spc_operator,
    merge_channels,
)
from ..metrics import MetricReport, evaluate
from ..priors.base import UniformPrior
from ..priors.checkpoint import load_model, save_model
from ..priors.gmrf import GaussianMrfPrior
from ..priors.training import train_ar_prior
from ..solver import Problem, add_measurement_noise, solve
from .config import load_config
from .imageio import load_image, save_image
from .textures import texture_patches

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TABLE_COLUMNS = ("image", "rate", "method", "psnr_db", "ssim", "bits_per_dim")


# ----------------------------------------------------------------- building


def build_prior(prior_cfg):
    if prior_cfg.type == "uniform":
        return UniformPrior()
    if prior_cfg.type == "gaussian_mrf":
        return GaussianMrfPrior(prior_cfg.epsilon)
    return load_model(prior_cfg.checkpoint)


def load_inputs(cfg):
    """Ground-truth images as ``(names, list of arrays)``."""
    if cfg.textures is not None:
        names, arr = texture_patches(cfg.textures)
        return names, list(arr)
    names = [os.path.splitext(os.path.basename(p))[0] for p in cfg.images]
    return names, [load_image(p) for p in cfg.images]


def make_operator(task, rate, shape, seed, max_condition=50.0):
    """One channel's forward operator for ``task`` at measurement ``rate``.

    FlatCam uses an ``m x m`` sensor with ``m = round(H * sqrt(rate))`` so that
    ``m^2 / H^2`` matches the rate.
    """
    h, w = shape
    if task == "inpaint":
        return make_mask(h, w, 1.0 - rate, seed)
    if task == "spc":
        return make_spc_operator(max(1, int(round(rate * h * w))), h * w, seed, image_shape=(h, w))
    if task == "lisens":
        return make_lisens_operator(max(1, int(round(rate * h))), h, seed, width=w)
    if task == "flatcam":
        if h != w:
            raise ParameterError("flatcam simulation expects square images")
        return make_flatcam_operator(max(1, int(round(h * math.sqrt(rate)))), h, seed, max_condition=max_condition)
    raise ParameterError(f"unknown task {task!r}")


def run_seeds(base_seed, image_index, rate_index):
    """Operator, noise and solver seeds for one (image, rate) cell."""
    state = np.random.SeedSequence([base_seed, image_index, rate_index]).generate_state(3)
    return {"operator": int(state[0]), "noise": int(state[1]), "solver": int(state[2])}


def simulate_problem(cfg, image, seeds, rate):
    shape = image.shape[:2]
    n = 1 if image.ndim == 2 else image.shape[2]
    ops = [make_operator(cfg.task, rate, shape, seeds["operator"] + c, cfg.flatcam_max_condition) for c in range(n)]
    problem = Problem.simulate(ops, image)
    if cfg.noise_sigma > 0:
        problem = Problem(ops, add_measurement_noise(problem.measurements, cfg.noise_sigma, seeds["noise"]), image.shape)
    return problem


# ---------------------------------------------------------------- baselines


def zero_fill(problem):
    """Observed pixels kept, missing ones set to zero."""
    return merge_channels([op.adjoint(y) for op, y in zip(problem.operators, problem.ys)], np.empty(problem.image_shape))


def least_norm(problem):
    """Minimum-norm solution of ``A x = y``: ``A^T y`` for row-orthonormal operators, pseudo-inverse otherwise."""
    out = []
    for op, y in zip(problem.operators, problem.ys):
        if isinstance(op, MaskOperator) or getattr(op, "row_orthonormal", False):
            out.append(op.adjoint(y))
        elif isinstance(op, SeparableOperator):
            out.append(np.linalg.pinv(op.left) @ y @ np.linalg.pinv(op.right).T)
        elif isinstance(op, DenseSensingOperator):
            out.append((np.linalg.pinv(op.matrix) @ y).reshape(op.image_shape))
        elif isinstance(op, RowSensingOperator):
            out.append(np.linalg.pinv(op.matrix) @ y)
        else:
            raise ParameterError(f"no least-norm rule for {type(op).__name__}")
    return clip_unit(merge_channels(out, np.empty(problem.image_shape)))


def gaussian_mrf_map(problem, cfg, seed):
    """Gaussian-MRF MAP estimate by the configured solver mode, started from zero."""
    scfg = replace(
        cfg.solver, alpha=cfg.baseline.alpha, max_iter=cfg.baseline.max_iter, dropout_ratio=0.0,
        tile=None, rng_seed=seed, likelihood_step=None,
    )
    return solve(problem, GaussianMrfPrior(cfg.baseline.epsilon), scfg, x0=np.zeros(problem.image_shape))


# -------------------------------------------------------------------- tables


def compare_table(reports, labels):
    """CSV text with one row per ``(image, rate, method)`` label, in the given order.

    Args:
        reports (list of MetricReport): metrics per run.
        labels (list of tuple): ``(image, rate, method)`` per report.
    """
    if not reports:
        raise ParameterError("no reports to tabulate")
    if len(reports) != len(labels):
        raise ParameterError(f"{len(reports)} reports but {len(labels)} labels")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for rep, (image, rate, method) in zip(reports, labels):
        d = rep.to_dict()
        bpd = "" if d["bits_per_dim"] is None else f"{d['bits_per_dim']:.6f}"
        psnr_txt = d["psnr_db"] if isinstance(d["psnr_db"], str) else f"{d['psnr_db']:.6f}"
        writer.writerow([image, f"{rate:g}", method, psnr_txt, f"{d['ssim']:.6f}", bpd])
    return buf.getvalue()


def table_from_metrics(metrics):
    reports = [MetricReport(_num(r["psnr_db"]), r["ssim"], r.get("bits_per_dim")) for r in metrics["runs"]]
    labels = [(r["image"], r["rate"], r["method"]) for r in metrics["runs"]]
    return compare_table(reports, labels)


def _num(v):
    return math.inf if v == "inf" else float(v)


def summarize(rows, rates, methods):
    out = []
    for rate in rates:
        for method in methods:
            sel = [r for r in rows if r["rate"] == rate and r["method"] == method]
            psnrs = [_num(r["psnr_db"]) for r in sel]
            mean_psnr = float(np.mean(psnrs))
            out.append({
                "rate": rate,
                "method": method,
                "mean_psnr_db": "inf" if math.isinf(mean_psnr) else mean_psnr,
                "mean_ssim": float(np.mean([r["ssim"] for r in sel])),
                "count": len(sel),
            })
    return out


def dumps_metrics(metrics):
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------- runs


def execute(cfg, prior=None):
    """Run every (image, rate, method) cell of ``cfg`` and write artifacts.

    Returns:
        The metrics dictionary that was written to ``metrics.json``.
    """
    prior = build_prior(cfg.prior) if prior is None else prior
    names, images = load_inputs(cfg)
    run_dir = os.path.join(cfg.output_dir, "runs")
    os.makedirs(run_dir, exist_ok=True)

    rows = []
    for i, (name, image) in enumerate(zip(names, images)):
        for j, rate in enumerate(cfg.rates):
            seeds = run_seeds(cfg.seed, i, j)
            problem = simulate_problem(cfg, image, seeds, rate)
            for method in cfg.methods:
                report = None
                if method == "prior":
                    report = solve(problem, prior, replace(cfg.solver, rng_seed=seeds["solver"]), truth=image)
                    estimate = report.estimate
                elif method == "gaussian_mrf_map":
                    report = gaussian_mrf_map(problem, cfg, seeds["solver"])
                    estimate = report.estimate
                elif method == "zero_fill":
                    estimate = zero_fill(problem)
                else:
                    estimate = least_norm(problem)
                metrics = evaluate(image, estimate)
                row = {"image": name, "rate": rate, "method": method, **metrics.to_dict()}
                if report is not None:
                    row["final_residual"] = report.final_residual
                    row["iterations"] = report.iterations
                rows.append(row)
                _write_run(run_dir, name, rate, method, estimate, report, row, seeds)
                log.info("%s rate=%g %s: %.2f dB", name, rate, method, _num(row["psnr_db"]))

    metrics = {
        "task": cfg.task,
        "seed": cfg.seed,
        "noise_sigma": cfg.noise_sigma,
        "config": cfg.to_dict(),
        "runs": rows,
        "summary": summarize(rows, cfg.rates, cfg.methods),
    }
    # strip host-specific absolute paths so the file only depends on config content
    metrics["config"]["output_dir"] = os.path.basename(cfg.output_dir)
    metrics["config"]["images"] = [os.path.basename(p) for p in cfg.images]
    if metrics["config"]["prior"]["checkpoint"]:
        metrics["config"]["prior"]["checkpoint"] = os.path.basename(cfg.prior.checkpoint)
    with open(os.path.join(cfg.output_dir, "metrics.json"), "w") as fh:
        fh.write(dumps_metrics(metrics))
    with open(os.path.join(cfg.output_dir, "table.csv"), "w") as fh:
        fh.write(table_from_metrics(metrics))
    return metrics


def _write_run(run_dir, name, rate, method, estimate, report, row, seeds):
    d = os.path.join(run_dir, f"{name}__r{rate:g}__{method}")
    os.makedirs(d, exist_ok=True)
    save_image(estimate, os.path.join(d, "estimate.png"))
    meta = {"metrics": row, "seeds": seeds}
    if report is not None:
        report.write_trace_csv(os.path.join(d, "trace.csv"))
        meta["solver"] = report.metadata()
    with open(os.path.join(d, "report.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def train_prior(run_cfg, output=None):
    """Train the AR prior described by a :class:`TrainingRunConfig` and save the checkpoint.

    Returns:
        ``(model, summary dict)``; the summary is also stored in the checkpoint header.
    """
    _, patches = texture_patches(run_cfg.textures)
    model = train_ar_prior(patches, run_cfg.train, rng_seed=run_cfg.seed)
    summary = {k: v for k, v in model.history.to_dict().items() if k != "losses"}
    output = output or run_cfg.output
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    save_model(model, output, extra={"history": summary})
    return model, summary


def run_experiment(config_path):
    """Load, run and report; returns a process exit status (0, 2 config, 3 numeric, 4 I/O)."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    try:
        execute(cfg)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    except ParameterError as exc:
        log.error("invalid experiment: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK
