"""Projected prior-ascent reconstruction.

Each iteration takes a momentum step along the dropout-masked prior gradient
(evaluated tile by tile when the prior has a native patch size), then enforces
the measurements in one of three ways:

* ``hard``: closed-form projection onto ``{X : A X = Y}`` (mask, row-orthonormal
  SPC or LiSens operators);
* ``alm``: one augmented-Lagrangian gradient step plus a dual ascent step, for
  operators without a cheap projection (FlatCam);
* ``soft``: a gradient step on ``-soft_weight * ||Y - A X||^2`` for noisy data.

and finally clips to ``[0, 1]``.
"""
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, NumericError, ParameterError
from .imaging import (
    DenseSensingOperator,
    MaskOperator,
    MeasurementSet,
    RowSensingOperator,
    as_rng,
    channels_of,
    clip_unit,
    exact_count_mask,
    measure,
    measurements_for,
    merge_channels,
    operators_for,
)
from .metrics import psnr

log = logging.getLogger(__name__)

MODES = ("hard", "alm", "soft")


@dataclass
class SolverConfig:
    """Reconstruction settings.

    ``alm_step`` scales the augmented-Lagrangian primal step and defaults to
    ``1 / (rho * ||A||^2)``. ``likelihood_step`` is the soft-mode step on the
    data term and defaults to ``alpha / (1 - momentum)``, the effective step of
    the momentum-accelerated prior update, so that the fixed point is the MAP
    estimate of ``log p(X) - soft_weight * ||Y - A X||^2``.
    """

    mode: str = "hard"
    alpha: float = 1e-3
    momentum: float = 0.9
    dropout_ratio: float = 0.25
    max_iter: int = 500
    rho: float = 10.0
    soft_weight: float = None
    alm_step: float = None
    likelihood_step: float = None
    tile: int = None
    rng_seed: int = 0
    early_stop: bool = False
    early_stop_tol: float = 1e-7
    early_stop_window: int = 20

    def validate(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise ParameterError("dropout_ratio must lie in [0, 1)")
        if int(self.max_iter) < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.mode == "alm" and not (self.rho is not None and self.rho > 0):
            raise ParameterError("rho must be positive in alm mode")
        if self.mode == "soft" and not (self.soft_weight is not None and self.soft_weight > 0):
            raise ParameterError("soft_weight must be positive in soft mode")
        return self


@dataclass
class MomentumState:
    velocity: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))


@dataclass
class AlmState:
    dual: list

    @classmethod
    def zeros(cls, problem):
        return cls([np.zeros_like(y) for y in problem.ys])


@dataclass
class ReconstructionReport:
    estimate: np.ndarray
    trace: list
    config: dict
    seeds: dict
    wall_time: float
    final_residual: float
    iterations: int
    stopped_early: bool = False

    TRACE_FIELDS = ("iteration", "log_density", "residual", "residual_pre_clip", "grad_norm", "objective", "psnr_vs_truth")

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.TRACE_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for row in self.trace:
                writer.writerow({k: ("" if row.get(k) is None else repr(row[k])) for k in self.TRACE_FIELDS})

    def metadata(self):
        return {
            "config": self.config,
            "seeds": self.seeds,
            "iterations": self.iterations,
            "stopped_early": self.stopped_early,
            "final_residual": self.final_residual,
            "final_log_density": self.trace[-1]["log_density"] if self.trace else None,
            "max_grad_norm": max((r["grad_norm"] for r in self.trace), default=None),
            "wall_time": self.wall_time,
        }


# ------------------------------------------------------------------ problems


@dataclass
class Problem:
    """Operators and measurements for every channel of an image."""

    operators: list
    measurements: MeasurementSet
    image_shape: tuple

    def __post_init__(self):
        self.image_shape = tuple(self.image_shape)
        n = 1 if len(self.image_shape) == 2 else self.image_shape[2]
        self.operators = operators_for(self.operators, n)
        if not isinstance(self.measurements, MeasurementSet):
            layout = "vector" if isinstance(self.operators[0], DenseSensingOperator) else "matrix"
            self.measurements = MeasurementSet(layout, tuple(measurements_for(self.measurements, n)))
        if len(self.measurements) != n:
            raise ParameterError(f"{len(self.measurements)} measurement channels for {n} image channels")

    @classmethod
    def simulate(cls, operators, image):
        image = np.asarray(image, dtype=np.float64)
        return cls(operators, measure(operators, image), image.shape)

    @property
    def ys(self):
        return list(self.measurements.per_channel)

    def forward(self, x):
        return [op.forward(c) for op, c in zip(self.operators, channels_of(x))]

    def residuals(self, x):
        return [y - ax for y, ax in zip(self.ys, self.forward(x))]

    def relative_residual(self, x):
        num = math.sqrt(sum(float(np.sum(r * r)) for r in self.residuals(x)))
        den = math.sqrt(sum(float(np.sum(y * y)) for y in self.ys))
        return num / max(den, 1e-12)

    def squared_residual(self, x):
        return sum(float(np.sum(r * r)) for r in self.residuals(x))

    def adjoint(self, ys):
        return merge_channels([op.adjoint(y) for op, y in zip(self.operators, ys)], np.empty(self.image_shape))

    def norm_sq(self):
        return max(op.norm_sq() for op in self.operators)

    def supports_projection(self):
        for op in self.operators:
            if isinstance(op, MaskOperator):
                continue
            if isinstance(op, (DenseSensingOperator, RowSensingOperator)) and op.row_orthonormal:
                continue
            return False
        return True

    def project(self, h):
        if not self.supports_projection():
            raise ContractError("hard mode needs mask or row-orthonormal SPC/LiSens operators")
        out = [op.project(c, y) for op, c, y in zip(self.operators, channels_of(h), self.ys)]
        return merge_channels(out, h)


def add_measurement_noise(y, sigma, rng_seed):
    """Add i.i.d. ``N(0, sigma^2)`` noise to every measurement channel."""
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    rng = as_rng(rng_seed)
    if isinstance(y, MeasurementSet):
        chans = [v + sigma * rng.standard_normal(v.shape) if sigma > 0 else v for v in y.per_channel]
        return MeasurementSet(y.layout, tuple(chans))
    y = np.asarray(y, dtype=np.float64)
    return y + sigma * rng.standard_normal(y.shape) if sigma > 0 else y.copy()


# --------------------------------------------------------------- primitives


def initialize_uniform(height, width, channels=1, rng_seed=0):
    if height < 1 or width < 1 or channels < 1:
        raise ParameterError("dimensions must be positive")
    shape = (height, width) if channels == 1 else (height, width, channels)
    return as_rng(rng_seed).random(shape)


def dropout_mask(height, width, dropout_ratio, rng_seed, channels=1):
    """Binary update mask with exactly ``round(dropout_ratio * N)`` zeros."""
    if not 0.0 <= dropout_ratio < 1.0:
        raise ParameterError(f"dropout_ratio must lie in [0, 1), got {dropout_ratio}")
    shape = (height, width) if channels == 1 else (height, width, channels)
    return exact_count_mask(shape, dropout_ratio, as_rng(rng_seed))


def _padded_size(n, tile):
    return -(-n // tile) * tile


def split(image, tile):
    """Non-overlapping ``tile x tile`` patches in raster order, reflect-padding ragged edges."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("split works on 2-D images")
    if tile < 1:
        raise ParameterError("tile must be positive")
    h, w = image.shape
    ph, pw = _padded_size(h, tile) - h, _padded_size(w, tile) - w
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)), mode="reflect")
    return [image[i : i + tile, j : j + tile] for i in range(0, image.shape[0], tile) for j in range(0, image.shape[1], tile)]


def stitch(tiles, height, width):
    """Inverse of :func:`split`: reassemble raster-ordered tiles and crop padding."""
    if len(tiles) == 0:
        raise ParameterError("no tiles")
    tile = np.shape(tiles[0])[0]
    ny, nx = _padded_size(height, tile) // tile, _padded_size(width, tile) // tile
    if len(tiles) != ny * nx:
        raise ParameterError(f"{len(tiles)} tiles cannot cover {height}x{width} with tile {tile}")
    rows = [np.concatenate(tiles[r * nx : (r + 1) * nx], axis=1) for r in range(ny)]
    return np.concatenate(rows, axis=0)[:height, :width]


def _tile_size(prior, cfg):
    native = getattr(prior, "patch_size", None)
    if native is not None and cfg.tile not in (None, native):
        raise ParameterError(f"prior scores {native}x{native} patches; tile {cfg.tile} not allowed")
    return native if native is not None else cfg.tile


def prior_value_and_grad(prior, x, tile=None):
    """``log p`` summed over channels (and tiles) and its image-shaped gradient."""
    chans = channels_of(x)
    if tile is None:
        out = [prior.value_and_grad(c) for c in chans]
        return float(sum(np.sum(v) for v, _ in out)), merge_channels([g for _, g in out], x)
    per = [split(c, tile) for c in chans]
    batch = np.stack([t for tiles in per for t in tiles])
    values, grads = prior.value_and_grad(batch)
    n = len(per[0])
    h, w = chans[0].shape
    gchans = [stitch(list(grads[i * n : (i + 1) * n]), h, w) for i in range(len(chans))]
    return float(np.sum(values)), merge_channels(gchans, x)


def _ascent(x, prior, cfg, mom, mask, tile):
    value, grad = prior_value_and_grad(prior, x, tile)
    if not np.all(np.isfinite(grad)):
        raise NumericError("prior gradient has non-finite entries")
    mom.velocity = cfg.momentum * mom.velocity + mask * grad
    return x + cfg.alpha * mom.velocity, value, float(np.linalg.norm(grad))


def prior_ascent_step(x, prior, cfg, mom, mask):
    """``H = X + alpha * v`` with ``v <- momentum * v + mask * grad log p(X)``; updates ``mom`` in place."""
    return _ascent(np.asarray(x, dtype=np.float64), prior, cfg, mom, mask, _tile_size(prior, cfg))[0]


# ------------------------------------------------------------------- solvers


def _setup(problem, prior, cfg, x0):
    cfg.validate()
    ss = np.random.SeedSequence(cfg.rng_seed)
    init_ss, drop_ss = ss.spawn(2)
    shape = problem.image_shape
    if x0 is None:
        h, w = shape[:2]
        x = initialize_uniform(h, w, 1 if len(shape) == 2 else shape[2], np.random.default_rng(init_ss))
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != shape:
            raise ParameterError(f"x0 shape {x.shape} != problem shape {shape}")
    seeds = {"rng_seed": cfg.rng_seed, "init_entropy": str(init_ss.entropy), "init_spawn_key": list(init_ss.spawn_key), "dropout_spawn_key": list(drop_ss.spawn_key)}
    return x, np.random.default_rng(drop_ss), seeds


def _run(problem, prior, cfg, x0, truth, constraint_step, finish=None):
    start = time.perf_counter()
    x, drop_rng, seeds = _setup(problem, prior, cfg, x0)
    tile = _tile_size(prior, cfg)
    mom = MomentumState.zeros(x.shape)
    trace, history = [], []
    stopped = False
    for k in range(int(cfg.max_iter)):
        mask = exact_count_mask(x.shape, cfg.dropout_ratio, drop_rng)
        h, value, gnorm = _ascent(x, prior, cfg, mom, mask, tile)
        record = {"iteration": k, "log_density": value, "grad_norm": gnorm}
        x_new = constraint_step(k, x, h, record)
        record["residual"] = problem.relative_residual(x_new)
        if truth is not None:
            record["psnr_vs_truth"] = psnr(truth, x_new)
        trace.append(record)
        x = x_new
        if finish is not None:
            finish(k, x, trace)
        if cfg.early_stop:
            history.append(x)
            if len(history) > cfg.early_stop_window:
                old = history.pop(0)
                if np.linalg.norm(x - old) <= cfg.early_stop_tol * max(np.linalg.norm(x), 1e-12):
                    stopped = True
                    break
    return ReconstructionReport(
        estimate=x,
        trace=trace,
        config=asdict(cfg),
        seeds=seeds,
        wall_time=time.perf_counter() - start,
        final_residual=trace[-1]["residual"],
        iterations=len(trace),
        stopped_early=stopped,
    )


def solve_hard(problem, prior, cfg, x0=None, truth=None):
    """Prior ascent, exact projection onto the measurement set, clip; repeated ``max_iter`` times."""
    if not problem.supports_projection():
        raise ContractError("hard mode needs mask or row-orthonormal SPC/LiSens operators")

    def step(k, x, h, record):
        j = problem.project(h)
        record["residual_pre_clip"] = problem.relative_residual(j)
        return clip_unit(j)

    return _run(problem, prior, cfg, x0, truth, step)


DIVERGENCE_WINDOW = 50
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_FLOOR = 1e-6


def solve_alm(problem, prior, cfg, x0=None, truth=None):
    """Augmented-Lagrangian reconstruction.

    Per iteration, with ``R(X) = Y - A X`` and dual ``lam``::

        H   = X_k + alpha * v                       (prior ascent)
        J   = H + tau * A^T (lam + rho * R(X_k))    (one primal step)
        X_k+1 = clip(J)
        lam  = lam + rho * R(X_k+1)

    Raises NumericError when the residual grows tenfold over 50 iterations.
    """
    tau = cfg.alm_step if cfg.alm_step is not None else 1.0 / (cfg.rho * max(problem.norm_sq(), 1e-300))
    state = AlmState.zeros(problem)

    def step(k, x, h, record):
        res = problem.residuals(x)
        j = h + tau * problem.adjoint([lam + cfg.rho * r for lam, r in zip(state.dual, res)])
        x_new = clip_unit(j)
        state.dual = [lam + cfg.rho * r for lam, r in zip(state.dual, problem.residuals(x_new))]
        return x_new

    def check(k, x, trace):
        if not np.isfinite(trace[-1]["residual"]):
            raise NumericError(f"ALM residual became non-finite at iteration {k}")
        if k >= DIVERGENCE_WINDOW:
            before = trace[k - DIVERGENCE_WINDOW]["residual"]
            now = trace[k]["residual"]
            if now > DIVERGENCE_FACTOR * max(before, DIVERGENCE_FLOOR):
                raise NumericError(
                    f"ALM diverging: residual {now:.3e} at iteration {k} vs {before:.3e} "
                    f"{DIVERGENCE_WINDOW} iterations earlier (rho={cfg.rho}, step={tau:.3e})"
                )

    report = _run(problem, prior, cfg, x0, truth, step, finish=check)
    report.dual = state.dual
    return report


def solve_soft(problem, prior, cfg, x0=None, truth=None):
    """Penalized MAP: ascend ``log p(X) - soft_weight * ||Y - A X||^2``.

    The data-term step is ``J = H + 2 * eta * soft_weight * A^T (Y - A X_k)`` with
    ``eta = likelihood_step``. Raises ParameterError when that step is unstable
    (``2 * eta * soft_weight * ||A||^2 >= 2``).
    """
    cfg.validate()
    eta = cfg.likelihood_step if cfg.likelihood_step is not None else cfg.alpha / (1.0 - cfg.momentum)
    gain = 2.0 * eta * cfg.soft_weight
    if gain * problem.norm_sq() >= 2.0:
        raise ParameterError(
            f"unstable soft step: 2*eta*soft_weight*||A||^2 = {gain * problem.norm_sq():.3g} >= 2; "
            "reduce alpha or likelihood_step"
        )

    def step(k, x, h, record):
        res = problem.residuals(x)
        sq = sum(float(np.sum(r * r)) for r in res)
        objective = record["log_density"] - cfg.soft_weight * sq
        if not math.isfinite(objective):
            raise NumericError(f"non-finite soft objective at iteration {k}")
        record["objective"] = objective
        return clip_unit(h + gain * problem.adjoint(res))

    return _run(problem, prior, cfg, x0, truth, step)


def solve(problem, prior, cfg, x0=None, truth=None):
    return {"hard": solve_hard, "alm": solve_alm, "soft": solve_soft}[cfg.mode](problem, prior, cfg, x0=x0, truth=truth)
