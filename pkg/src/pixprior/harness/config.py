"""YAML experiment configs.

An experiment config is one YAML document::

    task: spc                      # inpaint | spc | lisens | flatcam
    measurement_rate: [0.1, 0.25]  # scalar or list; inpaint uses missing_fraction
    noise_sigma: 0.0
    prior: {type: ar, checkpoint: ../models/desk.pxp}   # or uniform / gaussian_mrf
    methods: [prior, least_norm, gaussian_mrf_map]
    solver: {mode: hard, alpha: 3.0e-4, max_iter: 400}
    images: [a.png, b.pgm]         # or a textures: block (see SyntheticTextureSpec)
    output_dir: ../runs/spc
    seed: 0

Relative paths are resolved against the directory holding the config file.
Lists of rates (or missing fractions) expand to a grid of runs.
"""
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from ..errors import ConfigError, ParameterError
from ..priors.training import TrainConfig
from ..solver import SolverConfig
from .textures import SyntheticTextureSpec

TASKS = ("inpaint", "spc", "lisens", "flatcam")
PRIORS = ("uniform", "gaussian_mrf", "ar")
METHODS = ("prior", "zero_fill", "least_norm", "gaussian_mrf_map")


@dataclass
class PriorConfig:
    type: str = "gaussian_mrf"
    epsilon: float = 0.1
    checkpoint: str = None


@dataclass
class BaselineConfig:
    """Settings of the zero-initialized Gaussian-MRF MAP baseline."""

    epsilon: float = 0.01
    alpha: float = 0.1
    max_iter: int = 2000


@dataclass
class ExperimentConfig:
    task: str
    rates: list
    images: list = field(default_factory=list)
    textures: SyntheticTextureSpec = None
    noise_sigma: float = 0.0
    prior: PriorConfig = field(default_factory=PriorConfig)
    methods: list = field(default_factory=lambda: ["prior"])
    solver: SolverConfig = field(default_factory=SolverConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    flatcam_max_condition: float = 50.0
    output_dir: str = "out"
    seed: int = 0
    source: str = None

    def to_dict(self):
        d = asdict(self)
        d.pop("source")
        return d


def _as_list(value, name):
    vals = value if isinstance(value, (list, tuple)) else [value]
    if not vals:
        raise ConfigError(name, "must not be empty")
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(name, f"expected a number, got {v!r}")
        out.append(float(v))
    return out


def _build(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(name, f"expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ParameterError) as exc:
        raise ConfigError(name, str(exc)) from exc


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def parse_config(data, base_dir="."):
    """Validate a config mapping; raises :class:`ConfigError` naming the bad field."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    data = dict(data)
    allowed = {"task", "measurement_rate", "missing_fraction", "noise_sigma", "prior", "methods", "solver",
               "baseline", "images", "textures", "output_dir", "seed", "flatcam_max_condition"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    task = data.get("task")
    if task not in TASKS:
        raise ConfigError("task", f"must be one of {TASKS}, got {task!r}")
    if task == "inpaint":
        if "measurement_rate" in data:
            raise ConfigError("measurement_rate", "inpaint uses missing_fraction")
        fracs = _as_list(data.get("missing_fraction", 0.5), "missing_fraction")
        for f in fracs:
            if not 0.0 <= f < 1.0:
                raise ConfigError("missing_fraction", f"must lie in [0, 1), got {f}")
        rates = [1.0 - f for f in fracs]
    else:
        if "missing_fraction" in data:
            raise ConfigError("missing_fraction", f"only valid for inpaint, not {task}")
        if "measurement_rate" not in data:
            raise ConfigError("measurement_rate", "required")
        rates = _as_list(data["measurement_rate"], "measurement_rate")
        for r in rates:
            if not 0.0 < r <= 1.0:
                raise ConfigError("measurement_rate", f"must lie in (0, 1], got {r}")

    noise = _as_list(data.get("noise_sigma", 0.0), "noise_sigma")
    if len(noise) != 1 or noise[0] < 0:
        raise ConfigError("noise_sigma", "must be a single non-negative number")

    prior_raw = data.get("prior", "gaussian_mrf")
    if isinstance(prior_raw, str):
        prior_raw = {"type": prior_raw}
    prior = _build(PriorConfig, prior_raw, "prior")
    if prior.type not in PRIORS:
        raise ConfigError("prior.type", f"must be one of {PRIORS}, got {prior.type!r}")
    if prior.type == "ar":
        if not prior.checkpoint:
            raise ConfigError("prior.checkpoint", "required for the ar prior")
        prior.checkpoint = _resolve(base_dir, prior.checkpoint)
        if not os.path.isfile(prior.checkpoint):
            raise ConfigError("prior.checkpoint", f"file not found: {prior.checkpoint}")
    if prior.type == "gaussian_mrf" and not prior.epsilon > 0:
        raise ConfigError("prior.epsilon", "must be positive")

    methods = data.get("methods", ["prior"])
    methods = [methods] if isinstance(methods, str) else list(methods)
    if not methods:
        raise ConfigError("methods", "must not be empty")
    for m in methods:
        if m not in METHODS:
            raise ConfigError("methods", f"unknown method {m!r}; choose from {METHODS}")
    if "zero_fill" in methods and task != "inpaint":
        raise ConfigError("methods", "zero_fill only applies to inpaint")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods", "duplicate entries")

    solver = _build(SolverConfig, data.get("solver"), "solver")
    try:
        solver.validate()
    except ParameterError as exc:
        raise ConfigError("solver", str(exc)) from exc
    if solver.mode == "hard" and task == "flatcam":
        raise ConfigError("solver.mode", "flatcam has no closed-form projection; use alm or soft")
    baseline = _build(BaselineConfig, data.get("baseline"), "baseline")
    if not (baseline.epsilon > 0 and baseline.alpha > 0 and baseline.max_iter >= 1):
        raise ConfigError("baseline", "epsilon, alpha must be positive and max_iter >= 1")

    images = data.get("images") or []
    if isinstance(images, str):
        images = [images]
    images = [_resolve(base_dir, p) for p in images]
    for i, p in enumerate(images):
        if not os.path.isfile(p):
            raise ConfigError(f"images[{i}]", f"file not found: {p}")
    textures = None
    if data.get("textures") is not None:
        textures = _build(SyntheticTextureSpec, data["textures"], "textures")
    if not images and textures is None:
        raise ConfigError("images", "give image paths or a textures block")
    if images and textures is not None:
        raise ConfigError("textures", "give either images or textures, not both")

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
    cond = data.get("flatcam_max_condition", 50.0)
    if isinstance(cond, bool) or not isinstance(cond, (int, float)) or cond < 1:
        raise ConfigError("flatcam_max_condition", "must be a number >= 1")

    return ExperimentConfig(
        task=task,
        rates=rates,
        images=images,
        textures=textures,
        noise_sigma=noise[0],
        prior=prior,
        methods=methods,
        solver=solver,
        baseline=baseline,
        flatcam_max_condition=float(cond),
        output_dir=_resolve(base_dir, str(data.get("output_dir", "out"))),
        seed=seed,
    )


def read_yaml(path):
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from exc


def load_config(path):
    cfg = parse_config(read_yaml(path), os.path.dirname(os.path.abspath(path)))
    cfg.source = os.path.abspath(path)
    return cfg


@dataclass
class TrainingRunConfig:
    """``train-prior`` config: a texture corpus, training settings and a checkpoint path."""

    textures: SyntheticTextureSpec
    train: TrainConfig
    output: str
    seed: int = 0


def parse_training_config(data, base_dir="."):
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(data) - {"textures", "train", "output", "seed"})
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    textures = _build(SyntheticTextureSpec, data.get("textures"), "textures")
    train = _build(TrainConfig, data.get("train"), "train")
    if not data.get("output"):
        raise ConfigError("output", "checkpoint path required")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
    return TrainingRunConfig(textures, train, _resolve(base_dir, str(data["output"])), seed)


def load_training_config(path):
    return parse_training_config(read_yaml(path), os.path.dirname(os.path.abspath(path)))
