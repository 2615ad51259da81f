"""Command-line entry point: ``pixprior {run,gen-textures,train-prior,eval,table}``."""
import argparse
import json
import logging
import os
import sys

from ..errors import ConfigError, FormatError, NumericError, ParameterError
from ..metrics import evaluate
from . import experiment
from .config import _build, parse_config, parse_training_config, read_yaml
from .experiment import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK
from .imageio import load_image
from .textures import SyntheticTextureSpec, generate_textures

log = logging.getLogger("pixprior")


def _with_seed(path, seed, key="seed"):
    data = read_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    if seed is not None:
        data[key] = seed
    return data


def cmd_run(args):
    if args.seed is None:
        return experiment.run_experiment(args.config)
    # same as run_experiment, with the seed overridden
    try:
        cfg = parse_config(_with_seed(args.config, args.seed), os.path.dirname(os.path.abspath(args.config)))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        experiment.execute(cfg)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    return EXIT_OK


def cmd_gen_textures(args):
    data = _with_seed(args.spec, args.seed, key="rng_seed")
    spec = _build(SyntheticTextureSpec, data, "spec")
    out = spec.output_dir or "textures"
    if not os.path.isabs(out):
        out = os.path.join(os.path.dirname(os.path.abspath(args.spec)), out)
    paths = generate_textures(spec, out)
    print(f"wrote {len(paths)} patches to {out}")
    return EXIT_OK


def cmd_train_prior(args):
    """Config keys: ``textures`` (SyntheticTextureSpec), ``train`` (TrainConfig), ``seed``, ``output``."""
    cfg = parse_training_config(_with_seed(args.config, args.seed), os.path.dirname(os.path.abspath(args.config)))
    _, summary = experiment.train_prior(cfg)
    print(json.dumps({"checkpoint": cfg.output, **summary}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    report = evaluate(load_image(args.reference), load_image(args.estimate))
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_table(args):
    with open(os.path.join(args.directory, "metrics.json")) as fh:
        metrics = json.load(fh)
    sys.stdout.write(experiment.table_from_metrics(metrics))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pixprior", description="Compressive imaging with learned pixel priors.")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("run", help="run an experiment config")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("gen-textures", help="write synthetic texture patches")
    s.add_argument("spec")
    s.set_defaults(func=cmd_gen_textures)
    s = sub.add_parser("train-prior", help="train the autoregressive prior")
    s.add_argument("config")
    s.set_defaults(func=cmd_train_prior)
    s = sub.add_parser("eval", help="PSNR/SSIM of an estimate against a reference image")
    s.add_argument("reference")
    s.add_argument("estimate")
    s.set_defaults(func=cmd_eval)
    s = sub.add_parser("table", help="print the comparison table of a run directory")
    s.add_argument("directory")
    s.set_defaults(func=cmd_table)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    except ParameterError as exc:
        log.error("invalid argument: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
