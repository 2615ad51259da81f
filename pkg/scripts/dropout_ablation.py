"""Mean SPC reconstruction PSNR of the desk prior for several dropout ratios.

Usage::

    python3 scripts/dropout_ablation.py [--ratios 0 0.25 0.5 0.75] [--output runs/dropout_ablation]
"""
import argparse
import os

import numpy as np

from pixprior.harness.config import parse_config, read_yaml
from pixprior.harness.experiment import execute

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=os.path.join(CONFIGS, "acceptance_spc.yaml"))
    p.add_argument("--ratios", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75])
    p.add_argument("--output", default=os.path.join(ROOT, "runs", "dropout_ablation"))
    args = p.parse_args(argv)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    print("dropout,rate,mean_psnr_db")
    for ratio in args.ratios:
        data = read_yaml(args.config)
        data["solver"]["dropout_ratio"] = ratio
        data["methods"] = ["prior"]
        data["output_dir"] = os.path.join(args.output, f"dropout_{ratio:g}")
        metrics = execute(parse_config(data, base_dir))
        for rate in sorted({r["rate"] for r in metrics["runs"]}):
            psnrs = [r["psnr_db"] for r in metrics["runs"] if r["rate"] == rate]
            print(f"{ratio:g},{rate:g},{np.mean(psnrs):.3f}", flush=True)


if __name__ == "__main__":
    main()
