#!/usr/bin/env python3
"""Build a random model, convert it, and print the ANN/SNN agreement.

Usage: python scripts/equivalence_demo.py [config.json] [--seed N] [--images N]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from spikedrive import ModelConfig, build_model, compare_ann_snn, convert

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default=str(ROOT / "configs" / "tiny.json"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--images", type=int, default=16)
    args = ap.parse_args()

    with open(args.config, encoding="utf-8") as f:
        cfg = ModelConfig.from_dict(json.load(f))
    model = build_model(cfg, seed=args.seed)
    spiking = convert(model)

    rng = np.random.default_rng(args.seed + 1)
    images = [rng.standard_normal(cfg.image) for _ in range(args.images)]
    rep = compare_ann_snn(model, spiking, images, tau_d=spiking.time_window)

    print(f"time window        {spiking.time_window}")
    print(f"images             {rep.images}")
    print(f"max abs logit err  {rep.logit_abs_err:.3e}")
    print(f"max rel logit err  {rep.logit_rel_err:.3e}")
    print(f"top-1 agreement    {rep.top1_agreement:.0%}")
    worst = max(rep.site_abs_err, key=rep.site_abs_err.get)
    print(f"worst site         {worst} ({rep.site_abs_err[worst]:.3e})")


if __name__ == "__main__":
    main()
