#!/usr/bin/env python3
"""Sweep the firing delay and print the error/agreement table.

Usage: python scripts/delay_sweep_demo.py [config.json] [--seed N] [--images N]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from spikedrive import ModelConfig, build_model, convert, sweep_delay

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default=str(ROOT / "configs" / "tiny.json"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--images", type=int, default=64)
    args = ap.parse_args()

    with open(args.config, encoding="utf-8") as f:
        cfg = ModelConfig.from_dict(json.load(f))
    model = build_model(cfg, seed=args.seed)
    spiking = convert(model)

    rng = np.random.default_rng(args.seed + 1)
    images = [rng.standard_normal(cfg.image) for _ in range(args.images)]
    delays = list(range(spiking.time_window + 1))
    res = sweep_delay(model, spiking, images, delays)

    print(f"{'delay':>5}  {'mean |err|':>12}  {'top-1':>6}  saturated")
    for d, err, agree, sat in zip(res.delays, res.mean_abs_err,
                                  res.top1_agreement, res.saturated):
        print(f"{d:>5}  {err:>12.3e}  {agree:>6.0%}  {'yes' if sat else 'no'}")
    print(f"\nfull-delay reference error {res.full_delay_err:.3e}")
    print(f"monotonic: {'yes' if res.monotonic else 'no'}")


if __name__ == "__main__":
    main()
