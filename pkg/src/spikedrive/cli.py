"""Command line front end.

Every subcommand prints one JSON object per logical result on stdout, so
runs are easy to collect from shell scripts. Exit codes: 0 on success, 1
when a verification subcommand finds a mismatch, 2 for usage and I/O
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import store
from .convert import SpikingModel
from .convert import convert as convert_model
from .engine import run_snn
from .model import ModelConfig, TransformerModel, build_model, forward
from .verify import (check_tdec_properties, compare_ann_snn, spike_stats,
                     sweep_delay)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_config_file(path: str) -> ModelConfig:
    with open(path, encoding="utf-8") as f:
        return ModelConfig.from_dict(json.load(f))


def _gather_inputs(args) -> list[Path]:
    if args.input is not None:
        return [Path(args.input)]
    paths = sorted(Path(args.inputs).glob("*.img"))
    if not paths:
        raise FileNotFoundError(f"no *.img files under {args.inputs}")
    return paths


def _require_ann(model) -> TransformerModel:
    if not isinstance(model, TransformerModel):
        raise SystemExit("container holds a spiking model; use run-snn")
    return model


def _require_snn(model) -> SpikingModel:
    if not isinstance(model, SpikingModel):
        raise SystemExit("container holds an analog model; use run-ann or convert")
    return model


def _cmd_init_random(args) -> int:
    cfg = _load_config_file(args.config)
    model = build_model(cfg, seed=args.seed)
    store.save(model, args.out)
    _emit({"command": "init-random", "out": str(args.out), "seed": args.seed,
           "sites": len(model.sites), "tokens": cfg.tokens,
           "quant_levels": cfg.quant_levels})
    return 0


def _cmd_run_ann(args) -> int:
    model = _require_ann(store.load(args.container))
    for p in _gather_inputs(args):
        image = store.read_raw_image(p)
        logits = forward(model, image, mode=args.mode)
        _emit({"command": "run-ann", "input": str(p), "mode": args.mode,
               "logits": [float(v) for v in logits],
               "prediction": int(np.argmax(logits))})
    return 0


def _cmd_convert(args) -> int:
    model = _require_ann(store.load(args.container))
    sm = convert_model(model)
    store.save(sm, args.out)
    _emit({"command": "convert", "out": str(args.out),
           "time_window": sm.time_window,
           "neuron_sites": len(sm.neurons()),
           "tdec_sites": len(sm.tdec_sites)})
    return 0


def _cmd_run_snn(args) -> int:
    sm = _require_snn(store.load(args.container))
    delay = sm.time_window if args.delay is None else args.delay
    for p in _gather_inputs(args):
        image = store.read_raw_image(p)
        logits, stats = run_snn(sm, image, tau_d=delay)
        _emit({"command": "run-snn", "input": str(p), "delay": delay,
               "logits": [float(v) for v in logits],
               "prediction": int(np.argmax(logits)),
               "total_spikes": stats.total_spikes,
               "ticks_accumulated": stats.ticks_accumulated})
    return 0


def _cmd_verify(args) -> int:
    report = check_tdec_properties(trials=args.trials, seed=args.seed)
    _emit({"command": "verify", "stage": "temporal-decomposition",
           **report.to_dict()})
    ok = report.passed

    if args.container is not None:
        model = _require_ann(store.load(args.container))
        sm = convert_model(model)
        rng = np.random.default_rng(args.seed)
        images = [rng.standard_normal(model.config.image) for _ in range(args.images)]
        delay = model.config.quant_levels if args.delay is None else args.delay
        eq = compare_ann_snn(model, sm, images, tau_d=delay)
        _emit({"command": "verify", "stage": "ann-snn-equivalence",
               **eq.to_dict()})
        exact_expected = delay >= model.config.quant_levels
        if exact_expected:
            ok = ok and eq.logit_abs_err <= 1e-9 and eq.top1_agreement == 1.0
        else:
            ok = ok and eq.top1_agreement >= args.min_top1
    return 0 if ok else 1


def _cmd_sweep_delay(args) -> int:
    sm = _require_snn(store.load(args.container))
    if not isinstance(args.ann, str):
        raise SystemExit("--ann is required for sweep-delay")
    model = _require_ann(store.load(args.ann))
    images = [store.read_raw_image(p) for p in _gather_inputs(args)]
    delays = [int(v) for v in args.delays.split(",")]
    result = sweep_delay(model, sm, images, delays)
    _emit({"command": "sweep-delay", **result.to_dict()})
    return 0 if result.monotonic else 1


def _cmd_stats(args) -> int:
    sm = _require_snn(store.load(args.container))
    image = store.read_raw_image(args.input)
    delay = sm.time_window if args.delay is None else args.delay
    summary = spike_stats(sm, [image], tau_d=delay)
    _emit({"command": "stats", "delay": delay, **summary.to_dict()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikedrive",
        description="Quantized transformer to spiking-network conversion toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-random", help="build a calibrated random model")
    p.add_argument("--config", required=True, help="JSON architecture file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="container directory to write")
    p.set_defaults(fn=_cmd_init_random)

    p = sub.add_parser("run-ann", help="run the analog model on image files")
    p.add_argument("container")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--input", help="one raw image file")
    g.add_argument("--inputs", help="directory of *.img files")
    p.add_argument("--mode", choices=("float", "quant"), default="quant")
    p.set_defaults(fn=_cmd_run_ann)

    p = sub.add_parser("convert", help="fold BN and map quantizers to thresholds")
    p.add_argument("container")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_convert)

    p = sub.add_parser("run-snn", help="simulate the spiking model on image files")
    p.add_argument("container")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--input", help="one raw image file")
    g.add_argument("--inputs", help="directory of *.img files")
    p.add_argument("--delay", type=int, default=None,
                   help="per-neuron firing delay; defaults to the time window")
    p.set_defaults(fn=_cmd_run_snn)

    p = sub.add_parser("verify", help="property checks, plus equivalence if a container is given")
    p.add_argument("container", nargs="?", default=None)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--delay", type=int, default=None)
    p.add_argument("--min-top1", type=float, default=0.75,
                   help="agreement floor when the delay is below the time window")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("sweep-delay", help="error and agreement across firing delays")
    p.add_argument("container", help="spiking container")
    p.add_argument("--ann", required=True, help="matching analog container")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--input", help="one raw image file")
    g.add_argument("--inputs", help="directory of *.img files")
    p.add_argument("--delays", default="0,1,2,3,4")
    p.set_defaults(fn=_cmd_sweep_delay)

    p = sub.add_parser("stats", help="spike counts and rates per site")
    p.add_argument("container", help="spiking container")
    p.add_argument("--input", required=True)
    p.add_argument("--delay", type=int, default=None)
    p.set_defaults(fn=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except SystemExit as e:
        print(str(e), file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
