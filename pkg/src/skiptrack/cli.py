"""Command-line entry point: ``skiptrack <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 unreadable or malformed input,
3 a check ran to completion and failed (gradcheck tolerance, incomplete
weight file).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import bench_forward, bench_inputs, forward_once
from .config import ModelConfig
from .errors import WeightFileError
from .frames import load_manifest, write_pgm
from .masking import MaskConfig, mask_statistics
from .model import Model, init_model, required_shapes
from .selector import init_selector, random_gradcheck, selection_accuracy, train_selector
from .tracker import init_track, track_step
from .weightio import load_dataset, load_weights, save_weights

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("grid sides must be positive")
    return h, w


def _model(args) -> Model:
    cfg = ModelConfig.load(args.config)
    if args.weights is None:
        return init_model(cfg, args.seed)
    return Model.from_named(load_weights(args.weights), cfg)


# subcommands ------------------------------------------------------------------

def cmd_init_weights(args) -> int:
    cfg = ModelConfig.load(args.config)
    tensors = init_model(cfg, args.seed).named()
    save_weights(args.out, tensors)
    _emit({"out": str(args.out), "tensors": len(tensors),
           "parameters": int(sum(t.size for t in tensors.values())),
           "config_fingerprint": cfg.fingerprint()})
    return EXIT_OK


def cmd_forward(args) -> int:
    model = _model(args)
    cfg = model.cfg
    if args.input is None:
        Z, S = bench_inputs(cfg, args.seed)
    else:
        inputs = load_weights(args.input)
        try:
            Z, S = inputs["Z"], inputs["S"]
        except KeyError as exc:
            raise WeightFileError(f"input file lacks tensor {exc.args[0]!r}") from exc
    out, k, trace = forward_once(Z, S, model, args.mode)
    t = out.tokens.astype(np.float64)
    _emit({"mode": args.mode, "chosen_k": k, "blocks_executed": trace,
           "shape": list(out.tokens.shape), "sum": float(t.sum()), "l2": float(np.sqrt((t * t).sum()))})
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _model(args)
    report = bench_forward(model, args.mode, args.iters, args.warmup, args.seed, args.threads)
    doc = report.to_json()
    if args.json is not None:
        Path(args.json).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _emit(doc)
    return EXIT_OK


def cmd_track(args) -> int:
    model = _model(args)
    manifest = load_manifest(args.manifest)
    first = manifest.read(0)
    box = manifest.initial_box()
    state = init_track(first, box, model)
    lines = [{"frame": 0, "cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h,
              "chosen_k": 0, "score_max": None}]
    for i in range(1, len(manifest.frames)):
        state, box = track_step(state, manifest.read(i), model)
        lines.append({"frame": i, "cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h,
                      "chosen_k": state.last_step.chosen_k, "score_max": state.last_step.score_max})
    text = "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_mask_sim(args) -> int:
    gh, gw = args.grid
    cfg = MaskConfig(mask_ratio=args.ratio, mode=args.mode, seed=args.seed, grid_h=gh, grid_w=gw)
    stats = mask_statistics(cfg, args.trials)
    if args.csv is not None:
        np.savetxt(args.csv, stats.per_cell_frequency, delimiter=",", fmt="%.6f")
    if args.pgm is not None:
        write_pgm(args.pgm, stats.first_pattern.grid * 255)
    _emit({"mode": args.mode, "grid": [gh, gw], "ratio": args.ratio, "trials": args.trials,
           "seed": args.seed, "mean_masked": stats.mean_masked, "std_masked": stats.std_masked,
           "expected_masked": args.ratio * gh * gw,
           "first_masked": stats.first_pattern.realized_masked_count})
    return EXIT_OK


def cmd_select_train(args) -> int:
    data = load_dataset(args.dataset)
    if not data:
        raise WeightFileError("dataset holds no samples")
    in_dim, k = data[0][0].shape[0], data[0][1].shape[0]
    mlp = init_selector(in_dim, k, np.random.default_rng(args.seed), args.hidden)
    result = train_selector(data, mlp, args.lr, args.epochs, args.seed, args.batch_size or None)
    if args.out is not None:
        save_weights(args.out, result.mlp.named())
    _emit({"samples": len(data), "epochs": args.epochs, "lr": args.lr,
           "initial_loss": result.loss_curve[0], "final_loss": result.loss_curve[-1],
           "train_accuracy": selection_accuracy(result.mlp, data)})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    res = random_gradcheck(args.seed, args.points)
    ok = res.max_rel_error < GRADCHECK_TOLERANCE
    _emit({"seed": args.seed, "points": args.points, "max_rel_error": res.max_rel_error,
           "per_param": res.per_param, "checked": res.checked,
           "skipped_nonsmooth": res.skipped_nonsmooth, "passed": ok})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_inspect_weights(args) -> int:
    tensors = load_weights(args.path)
    expected = required_shapes(ModelConfig.load(args.config))
    missing = sorted(set(expected) - set(tensors))
    unexpected = sorted(set(tensors) - set(expected))
    mismatched = sorted(n for n in set(expected) & set(tensors) if tensors[n].shape != expected[n])
    complete = not (missing or mismatched)
    _emit({"tensors": {n: list(t.shape) for n, t in tensors.items()},
           "missing": missing, "unexpected": unexpected, "shape_mismatch": mismatched,
           "complete": complete})
    return EXIT_OK if complete else EXIT_CHECK


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skiptrack", description="Layer-skipping ViT tracker engine.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_args(sp, weights_required=False):
        sp.add_argument("--weights", type=Path, required=weights_required,
                        help="LGTW weight file (default: freshly initialized from --seed)")
        sp.add_argument("--config", type=Path, help="JSON ModelConfig overrides (default: built-in)")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("init-weights", help="write a seeded random weight file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_init_weights)

    sp = sub.add_parser("forward", help="one backbone pass, prints a summary of the output tokens")
    model_args(sp)
    sp.add_argument("--mode", choices=("full", "skip"), default="skip")
    sp.add_argument("--input", type=Path, help="LGTW file with tensors Z and S (default: seeded noise)")
    sp.set_defaults(func=cmd_forward)

    sp = sub.add_parser("bench", help="time full or skip forwards")
    model_args(sp)
    sp.add_argument("--mode", choices=("full", "skip"), default="skip")
    sp.add_argument("--iters", type=int, default=200)
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--json", type=Path, help="also write the report to this file")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("track", help="track a box through a frame sequence")
    model_args(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, help="JSON-lines output (default: stdout)")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("mask-sim", help="Monte-Carlo statistics of the occlusion masks")
    sp.add_argument("--mode", choices=("uniform", "cox"), default="cox")
    sp.add_argument("--grid", type=_grid, default=(8, 8))
    sp.add_argument("--ratio", type=float, default=0.25)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", type=Path, help="per-cell mask frequency grid")
    sp.add_argument("--pgm", type=Path, help="first sampled pattern as a P5 image")
    sp.set_defaults(func=cmd_mask_sim)

    sp = sub.add_parser("select-train", help="train a layer selector on a z/y dataset")
    sp.add_argument("--dataset", type=Path, required=True)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--batch-size", type=int, default=32, help="0 for full-batch descent")
    sp.add_argument("--hidden", type=int, default=160)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_select_train)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the selector gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--points", type=int, default=100)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("inspect-weights", help="list tensors and check completeness")
    sp.add_argument("--path", type=Path, required=True)
    sp.add_argument("--config", type=Path)
    sp.set_defaults(func=cmd_inspect_weights)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:  # every parse/shape/config error is a ValueError
        print(f"skiptrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
