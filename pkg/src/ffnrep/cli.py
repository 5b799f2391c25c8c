"""Command-line entry point.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import bench
from .config import PRESETS, load_config, preset_config
from .errors import FormatError, StateError, UnsupportedConfigError, ValidationError
from .model import build_model, freeze_model, randomize_batchnorms
from .model_io import save_model
from .training import ToyTask, freeze_then_verify, toy_config, train_toy


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--theta", type=float, default=0.75)
    p.add_argument("--rho", type=float)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--dtype", choices=("f32", "f64"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv", "text"), default="json")
    p.add_argument("--mode", choices=("linear-only", "full"), default="linear-only")
    p.add_argument("--threads", type=int)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ffnrep", description="Channel-idle FFN reparameterization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", parents=[common], help="per-component latency, pre vs post rewrite")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--depth", type=int)
    p.add_argument("--baseline", choices=("idle-train", "vanilla-ln"), default="idle-train")

    p = sub.add_parser("verify", parents=[common], help="pre/post logit equivalence")
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--depth", type=int)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--against")
    p.add_argument("--corrupt", action="store_true", help="perturb one merged weight (negative control)")

    p = sub.add_parser("account", parents=[common], help="parameter and MAC counts")
    p.add_argument("--form", choices=("vanilla", "train", "infer"), default="infer")
    p.add_argument("--tokens", type=int)
    p.add_argument("--config", help="JSON config file instead of --preset")

    p = sub.add_parser("reparam", parents=[common], help="rewrite a train-form weight file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--freeze", action="store_true", help="freeze BatchNorms before rewriting")

    p = sub.add_parser("train-toy", parents=[common], help="toy train -> freeze -> reparameterize run")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--form", choices=("idle-train", "idle-infer"), default="idle-train")
    p.add_argument("--save-model")

    p = sub.add_parser("init", parents=[common], help="write a freshly initialized, frozen train-form weight file")
    p.add_argument("--config", help="JSON config file instead of --preset")
    p.add_argument("--depth", type=int)
    p.add_argument("--random-bn", action="store_true", help="randomize BatchNorm statistics")
    return parser


_FORMS = {"vanilla": "vanilla-ln", "train": "idle-train", "infer": "idle-infer"}


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _dict_report(d: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(d, indent=2, sort_keys=True)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = sorted(d)
        w.writerow(keys)
        w.writerow([d[k] for k in keys])
        return buf.getvalue()
    return "\n".join(f"{k:<18} {d[k]}" for k in sorted(d))


def _render(report, fmt: str) -> str:
    return {"json": report.to_json, "csv": report.to_csv, "text": report.to_text}[fmt]()


def _need_preset(args, parser):
    if args.preset is None:
        parser.error(f"{args.command} needs --preset")


def _cmd_profile(args, parser) -> int:
    _need_preset(args, parser)
    rep = bench.run_profile(
        args.preset,
        theta=args.theta,
        batch=args.batch,
        iters=args.iters,
        warmup=args.warmup,
        dtype=args.dtype or "f32",
        seed=args.seed,
        depth=args.depth,
        rho=args.rho,
        baseline=args.baseline,
        threads=args.threads,
    )
    _emit(_render(rep, args.format), args.out)
    return 0


def _cmd_verify(args, parser) -> int:
    if args.in_path:
        res = bench.verify_files(args.in_path, args.against, seed=args.seed)
    else:
        _need_preset(args, parser)
        res = bench.run_verify(
            args.preset,
            theta=args.theta,
            probes=args.probes,
            dtype=args.dtype or "f64",
            seed=args.seed,
            depth=args.depth,
            rho=args.rho,
            corrupt=args.corrupt,
        )
    _emit(_dict_report(res, args.format), args.out)
    return 0 if res["pass"] else 1


def _cmd_account(args, parser) -> int:
    if args.config:
        cfg = load_config(args.config)
        rep = bench.run_account(cfg=cfg, mode=args.mode, tokens=args.tokens)
    else:
        _need_preset(args, parser)
        rep = bench.run_account(args.preset, args.theta, args.mode, _FORMS[args.form], args.rho, args.tokens)
    _emit(_render(rep, args.format), args.out)
    return 0


def _cmd_reparam(args, parser) -> int:
    if not args.out:
        parser.error("reparam needs --out")
    reports = bench.run_reparam(args.in_path, args.out, freeze=args.freeze)
    rows = [r.to_dict() for r in reports]
    if args.format == "json":
        text = json.dumps(rows, indent=2)
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    else:
        text = "\n".join(
            f"layer {r['layer_index']:>3}: {r['params_before']:>10,d} -> {r['params_after']:>10,d} "
            f"ratio={r['reduction_ratio_measured']:.4f} spot={r['max_abs_diff_spotcheck']:.2e}"
            for r in rows
        )
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0


def _cmd_train_toy(args, parser) -> int:
    rho = args.rho if args.rho is not None else 4.0
    cfg = toy_config(theta=args.theta, rho=rho, seed=args.seed)
    dtype = np.float64 if args.dtype == "f64" else np.float32
    summary = train_toy(cfg, ToyTask(seed=args.seed), steps=args.steps, lr=args.lr, train_form=args.form, dtype=dtype)
    out = summary.to_dict()
    if args.form == "idle-train":
        probes, _ = ToyTask(seed=args.seed, samples=64, sample_seed=1).generate(dtype)
        check = freeze_then_verify(summary.model, probes)
        out["reparam_max_rel_diff"] = check["max_rel_diff"]
        out["reparam_argmax_identical"] = check["argmax_identical"]
    if args.save_model:
        save_model(summary.model, args.save_model)
    _emit(json.dumps(out, indent=2) if args.format != "text" else _dict_report(out, "text"), args.out)
    return 0


def _cmd_init(args, parser) -> int:
    if not args.out:
        parser.error("init needs --out")
    if args.config:
        cfg = load_config(args.config)
    else:
        _need_preset(args, parser)
        over = {"idle_ratio": args.theta, "seed": args.seed, "ffn_form": "idle-train"}
        if args.rho is not None:
            over["expand_ratio"] = args.rho
        if args.depth is not None:
            over["depth"] = args.depth
        cfg = preset_config(args.preset, **over)
    model = build_model(cfg, np.float64 if args.dtype == "f64" else np.float32)
    if args.random_bn:
        randomize_batchnorms(model, args.seed)
    freeze_model(model)
    save_model(model, args.out)
    return 0


_COMMANDS = {
    "profile": _cmd_profile,
    "verify": _cmd_verify,
    "account": _cmd_account,
    "reparam": _cmd_reparam,
    "train-toy": _cmd_train_toy,
    "init": _cmd_init,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (StateError, FormatError, UnsupportedConfigError, OSError, RuntimeError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
