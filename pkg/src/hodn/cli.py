"""Command-line entry point: ``hodn <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, save_config
from .data import generate_dataset, load_dataset, save_dataset
from .errors import HodnError
from .evaluation import evaluate, format_triplet_dump, masking_probe, predict_dataset
from .gradcheck import model_gradcheck, op_suite
from .train import format_metrics_log, train_loop

CHECKPOINT = "model.ckpt"
METRICS = "metrics.tsv"

# (name, link_mode, sg_enabled, sg_target)
ABLATION_VARIANTS = (
    ("human_guide", "human_guide", True, "object"),
    ("addition_guide", "addition_guide", True, "object"),
    ("random_guide", "random_guide", True, "object"),
    ("object_guide", "object_guide", True, "object"),
    ("human_guide_no_sg", "human_guide", False, "object"),
    ("human_guide_sg_human", "human_guide", True, "human"),
)


def _seeded(config, seed):
    return config if seed is None else config.replace(seed=seed)


def run_training(config, dataset, out_dir):
    """Train, then write the checkpoint, metrics log and echoed config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train_loop(dataset, config)
    save_checkpoint(out / CHECKPOINT, result.params, result.state)
    (out / METRICS).write_text(format_metrics_log(result.history))
    save_config(config, out / "config.conf")
    return result


def cmd_train(args):
    config = _seeded(load_config(args.config), args.seed)
    dataset = load_dataset(args.data, config)
    result = run_training(config, dataset, args.out)
    final = result.history[-1].terms["total"] if result.history else float("nan")
    print(f"steps\t{result.state.step}\nfinal_total\t{final:.9g}")
    return 0


def cmd_eval(args):
    config = load_config(args.config)
    dataset = load_dataset(args.data, config)
    params, _ = load_checkpoint(args.checkpoint, config)
    triplets = predict_dataset(dataset, params, config)
    if args.dump:
        Path(args.dump).write_text(format_triplet_dump(triplets))
    sys.stdout.write(evaluate(dataset, params, config, triplets).format_table())
    return 0


def cmd_gradcheck(args):
    config = _seeded(load_config(args.config), args.seed)
    print("check\ttensors\tmax_rel_error\tstatus")
    ok = True
    for name, report in op_suite(config.seed).items():
        ok &= _report_line(f"op.{name}", report)
    for sg in (True, False):
        report = model_gradcheck(config, config.seed, sg_enabled=sg, directions=args.directions)
        ok &= _report_line(f"model.sg_{'on' if sg else 'off'}", report)
        for failure in report.failures():
            print(f"  failed\t{failure.name}\t{failure.max_rel_error:.3e}")
    return 0 if ok else 1


def _report_line(name, report):
    status = "pass" if report.passed else "FAIL"
    print(f"{name}\t{len(report.results)}\t{report.max_rel_error:.3e}\t{status}")
    return report.passed


def cmd_probe(args):
    config = load_config(args.config)
    dataset = load_dataset(args.data, config)
    params, _ = load_checkpoint(args.checkpoint, config)
    try:
        probs = [float(p) for p in args.probs.split(",")]
    except ValueError:
        raise HodnError(f"--probs must be a comma-separated list of numbers, got {args.probs!r}") from None
    targets = ("human", "object") if args.target == "both" else (args.target,)
    print("target\tprob\tmap\tmasked_cells")
    for target in targets:
        for prob in probs:
            r = masking_probe(dataset, params, config, target, prob, args.seed)
            print(f"{target}\t{prob:g}\t{r.mean_ap:.6f}\t{r.masked_cells}")
    return 0


def ablation_table(config, dataset, out_dir):
    """Train every variant from the same seed; returns the table rows."""
    rows = []
    for name, mode, sg, target in ABLATION_VARIANTS:
        variant = config.replace(link_mode=mode, sg_enabled=sg, sg_target=target)
        result = run_training(variant, dataset, Path(out_dir) / name)
        report = evaluate(dataset, result.params, variant)
        final = result.history[-1].terms["total"] if result.history else float("nan")
        rows.append((name, mode, "on" if sg else "off", target if sg else "-", report.mean_ap, final))
    return rows


def format_ablation(rows):
    lines = ["variant\tlink_mode\tsg\tsg_target\trole_map\tfinal_total"]
    lines += [f"{n}\t{m}\t{s}\t{t}\t{ap:.6f}\t{loss:.9g}" for n, m, s, t, ap, loss in rows]
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    config = load_config(args.config)
    dataset = load_dataset(args.data, config)
    table = format_ablation(ablation_table(config, dataset, args.out))
    (Path(args.out) / "ablation.tsv").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_gen(args):
    config = load_config(args.config)
    if args.count < 0:
        raise HodnError("--count must be >= 0")
    save_dataset(generate_dataset(args.count, args.seed, config), args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="hodn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics log")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dump")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--directions", type=int, default=4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("probe", help="role mAP under box masking")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True, choices=("human", "object", "both"))
    p.add_argument("--probs", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ablate", help="train and compare the link-mode / stop-gradient variants")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (HodnError, OSError, ValueError) as exc:
        print(f"hodn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
