"""Command line entry point: ``robustcast <subcommand> ...``.

Exit status: 0 success, 1 contract or configuration error (including bad
flags), 2 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import ablation as abl
from .flow import audit_policy, flow_for_sequence, flow_to_svg
from .forecaster import ModelParams, init_params, predict_logits
from .geometry import PAPER_POLICY
from .gradcheck import run_gradcheck
from .metrics import evaluate, frequency_ppm, probability_ppm, rain_frequency_map, write_summary_csv
from .synthdata import DatasetManifest, build_benchmark, default_config
from .tensor_core import read_tensor
from .trainer import AUG_MODES, TrainConfig, train
from .tta import PRESETS, ensemble_predict, equivariance_gap

log = logging.getLogger("robustcast")

GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _shared(p, out_required=True):
    p.add_argument("--config", help="JSON configuration document")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _train_flags(p):
    p.add_argument("--aug", choices=AUG_MODES, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--pos-weight", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--features", type=int, default=None)


def _eval_flags(p):
    p.add_argument("--ensemble", choices=sorted(PRESETS), default="identity")
    p.add_argument("--prob-threshold", type=float, default=0.5)


def build_parser():
    parser = _Parser(prog="robustcast", description="Shift-robust nowcasting training toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    _shared(p)

    p = sub.add_parser("train", help="train the reference forecaster")
    _shared(p)
    p.add_argument("--data", required=True, help="dataset directory or manifest.json")
    _train_flags(p)
    p.add_argument("--checkpoint-every", type=int, default=None)

    p = sub.add_parser("eval", help="score a trained model on a split")
    _shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="parameter bundle directory")
    p.add_argument("--split", default="test")
    _eval_flags(p)

    p = sub.add_parser("tta-compare", help="compare ensemble presets on one model")
    _shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--prob-threshold", type=float, default=0.5)

    p = sub.add_parser("audit-aug", help="direction-overlap audit of all D4 transforms")
    _shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--dominance-fraction", type=float, default=0.5)
    p.add_argument("--max-angle", type=float, default=90.0)
    p.add_argument("--min-speed", type=float, default=0.5)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _shared(p, out_required=False)
    p.add_argument("--seeds", type=int, default=20)

    p = sub.add_parser("ablate", help="STL x AP x GAE ablation on held-out regions")
    _shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, default=3)
    _train_flags(p)

    p = sub.add_parser("plot", help="write probability, flow and rain-frequency figures")
    _shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0, help="sequence index within the split")
    p.add_argument("--lead", type=int, default=0)
    p.add_argument("--ensemble", choices=sorted(PRESETS), default="identity")
    return parser


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_json(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config not found: {p}")
    return json.loads(p.read_text())


def _train_config(args, base=None):
    doc = _load_json(args.config) if args.config else {}
    cfg = base if base is not None else TrainConfig()
    if doc:
        merged = {**dataclasses.asdict(cfg), **doc}
        if isinstance(doc.get("loss"), dict):
            merged["loss"] = {**dataclasses.asdict(cfg.loss), **doc["loss"]}
        cfg = TrainConfig(**merged)
    loss = cfg.loss
    loss = dataclasses.replace(
        loss,
        alpha=loss.alpha if args.alpha is None else args.alpha,
        beta=loss.beta if args.beta is None else args.beta,
        pos_weight=loss.pos_weight if args.pos_weight is None else args.pos_weight,
    )
    updates = {"loss": loss}
    for flag, name in (("aug", "aug_policy"), ("epochs", "epochs"), ("lr", "lr"),
                       ("features", "features"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "checkpoint_every", None) is not None:
        updates["checkpoint_every"] = args.checkpoint_every
    return dataclasses.replace(cfg, **updates)


def cmd_gen_data(args):
    config = _load_json(args.config) if args.config else default_config()
    manifest = build_benchmark(config, root=args.out, force=args.force, seed=args.seed)
    print(f"wrote {len(manifest.files)} sequences to {manifest.root}")
    return 0


def cmd_train(args):
    manifest = DatasetManifest.load(args.data)
    cfg = _train_config(args)
    X, Y, _ = manifest.load_split("train")
    Xv, Yv, _ = manifest.load_split("val")
    out = _out_dir(args)
    params = init_params(manifest.layout, cfg.features, seed=cfg.seed, dropout_rate=cfg.dropout_rate)
    params, tlog = train(params, (X, Y), (Xv, Yv), cfg, checkpoint_dir=out / "checkpoints")
    params.save(out / "model")
    tlog.to_csv(out / "trainlog.csv")
    tlog.steps_to_csv(out / "losses.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    last = tlog.rows[-1]
    print(f"trained {cfg.epochs} epochs: train total {last['total']:.5f}, val total {last['val_total']:.5f}, "
          f"lr {last['lr']:.3g}")
    return 0


def _model_predictor(model_dir, ensemble):
    params = ModelParams.load(model_dir)
    f = predict_logits(params)
    return params, (lambda x: ensemble_predict(f, x, ensemble))


def cmd_eval(args):
    manifest = DatasetManifest.load(args.data)
    _, predict = _model_predictor(args.model, args.ensemble)
    report = evaluate(predict, manifest, args.split, args.prob_threshold)
    out = _out_dir(args)
    report.to_csv(out / "eval.csv")
    write_summary_csv(out / "summary.csv", [(args.ensemble, report)], report.regions())
    miou = report.miou
    print(f"{args.split} mIoU ({args.ensemble}): " + ("undefined" if miou is None else f"{100 * miou:.2f}"))
    return 0


def cmd_tta_compare(args):
    manifest = DatasetManifest.load(args.data)
    params = ModelParams.load(args.model)
    f = predict_logits(params)
    rows = []
    for name in ("identity", "paper_main", "paper_full"):
        report = evaluate(lambda x, n=name: ensemble_predict(f, x, n), manifest, args.split, args.prob_threshold)
        rows.append((name, report))
        print(f"{name:<11} mIoU {100 * (report.miou or 0.0):6.2f}")
    out = _out_dir(args)
    write_summary_csv(out / "tta_compare.csv", rows, rows[0][1].regions())
    first = next(manifest.entries(args.split), None)
    if first is not None:
        x = read_tensor(first[2])
        with open(out / "equivariance_gap.csv", "w") as fh:
            fh.write("transform,gap\n")
            for g in PAPER_POLICY:
                gap = equivariance_gap(f, x, g)
                fh.write(f"{g.name},{gap!r}\n")
                print(f"equivariance gap {g.name:<13} {gap:.5f}")
    return 0


def cmd_audit(args):
    manifest = DatasetManifest.load(args.data)
    report = audit_policy(manifest, PAPER_POLICY, split=args.split, min_speed=args.min_speed,
                          dominance_fraction=args.dominance_fraction, max_angle=args.max_angle)
    out = _out_dir(args)
    report.to_csv(out / "audit.csv")
    for region, hist in report.histograms.items():
        bad = [t for r, t, _, ok in report.rows if r == region and not ok]
        print(f"{region}: {report.n_sequences[region]} sequences, inadmissible: {', '.join(bad) or 'none'}")
    for msg in report.warnings:
        print(f"warning: {msg}")
    return 0


def cmd_gradcheck(args):
    summary = run_gradcheck(args.seeds)
    ok = True
    lines = ["term,max_rel_error,checked,skipped"]
    for name, r in summary.items():
        passed = r.max_rel_error <= GRAD_TOL
        ok &= passed
        print(f"{name:<9} max rel error {r.max_rel_error:.3e}  checked {r.checked}  skipped {r.skipped}  "
              f"{'PASS' if passed else 'FAIL'}")
        lines.append(f"{name},{r.max_rel_error!r},{r.checked},{r.skipped}")
    if args.out:
        (_out_dir(args) / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    return 0 if ok else 1


def cmd_ablate(args):
    base = _train_config(args, base=TrainConfig(lr=abl.DESK_LR))
    plan = abl.AblationPlan(seeds=tuple(range(args.seeds)), base=base)
    result = abl.run_ablation(args.data, plan, out_dir=args.out, threads=args.threads)
    print(abl.format_table(result, plan))
    return 0


def cmd_plot(args):
    manifest = DatasetManifest.load(args.data)
    out = _out_dir(args)
    entries = list(manifest.entries(args.split))
    if not entries:
        raise FileNotFoundError(f"split {args.split!r} has no sequences in {manifest.root}")
    region, _, xp, yp = entries[min(args.index, len(entries) - 1)]
    x = read_tensor(xp)
    y = read_tensor(yp)
    (out / "flow.svg").write_text(flow_to_svg(flow_for_sequence(x)))
    if args.model:
        _, predict = _model_predictor(args.model, args.ensemble)
        prob = predict(x[None])[0, 0, args.lead]
        (out / "probability.ppm").write_bytes(probability_ppm(prob, y[0, args.lead]))
    for rid in manifest.region_ids():
        (out / f"frequency_{rid}.ppm").write_bytes(frequency_ppm(rain_frequency_map(manifest, rid)))
    print(f"figures written to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "tta-compare": cmd_tta_compare,
    "audit-aug": cmd_audit,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
