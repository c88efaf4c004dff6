"""Command-line entry point: ``futureseg <subcommand> [options]``.

Artifacts go to ``--out``; when it is omitted they go under ``$FUTURESEG_OUT``
(default ``./futureseg_out``).  Logs go to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

import torch

from . import __version__
from .errors import ConfigError, FutureSegError
from .fields import flow_read, flow_write, read_label_png
from .harness import (
    HORIZONS, ExperimentConfig, Workbench, dump_report, format_grid, forecast_flows,
    forecast_pairs, load_config, predict_split, run_ablation_grid, run_pipeline,
)
from .masknet import MaskNet, load_masknet, oracle_pairs, save_masknet, train_masknet
from .metrics import dataset_semantic_iou, flow_mse, pr_curve
from .ofnet import load_ofnet, rollout, save_ofnet, train_ofnet
from .synthgen import SceneConfig, emit_dataset, load_dataset

log = logging.getLogger("futureseg")

OUT_ENV = "FUTURESEG_OUT"


def _out(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "futureseg_out")) / default_name


def _horizon(text: str):
    if text in HORIZONS:
        return text
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("horizon must be short, mid or a step count") from None
    if n < 1:
        raise argparse.ArgumentTypeError("horizon must be >= 1")
    return n


def _layers(text: str):
    return text if text == "all" else int(text)


def _experiment_base(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    d = {}
    if args.config:
        d = dict(load_config(args.config).scene.to_dict())
    for key in ("height", "width", "frames"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    if args.objects is not None:
        d["n_objects"] = args.objects
    d["seed"] = args.seed
    cfg = SceneConfig.from_dict(d)
    out = _out(args, "data")
    recs = emit_dataset(cfg, args.n, out)
    log.info("wrote %d sequences to %s", len(recs), out)
    print(out / "manifest.jsonl")
    return 0


def cmd_train_flow(args) -> int:
    base = _experiment_base(args.config)
    hyper = replace(base.flow_train, seed=args.seed)
    for key in ("epochs", "lr", "batch_size"):
        if getattr(args, key) is not None:
            hyper = replace(hyper, **{key: getattr(args, key)})
    train = load_dataset(args.data, "train")
    first = train[0] if train else None
    fcfg = base.forecaster
    if first is not None and first.shape != (fcfg.height, fcfg.width):
        fcfg = replace(fcfg, height=first.shape[0], width=first.shape[1])
    model, hist = train_ofnet(train, fcfg, hyper)
    out = _out(args, "ofnet.ckpt")
    save_ofnet(model, out, {"train": asdict(hyper), "epoch_loss": hist["epoch_loss"]})
    log.info("saved OFNet to %s (final loss %.5f)", out, hist["epoch_loss"][-1])
    return 0


def cmd_train_mask(args) -> int:
    base = _experiment_base(args.config)
    train = load_dataset(args.data, "train")[:args.max_sequences]
    hyper = replace(base.mask_train, seed=args.seed, loss=args.loss)
    for key in ("epochs", "lr"):
        if getattr(args, key) is not None:
            hyper = replace(hyper, **{key: getattr(args, key)})
    tracker = base.tracker
    if args.stage == "pretrain":
        model = MaskNet(replace(base.warper, seed=args.seed))
        pairs = oracle_pairs(train, tracker)
        trainable = "all"
    else:
        if args.ofnet is None:
            raise ConfigError("finetuning needs --ofnet to forecast flows")
        if args.init:
            if not Path(args.init).exists():
                raise ConfigError(f"missing MaskNet checkpoint {args.init}")
            model = load_masknet(args.init)
        else:
            model = MaskNet(replace(base.warper, seed=args.seed))
        ofnet = load_ofnet(args.ofnet)
        n = HORIZONS.get(args.horizon, args.horizon)
        flows = forecast_flows(ofnet, train, ofnet.cfg.T, n, args.feeding)
        pairs = forecast_pairs(train, flows, ofnet.cfg.T, tracker)
        if args.epochs is None:
            hyper = replace(hyper, epochs=3 if args.init else base.mask_train.epochs)
        trainable = args.layers if args.init else "all"
    hist = train_masknet(model, pairs, hyper, trainable)
    out = _out(args, f"masknet_{args.stage}.ckpt")
    save_masknet(model, out, {"stage": args.stage, "trainable": hist["trainable"],
                              "epoch_loss": hist["epoch_loss"]})
    log.info("saved MaskNet to %s (%d pairs)", out, len(pairs))
    return 0


def cmd_rollout(args) -> int:
    model = load_ofnet(args.ckpt)
    files = sorted(Path(args.past).glob("*.flo"))
    if len(files) < model.cfg.T:
        raise ConfigError(f"{args.past} holds {len(files)} .flo files; need T={model.cfg.T}")
    past = [flow_read(f) for f in files[-model.cfg.T:]]
    out = _out(args, "rollout")
    out.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(rollout(model, past, args.n)):
        flow_write(f, out / f"flow_{k:03d}.flo")
    log.info("wrote %d forecast flows to %s", args.n, out)
    return 0


def _write_pipeline_outputs(cfg, bench, report, out: Path) -> None:
    from .plots import plot_mse_horizon, plot_overlay, plot_pr_curves
    dump_report(report, out / "report.json")
    if "flow_mse" in report:
        plot_mse_horizon({cfg.flow_feeding: report["flow_mse"]}, out / "flow_mse.png")
    preds, _, gts, _ = predict_split(cfg, bench, cfg.seeds[0])
    plot_pr_curves({cfg.name: pr_curve(preds, gts)}, out / "pr_curve.png")
    if preds:
        plot_overlay(gts[0][0].mask.shape if gts[0] else bench.samples("val")[0].shape,
                     preds[0], gts[0], out / "overlay.png", f"{cfg.name} t+{cfg.steps}")


def cmd_baseline(args) -> int:
    cfg = replace(_experiment_base(args.config), method=args.method, horizon=args.horizon,
                  seeds=(args.seed,), name=f"{args.method}/{args.horizon}")
    if args.data:
        cfg = replace(cfg, data=args.data)
    feeding = args.feeding or ("autoregressive" if args.ofnet else "oracle")
    cfg = replace(cfg, flow_feeding=feeding, ofnet_checkpoint=args.ofnet or cfg.ofnet_checkpoint)
    bench = Workbench(cfg)
    report = run_pipeline(cfg, bench)
    out = _out(args, f"baseline_{args.method}")
    _write_pipeline_outputs(cfg, bench, report, out)
    print(json.dumps(report["mean"], sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    report = {}
    flos = sorted(p.name for p in gt_dir.glob("*.flo"))
    if flos:
        missing = [n for n in flos if not (pred_dir / n).exists()]
        if missing:
            raise ConfigError(f"predictions missing for {missing}")
        steps = flow_mse([flow_read(pred_dir / n) for n in flos],
                         [flow_read(gt_dir / n) for n in flos])
        report["flow_mse"] = steps
    sems = sorted(p.name for p in gt_dir.glob("sem_*.png"))
    if sems:
        missing = [n for n in sems if not (pred_dir / n).exists()]
        if missing:
            raise ConfigError(f"predictions missing for {missing}")
        iou = dataset_semantic_iou([read_label_png(pred_dir / n) for n in sems],
                                   [read_label_png(gt_dir / n) for n in sems])
        report["semantic_iou"] = {"mean": iou["mean"],
                                  "per_class": {str(k): v for k, v in iou["per_class"].items()}}
    if not report:
        raise ConfigError(f"{gt_dir} holds no .flo or sem_*.png ground truth")
    out = _out(args, "eval")
    dump_report(report, out / "eval.json")
    if "flow_mse" in report:
        from .plots import plot_mse_horizon
        plot_mse_horizon({"pred": report["flow_mse"]}, out / "flow_mse.png")
    print(dump_report(report), end="")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = _out(args, cfg.name)
    bench = Workbench(cfg)
    if args.grid:
        from .plots import plot_grid
        grid = run_ablation_grid(cfg, bench)
        dump_report(grid, out / "grid.json")
        (out / "grid.txt").write_text(format_grid(grid) + "\n")
        plot_grid(grid, out / "grid_iou.png")
        print(format_grid(grid))
        return 0
    report = run_pipeline(cfg, bench)
    _write_pipeline_outputs(cfg, bench, report, out)
    print(json.dumps(report["mean"], sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from .plots import plot_grid, plot_mse_horizon
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read report {args.report}: {e}") from None
    out = _out(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    if "rows" in data:
        text = format_grid(data, args.metric)
        plot_grid(data, out / f"grid_{args.metric}.png", args.metric)
    elif "mean" in data:
        text = "\n".join(f"{k:>6}: {v:.4f}" for k, v in sorted(data["mean"].items()))
        if "flow_mse" in data:
            plot_mse_horizon({"forecast": data["flow_mse"]}, out / "flow_mse.png")
            text += "\n" + "\n".join(
                f"t+{k + 1}: mse {s['mse']:.4f} u {s['mse_u']:.4f} v {s['mse_v']:.4f}"
                for k, s in enumerate(data["flow_mse"]))
    elif "flow_mse" in data:
        plot_mse_horizon({"pred": data["flow_mse"]}, out / "flow_mse.png")
        text = "\n".join(f"{k + 1}: {s['mse']:.4f}" for k, s in enumerate(data["flow_mse"]))
    else:
        raise ConfigError(f"{args.report} is not a futureseg report")
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(seed_help: str = "random seed (default 0)", seed_default=0) -> argparse.ArgumentParser:
    # a fresh parent per subcommand: argparse shares parent actions by reference
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=seed_default, help=seed_help)
    common.add_argument("--out", help=f"output path (default under ${OUT_ENV})")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:

    p = argparse.ArgumentParser(prog="futureseg",
                                description="Flow-based future instance segmentation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    s = sub.add_parser("synth", parents=[_common()], help="generate a synthetic dataset")
    s.add_argument("--n", type=int, default=200, help="number of sequences (seed, seed+1, ...)")
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--objects", type=int)
    s.add_argument("--config", help="experiment YAML whose scene section is used")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-flow", parents=[_common()], help="train the flow forecaster")
    s.add_argument("--data", required=True, help="dataset manifest.jsonl")
    s.add_argument("--config", help="experiment YAML (forecaster / flow_train sections)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.set_defaults(func=cmd_train_flow)

    s = sub.add_parser("train-mask", parents=[_common()], help="train the mask warper")
    s.add_argument("--data", required=True, help="dataset manifest.jsonl")
    s.add_argument("--config", help="experiment YAML (warper / mask_train sections)")
    s.add_argument("--stage", choices=("pretrain", "finetune"), default="pretrain")
    s.add_argument("--ofnet", help="OFNet checkpoint (finetune stage)")
    s.add_argument("--init", help="MaskNet checkpoint to finetune; omitted = train from scratch")
    s.add_argument("--layers", type=_layers, default=2, help="trainable suffix: count or 'all'")
    s.add_argument("--horizon", type=_horizon, default="short")
    s.add_argument("--feeding", choices=("autoregressive", "teacher_forced"),
                   default="autoregressive")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--loss", choices=("dice", "bce"), default="dice")
    s.add_argument("--max-sequences", dest="max_sequences", type=int)
    s.set_defaults(func=cmd_train_mask)

    s = sub.add_parser("rollout", parents=[_common()], help="forecast future flows")
    s.add_argument("--ckpt", required=True, help="OFNet checkpoint")
    s.add_argument("--past", required=True, help="directory of past .flo files (last T used)")
    s.add_argument("--n", type=int, required=True, help="steps to forecast")
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("baseline", parents=[_common()], help="score a non-learned baseline")
    s.add_argument("--data", help="dataset manifest.jsonl")
    s.add_argument("--config", help="experiment YAML")
    s.add_argument("--method", choices=("copy", "shift", "warp"), default="warp")
    s.add_argument("--horizon", type=_horizon, default="short")
    s.add_argument("--ofnet", help="OFNet checkpoint; without it ground-truth flows are used")
    s.add_argument("--feeding", choices=("autoregressive", "teacher_forced", "oracle"))
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", parents=[_common()], help="score predicted flows / label maps")
    s.add_argument("--pred", required=True, help="directory of predictions")
    s.add_argument("--gt", required=True, help="directory of ground truth (same file names)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", parents=[_common("run only this seed (default: the config's seeds)",
                                                      None)],
                       help="run a configured pipeline")
    s.add_argument("--config", required=True, help="experiment YAML")
    s.add_argument("--grid", action="store_true", help="run the five training regimes")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", parents=[_common()], help="render plots and tables from a report")
    s.add_argument("--report", required=True, help="report.json or grid.json")
    s.add_argument("--metric", choices=("iou", "ap", "ap50"), default="iou")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s")
    torch.set_num_threads(int(os.environ.get("FUTURESEG_THREADS", "1")))
    try:
        return args.func(args)
    except (FutureSegError, OSError, ValueError) as e:
        log.debug("failure", exc_info=True)
        print(f"futureseg {args.command}: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
