"""Command-line entry points: train, eval, ablate.

Outputs per run directory: model.pt (weights + architecture record),
history.csv (per-epoch loss curves), metrics.json (per-horizon test
scores). ``ablate`` trains the requested stages under identical seeds and
writes a combined ablation.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from .data import FlowDataset, load_dataset
from .errors import ConfigError, DataError, FlowcastError
from .model import STAGE_LABELS, Forecaster, ModelConfig, Stage
from .training import TrainConfig, evaluate_split, seed_everything, train_model


def _model_config(dataset: FlowDataset, args) -> ModelConfig:
    cfg = ModelConfig(
        n_cells=dataset.n_cells,
        n=dataset.n,
        horizons=dataset.horizons,
        units=args.units,
        conv_filters=tuple(args.conv_filters),
        se_reduction=args.se_reduction,
        activation=args.activation,
        dropout=not args.no_dropout,
        learning_rate=args.lr,
    )
    cfg.validate_tuning_range()
    return cfg


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        optimizer=args.optimizer,
        patience=args.patience,
        seed=args.seed,
    )


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "train_mae", "val_mae"])
        writer.writeheader()
        writer.writerows(history)


def _save_model(path: Path, model: Forecaster) -> None:
    record = {
        "model_config": asdict(model.cfg),
        "stage": int(model.stage),
        "state_dict": model.state_dict(),
    }
    torch.save(record, path)


def load_model(path: str | Path) -> Forecaster:
    try:
        record = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise DataError(f"cannot load model from {path}: {exc}") from None
    raw = dict(record["model_config"])
    raw["horizons"] = tuple(raw["horizons"])
    raw["conv_filters"] = tuple(raw["conv_filters"])
    model = Forecaster(ModelConfig(**raw), Stage(record["stage"]))
    model.load_state_dict(record["state_dict"])
    model.eval()
    return model


def _train_one(dataset: FlowDataset, stage: Stage, args, out: Path) -> dict:
    seed_everything(args.seed)
    model = Forecaster(_model_config(dataset, args), stage)
    result = train_model(model, dataset, _train_config(args))
    test_metrics = evaluate_split(model, dataset, "test")
    out.mkdir(parents=True, exist_ok=True)
    _save_model(out / "model.pt", model)
    _write_history(out / "history.csv", result.history)
    with open(out / "metrics.json", "w") as fh:
        json.dump(test_metrics, fh, indent=2)
        fh.write("\n")
    print(f"{STAGE_LABELS[stage]}: trained {len(result.history)} epochs", flush=True)
    print(
        f"  val MAE {result.baseline_val_mae:.3f} (untrained) -> {result.best_val_mae:.3f} "
        f"(best, epoch {result.best_epoch})"
    )
    for horizon, scores in test_metrics.items():
        mape = "n/a" if scores["mape"] is None else f"{scores['mape']:.2f}%"
        print(
            f"  test h={horizon}: MAE {scores['mae']:.3f}  MAPE {mape} "
            f"({scores['mape_excluded_count']} zero-truth excluded)  RMSE {scores['rmse']:.3f}"
        )
    return {
        "stage": int(stage),
        "label": STAGE_LABELS[stage],
        "epochs_run": len(result.history),
        "baseline_val_mae": result.baseline_val_mae,
        "best_val_mae": result.best_val_mae,
        "test": test_metrics,
    }


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    _train_one(dataset, Stage(args.stage), args, Path(args.out))
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    if model.cfg.n_cells != dataset.n_cells or model.cfg.horizons != dataset.horizons:
        raise ConfigError("model was trained for a different dataset shape")
    test_metrics = evaluate_split(model, dataset, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(test_metrics, fh, indent=2)
        fh.write("\n")
    print(json.dumps(test_metrics, indent=2))
    return 0


def cmd_ablate(args) -> int:
    dataset = load_dataset(args.data)
    stages = [Stage(args.stage)] if args.stage else list(Stage)
    out = Path(args.out)
    summary = []
    for stage in stages:
        summary.append(_train_one(dataset, stage, args, out / f"stage{int(stage)}"))
    with open(out / "ablation.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print("\nstage comparison (test split):")
    for entry in summary:
        first = next(iter(entry["test"].values()))
        mape = "n/a" if first["mape"] is None else f"{first['mape']:6.2f}%"
        print(
            f"  {entry['label']:<28} MAE {first['mae']:7.3f}  MAPE {mape}  "
            f"RMSE {first['rmse']:7.3f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forecast", description="Train and evaluate grid density forecasters."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stage_default):
        p.add_argument("--data", required=True, help="dataset directory with manifest.json")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs")
        if stage_default is not None:
            p.add_argument("--stage", type=int, choices=[1, 2, 3, 4], default=stage_default)
            p.add_argument("--epochs", type=int, default=30)
            p.add_argument("--batch", type=int, default=64)
            p.add_argument("--optimizer", default="adam")
            p.add_argument("--patience", type=int, default=10)
            p.add_argument("--units", type=int, default=64)
            p.add_argument("--conv-filters", type=int, nargs=2, default=(8, 16))
            p.add_argument("--se-reduction", type=int, default=4)
            p.add_argument("--activation", default="relu")
            p.add_argument("--lr", type=float, default=3e-4)
            p.add_argument("--no-dropout", action="store_true")

    common(sub.add_parser("train", help="train one stage, report test metrics"), 4)
    p_eval = sub.add_parser("eval", help="evaluate a saved model")
    common(p_eval, None)
    p_eval.add_argument("--model", required=True, help="path to model.pt")
    p_eval.add_argument("--split", default="test", choices=["train", "val", "test"])
    p_ablate = sub.add_parser("ablate", help="train and compare stages")
    common(p_ablate, 4)
    p_ablate.set_defaults(stage=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlowcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
