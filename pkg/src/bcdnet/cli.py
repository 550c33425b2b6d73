"""``bcdnet`` command line: generate, train, evaluate, ablate and dump diagnostics.

Every ``ExperimentConfig`` field is exposed as ``--kebab-case``; values given on
the command line override ``--config file.json``, which overrides defaults.
Exit codes: 0 success, 2 configuration error, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import plotting, tnsio
from .backbone import ConfigError
from .config import ABLATION_ROWS, ConfigValidationError, ExperimentConfig, ablation_config
from .model import BCDNet, load_checkpoint, save_checkpoint
from .objective import SamplingError
from .spatial import InfeasibleGammaError
from .synth import DataConfigError, build_splits, save_dataset
from .train import (NumericError, attention_diversity, band_mass, batch_diagnostics, data_config,
                    diagnostic_batch, evaluate_model, load_data, train)

log = logging.getLogger("bcdnet")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
DATA_ENV = "BCD_DATA_DIR"
DEFAULT_ROWS = "baseline,baseline+,bcca,regs,full"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (flat keys)")
    group = p.add_argument_group("configuration overrides")
    for f in fields(ExperimentConfig):
        group.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar=str(f.type).split("[")[0].upper())


def _add_data_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help=f"dataset root (default: ${DATA_ENV}, else rendered in memory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcdnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render the synthetic dataset to disk")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, help=f"dataset root (default: ${DATA_ENV} or ./data)")

    p = sub.add_parser("train", help="train one configuration and write a checkpoint")
    _add_config_flags(p)
    _add_data_flag(p)
    p.add_argument("--out", type=Path, required=True, help="checkpoint directory")

    p = sub.add_parser("evaluate", help="retrieval metrics for a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_data_flag(p)
    p.add_argument("--out", type=Path, help="metrics JSON (default: <checkpoint>/metrics.json)")

    p = sub.add_parser("ablate", help="train and evaluate several ablation rows")
    _add_config_flags(p)
    _add_data_flag(p)
    p.add_argument("--rows", default=DEFAULT_ROWS, help=f"comma list from: {','.join(ABLATION_ROWS)}")
    p.add_argument("--seeds", default=None, help="comma list of seeds (default: the config seed)")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    for name, what in (("dump-supervision", "supervision matrix"), ("dump-attention", "attention weights"),
                       ("dump-profiles", "height profiles and targets")):
        p = sub.add_parser(name, help=f"write the {what} for one training batch")
        p.add_argument("--checkpoint", type=Path, help="trained model (default: untrained from config)")
        _add_config_flags(p)
        _add_data_flag(p)
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then ``--config``, then explicit flags; one aggregated report on failure."""
    data: dict = {}
    if getattr(args, "config", None) is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigValidationError([f"cannot read {args.config}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigValidationError([f"{args.config} must hold a JSON object"])
    for f in fields(ExperimentConfig):
        value = getattr(args, f"cfg_{f.name}", None)
        if value is not None:
            data[f.name] = value
    return ExperimentConfig.from_dict(data).check()


def data_root(args: argparse.Namespace) -> Path | None:
    if getattr(args, "data", None) is not None:
        return args.data
    env = os.environ.get(DATA_ENV)
    return Path(env) if env else None


def _stamp(cfg: ExperimentConfig) -> dict:
    return {"config": cfg.to_dict(), "config_hash": cfg.content_hash()}


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _write_matrix_csv(path: Path, matrix: np.ndarray, header: list[str], cfg: ExperimentConfig,
                      index_name: str = "row") -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.content_hash()}\n")
        writer = csv.writer(fh)
        writer.writerow([index_name, *header])
        for i, row in enumerate(np.atleast_2d(matrix)):
            writer.writerow([i, *(repr(float(v)) for v in row)])
    return path


# -- commands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    root = args.out or data_root(args) or Path("data")
    train_set, test_set = build_splits(data_config(cfg))
    save_dataset(root, train_set, test_set)
    _write_json(Path(root) / "dataset.json", {**_stamp(cfg), "train_images": len(train_set),
                                              "test_images": len(test_set)})
    print(f"wrote {len(train_set)} train and {len(test_set)} test images to {root}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train_set, _ = load_data(cfg, data_root(args))
    args.out.mkdir(parents=True, exist_ok=True)
    log_path = args.out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    result = train(cfg, train_set, log_path=log_path, progress=args.verbose)
    save_checkpoint(result.model, args.out, {"label_map": [int(x) for x in result.label_map]})
    print(f"checkpoint written to {args.out} (config {cfg.content_hash()})")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    _, test_set = load_data(cfg, data_root(args))
    metrics = evaluate_model(model, test_set)
    out = args.out or args.checkpoint / "metrics.json"
    _write_json(out, {**metrics.to_dict(), **_stamp(cfg)})
    print(f"rank1={metrics.rank1:.4f} map={metrics.mAP:.4f} -> {out}")
    return 0


def run_ablation(base: ExperimentConfig, rows: list[str], seeds: list[int], data_root_path=None,
                 progress: bool = False) -> list[dict]:
    """Train and evaluate every (row, seed); all rows share each seed."""
    configs = {row: ablation_config(base, row).check() for row in rows}  # validate every row before training
    train_set, test_set = load_data(base, data_root_path)
    records = []
    for row in rows:
        for seed in seeds:
            cfg = configs[row].replace(seed=seed)
            result = train(cfg, train_set, progress=progress)
            metrics = evaluate_model(result.model, test_set)
            record = {"row": row, "seed": seed, "rank1": metrics.rank1, "map": metrics.mAP,
                      "config_hash": cfg.content_hash()}
            if cfg.channel_attention:
                diag = batch_diagnostics(result.model, diagnostic_batch(cfg, train_set))
                record["attention_similarity"] = attention_diversity(diag["mean_attention"])
            records.append(record)
            log.info("%s seed %d rank1 %.4f map %.4f", row, seed, metrics.rank1, metrics.mAP)
    return records


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    rows = [r.strip() for r in args.rows.split(",") if r.strip()]
    unknown = [r for r in rows if r not in ABLATION_ROWS]
    if unknown or not rows:
        raise ConfigValidationError([f"unknown ablation row {r!r}" for r in unknown] or ["no rows given"])
    try:
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    except ValueError as exc:
        raise ConfigValidationError([f"bad --seeds: {args.seeds!r}"]) from exc
    records = run_ablation(base, rows, seeds, data_root(args), progress=args.verbose)
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "ablation.csv"
    columns = ["row", "seed", "rank1", "map", "config_hash"]
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# base_config_hash={base.content_hash()}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(records)
    means = {r: {k: float(np.mean([x[k] for x in records if x["row"] == r])) for k in ("rank1", "map")} for r in rows}
    _write_json(args.out / "ablation.json", {**_stamp(base), "seeds": seeds, "runs": records, "mean": means})
    plotting.ablation_bars(rows, [means[r]["rank1"] for r in rows], [means[r]["map"] for r in rows],
                           args.out / "ablation.png", title=f"mean over seeds {seeds}")
    for r in rows:
        print(f"{r:14s} rank1={means[r]['rank1']:.4f} map={means[r]['map']:.4f}")
    return 0


def _diagnostic_model(args) -> tuple[BCDNet, ExperimentConfig]:
    if args.checkpoint is not None:
        model = load_checkpoint(args.checkpoint)
        return model, model.config
    cfg = resolve_config(args)
    return BCDNet(cfg, num_classes=cfg.num_train_ids), cfg


def cmd_dump(args) -> int:
    model, cfg = _diagnostic_model(args)
    train_set, _ = load_data(cfg, data_root(args))
    diag = batch_diagnostics(model, diagnostic_batch(cfg, train_set))
    args.out.mkdir(parents=True, exist_ok=True)
    K = cfg.num_parts
    parts = [f"part{k}" for k in range(K)]
    stamp = _stamp(cfg)
    if args.command == "dump-supervision":
        sup = diag["supervision"]
        tnsio.save(args.out / "supervision.tns", sup)
        _write_matrix_csv(args.out / "supervision.csv", sup, parts, cfg, index_name="channel")
        summary = {"shape": list(sup.shape)}
    elif args.command == "dump-attention":
        if "mean_attention" not in diag:
            raise ConfigValidationError(["dump-attention needs channel_attention=true"])
        mean = diag["mean_attention"]
        tnsio.save(args.out / "attention.tns", diag["attention"])
        tnsio.save(args.out / "mean_attention.tns", mean)
        _write_matrix_csv(args.out / "mean_attention.csv", mean, [f"c{c}" for c in range(mean.shape[1])], cfg,
                          index_name="part")
        plotting.attention_heatmap(mean, args.out / "mean_attention.png", title="batch-mean attention")
        summary = {"mean_pairwise_cosine": attention_diversity(mean)}
    else:
        prof, targ = diag["part_profiles"], diag["part_targets"]
        tnsio.save(args.out / "profiles.tns", prof)
        tnsio.save(args.out / "targets.tns", targ)
        H = prof.shape[1]
        _write_matrix_csv(args.out / "profiles.csv", prof, [f"r{h}" for h in range(H)], cfg, index_name="part")
        _write_matrix_csv(args.out / "targets.csv", targ, [f"r{h}" for h in range(H)], cfg, index_name="part")
        plotting.profile_plot(prof, targ, args.out / "profiles.png", holistic=diag["holistic_profile"])
        summary = {"band_mass": [float(x) for x in band_mass(prof)]}
    _write_json(args.out / "summary.json", {**stamp, **summary})
    print(f"wrote {args.command.split('-', 1)[1]} diagnostics to {args.out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "dump-supervision": cmd_dump,
    "dump-attention": cmd_dump,
    "dump-profiles": cmd_dump,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DataConfigError, InfeasibleGammaError, SamplingError) as exc:
        print(f"invalid configuration:\n  - {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
