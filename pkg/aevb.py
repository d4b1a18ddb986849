"""Command-line entry point: train, eval, generate and export-latents."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from aevb_data import GENERATE_STREAM, METRICS_COLUMNS, PRESETS, MetricsLog, RunConfig, TrainSchedule
from checkpoint import Checkpoint, load_checkpoint, restore, save_checkpoint, snapshot
from config import build_config, config_from_text, format_config
from images import tile_grid, write_pgm, write_png
from model_fa import fa_generate
from registry import (
    GENERATION_MODES,
    build_model,
    check_data_matches,
    export_latents,
    generate,
    load_data,
)
from tensor_core import SeededRng
from training import LatentModel, evaluate, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 2


def _write_values(path: Path, values: np.ndarray, header: Sequence[str], label_column: bool = False) -> None:
    """CSV with full float precision; an integer label column is written last when requested."""
    lines = [",".join(header)]
    for row in np.atleast_2d(values):
        cells = [repr(float(v)) for v in (row[:-1] if label_column else row)]
        if label_column:
            cells.append(str(int(row[-1])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _restore_run(checkpoint_path: str) -> tuple[Checkpoint, RunConfig, LatentModel]:
    checkpoint = load_checkpoint(checkpoint_path)
    config = config_from_text(checkpoint.config_text)
    if checkpoint.tag != config.model:
        raise ValueError(f"Checkpoint tag {checkpoint.tag} disagrees with its config model {config.model}")
    model = build_model(config)
    restore(model.parameters(), checkpoint.tensors)
    return checkpoint, config, model


# === SUBCOMMANDS ===


def run_train(config: RunConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    config_text = format_config(config)
    (out / "resolved.cfg").write_text(config_text)

    data = load_data(config)
    if data.true_evidence is not None:
        logger.info("True model test evidence: %.6f", data.true_evidence)
    model = build_model(config)

    def on_eval(step: int, trained: LatentModel) -> None:
        if trained.tag == "fa" and config.predictive_samples > 0:
            points = fa_generate(trained.generative, config.predictive_samples, SeededRng(config.seed, GENERATE_STREAM))
            header = [f"x_{j}" for j in range(points.shape[1])]
            _write_values(out / f"predictive_{step}.csv", points, header)

    log: MetricsLog = train(model, data.train, data.test, TrainSchedule.from_config(config), config.learning_rate, on_eval)
    (out / "metrics.csv").write_text(log.to_csv())
    final_step = log.last().step
    save_checkpoint(out / "final.ckpt", Checkpoint(model.tag, final_step, config_text, snapshot(model.parameters())))
    return EXIT_OK


def run_eval(checkpoint_path: str, out: Optional[str], data_config: Optional[str]) -> int:
    checkpoint, config, model = _restore_run(checkpoint_path)
    data = load_data(build_config(path=data_config) if data_config else config)
    check_data_matches(checkpoint.tag, data.preprocessing)
    row = evaluate(
        model, data.test, checkpoint.step, "test", config.eval_seed, config.eval_batch_size, config.eval_draws
    )
    text = ",".join(METRICS_COLUMNS) + "\n" + ",".join(row.cells()) + "\n"
    sys.stdout.write(text)
    out_dir = Path(out) if out else Path(checkpoint_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.csv").write_text(text)
    return EXIT_OK


def run_generate(checkpoint_path: str, mode: Optional[str], n: int, out: Optional[str], png: bool, seed: Optional[int]) -> int:
    _, config, model = _restore_run(checkpoint_path)
    mode = mode or GENERATION_MODES[model.tag]
    rng = SeededRng(config.seed if seed is None else seed, GENERATE_STREAM)
    generated = generate(model, mode, n, rng)
    out_dir = Path(out) if out else Path(checkpoint_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    header = [f"v_{j}" for j in range(generated.values.shape[1])]
    _write_values(out_dir / "generated.csv", generated.values, header)
    if generated.sample_grid is not None:
        for name, images in (("generated", generated.sample_grid), ("generated_means", generated.mean_grid)):
            grid = tile_grid(images)
            write_pgm(out_dir / f"{name}.pgm", grid)
            if png:
                write_png(out_dir / f"{name}.png", grid, scale=2)
    logger.info("Wrote %d generated rows to %s", generated.values.shape[0], out_dir)
    return EXIT_OK


def run_export_latents(checkpoint_path: str, out: Optional[str]) -> int:
    _, config, model = _restore_run(checkpoint_path)
    data = load_data(config)
    table = export_latents(model, data.test)
    out_dir = Path(out) if out else Path(checkpoint_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    header = [f"dim_{j}" for j in range(table.shape[1] - 1)] + ["label"]
    _write_values(out_dir / "latents.csv", table, header, label_column=True)
    return EXIT_OK


# === ARGUMENTS ===


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aevb", description="Train and sample latent variable models by stochastic ELBO ascent")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    commands = parser.add_subparsers(dest="command", required=True)

    train_cmd = commands.add_parser("train", help="train a model and write metrics, config and checkpoint")
    train_cmd.add_argument("--preset", choices=sorted(PRESETS))
    train_cmd.add_argument("--config", help="flat key = value config file")
    train_cmd.add_argument("--seed", type=int)
    train_cmd.add_argument("--out", help="run directory")

    eval_cmd = commands.add_parser("eval", help="evaluate a checkpoint on its test split")
    eval_cmd.add_argument("checkpoint")
    eval_cmd.add_argument("--config", help="take the data settings from this config instead")
    eval_cmd.add_argument("--out")

    gen_cmd = commands.add_parser("generate", help="sample from a checkpoint")
    gen_cmd.add_argument("checkpoint")
    gen_cmd.add_argument("--mode", choices=sorted(set(GENERATION_MODES.values())))
    gen_cmd.add_argument("--n", type=int, default=30)
    gen_cmd.add_argument("--seed", type=int)
    gen_cmd.add_argument("--out")
    gen_cmd.add_argument("--png", action="store_true", help="also write PNG previews")

    latents_cmd = commands.add_parser("export-latents", help="write encoder means of the test split")
    latents_cmd.add_argument("checkpoint")
    latents_cmd.add_argument("--out")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "train":
            return run_train(build_config(args.preset, args.config, args.seed, args.out))
        if args.command == "eval":
            return run_eval(args.checkpoint, args.out, args.config)
        if args.command == "generate":
            if args.n < 1:
                raise ValueError(f"--n must be at least 1, got {args.n}")
            return run_generate(args.checkpoint, args.mode, args.n, args.out, args.png, args.seed)
        return run_export_latents(args.checkpoint, args.out)
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_USER_ERROR


if __name__ == "__main__":
    sys.exit(main())
