# Backend/cli.py
"""
Command-line entry point.

    python -m Backend.cli synth --waveforms 40 --environments 2000 --seed 7 -o out/kg.txt
    python -m Backend.cli train --kg out/kg.txt --epochs 150 --out-dir out/run
    python -m Backend.cli evaluate --kg out/kg.txt --checkpoint out/run/checkpoint
    python -m Backend.cli recommend --kg out/kg.txt --checkpoint out/run/checkpoint --env scenario.txt
    python -m Backend.cli ablate --kg out/kg.txt --epochs 150 --seeds 0,1,2
    python -m Backend.cli serve --kg out/kg.txt --checkpoint out/run/checkpoint

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
from pydantic import ValidationError

from Backend.ablation import SWEEPS, print_report, run_ablation
from Backend.WaveformEngine.cf_train import evaluate, train
from Backend.WaveformEngine.config import RunConfig, TrainConfig
from Backend.WaveformEngine.cwkg_store import load, save, split_ewbg
from Backend.WaveformEngine.ere import mode_names
from Backend.WaveformEngine.errors import WavePilotError
from Backend.WaveformEngine.model import load_model, save_model
from Backend.WaveformEngine.recommend import parse_environment, read_description, recommend
from Backend.WaveformEngine.reporting import (
    METRICS_FILE,
    REPORT_FILE,
    format_recommendations,
    write_metrics,
    write_report,
)
from Backend.WaveformEngine.settings import configure_logging, get_settings
from Backend.WaveformEngine.synthlab import corpus_stats, gen_corpus, load_oracle_config


logger = logging.getLogger("wavepilot.cli")

CHECKPOINT_SUBDIR = "checkpoint"

_path = click.Path(path_type=Path)
_existing = click.Path(exists=True, path_type=Path)


def _default_kg() -> Optional[Path]:
    return get_settings().kg_path


def _echo_config(cfg: RunConfig) -> None:
    click.echo("config:")
    for key, value in cfg.model_dump().items():
        if value is not None:
            click.echo(f"  {key}={value}")


@click.group()
@click.option("--log-level", default=None, help="Overrides WAVEPILOT_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """WavePilot: knowledge-graph waveform recommendation."""
    configure_logging(log_level.upper() if log_level else None)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--waveforms", type=click.IntRange(min=2), required=True)
@click.option("--environments", type=click.IntRange(min=2), required=True)
@click.option("--seed", type=int, required=True)
@click.option("-o", "--output", type=_path, required=True)
@click.option("--oracle-config", type=_existing, default=None, help="Defaults to WAVEPILOT_ORACLE_CONFIG or the bundled file.")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
def synth(waveforms: int, environments: int, seed: int, output: Path, oracle_config: Optional[Path], workers: int) -> None:
    """Generate a labelled synthetic CWKG."""
    cfg, sampling = load_oracle_config(oracle_config or get_settings().oracle_config)
    store = gen_corpus(waveforms, environments, cfg, seed, sampling=sampling, workers=workers)
    save(store, output)

    stats = corpus_stats(store)
    click.echo(f"wrote {output}")
    click.echo(f"  seed={seed}")
    for key, value in stats.items():
        click.echo(f"  {key}={value:.4f}" if isinstance(value, float) else f"  {key}={value}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@cli.command(name="train")
@click.option("--kg", "kg_path", type=_existing, default=_default_kg, required=True)
@click.option("--out-dir", type=_path, default=None, help="Defaults to WAVEPILOT_OUT_DIR.")
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--lr", type=float, default=0.001, show_default=True)
@click.option("--ere-mode", default="invo_then_attn", show_default=True, help="One of: " + ", ".join(mode_names()))
@click.option("--heads", type=int, default=3, show_default=True)
@click.option("--kernel-size", type=int, default=5, show_default=True)
@click.option("--groups", type=int, default=1, show_default=True)
@click.option("--emb-dim", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", default="10:2", show_default=True)
@click.option("--bpr-sign", type=click.Choice(["consistent", "paper"]), default="consistent", show_default=True)
@click.option("--alternation", type=click.Choice(["epoch", "batch"]), default="epoch", show_default=True)
@click.option("--l2-objective", type=click.Choice(["pairwise", "softmax"]), default="pairwise", show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@click.option("--train-embeddings-in-l2", is_flag=True, help="Let L2 update TransD entity embeddings too.")
@click.option("--scale-by-sqrt-d", is_flag=True)
@click.option("--progress/--no-progress", default=False)
def train_cmd(kg_path: Path, out_dir: Optional[Path], progress: bool, train_embeddings_in_l2: bool, **options) -> None:
    """Train the full pipeline and write checkpoint, metrics and report."""
    out_dir = out_dir or get_settings().out_dir
    run_cfg = RunConfig(
        kg_path=kg_path,
        checkpoint_dir=out_dir / CHECKPOINT_SUBDIR,
        report_dir=out_dir,
        freeze_embeddings_in_L2=not train_embeddings_in_l2,
        **options,
    )
    _echo_config(run_cfg)

    store = load(kg_path)
    result = train(store, run_cfg.train_config(), progress=progress)

    save_model(result.model, run_cfg.checkpoint_dir, extra={"kg": kg_path})
    write_metrics(result.report, out_dir / METRICS_FILE)
    write_report(result.report, out_dir / REPORT_FILE)

    click.echo(f"hit@1={result.report.hit_at_1:.4f}")
    click.echo(f"checkpoint={run_cfg.checkpoint_dir}")


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

@cli.command(name="evaluate")
@click.option("--kg", "kg_path", type=_existing, default=_default_kg, required=True)
@click.option("--checkpoint", type=_existing, required=True)
@click.option("--k", "k_list", type=int, multiple=True, help="Repeatable; default from the checkpoint.")
@click.option("--out-dir", type=_path, default=None)
def evaluate_cmd(kg_path: Path, checkpoint: Path, k_list: Sequence[int], out_dir: Optional[Path]) -> None:
    """Re-evaluate a checkpoint on the split it was trained with."""
    store = load(kg_path)
    model = load_model(checkpoint, store)
    cfg = model.config
    _, test_edges = split_ewbg(store, cfg.ratio, cfg.seed)
    report = evaluate(model, test_edges, store, list(k_list) or cfg.k_list)

    for key, value in report.metrics().items():
        click.echo(f"{key}={value}")
    if out_dir is not None:
        write_metrics(report, out_dir / METRICS_FILE)


# ---------------------------------------------------------------------------
# recommend
# ---------------------------------------------------------------------------

@cli.command(name="recommend")
@click.option("--kg", "kg_path", type=_existing, default=_default_kg, required=True)
@click.option("--checkpoint", type=_existing, required=True)
@click.option("--env", "env_file", type=_existing, required=True, help="relation=value lines.")
@click.option("--top-k", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--pdf", "pdf_path", type=_path, default=None, help="Also write a recommendation sheet.")
def recommend_cmd(kg_path: Path, checkpoint: Path, env_file: Path, top_k: int, pdf_path: Optional[Path]) -> None:
    """Rank waveforms for an environment description."""
    store = load(kg_path)
    model = load_model(checkpoint, store)
    description = read_description(env_file)
    ranked = recommend(description, model, store, top_k)

    click.echo(f"mode={model.config.resolved_mode} seed={model.config.seed} M={len(model.waveform_ids)}")
    click.echo(format_recommendations(ranked))

    if pdf_path is not None:
        from Backend.pdf_generator import generate_recommendation_pdf

        tails = parse_environment(description, store)
        pdf = generate_recommendation_pdf(
            environment={rel: tail.text_label for rel, tail in tails.items()},
            recommendations=[r.__dict__ for r in ranked],
            model_info={"mode": model.config.resolved_mode, "seed": str(model.config.seed)},
        )
        pdf_path.parent.mkdir(parents=True, exist_ok=True)
        pdf_path.write_bytes(pdf)
        click.echo(f"pdf={pdf_path}")


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

@cli.command(name="ablate")
@click.option("--kg", "kg_path", type=_existing, default=_default_kg, required=True)
@click.option("--epochs", type=int, default=150, show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--sweep", "sweeps", multiple=True, type=click.Choice(list(SWEEPS)))
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--emb-dim", type=int, default=16, show_default=True)
@click.option("--split", default="10:2", show_default=True)
def ablate_cmd(kg_path: Path, epochs: int, seeds: str, sweeps: Sequence[str], workers: int, emb_dim: int, split: str) -> None:
    """Mode grid, head sweep and cascade comparison."""
    try:
        seed_list: List[int] = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated integers, got '{seeds}'", param_hint="--seeds")
    store = load(kg_path)
    base = TrainConfig(epochs=epochs, emb_dim=emb_dim, split=split)
    result = run_ablation(store, base, sweeps=sweeps or tuple(SWEEPS), seeds=seed_list, workers=workers, progress=True)
    print_report(result, sweeps or tuple(SWEEPS))


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

@cli.command(name="serve")
@click.option("--kg", "kg_path", type=_existing, required=True)
@click.option("--checkpoint", type=_existing, required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(kg_path: Path, checkpoint: Path, host: str, port: int) -> None:
    """Serve the recommendation API."""
    import uvicorn

    os.environ["WAVEPILOT_KG_PATH"] = str(kg_path)
    os.environ["WAVEPILOT_CHECKPOINT_DIR"] = str(checkpoint)
    uvicorn.run("Backend.api:app", host=host, port=port)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="wavepilot", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ValidationError as exc:
        click.echo(f"error: invalid configuration\n{exc}", err=True)
        return 1
    except WavePilotError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.message)
        location = f" (line {exc.line})" if exc.line else ""
        click.echo(f"error: {exc.message}{location}", err=True)
        return exc.exit_code
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
