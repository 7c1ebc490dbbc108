"""Command-line surface: thin adapter over the shared handlers.

Structured JSON goes to stdout, logs to stderr. Exit codes: 0 success,
2 validation failure, 3 infeasible input, 4 failed verification check.
Every file-producing command also writes a run manifest next to its
outputs so runs are reproducible from the manifest alone.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import api
from .learner import LearnerError, load_config
from .oracle import FingeringError, PlacementError
from .tab import TabError

EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_CHECK_FAILURE = 4

log = logging.getLogger("fretsync")


def _emit(doc: dict) -> None:
    click.echo(json.dumps(doc, indent=2))


def _fail(code: int, kind: str, exc: Exception) -> None:
    _emit({"error": {"kind": kind, "message": str(exc)}})
    sys.exit(code)


def _config_root() -> Path:
    return Path(os.environ.get("FRETSYNC_CONFIG_ROOT", "."))


def _read_text(path: str) -> str:
    return Path(path).read_text()


def _write_manifest(directory: Path, manifest: api.RunManifest) -> None:
    (directory / "manifest.json").write_text(
        json.dumps(manifest.to_document(), indent=2) + "\n")


def run_guarded(fn):
    """Run a handler, mapping core exceptions onto exit codes."""
    try:
        return fn()
    except TabError as exc:
        _fail(EXIT_VALIDATION, "validation", exc)
    except (FingeringError, PlacementError) as exc:
        _fail(EXIT_INFEASIBLE, "infeasible", exc)
    except (LearnerError, ValueError) as exc:
        _fail(EXIT_VALIDATION, "validation", exc)
    except api.CheckFailure as exc:
        _fail(EXIT_CHECK_FAILURE, "check-failure", exc)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Verbose logs on stderr.")
def main(verbose: bool) -> None:
    """Tab tooling, scripted playthroughs, scoring and network checks."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# tab


@main.group()
def tab() -> None:
    """Validate, augment and quantize tab files."""


@tab.command()
@click.argument("tab_file", type=click.Path(exists=True, dir_okay=False))
def validate(tab_file: str) -> None:
    """Parse TAB_FILE and print a summary; non-zero exit on failure."""
    _emit(run_guarded(lambda: api.handle_tab_validate(_read_text(tab_file))))


@tab.command()
@click.argument("tab_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--shift", type=int, default=None, help="Exact fret offset.")
@click.option("--shift-range", type=int, default=0,
              help="Sample the offset uniformly from ±N.")
@click.option("--tempo-jitter", type=float, default=0.0,
              help="Uniform tempo jitter half-width in BPM.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the augmented tab here instead of stdout.")
def augment(tab_file, shift, shift_range, tempo_jitter, seed, out) -> None:
    """Shift frets and jitter tempo, writing a new tab."""
    result = run_guarded(lambda: api.handle_tab_augment(
        _read_text(tab_file), shift=shift, shift_range=shift_range,
        tempo_jitter=tempo_jitter, seed=seed,
    ))
    if out:
        Path(out).write_text(json.dumps(result["tab"], indent=2) + "\n")
        manifest = api.build_manifest(
            "tab augment", seed=seed,
            inputs={"tab": tab_file}, outputs={"tab": out})
        _emit({"written": out, "manifest": manifest.to_document()})
    else:
        _emit(result)


@tab.command()
@click.argument("bpm", type=float)
@click.option("--shortest", default="1/4", show_default=True,
              help="Shortest note duration in beats.")
def quantize(bpm: float, shortest: str) -> None:
    """Largest tempo <= BPM giving the shortest note a whole frame count."""
    _emit(run_guarded(lambda: api.handle_tab_quantize(bpm, shortest)))


# ---------------------------------------------------------------------------
# play / score


@main.command()
@click.option("--tab", "tab_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", type=click.Choice(["oracle"]), default="oracle",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default=None, help="Directory for trajectory/report artifacts.")
def play(tab_file: str, policy: str, out_dir: str | None) -> None:
    """Scripted playthrough of a tab, scored against itself."""
    report, result = run_guarded(lambda: api.handle_play(_read_text(tab_file)))
    if out_dir:
        directory = Path(out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "trajectory.jsonl").write_text(result.trajectory_jsonl())
        (directory / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        manifest = api.build_manifest(
            "play", inputs={"tab": tab_file},
            outputs={"trajectory": str(directory / "trajectory.jsonl"),
                     "report": str(directory / "report.json")})
        _write_manifest(directory, manifest)
        log.info("wrote %s", directory)
    _emit(report)


def _per_note_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["note", "left_f1", "right_f1", "joint_f1"])
    for row in report.get("per_note", []):
        writer.writerow([row["note"], row["left"], row["right"], row["joint"]])
    return buf.getvalue()


@main.command()
@click.option("--tab", "tab_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--trajectory", "trajectory_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--rewards", is_flag=True,
              help="Also emit per-frame reward breakdown JSON-lines.")
@click.option("--rewards-out", type=click.Path(dir_okay=False), default=None,
              help="Write the reward trace to a file instead of inline.")
@click.option("--per-note-csv", "csv_out", type=click.Path(dir_okay=False),
              default=None, help="Write a per-note F1 CSV here.")
def score(tab_file, trajectory_file, rewards, rewards_out, csv_out) -> None:
    """Score a recorded trajectory against a tab."""
    report = run_guarded(lambda: api.handle_score(
        _read_text(tab_file), _read_text(trajectory_file),
        rewards=rewards or bool(rewards_out),
    ))
    if rewards_out:
        Path(rewards_out).write_text(report.pop("reward_trace_jsonl"))
        report["rewards_written"] = rewards_out
    if csv_out:
        Path(csv_out).write_text(_per_note_csv(report))
        report["per_note_csv_written"] = csv_out
    _emit(report)


# ---------------------------------------------------------------------------
# net


@main.group()
def net() -> None:
    """Network verification and toy training."""


@net.command("check-sync-init")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pairs", type=int, default=32, show_default=True)
def check_sync_init(seed: int, pairs: int) -> None:
    """Assert joint forwards equal independent forwards at initialization."""
    _emit(run_guarded(lambda: api.handle_check_sync_init(seed=seed, pairs=pairs)))


@net.command("train-toy")
@click.option("--iters", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--mode", type=click.Choice(["left", "right", "joint"]),
              default="left", show_default=True)
@click.option("--probe-every", type=int, default=0,
              help="Evaluate the probe-tab F1 every N iterations.")
@click.option("--config", "config_file", default=None,
              help="Learner config (JSON/TOML), relative to "
                   "$FRETSYNC_CONFIG_ROOT.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False),
              default=None, help="Write per-iteration metrics JSON-lines here.")
def train_toy(iters, seed, workers, mode, probe_every, config_file, out_file):
    """Seeded training run on the toy fret environment."""
    config = None
    config_text = None
    if config_file:
        path = _config_root() / config_file
        config_text = path.read_text()
        config = run_guarded(lambda: load_config(path))
    result = run_guarded(lambda: api.handle_train_toy(
        iters=iters, seed=seed, workers=workers, mode=mode,
        config=config, probe_every=probe_every,
    ))
    rows = result.pop("rows")
    if out_file:
        Path(out_file).write_text(
            "\n".join(json.dumps(r) for r in rows) + "\n")
        manifest = api.build_manifest(
            "net train-toy", seed=seed, config_text=config_text,
            inputs={"config": config_file} if config_file else {},
            outputs={"metrics": out_file})
        result["manifest"] = manifest.to_document()
        result["metrics_written"] = out_file
    else:
        result["rows"] = rows
    _emit(result)


# ---------------------------------------------------------------------------
# serve


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
