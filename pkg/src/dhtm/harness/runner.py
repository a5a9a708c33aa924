"""Trial orchestration, CSV metrics, checkpoints, inspection and plots."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, ExperimentConfig, _build, build_trial
from ..agent import run_episode
from ..encoder import Stage
from ..env import PinballConfig

STEPS_FILE = "steps.csv"
EPISODES_FILE = "episodes.csv"
COMPARE_FILE = "compare.csv"
ENV_OUT_DIR = "DHTM_OUT_DIR"


class HarnessError(RuntimeError):
    pass


def default_out_dir() -> str:
    return os.environ.get(ENV_OUT_DIR, "runs")


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def step_columns(config: ExperimentConfig) -> list[str]:
    cols = ["seed", "episode", "step", "action", "reward", "segments", "observation"]
    cols += [f"surprise_{l}" for l in range(1, config.agent.surprise_offsets + 1)]
    if config.timing:
        cols.append("wall_time_s")
    return cols


@dataclass
class TrialResult:
    seed: int
    steps: list[list[str]] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)
    surprise: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    checkpoint: bytes = b""


def checkpoint_document(config: ExperimentConfig, seed: int, episode: int, env, agent) -> dict:
    return {
        "config": config.to_dict(), "seed": seed, "episode": episode,
        "env": {"config": ExperimentConfig(env=env.config).to_dict()["env"], "rng": env.rng.bit_generator.state},
        "agent": agent.state_dict(),
    }


def restore(document: dict):
    """Rebuild ``(config, env, agent, episode)`` from a checkpoint document."""
    config = ExperimentConfig.from_dict(document["config"])
    env, agent = build_trial(config, int(document["seed"]))
    env.config = _build(PinballConfig, document["env"]["config"])
    env.rng.bit_generator.state = document["env"]["rng"]
    agent.load_state_dict(document["agent"])
    return config, env, agent, int(document["episode"])


def _write_pgm(path: Path, frame: np.ndarray) -> None:
    img = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 255).astype(np.uint8)
    path.write_bytes(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode() + data.tobytes())


def run_trial(config: ExperimentConfig, seed: int, frames_dir: str | None = None) -> TrialResult:
    """Run every episode for one seed and collect its metrics and final checkpoint."""
    env, agent = build_trial(config, seed)
    res = TrialResult(seed)
    for ep in range(1, config.episodes + 1):
        if config.switch_episode is not None and ep == config.switch_episode + 1:
            env.config = config.env.obscured(0)
        hook = None
        if frames_dir is not None:
            d = Path(frames_dir) / f"seed{seed}"
            d.mkdir(parents=True, exist_ok=True)
            hook = lambda t, frame, ep=ep, d=d: _write_pgm(d / f"ep{ep:04d}_step{t:02d}.pgm", frame)
        rec = run_episode(env, agent, ep, max_steps=config.max_steps, timing=config.timing, on_frame=hook)
        for s in rec.steps:
            row = [str(seed), str(ep), str(s.step), str(s.action), _fmt(s.reward), str(s.segments),
                   "-".join(str(int(c)) for c in s.columns)]
            row += [_fmt(v) for v in s.surprise]
            if config.timing:
                row.append(_fmt(s.wall_time))
            res.steps.append(row)
        one_step = [s.surprise[0] for s in rec.steps if not math.isnan(s.surprise[0])]
        res.returns.append(rec.total_return)
        res.surprise.append(float(np.mean(one_step)) if one_step else math.nan)
        res.lengths.append(len(rec))
        res.errors.append(rec.error or "")
    res.checkpoint = checkpoint.dumps(checkpoint_document(config, seed, config.episodes, env, agent))
    return res


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise HarnessError(f"output directory {str(out)!r} is not writable: {exc}") from exc


def _mean(values) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


def run(config: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Run all seeds and write steps.csv, episodes.csv, one checkpoint per seed and optional plots."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    _check_writable(out)
    frames = str(out / "frames") if config.export_frames else None
    seeds = list(config.seeds)
    if config.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(min(config.workers, len(seeds))) as pool:
            results = list(pool.map(run_trial, [config] * len(seeds), seeds, [frames] * len(seeds)))
    else:
        results = [run_trial(config, s, frames) for s in seeds]

    with open(out / STEPS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(step_columns(config))
        for r in results:
            w.writerows(r.steps)

    with open(out / EPISODES_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["episode"]
        for metric in ("return", "surprise", "steps"):
            header += [f"{metric}_seed{s}" for s in seeds] + [f"{metric}_mean"]
        header += [f"error_seed{s}" for s in seeds]
        w.writerow(header)
        for i in range(config.episodes):
            row = [str(i + 1)]
            for metric in ("returns", "surprise", "lengths"):
                vals = [float(getattr(r, metric)[i]) for r in results]
                row += [_fmt(v) if metric != "lengths" else str(int(v)) for v in vals] + [_fmt(_mean(vals))]
            row += [r.errors[i] for r in results]
            w.writerow(row)

    for r in results:
        (out / f"checkpoint_seed{r.seed}.ckpt").write_bytes(r.checkpoint)
    if config.plot:
        plot(out)
    return out


def read_episodes(run_dir: str | Path) -> tuple[list[int], dict[str, dict[str, np.ndarray]]]:
    """Parse episodes.csv into ``{metric: {seed label or "mean": values}}``."""
    with open(Path(run_dir) / EPISODES_FILE, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise HarnessError(f"{run_dir}/{EPISODES_FILE} has no data rows")
    out: dict[str, dict[str, np.ndarray]] = {}
    for key in rows[0]:
        if key == "episode" or key.startswith("error_"):
            continue
        metric, _, who = key.partition("_")
        out.setdefault(metric, {})[who] = np.array([float(r[key]) for r in rows])
    return [int(r["episode"]) for r in rows], out


def compare(config: ExperimentConfig, variants: list[dict], out_dir: str | Path | None = None) -> Path:
    """Run each ``{"name", "overrides"}`` variant on the same seeds and join the episode metrics."""
    if len(variants) < 2:
        raise ConfigError("compare needs at least two variants")
    names = [v["name"] for v in variants]
    if len(set(names)) != len(names):
        raise ConfigError(f"variant names collide: {names}")
    out = Path(out_dir if out_dir is not None else config.out_dir)
    _check_writable(out)
    configs = [config.with_overrides(v.get("overrides", {})) for v in variants]
    for name in names:
        _check_writable(out / name)
    rows = []
    for name, cfg in zip(names, configs):
        run(cfg, out / name)
        episodes, metrics = read_episodes(out / name)
        for s in cfg.seeds:
            for i, ep in enumerate(episodes):
                rows.append([name, str(s), str(ep), _fmt(metrics["return"][f"seed{s}"][i]),
                             _fmt(metrics["surprise"][f"seed{s}"][i]), str(int(metrics["steps"][f"seed{s}"][i]))])
    with open(out / COMPARE_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "episode", "return", "surprise", "steps"])
        w.writerows(rows)
    return out / COMPARE_FILE


def inspect(path: str | Path) -> str:
    """Human-readable summary of a checkpoint."""
    doc = checkpoint.load(path)
    config, _, agent, episode = restore(doc)
    mem = agent.memory
    top = mem.topology
    lines = [
        f"checkpoint: {path}",
        f"seed: {doc['seed']}  episodes completed: {episode}",
        f"topology: {top.n_vars} variables x {top.n_obs_states} columns x {top.cells_per_column} cells, "
        f"{top.n_actions} action cells, receptive field {top.field_size}",
        f"segments: {mem.n_segments} total; per variable: {' '.join(str(int(c)) for c in mem.segments_per_var())}",
    ]
    factors = np.exp([s.log_factor for s in mem.segments()])
    counts, edges = np.histogram(factors, bins=10, range=(0.0, 1.0))
    lines.append("f histogram:")
    lines += [f"  [{lo:.1f}, {hi:.1f}{']' if hi == 1.0 else ')'}: {c}" for lo, hi, c in zip(edges, edges[1:], counts)]
    norms = np.linalg.norm(agent.sr.M, axis=1)
    lines.append(f"SR row norms: min {norms.min():.4g}  mean {norms.mean():.4g}  max {norms.max():.4g}")
    stage = agent.encoder.stage
    lines.append(f"encoder stage: {stage.value}" + (
        f" ({agent.encoder.newborn_steps_remaining} newborn steps left)" if stage is Stage.NEWBORN else ""))
    return "\n".join(lines)


def plot(run_dir: str | Path) -> list[Path]:
    """Write surprise.svg and return.svg with per-seed traces and their mean."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    episodes, metrics = read_episodes(run_dir)
    written = []
    for metric, label in (("surprise", "1-step surprise"), ("return", "return")):
        fig, ax = plt.subplots(figsize=(7, 4))
        for who, values in sorted(metrics[metric].items()):
            if who == "mean":
                continue
            ax.plot(episodes, values, lw=0.8, alpha=0.4, label=who)
        ax.plot(episodes, metrics[metric]["mean"], lw=2.0, color="black", label="mean")
        ax.set_xlabel("episode")
        ax.set_ylabel(label)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = run_dir / f"{metric}.svg"
        # fixed metadata keeps the SVG reproducible
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
