"""Report emission: metrics tables, episode panels, and path overlays.

A *bundle* is the directory a race run writes: the echoed config, one
JSON-lines file of per-episode results (each carrying its full step log),
and a metrics table.  This module renders bundles into SVG figures shaped
like the usual racing-evaluation panel set: driven-path overlay on the
track, lateral position vs progress, signed gap vs progress, velocity vs
progress, and the selected behavioral mode vs progress.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import MissingLogs
from .planner import MODE_NAMES
from .simenv import MetricsTable
from .track import TrackDefinition

EPISODES_FILE = "episodes.jsonl"
METRICS_CSV = "metrics.csv"
METRICS_TXT = "metrics.txt"


# -- bundle I/O -----------------------------------------------------------------


def write_episodes(out_dir: str | Path, episodes: list[dict]) -> Path:
    """One JSON line per episode, ordered by seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / EPISODES_FILE
    with path.open("w") as fh:
        for ep in sorted(episodes, key=lambda e: e["seed"]):
            fh.write(json.dumps(ep, sort_keys=True) + "\n")
    return path


def read_episodes(bundle_dir: str | Path) -> list[dict]:
    path = Path(bundle_dir) / EPISODES_FILE
    if not path.exists():
        raise MissingLogs(f"no {EPISODES_FILE} in {bundle_dir}")
    episodes = [json.loads(line) for line in path.read_text().splitlines()
                if line.strip()]
    if not episodes:
        raise MissingLogs(f"{path} contains no episodes")
    return episodes


def write_metrics(out_dir: str | Path, rows: list[dict]) -> tuple[Path, Path]:
    """Metrics rows as CSV plus an aligned plain-text table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise MissingLogs("no metrics rows to write")
    keys = list(rows[0].keys())
    csv_path = out / METRICS_CSV
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
    widths = {k: max(len(k), *(len(_fmt(r[k])) for r in rows)) for k in keys}
    lines = ["  ".join(k.ljust(widths[k]) for k in keys)]
    lines.append("  ".join("-" * widths[k] for k in keys))
    for r in rows:
        lines.append("  ".join(_fmt(r[k]).ljust(widths[k]) for k in keys))
    txt_path = out / METRICS_TXT
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def metrics_row(label: str, table: MetricsTable) -> dict:
    return {"config": label, **table.row()}


# -- figures ---------------------------------------------------------------------


def _track_outline(ax, track: TrackDefinition) -> None:
    s = np.linspace(0.0, track.lap_length, 800)
    psi = track.interp_psi(s)
    x, y = track.interp("x", s), track.interp("y", s)
    for chan, style in (("n_min", "k-"), ("n_max", "k-")):
        n = track.interp(chan, s)
        ax.plot(x - n * np.sin(psi), y + n * np.cos(psi), style, lw=0.8)
    n_rl = track.interp("n_raceline", s)
    ax.plot(x - n_rl * np.sin(psi), y + n_rl * np.cos(psi), "g--", lw=0.7,
            label="raceline")


def path_overlay(bundle_dir: str | Path, track: TrackDefinition,
                 max_episodes: int = 8) -> Path:
    """Driven ego paths over the track outline."""
    episodes = read_episodes(bundle_dir)
    fig, ax = plt.subplots(figsize=(8, 6))
    _track_outline(ax, track)
    for ep in episodes[:max_episodes]:
        log = ep.get("log", [])
        if not log:
            continue
        s = np.array([rec["ego"]["s"] for rec in log])
        n = np.array([rec["ego"]["n"] for rec in log])
        psi = track.interp_psi(s)
        x = track.interp("x", s) - n * np.sin(psi)
        y = track.interp("y", s) + n * np.cos(psi)
        ax.plot(x, y, lw=1.0, alpha=0.8, label=f"seed {ep['seed']}")
    ax.set_aspect("equal")
    ax.legend(fontsize=7, loc="upper right")
    ax.set_title("driven paths")
    path = Path(bundle_dir) / "path_overlay.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def episode_panels(bundle_dir: str | Path, seed: int | None = None) -> Path:
    """Four stacked panels for one episode: n, gap, v, and mode vs s."""
    episodes = read_episodes(bundle_dir)
    if seed is None:
        ep = episodes[0]
    else:
        match = [e for e in episodes if e["seed"] == seed]
        if not match:
            raise MissingLogs(f"seed {seed} not in bundle")
        ep = match[0]
    log = ep.get("log", [])
    if not log:
        raise MissingLogs(f"episode {ep['seed']} carries no step log")
    s_prog = np.array([rec["t"] for rec in log])  # monotone, unlike wrapped s
    n = [rec["ego"]["n"] for rec in log]
    opp_n = [rec["opp"]["n"] for rec in log]
    gap = [rec["gap"] for rec in log]
    v = [rec["ego"]["v"] for rec in log]
    opp_v = [rec["opp"]["v"] for rec in log]
    modes = [MODE_NAMES.index(rec["action"]) for rec in log]

    fig, axes = plt.subplots(4, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(s_prog, n, label="ego")
    axes[0].plot(s_prog, opp_n, label="opponent", alpha=0.7)
    axes[0].set_ylabel("lateral n [m]")
    axes[0].legend(fontsize=7)
    axes[1].plot(s_prog, gap)
    axes[1].axhline(0.0, color="k", lw=0.5)
    axes[1].set_ylabel("gap Δs [m]")
    axes[2].plot(s_prog, v, label="ego")
    axes[2].plot(s_prog, opp_v, label="opponent", alpha=0.7)
    axes[2].set_ylabel("v [m/s]")
    axes[2].legend(fontsize=7)
    axes[3].step(s_prog, modes, where="post")
    axes[3].set_yticks(range(len(MODE_NAMES)), MODE_NAMES)
    axes[3].set_ylabel("mode")
    axes[3].set_xlabel("time [s]")
    fig.suptitle(f"episode seed {ep['seed']} ({ep['outcome']})")
    path = Path(bundle_dir) / f"episode_{ep['seed']}.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def render_bundle(bundle_dir: str | Path, track: TrackDefinition,
                  panel_seeds: list[int] | None = None) -> list[Path]:
    """All figures for a bundle; returns the paths written."""
    episodes = read_episodes(bundle_dir)
    out = [path_overlay(bundle_dir, track)]
    seeds = panel_seeds
    if seeds is None:
        # prefer episodes that contain an overtake, fall back to the first
        seeds = [e["seed"] for e in episodes if e.get("overtake_times")][:3]
        if not seeds:
            seeds = [episodes[0]["seed"]]
    for s in seeds:
        out.append(episode_panels(bundle_dir, s))
    return out
