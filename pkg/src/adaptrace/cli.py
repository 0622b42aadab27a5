"""Command-line entry point.

Subcommands mirror the artifact types: ``track`` writes synthetic track
CSVs, ``lap`` times a single car, ``race`` runs seeded two-vehicle batches,
``train`` runs PPO, ``report`` renders a bundle, and ``timing`` measures
planner and policy wall-clock costs.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import json
import statistics
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import agent as ag
from . import nn
from . import planner as pl
from . import report as rp
from . import simenv as se
from .config import (BatchSpec, RunConfig, TrackSpec, apply_overrides,
                     config_from_dict, echo_config, load_config)
from .errors import AdaptraceError, ParseError
from .track import (SynthParams, TrackDefinition, load_track, save_track,
                    synth_track)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_run_config(config_path: str | None, out: str | None,
                     seed: int | None) -> RunConfig:
    try:
        cfg = load_config(config_path) if config_path else RunConfig()
        cfg = apply_overrides(cfg, out_dir=out)
        if seed is not None:
            cfg = apply_overrides(
                cfg, batch=BatchSpec(
                    **{**cfg.batch.__dict__, "first_seed": seed}))
        return cfg
    except ParseError as exc:
        _fail(USAGE_ERROR, str(exc))


def _resolve_track(cfg: RunConfig) -> TrackDefinition:
    spec = cfg.track
    if spec.path:
        return load_track(spec.path)
    return synth_track(spec.kind, spec.params, seed=spec.seed)


@click.group()
def main():
    """Racing planner benchmark harness."""


# -- track ---------------------------------------------------------------------


@main.command("track")
@click.argument("kind", type=click.Choice(["oval", "chicane", "random_loop"]))
@click.option("--out", default="track.csv", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--width", type=float, default=None)
@click.option("--straight", type=float, default=None)
@click.option("--radius", type=float, default=None)
@click.option("--spacing", type=float, default=None)
def cmd_track(kind, out, seed, width, straight, radius, spacing):
    """Generate a synthetic track and write it as CSV."""
    overrides = {k: v for k, v in (("width", width), ("straight", straight),
                                   ("radius", radius), ("spacing", spacing))
                 if v is not None}
    try:
        params = SynthParams(**{**SynthParams().__dict__, **overrides})
        track = synth_track(kind, params, seed=seed)
        save_track(track, out)
        reloaded = load_track(out)
    except (AdaptraceError, ValueError) as exc:
        _fail(USAGE_ERROR, str(exc))
    click.echo(f"wrote {out}: lap_length={reloaded.lap_length:.1f} m, "
               f"{len(reloaded.s)} samples")


# -- lap -----------------------------------------------------------------------


@main.command("lap")
@click.option("--config", "config_path", default=None)
@click.option("--mode", default="NR",
              type=click.Choice(list(pl.MODE_NAMES)))
@click.option("--out", default=None)
def cmd_lap(config_path, mode, out):
    """Single-vehicle lap time under one static weight set."""
    cfg = _load_run_config(config_path, out, None)
    try:
        track = _resolve_track(cfg)
    except AdaptraceError as exc:
        _fail(USAGE_ERROR, str(exc))
    max_steps = int(2.5 * track.lap_length
                    / (10.0 * cfg.planner.replan_dt)) + 200
    scenario = se.ScenarioConfig(
        opponent_kind="non_reactive", opp_start_s=track.lap_length * 0.5,
        detection_range=-1.0,  # opponent never visible: single-vehicle run
        max_steps=max_steps, max_laps=1)
    env = se.RaceEnv(track, scenario, planner_config=cfg.planner,
                     reward_config=cfg.reward, weight_library=cfg.weights)
    env.reset()
    prev_s = env.ego.s_raw
    lap_time = None
    while not env.done:
        env.step(mode)
        if env.ego.s_raw - scenario.ego_start_s >= track.lap_length:
            # interpolate the crossing inside the final step
            overshoot = (env.ego.s_raw - scenario.ego_start_s
                         - track.lap_length)
            frac = overshoot / max(env.ego.s_raw - prev_s, 1e-9)
            lap_time = env.sim_time - frac * cfg.planner.replan_dt
            break
        prev_s = env.ego.s_raw
    if lap_time is None:
        _fail(RUNTIME_ERROR, f"lap not completed: outcome={env.outcome}")
    click.echo(f"{mode} lap time: {lap_time:.2f} s")
    if cfg.out_dir and out is not None:
        outp = Path(cfg.out_dir)
        outp.mkdir(parents=True, exist_ok=True)
        (outp / f"lap_{mode}.json").write_text(json.dumps(
            {"mode": mode, "lap_time_s": round(lap_time, 4)}, sort_keys=True))


# -- race ----------------------------------------------------------------------


def run_race_batch(cfg: RunConfig, policy_spec: str) -> tuple:
    """Execute a seeded batch; returns (metrics, episode dicts, histogram)."""
    track = _resolve_track(cfg)
    scenarios = cfg.batch.scenarios(track.lap_length)
    if not scenarios:
        raise ParseError("batch of size 0")
    histogram = {m: 0 for m in pl.MODE_NAMES}
    if policy_spec.startswith("static:"):
        mode = policy_spec.split(":", 1)[1]
        if mode not in cfg.weights:
            raise ParseError(f"unknown mode {mode!r}")
        agent = None
    else:
        agent = ag.PolicyAgent(policy_spec)
        mode = None
    episodes = []
    results = []
    for sc in scenarios:
        env = se.RaceEnv(track, sc, planner_config=cfg.planner,
                         reward_config=cfg.reward, weight_library=cfg.weights)
        env.reset()
        while not env.done:
            action = mode if agent is None else agent.act(env, greedy=True)
            histogram[action] += 1
            env.step(action)
        res = env.result()
        results.append(res)
        episodes.append({
            "seed": sc.seed, "outcome": res.outcome, "steps": res.steps,
            "overtake_times": [round(t, 4) for t in res.overtake_times],
            "overtakes_completed": res.overtakes_completed,
            "laps_driven": round(res.laps_driven, 4),
            "total_reward": round(res.total_reward, 6),
            "log": res.log,
        })
    return se.compute_metrics(results), episodes, histogram


@main.command("race")
@click.option("--config", "config_path", default=None)
@click.option("--policy", default="static:NR", show_default=True,
              help="static:<MODE> or a checkpoint path")
@click.option("--out", default=None)
@click.option("--seed", type=int, default=None, help="first batch seed")
def cmd_race(config_path, policy, out, seed):
    """Run a seeded two-vehicle scenario batch and write the bundle."""
    cfg = _load_run_config(config_path, out, seed)
    try:
        metrics, episodes, histogram = run_race_batch(cfg, policy)
    except ParseError as exc:
        _fail(USAGE_ERROR, str(exc))
    except AdaptraceError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    out_dir = Path(cfg.out_dir)
    echo_config(cfg, out_dir)
    rp.write_episodes(out_dir, episodes)
    rp.write_metrics(out_dir, [rp.metrics_row(policy, metrics)])
    (out_dir / "action_histogram.json").write_text(
        json.dumps(histogram, sort_keys=True))
    click.echo(f"{policy}: episodes={metrics.episodes} "
               f"collision={metrics.collision_pct:.1f}% "
               f"overtake_time={metrics.mean_overtake_time_s:.2f} s "
               f"overtakes/lap={metrics.overtakes_per_lap:.2f}")
    click.echo(f"bundle written to {out_dir}")


# -- train -----------------------------------------------------------------------


@main.command("train")
@click.option("--config", "config_path", default=None)
@click.option("--out", default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--total-steps", type=int, default=None,
              help="override ppo.total_steps")
def cmd_train(config_path, out, seed, total_steps):
    """Train the mode-selection policy with PPO."""
    cfg = _load_run_config(config_path, out, None)
    ppo = cfg.ppo
    if total_steps is not None:
        ppo = ag.PPOConfig(**{**ppo.__dict__, "total_steps": total_steps})
    try:
        track = _resolve_track(cfg)
    except AdaptraceError as exc:
        _fail(USAGE_ERROR, str(exc))
    out_dir = Path(cfg.out_dir)
    echo_config(cfg, out_dir)
    scenario = ag.TrainScenario(
        track=track,
        base=se.ScenarioConfig(
            opponent_kind="non_reactive",
            opp_accel_scale=cfg.batch.opp_accel_scale,
            max_steps=cfg.batch.max_steps, max_laps=cfg.batch.max_laps),
        planner_config=cfg.planner)

    def log_fn(update, steps, mean_reward, stats):
        click.echo(f"update {update}: steps={steps} reward={mean_reward:.2f} "
                   f"entropy={stats['entropy']:.3f}")

    try:
        ckpt = ag.train(scenario, ppo, seed=seed, out_dir=out_dir,
                        log_fn=log_fn)
    except AdaptraceError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    click.echo(f"checkpoint written to {ckpt}")


# -- report ----------------------------------------------------------------------


@main.command("report")
@click.argument("bundle_dir")
@click.option("--seed", "seeds", type=int, multiple=True,
              help="episode seeds to render (default: first overtakes)")
def cmd_report(bundle_dir, seeds):
    """Render SVG panels and tables from a race bundle."""
    bundle = Path(bundle_dir)
    cfg_path = bundle / "config.yaml"
    if not cfg_path.exists():
        _fail(USAGE_ERROR, f"no config.yaml in {bundle_dir}")
    cfg = _load_run_config(str(cfg_path), None, None)
    try:
        track = _resolve_track(cfg)
        paths = rp.render_bundle(bundle, track,
                                 panel_seeds=list(seeds) or None)
    except AdaptraceError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    for p in paths:
        click.echo(f"wrote {p}")


# -- timing ----------------------------------------------------------------------


@main.command("timing")
@click.option("--config", "config_path", default=None)
@click.option("--checkpoint", default=None,
              help="policy checkpoint (default: fresh network)")
@click.option("--n-cycles", default=200, show_default=True)
def cmd_timing(config_path, checkpoint, n_cycles):
    """Wall-clock cost of one planner cycle vs one policy inference."""
    if n_cycles < 100:
        _fail(USAGE_ERROR, "n_cycles must be at least 100 for stable stats")
    cfg = _load_run_config(config_path, None, None)
    try:
        track = _resolve_track(cfg)
    except AdaptraceError as exc:
        _fail(USAGE_ERROR, str(exc))
    scenario = se.ScenarioConfig(opponent_kind="non_reactive",
                                 opp_start_s=60.0, max_steps=10 ** 9,
                                 max_laps=10 ** 9)
    env = se.RaceEnv(track, scenario, planner_config=cfg.planner,
                     reward_config=cfg.reward, weight_library=cfg.weights)
    env.reset()
    if checkpoint:
        agent = ag.PolicyAgent(checkpoint)
        bounds, geometry = agent.bounds, agent.geometry
        model = agent.model
    else:
        bounds = ag.ObsBounds.from_env(env)
        from .track import GeometryConfig
        geometry = GeometryConfig()
        model = ag.ActorCritic(n_lookahead=geometry.n_lookahead)

    # warm caches, then measure planner cycles while stepping the env
    planner_ms, infer_ms = [], []
    for i in range(n_cycles + 10):
        obs = ag.build_observation(env, bounds, geometry)
        t0 = time.perf_counter()
        model.forward(*ag.stack_observations([obs]))
        t1 = time.perf_counter()
        env.step("NR")
        t2 = time.perf_counter()
        if env.done:
            env = se.RaceEnv(track, scenario, planner_config=cfg.planner)
            env.reset()
        if i >= 10:
            infer_ms.append((t1 - t0) * 1e3)
            planner_ms.append((t2 - t1) * 1e3)

    def stats(xs):
        xs = sorted(xs)
        return {"mean": statistics.fmean(xs), "min": xs[0],
                "p50": xs[len(xs) // 2], "p95": xs[int(len(xs) * 0.95)]}

    ps, ins = stats(planner_ms), stats(infer_ms)
    ratio = ins["mean"] / ps["mean"]
    click.echo(f"planner cycle: mean={ps['mean']:.2f} ms "
               f"p50={ps['p50']:.2f} p95={ps['p95']:.2f}")
    click.echo(f"policy inference: mean={ins['mean']:.3f} ms "
               f"min={ins['min']:.3f}")
    click.echo(f"overhead ratio inference/planner: {ratio:.3f}")


if __name__ == "__main__":
    main()
