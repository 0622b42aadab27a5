"""Deterministic two-vehicle episodic racing simulation.

One environment step equals one planning cycle: the ego plans with the
weight set selected by the high-level action, the opponent acts per its
policy, both vehicles advance exactly ``replan_dt`` along their committed
trajectories (perfect tracking), then collision, interaction-zone
membership, respawn and termination are evaluated in that order and the
reward is computed from the post-step state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import planner as pl
from .collision import rects_overlap
from .errors import EmptyInput, InvalidScenario, NoFeasibleTrajectory
from .track import FrenetPose, TrackDefinition

OUTCOMES = ("success", "collision", "no_feasible", "off_track", "timeout")


@dataclass(frozen=True)
class InteractionZone:
    """Reward-activation zone in the opponent's frame."""

    long_ahead: float = 30.0
    long_behind: float = 15.0
    #: ``None`` resolves to the track halfwidth when the environment is built.
    lateral_halfwidth: float | None = None

    def __post_init__(self):
        lat = 1.0 if self.lateral_halfwidth is None else self.lateral_halfwidth
        if min(self.long_ahead, self.long_behind, lat) <= 0:
            raise ValueError("zone dimensions must be positive")

    def resolved(self, track_halfwidth: float) -> "InteractionZone":
        if self.lateral_halfwidth is not None:
            return self
        return InteractionZone(self.long_ahead, self.long_behind,
                               track_halfwidth)


@dataclass(frozen=True)
class RewardConfig:
    w_p: float = 1.0
    w_v: float = 0.1
    w_lat: float = 0.05
    w_gap: float = 0.05
    w_col: float = 0.5
    sparse_C: float = 100.0
    w_sparse: float = 1.0
    d_safe: float = 2.5
    # +1 rewards leading the opponent inside the zone; -1 keeps the
    # literal sign of the gap term as published.
    gap_sign: float = 1.0
    zone: InteractionZone = field(default_factory=InteractionZone)

    def __post_init__(self):
        if self.sparse_C <= 0:
            raise ValueError("sparse magnitude must be positive")
        for w in (self.w_p, self.w_v, self.w_lat, self.w_gap, self.w_col,
                  self.w_sparse):
            if w < 0:
                raise ValueError("reward weights must be nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    ego_start_s: float = 0.0
    opp_start_s: float = 60.0
    opponent_kind: str = "non_reactive"  # or "reactive_nr"
    opp_accel_scale: float = 0.9
    max_steps: int = 400
    max_laps: int = 1
    respawn_lead: float = 100.0
    overtake_lead: float = 15.0
    detection_range: float = 150.0
    terminate_on_success: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.opp_start_s <= self.ego_start_s:
            raise InvalidScenario("opponent must spawn ahead of the ego")
        if not (0.0 < self.opp_accel_scale <= 1.0):
            raise InvalidScenario("opp_accel_scale must be in (0, 1]")
        if self.opponent_kind not in ("non_reactive", "reactive_nr"):
            raise InvalidScenario(f"unknown opponent kind {self.opponent_kind!r}")


@dataclass
class VehicleState:
    """Kinematic snapshot of one vehicle; ``s_raw`` is lap-unwrapped."""

    s_raw: float
    n: float
    v: float
    a_long: float = 0.0
    a_lat: float = 0.0
    mu: float = 0.0
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    kappa_path: float = 0.0
    length: float = 4.5
    width: float = 2.0
    committed: pl.CandidateTrajectory | None = None

    def frenet(self, track: TrackDefinition) -> FrenetPose:
        return FrenetPose(track._wrap(self.s_raw), self.n, self.mu)

    def lap_count(self, track: TrackDefinition) -> int:
        return int(math.floor(self.s_raw / track.lap_length))

    def gg_utilization(self, limits: pl.ConstraintLimits) -> float:
        p = limits.p_exponent
        return (abs(self.a_long) / limits.ax_max) ** p \
            + (abs(self.a_lat) / limits.ay_max) ** p


@dataclass
class EpisodeResult:
    outcome: str
    steps: int
    overtake_times: list[float]
    overtakes_completed: int
    laps_driven: float
    total_reward: float
    reward_trace: list[float]
    log: list[dict]

    @property
    def collided(self) -> bool:
        return self.outcome == "collision"


@dataclass
class MetricsTable:
    episodes: int
    collision_pct: float
    mean_overtake_time_s: float
    overtakes_per_lap: float
    success_pct: float

    def row(self) -> dict:
        return {
            "episodes": self.episodes,
            "collision_pct": round(self.collision_pct, 6),
            "mean_overtake_time_s": round(self.mean_overtake_time_s, 6),
            "overtakes_per_lap": round(self.overtakes_per_lap, 6),
            "success_pct": round(self.success_pct, 6),
        }


# -- geometric predicates ---------------------------------------------------


def detect_collision(ego: VehicleState, opp: VehicleState) -> bool:
    """Oriented-rectangle overlap of the two footprints (closed contact)."""
    return bool(rects_overlap(ego.x, ego.y, ego.psi, ego.length, ego.width,
                              opp.x, opp.y, opp.psi, opp.length, opp.width))


def in_interaction_zone(ego: VehicleState, opp: VehicleState,
                        zone: InteractionZone, gap: float) -> bool:
    """Closed zone attached to the opponent; ``gap`` = s_ego - s_opp."""
    return (-zone.long_behind <= gap <= zone.long_ahead
            and abs(ego.n - opp.n) <= zone.lateral_halfwidth)


# -- reward ------------------------------------------------------------------


def compute_reward(prev: dict, cur: dict, zone_active: bool,
                   terminal_outcome: str | None,
                   cfg: RewardConfig) -> tuple[float, dict]:
    """Reward for one step from consecutive state snapshots.

    Snapshots carry ego progress/speed/lateral offset, the raceline
    targets, and the gap and lateral offset to the opponent (None when no
    opponent is present).
    """
    r_p = cur["s_raw"] - prev["s_raw"]
    r_v = -abs(cur["v_target"] - cur["v"])
    if zone_active:
        r_lat = 0.0
        r_gap = cfg.gap_sign * cur["gap"]
        r_col = -max(0.0, cfg.d_safe - abs(cur["n"] - cur["opp_n"]))
    else:
        r_lat = -((cur["n"] - cur["n_raceline"]) ** 2)
        r_gap = 0.0
        r_col = 0.0
    if terminal_outcome is None:
        r_sparse = 0.0
    elif terminal_outcome == "success":
        r_sparse = cfg.sparse_C
    elif terminal_outcome == "timeout":
        r_sparse = 0.0
    else:
        r_sparse = -cfg.sparse_C

    total = (cfg.w_p * r_p + cfg.w_v * r_v + cfg.w_lat * r_lat
             + cfg.w_gap * r_gap + cfg.w_col * r_col
             + cfg.w_sparse * r_sparse)
    breakdown = {"R_p": r_p, "R_v": r_v, "R_lat": r_lat, "R_gap": r_gap,
                 "R_col": r_col, "R_sparse": r_sparse}
    return total, breakdown


# -- opponent policies ---------------------------------------------------------


class NonReactiveOpponent:
    """Raceline follower with acceleration-limited speed tracking."""

    def __init__(self, track: TrackDefinition, limits: pl.ConstraintLimits,
                 accel_scale: float):
        self.track = track
        self.limits = limits.scaled(accel_scale)
        # desk-scale pace handicap: target speed scales with the limits
        self.speed_scale = accel_scale

    def commit(self, opp: VehicleState, ego: VehicleState,
               config: pl.PlannerConfig) -> None:
        dt = config.traj_dt
        n_pts = config.n_points
        s = opp.s_raw
        v = opp.v
        s_arr = np.empty(n_pts)
        v_arr = np.empty(n_pts)
        for i in range(n_pts):
            s_arr[i] = s
            v_arr[i] = v
            v_t = self.speed_scale * float(self.track.interp("v_raceline", s))
            dv = np.clip(v_t - v, -self.limits.ax_max * dt,
                         self.limits.ax_eng * dt)
            v = max(0.0, v + dv)
            kap = float(self.track.interp("kappa", s))
            n_rl = float(self.track.interp("n_raceline", s))
            denom = max(1.0 - n_rl * kap, 0.2)
            s += v * dt / denom
        self._apply(opp, s_arr, v_arr, dt)

    def _apply(self, opp: VehicleState, s_arr, v_arr, dt) -> None:
        tr = self.track
        n_arr = tr.interp("n_raceline", s_arr)
        psi_ref = tr.interp_psi(s_arr)
        x = tr.interp("x", s_arr) - n_arr * np.sin(psi_ref)
        y = tr.interp("y", s_arr) + n_arr * np.cos(psi_ref)
        t = np.arange(s_arr.size) * dt
        zeros = np.zeros_like(s_arr)
        a_long = np.gradient(v_arr, dt)
        kap = tr.interp("kappa", s_arr)
        opp.committed = pl.CandidateTrajectory(
            t=t, s=s_arr, s_dot=v_arr, s_ddot=a_long, n=n_arr,
            n_dot=zeros, n_ddot=zeros, v=v_arr, a_long=a_long,
            a_lat=v_arr**2 * kap, kappa_path=kap, x=x, y=y, psi=psi_ref,
            n_min=tr.interp("n_min", s_arr), n_max=tr.interp("n_max", s_arr),
            n_raceline=n_arr, v_raceline=tr.interp("v_raceline", s_arr),
            end_state=(float(v_arr[-1]), float(n_arr[-1])))


class ReactiveNROpponent:
    """Full planner with the static NR weight set and scaled accel limits."""

    def __init__(self, track: TrackDefinition, config: pl.PlannerConfig,
                 accel_scale: float):
        self.track = track
        limits = config.limits.scaled(accel_scale)
        self.config = pl.PlannerConfig(
            horizon_T=config.horizon_T, replan_dt=config.replan_dt,
            traj_dt=config.traj_dt, n_lat_samples=config.n_lat_samples,
            n_speed_samples=config.n_speed_samples,
            lat_range=config.lat_range, speed_range=config.speed_range,
            limits=limits, u_thresh=config.u_thresh,
            # A defender that only reacts inside the attacker's own bubble is
            # forced to cross the attacker's nose at close range; a wider
            # radius makes it yield while the gap is still safe.
            d_proximity=max(12.0, config.d_proximity),
            collision_margin=max(1.5, config.collision_margin),
            veh_length=config.veh_length, veh_width=config.veh_width,
            sample_margin=config.sample_margin)
        self.weights = pl.WEIGHT_LIBRARY["NR"]

    def commit(self, opp: VehicleState, ego: VehicleState,
               config: pl.PlannerConfig) -> None:
        if opp.committed is not None:
            start = pl.identify_start_state(opp.committed, self.config.replan_dt)
        else:
            start = pl.identify_start_state(
                (opp.s_raw, opp.n, opp.v, opp.mu), self.config.replan_dt,
                track=self.track)
        # Predict the ego as holding its current line rather than drifting
        # to the raceline: the defender then only re-crosses the ego's lane
        # once it is genuinely clear, instead of cutting back optimistically.
        ego_pred = pl.predict_opponent(
            self.track, ego.s_raw, ego.n, ego.v, self.config,
            length=ego.length, width=ego.width, decay_tau=1e6)
        try:
            traj, _ = pl.plan(start, self.track, self.weights, ego_pred,
                              self.config)
            opp.committed = traj
        except NoFeasibleTrajectory:
            opp.committed = _braking_fallback(self.track, start, self.config)


def _braking_fallback(track: TrackDefinition, start: pl.StartState,
                      config: pl.PlannerConfig) -> pl.CandidateTrajectory:
    """Maximal braking at fixed lateral offset when planning fails."""
    dt = config.traj_dt
    t = np.arange(config.n_points) * dt
    decel = config.limits.ax_max
    s_dot = np.maximum(0.0, start.s_dot - decel * t)
    s = start.s + np.concatenate([[0.0], np.cumsum(
        0.5 * (s_dot[1:] + s_dot[:-1]) * dt)])
    n = np.full_like(s, start.n)
    zeros = np.zeros_like(s)
    psi_ref = track.interp_psi(s)
    kap = track.interp("kappa", s)
    x = track.interp("x", s) - n * np.sin(psi_ref)
    y = track.interp("y", s) + n * np.cos(psi_ref)
    a_long = np.gradient(s_dot, dt)
    return pl.CandidateTrajectory(
        t=t, s=s, s_dot=s_dot, s_ddot=a_long, n=n, n_dot=zeros,
        n_ddot=zeros, v=s_dot, a_long=a_long, a_lat=s_dot**2 * kap,
        kappa_path=kap, x=x, y=y, psi=psi_ref,
        n_min=track.interp("n_min", s), n_max=track.interp("n_max", s),
        n_raceline=track.interp("n_raceline", s),
        v_raceline=track.interp("v_raceline", s),
        end_state=(float(s_dot[-1]), float(start.n)))


# -- environment ----------------------------------------------------------------


class RaceEnv:
    """Single ego vs single opponent; deterministic in its configuration."""

    def __init__(self, track: TrackDefinition,
                 scenario: ScenarioConfig | None = None,
                 planner_config: pl.PlannerConfig | None = None,
                 reward_config: RewardConfig | None = None,
                 weight_library: dict[str, pl.WeightSet] | None = None):
        self.track = track
        self.scenario = scenario or ScenarioConfig()
        self.config = planner_config or pl.PlannerConfig()
        rc = reward_config or RewardConfig()
        halfwidth = 0.5 * float(np.max(track.n_max - track.n_min))
        self.reward_config = replace(rc, zone=rc.zone.resolved(halfwidth))
        self.weights = weight_library or dict(pl.WEIGHT_LIBRARY)
        self.mode_names = tuple(self.weights.keys())
        self.done = True

    # -- lifecycle -----------------------------------------------------

    def reset(self) -> VehicleState:
        sc = self.scenario
        if sc.opp_start_s - sc.ego_start_s >= self.track.lap_length:
            raise InvalidScenario("initial gap exceeds the lap length")
        self.ego = self._spawn(sc.ego_start_s)
        self.opp = self._spawn(sc.opp_start_s, sc.opp_accel_scale)
        self.opp_policy = self._make_opponent()
        self.done = False
        self.steps = 0
        self.outcome: str | None = None
        self.overtake_times: list[float] = []
        self.overtakes_completed = 0
        self._opp_spawn_time = 0.0
        self._opp_overtaken = False
        self.reward_trace: list[float] = []
        self.log: list[dict] = []
        self._ego_start_raw = sc.ego_start_s
        return self.ego

    def _spawn(self, s: float, speed_scale: float = 1.0) -> VehicleState:
        # handicapped vehicles spawn at their own sustainable pace; dropping
        # a car mid-corner above its scaled gg envelope would force an
        # emergency-braking transient before it can plan at all
        tr = self.track
        n = float(tr.interp("n_raceline", s))
        v = speed_scale * float(tr.interp("v_raceline", s))
        psi = float(tr.interp_psi(s))
        kap = float(tr.interp("kappa", s))
        return VehicleState(
            s_raw=s, n=n, v=v, mu=0.0,
            x=float(tr.interp("x", s)) - n * math.sin(psi),
            y=float(tr.interp("y", s)) + n * math.cos(psi),
            psi=psi, kappa_path=kap, a_lat=v * v * kap)

    def _make_opponent(self):
        sc = self.scenario
        if sc.opponent_kind == "non_reactive":
            return NonReactiveOpponent(self.track, self.config.limits,
                                       sc.opp_accel_scale)
        return ReactiveNROpponent(self.track, self.config, sc.opp_accel_scale)

    @property
    def gap(self) -> float:
        """Signed lead of the ego over the opponent, meters."""
        return self.ego.s_raw - self.opp.s_raw

    @property
    def sim_time(self) -> float:
        return self.steps * self.config.replan_dt

    def opponent_visible(self) -> bool:
        return abs(self.gap) <= self.scenario.detection_range

    # -- stepping -------------------------------------------------------

    def step(self, action: int | str) -> tuple[float, bool, dict]:
        """Advance one planning cycle under the selected weight set."""
        if self.done:
            raise RuntimeError("step() on a finished episode")
        mode = action if isinstance(action, str) else self.mode_names[action]
        weights = self.weights[mode]
        sc = self.scenario
        prev_snap = self._snapshot()

        # ego plans; a planning failure terminates the episode
        start = self._ego_start_state()
        opp_pred = pl.predict_opponent(
            self.track, self.opp.s_raw, self.opp.n, self.opp.v, self.config,
            length=self.opp.length, width=self.opp.width) \
            if self.opponent_visible() else None
        try:
            self.ego.committed, diag = pl.plan(start, self.track, weights,
                                               opp_pred, self.config)
        except NoFeasibleTrajectory:
            self.steps += 1
            return self._finish("no_feasible", mode, prev_snap, zone=False)

        # opponent commits, both advance exactly replan_dt
        self.opp_policy.commit(self.opp, self.ego, self.config)
        self._advance(self.ego)
        self._advance(self.opp)
        self.steps += 1

        terminal: str | None = None
        if detect_collision(self.ego, self.opp):
            terminal = "collision"
        zone_active = (self.opponent_visible()
                       and in_interaction_zone(self.ego, self.opp,
                                               self.reward_config.zone,
                                               self.gap))
        off = not (self.track.interp("n_min", self.ego.s_raw) - 0.5
                   <= self.ego.n
                   <= self.track.interp("n_max", self.ego.s_raw) + 0.5)
        if terminal is None and off:
            terminal = "off_track"

        if terminal is None:
            # overtake bookkeeping, then respawn
            if not self._opp_overtaken and self.gap >= sc.overtake_lead:
                self._opp_overtaken = True
                self.overtakes_completed += 1
                self.overtake_times.append(self.sim_time - self._opp_spawn_time)
            if self.gap >= sc.respawn_lead:
                self._respawn_opponent()
            terminal = self._check_episode_end()

        return self._finish(terminal, mode, prev_snap, zone_active) \
            if terminal else self._emit(None, mode, prev_snap, zone_active)

    def _ego_start_state(self) -> pl.StartState:
        if self.ego.committed is not None:
            return pl.identify_start_state(self.ego.committed,
                                           self.config.replan_dt)
        return pl.identify_start_state(
            (self.ego.s_raw, self.ego.n, self.ego.v, self.ego.mu),
            self.config.replan_dt, track=self.track)

    def _advance(self, veh: VehicleState) -> None:
        traj = veh.committed
        i = int(round(self.config.replan_dt / self.config.traj_dt))
        veh.s_raw = float(traj.s[i])
        veh.n = float(traj.n[i])
        veh.v = float(traj.v[i])
        veh.a_long = float(traj.a_long[i])
        veh.a_lat = float(traj.a_lat[i])
        veh.kappa_path = float(traj.kappa_path[i])
        veh.x = float(traj.x[i])
        veh.y = float(traj.y[i])
        veh.psi = float(traj.psi[i])
        veh.mu = float(traj.psi[i] - self.track.interp_psi(traj.s[i]))

    def _respawn_opponent(self) -> None:
        gap0 = self.scenario.opp_start_s - self.scenario.ego_start_s
        self.opp = self._spawn(self.ego.s_raw + gap0,
                               self.scenario.opp_accel_scale)
        self.opp_policy = self._make_opponent()
        self._opp_spawn_time = self.sim_time
        self._opp_overtaken = False

    def _check_episode_end(self) -> str | None:
        sc = self.scenario
        if (sc.terminate_on_success and self.overtakes_completed >= 1
                and self.gap >= sc.overtake_lead):
            return "success"
        laps = (self.ego.s_raw - self._ego_start_raw) / self.track.lap_length
        if laps >= sc.max_laps or self.steps >= sc.max_steps:
            if self.overtakes_completed >= 1 and self.gap >= sc.overtake_lead:
                return "success"
            return "timeout"
        return None

    # -- bookkeeping ------------------------------------------------------

    def _snapshot(self) -> dict:
        tr = self.track
        return {
            "s_raw": self.ego.s_raw,
            "n": self.ego.n,
            "v": self.ego.v,
            "v_target": float(tr.interp("v_raceline", self.ego.s_raw)),
            "n_raceline": float(tr.interp("n_raceline", self.ego.s_raw)),
            "gap": self.gap,
            "opp_n": self.opp.n,
        }

    def _finish(self, outcome: str, mode: str, prev_snap: dict,
                zone: bool) -> tuple[float, bool, dict]:
        self.done = True
        self.outcome = outcome
        return self._emit(outcome, mode, prev_snap, zone)

    def _emit(self, terminal: str | None, mode: str, prev_snap: dict,
              zone: bool) -> tuple[float, bool, dict]:
        cur_snap = self._snapshot()
        if terminal == "no_feasible":
            # no post-step state exists; only the sparse failure signal
            reward = -self.reward_config.w_sparse * self.reward_config.sparse_C
            breakdown = {"R_p": 0.0, "R_v": 0.0, "R_lat": 0.0, "R_gap": 0.0,
                         "R_col": 0.0, "R_sparse": -self.reward_config.sparse_C}
        else:
            reward, breakdown = compute_reward(prev_snap, cur_snap, zone,
                                               terminal, self.reward_config)
        self.reward_trace.append(reward)
        self.log.append({
            "t": round(self.sim_time, 6),
            "ego": {"s": round(self.track._wrap(self.ego.s_raw), 4),
                    "n": round(self.ego.n, 4), "v": round(self.ego.v, 4)},
            "opp": {"s": round(self.track._wrap(self.opp.s_raw), 4),
                    "n": round(self.opp.n, 4), "v": round(self.opp.v, 4)},
            "gap": round(self.gap, 4),
            "action": mode,
            "reward": round(reward, 6),
            "breakdown": {k: round(v, 6) for k, v in breakdown.items()},
            "zone": bool(zone),
            "done": terminal is not None,
            "outcome": terminal,
        })
        info = {"breakdown": breakdown, "zone": zone, "outcome": terminal,
                "mode": mode, "gap": self.gap}
        return reward, self.done, info

    def result(self) -> EpisodeResult:
        laps = max((self.ego.s_raw - self._ego_start_raw)
                   / self.track.lap_length, 1e-9)
        return EpisodeResult(
            outcome=self.outcome or "timeout", steps=self.steps,
            overtake_times=list(self.overtake_times),
            overtakes_completed=self.overtakes_completed,
            laps_driven=laps, total_reward=float(sum(self.reward_trace)),
            reward_trace=list(self.reward_trace), log=list(self.log))


def run_scenario(track: TrackDefinition, scenario: ScenarioConfig,
                 policy, planner_config: pl.PlannerConfig | None = None,
                 reward_config: RewardConfig | None = None,
                 weight_library: dict[str, pl.WeightSet] | None = None,
                 ) -> EpisodeResult:
    """Run one episode; ``policy(env) -> action`` selects the weight set."""
    env = RaceEnv(track, scenario, planner_config, reward_config,
                  weight_library)
    env.reset()
    while not env.done:
        _, done, _ = env.step(policy(env))
        if done:
            break
    if env.outcome is None:
        env.outcome = "timeout"
    return env.result()


def sample_scenario(base: ScenarioConfig, lap_length: float,
                    seed: int) -> ScenarioConfig:
    """Randomized start section and initial gap for one seeded episode."""
    rng = np.random.default_rng(seed)
    start = float(rng.uniform(0.0, lap_length))
    gap = float(rng.uniform(40.0, 80.0))
    return replace(base, ego_start_s=start, opp_start_s=start + gap, seed=seed)


def static_policy(mode: str):
    """Weight-selector that always picks the same behavioral mode."""
    def _policy(env: RaceEnv) -> str:
        return mode
    return _policy


def compute_metrics(results: list[EpisodeResult]) -> MetricsTable:
    """Aggregate the benchmark metric triple over a batch of episodes."""
    if not results:
        raise EmptyInput("no episode results")
    n = len(results)
    collisions = sum(1 for r in results if r.outcome == "collision")
    times = [t for r in results for t in r.overtake_times]
    total_laps = sum(r.laps_driven for r in results)
    overtakes = sum(r.overtakes_completed for r in results)
    successes = sum(1 for r in results if r.outcome == "success")
    return MetricsTable(
        episodes=n,
        collision_pct=100.0 * collisions / n,
        mean_overtake_time_s=float(np.mean(times)) if times else float("nan"),
        overtakes_per_lap=overtakes / total_laps if total_laps > 0 else 0.0,
        success_pct=100.0 * successes / n,
    )
