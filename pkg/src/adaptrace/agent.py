"""Mode-switching policy: observations, actor-critic, PPO, training loop.

The agent does not drive; it picks one of the three planner weight sets
(NR / AG / CD) once per planning cycle.  Observations are the ego state,
the relative opponent state, and a lookahead matrix of track geometry,
each normalized into [-1, 1] with static affine bounds that are stored
next to the checkpoint so evaluation is reproducible anywhere.

Training is synchronous PPO: a batch of independently-seeded environments
is rolled out against a frozen policy, advantages come from GAE, and the
clipped surrogate objective is optimized with Adam over shuffled
minibatches.  Everything is deterministic in the training seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from . import planner as pl
from . import simenv as se
from .errors import CheckpointMismatch, IncompleteBuffer, NonFiniteLoss
from .track import GeometryConfig, TrackDefinition, query_geometry

MODE_NAMES = pl.MODE_NAMES
N_ACTIONS = len(MODE_NAMES)
EGO_DIM = 7
OPP_DIM = 4
TRACK_CHANNELS = 6


# -- observations -------------------------------------------------------------


@dataclass(frozen=True)
class ObsBounds:
    """Static affine normalization bounds, recorded with every checkpoint."""

    lap_length: float
    halfwidth: float
    v_max: float
    mu_max: float = math.pi / 2.0
    kappa_scale: float = 0.1
    a_long_max: float = 10.0
    util_max: float = 1.5
    detection_range: float = 150.0
    v_rel_max: float = 15.0
    dpsi_max: float = math.pi

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ObsBounds":
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_env(cls, env: se.RaceEnv) -> "ObsBounds":
        tr, lim = env.track, env.config.limits
        halfwidth = 0.5 * float(np.max(tr.n_max - tr.n_min))
        return cls(lap_length=tr.lap_length, halfwidth=halfwidth,
                   v_max=lim.v_max, a_long_max=lim.ax_max,
                   detection_range=env.scenario.detection_range)


@dataclass
class Observation:
    """The three normalized input blocks; every entry lies in [-1, 1]."""

    ego: np.ndarray    # (EGO_DIM,)
    opp: np.ndarray    # (OPP_DIM,) last entry is the presence flag
    track: np.ndarray  # (TRACK_CHANNELS, n_lookahead)


def _clamp(x, scale: float) -> float:
    return float(np.clip(x / scale, -1.0, 1.0))


def build_observation(env: se.RaceEnv, bounds: ObsBounds,
                      geometry: GeometryConfig | None = None) -> Observation:
    """Normalized observation of the current environment state.

    The ego's s is encoded as a symmetric lap fraction (0 at the start
    line, 0 again after a full lap).  The opponent block is zeroed with
    presence flag -1 whenever the opponent is outside detection range.
    """
    geometry = geometry or GeometryConfig()
    tr, ego, opp = env.track, env.ego, env.opp
    s_wrapped = tr._wrap(ego.s_raw)
    util = ego.gg_utilization(env.config.limits)
    ego_block = np.array([
        2.0 * s_wrapped / bounds.lap_length - 1.0,
        _clamp(ego.n, bounds.halfwidth),
        _clamp(ego.mu, bounds.mu_max),
        2.0 * np.clip(ego.v / bounds.v_max, 0.0, 1.0) - 1.0,
        _clamp(ego.kappa_path, bounds.kappa_scale),
        _clamp(ego.a_long, bounds.a_long_max),
        2.0 * np.clip(util / bounds.util_max, 0.0, 1.0) - 1.0,
    ])
    if env.opponent_visible():
        opp_block = np.array([
            _clamp(opp.s_raw - ego.s_raw, bounds.detection_range),
            _clamp(opp.n - ego.n, 2.0 * bounds.halfwidth),
            _clamp(opp.v - ego.v, bounds.v_rel_max),
            1.0,
        ])
    else:
        opp_block = np.array([0.0, 0.0, 0.0, -1.0])
    geo = query_geometry(tr, s_wrapped, geometry)
    scales = np.array([bounds.kappa_scale, bounds.dpsi_max, bounds.halfwidth,
                       bounds.halfwidth, bounds.halfwidth, bounds.v_max])
    track_block = np.clip(geo / scales[:, None], -1.0, 1.0)
    return Observation(ego=ego_block, opp=opp_block, track=track_block)


def stack_observations(obs: list[Observation]):
    """Batch a list of observations into the three network input arrays."""
    return (np.stack([o.ego for o in obs]),
            np.stack([o.opp for o in obs]),
            np.stack([o.track for o in obs]))


# -- actor-critic -------------------------------------------------------------


class ActorCritic:
    """Three-branch encoder with separate policy and value heads.

    Ego and opponent blocks pass through small dense encoders; the track
    matrix runs through a two-stage 1D convolution over the lookahead axis.
    The concatenated codes feed a shared trunk and two linear heads.
    """

    def __init__(self, n_lookahead: int = 20, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n_lookahead = int(n_lookahead)
        conv_out = 8 * (n_lookahead - 5 + 1 - 3 + 1)
        self.ego_enc = nn.Sequential([nn.Dense(EGO_DIM, 32, "tanh", rng)])
        self.opp_enc = nn.Sequential([nn.Dense(OPP_DIM, 16, "tanh", rng)])
        self.track_enc = nn.Sequential([
            nn.Conv1D(TRACK_CHANNELS, 8, 5, rng=rng),
            nn.Conv1D(8, 8, 3, rng=rng),
            nn.Flatten(),
            nn.Dense(conv_out, 64, "tanh", rng),
        ])
        self.trunk = nn.Sequential([nn.Dense(32 + 16 + 64, 128, "tanh", rng)])
        self.policy_head = nn.Sequential(
            [nn.Dense(128, N_ACTIONS, "linear", rng, weight_scale=0.01)])
        self.value_head = nn.Sequential([nn.Dense(128, 1, "linear", rng)])
        self._parts = (self.ego_enc, self.opp_enc, self.track_enc,
                       self.trunk, self.policy_head, self.value_head)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for part in self._parts for p in part.params]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, ego: np.ndarray, opp: np.ndarray, track: np.ndarray):
        """Batched forward pass -> (logits (B,A), values (B,), cache)."""
        e, ce = self.ego_enc.forward(ego)
        o, co = self.opp_enc.forward(opp)
        t, ct = self.track_enc.forward(track)
        joint = np.concatenate([e, o, t], axis=1)
        h, ch = self.trunk.forward(joint)
        logits, cp = self.policy_head.forward(h)
        value, cv = self.value_head.forward(h)
        cache = (ce, co, ct, ch, cp, cv)
        return logits, value[:, 0], cache

    def backward(self, cache, dlogits: np.ndarray, dvalue: np.ndarray):
        """Exact gradients for a loss with the given output gradients."""
        ce, co, ct, ch, cp, cv = cache
        gp, dh_p = self.policy_head.backward(cp, dlogits)
        gv, dh_v = self.value_head.backward(cv, dvalue[:, None])
        gt_trunk, djoint = self.trunk.backward(ch, dh_p + dh_v)
        ge, _ = self.ego_enc.backward(ce, djoint[:, :32])
        go, _ = self.opp_enc.backward(co, djoint[:, 32:48])
        gt, _ = self.track_enc.backward(ct, djoint[:, 48:])
        return ge + go + gt + gt_trunk + gp + gv


# -- rollout storage and GAE ---------------------------------------------------


@dataclass
class RolloutBuffer:
    """Time-major rollout storage for n_envs parallel environments."""

    ego: np.ndarray       # (T, N, EGO_DIM)
    opp: np.ndarray       # (T, N, OPP_DIM)
    track: np.ndarray     # (T, N, C, L)
    actions: np.ndarray   # (T, N) int
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray     # (T, N) float 0/1, done *after* the transition
    bootstrap: np.ndarray | None = None  # (N,) value of the state after step T
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.rewards.size


def compute_gae(buffer: RolloutBuffer, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns, filled into the buffer."""
    if buffer.bootstrap is None:
        raise IncompleteBuffer("bootstrap values missing")
    T, N = buffer.rewards.shape
    adv = np.zeros((T, N))
    next_value = buffer.bootstrap
    gae = np.zeros(N)
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - buffer.dones[t]
        delta = (buffer.rewards[t] + gamma * next_value * not_done
                 - buffer.values[t])
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
        next_value = buffer.values[t]
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return adv, buffer.returns


# -- PPO update ----------------------------------------------------------------


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    epochs: int = 4
    minibatch: int = 256
    lr: float = 3e-4
    n_envs: int = 8
    rollout_len: int = 512
    total_steps: int = 500_000
    reactive_mix: float = 0.5
    normalize_adv: bool = True
    checkpoint_every: int = 20

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 <= self.lambda_gae <= 1.0):
            raise ValueError("lambda_gae must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


def _minibatch_loss(model: ActorCritic, batch: dict,
                    cfg: PPOConfig) -> tuple[float, list[np.ndarray], dict]:
    """Loss, exact parameter gradients, and statistics for one minibatch."""
    logits, values, cache = model.forward(batch["ego"], batch["opp"],
                                          batch["track"])
    B = logits.shape[0]
    actions = batch["actions"]
    logp_all = nn.log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[np.arange(B), actions]
    ratio = np.exp(logp - batch["log_probs"])
    adv = batch["advantages"]

    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr1 = ratio * adv
    surr2 = clipped * adv
    l_clip = np.minimum(surr1, surr2)
    entropy = -(probs * logp_all).sum(axis=1)
    v_err = values - batch["returns"]
    policy_loss = -float(l_clip.mean())
    value_loss = float((v_err ** 2).mean())
    ent_mean = float(entropy.mean())
    loss = policy_loss + cfg.c1 * value_loss - cfg.c2 * ent_mean
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss={loss} (policy={policy_loss}, "
                            f"value={value_loss}, entropy={ent_mean})")

    # d(-L_clip)/dlogp: the clipped branch has zero gradient once the ratio
    # sits outside the trust region *and* the unclipped term is larger
    active = (surr1 <= surr2) | ((ratio >= 1.0 - cfg.clip_eps)
                                 & (ratio <= 1.0 + cfg.clip_eps))
    dlogp = -(active * ratio * adv) / B
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), actions] = 1.0
    dlogits = dlogp[:, None] * (onehot - probs)
    # entropy bonus: dS/dlogits_k = -p_k (logp_k + S)
    ds = -probs * (logp_all + entropy[:, None])
    dlogits -= cfg.c2 * ds / B
    dvalue = cfg.c1 * 2.0 * v_err / B

    grads = model.backward(cache, dlogits, dvalue)
    stats = {
        "policy_loss": policy_loss, "value_loss": value_loss,
        "entropy": ent_mean,
        "clip_frac": float((np.abs(ratio - 1.0) > cfg.clip_eps).mean()),
        "approx_kl": float((batch["log_probs"] - logp).mean()),
    }
    return loss, grads, stats


def ppo_update(model: ActorCritic, optimizer: nn.Adam, buffer: RolloutBuffer,
               cfg: PPOConfig, rng: np.random.Generator) -> dict:
    """Clipped-surrogate PPO epochs over shuffled minibatches."""
    if buffer.advantages is None or buffer.returns is None:
        raise IncompleteBuffer("advantages not computed")
    flat = {
        "ego": buffer.ego.reshape(-1, EGO_DIM),
        "opp": buffer.opp.reshape(-1, OPP_DIM),
        "track": buffer.track.reshape(-1, *buffer.track.shape[2:]),
        "actions": buffer.actions.reshape(-1),
        "log_probs": buffer.log_probs.reshape(-1),
        "advantages": buffer.advantages.reshape(-1).copy(),
        "returns": buffer.returns.reshape(-1),
    }
    if cfg.normalize_adv:
        a = flat["advantages"]
        flat["advantages"] = (a - a.mean()) / (a.std() + 1e-8)
    n = flat["actions"].shape[0]
    stats_acc: dict[str, list[float]] = {}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            batch = {k: v[idx] for k, v in flat.items()}
            _, grads, stats = _minibatch_loss(model, batch, cfg)
            optimizer.step(grads)
            for k, v in stats.items():
                stats_acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in stats_acc.items()}


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainScenario:
    """Distribution of training episodes on one track."""

    track: TrackDefinition
    base: se.ScenarioConfig = field(default_factory=lambda: se.ScenarioConfig(
        opp_start_s=60.0, max_steps=400, max_laps=2))
    gap_range: tuple[float, float] = (40.0, 80.0)
    planner_config: pl.PlannerConfig | None = None


class _EnvSlot:
    """One training environment plus its private RNG stream."""

    def __init__(self, scenario: TrainScenario, cfg: PPOConfig, seed: int):
        self.scenario = scenario
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.env: se.RaceEnv | None = None
        self.episode_reward = 0.0
        self.finished_rewards: list[float] = []

    def ensure_env(self) -> se.RaceEnv:
        if self.env is None or self.env.done:
            sc = self.scenario
            kind = ("reactive_nr" if self.rng.random() < self.cfg.reactive_mix
                    else "non_reactive")
            start = float(self.rng.uniform(0.0, sc.track.lap_length))
            gap = float(self.rng.uniform(*sc.gap_range))
            config = replace(sc.base, ego_start_s=start, opp_start_s=start + gap,
                             opponent_kind=kind)
            self.env = se.RaceEnv(sc.track, config,
                                  planner_config=sc.planner_config)
            self.env.reset()
            self.episode_reward = 0.0
        return self.env


def train(scenario: TrainScenario, cfg: PPOConfig | None = None,
          seed: int = 0, out_dir: str | Path = "runs/train",
          geometry: GeometryConfig | None = None,
          log_fn=None) -> Path:
    """Full PPO training loop; returns the final checkpoint path.

    Writes ``checkpoint.json`` and a training curve ``curve.csv`` with
    columns update,steps,mean_reward,policy_loss,value_loss,entropy,
    clip_frac.  Deterministic in (scenario, cfg, seed).
    """
    cfg = cfg or PPOConfig()
    geometry = geometry or GeometryConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ActorCritic(n_lookahead=geometry.n_lookahead, seed=seed)
    optimizer = nn.Adam(model.params, nn.AdamConfig(lr=cfg.lr))
    rng = np.random.default_rng(seed)
    slots = [_EnvSlot(scenario, cfg, seed * 10_000 + i + 1)
             for i in range(cfg.n_envs)]
    for slot in slots:
        slot.ensure_env()
    bounds = ObsBounds.from_env(slots[0].env)
    meta = {"bounds": bounds.to_dict(), "modes": list(MODE_NAMES),
            "n_lookahead": geometry.n_lookahead,
            "geometry_spacing": geometry.spacing, "seed": seed}

    curve_path = out / "curve.csv"
    ckpt_path = out / "checkpoint.json"
    steps_done = 0
    update = 0
    with curve_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update", "steps", "mean_reward", "policy_loss",
                         "value_loss", "entropy", "clip_frac"])
        while steps_done < cfg.total_steps:
            buffer = _collect_rollout(model, slots, cfg, geometry, bounds, rng)
            steps_done += buffer.size
            compute_gae(buffer, cfg.gamma, cfg.lambda_gae)
            stats = ppo_update(model, optimizer, buffer, cfg, rng)
            update += 1
            rewards = [r for slot in slots for r in slot.finished_rewards]
            for slot in slots:
                slot.finished_rewards.clear()
            mean_reward = float(np.mean(rewards)) if rewards else float("nan")
            writer.writerow([update, steps_done, f"{mean_reward:.6f}",
                             f"{stats['policy_loss']:.6f}",
                             f"{stats['value_loss']:.6f}",
                             f"{stats['entropy']:.6f}",
                             f"{stats['clip_frac']:.6f}"])
            fh.flush()
            if log_fn is not None:
                log_fn(update, steps_done, mean_reward, stats)
            if update % cfg.checkpoint_every == 0:
                nn.save_checkpoint(ckpt_path, model.params, meta=meta,
                                   optimizer=optimizer)
    nn.save_checkpoint(ckpt_path, model.params, meta=meta, optimizer=optimizer)
    return ckpt_path


def _collect_rollout(model: ActorCritic, slots: list[_EnvSlot],
                     cfg: PPOConfig, geometry: GeometryConfig,
                     bounds: ObsBounds,
                     rng: np.random.Generator) -> RolloutBuffer:
    T, N = cfg.rollout_len, len(slots)
    L = geometry.n_lookahead
    buf = RolloutBuffer(
        ego=np.zeros((T, N, EGO_DIM)), opp=np.zeros((T, N, OPP_DIM)),
        track=np.zeros((T, N, TRACK_CHANNELS, L)),
        actions=np.zeros((T, N), dtype=int), log_probs=np.zeros((T, N)),
        values=np.zeros((T, N)), rewards=np.zeros((T, N)),
        dones=np.zeros((T, N)))
    for t in range(T):
        obs = [build_observation(slot.ensure_env(), bounds, geometry)
               for slot in slots]
        ego_b, opp_b, track_b = stack_observations(obs)
        logits, values, _ = model.forward(ego_b, opp_b, track_b)
        actions = nn.categorical_sample(logits, rng)
        logp = nn.categorical_log_prob(logits, actions)
        buf.ego[t], buf.opp[t], buf.track[t] = ego_b, opp_b, track_b
        buf.actions[t], buf.log_probs[t], buf.values[t] = actions, logp, values
        for i, slot in enumerate(slots):
            reward, done, _ = slot.env.step(int(actions[i]))
            slot.episode_reward += reward
            buf.rewards[t, i] = reward
            buf.dones[t, i] = float(done)
            if done:
                slot.finished_rewards.append(slot.episode_reward)
    # bootstrap with the value of the state following the last stored step;
    # finished episodes are masked by their done flag inside GAE
    obs = [build_observation(slot.ensure_env(), bounds, geometry)
           for slot in slots]
    _, boot, _ = model.forward(*stack_observations(obs))
    buf.bootstrap = boot
    return buf


# -- evaluation ---------------------------------------------------------------


class PolicyAgent:
    """Loaded checkpoint exposing greedy and sampling action selection."""

    def __init__(self, checkpoint: str | Path):
        payload = nn.load_checkpoint(checkpoint)
        meta = payload.get("meta", {})
        if "bounds" not in meta or "n_lookahead" not in meta:
            raise CheckpointMismatch("checkpoint lacks normalization bounds")
        if list(meta.get("modes", [])) != list(MODE_NAMES):
            raise CheckpointMismatch("checkpoint built for a different "
                                     "weight-set library")
        self.bounds = ObsBounds.from_dict(meta["bounds"])
        self.geometry = GeometryConfig(
            n_lookahead=int(meta["n_lookahead"]),
            spacing=float(meta["geometry_spacing"]))
        self.model = ActorCritic(n_lookahead=self.geometry.n_lookahead)
        nn.load_checkpoint(checkpoint, self.model.params)

    def act(self, env: se.RaceEnv, greedy: bool = True,
            rng: np.random.Generator | None = None) -> str:
        obs = build_observation(env, self.bounds, self.geometry)
        logits, _, _ = self.model.forward(*stack_observations([obs]))
        if greedy:
            idx = int(np.argmax(logits[0]))
        else:
            idx = int(nn.categorical_sample(logits, rng
                                            or np.random.default_rng(0))[0])
        return MODE_NAMES[idx]

    def policy(self, greedy: bool = True):
        """Adapter for ``simenv.run_scenario``."""
        def _policy(env: se.RaceEnv) -> str:
            return self.act(env, greedy=greedy)
        return _policy


def evaluate(agent: PolicyAgent, track: TrackDefinition,
             scenarios: list[se.ScenarioConfig],
             planner_config: pl.PlannerConfig | None = None,
             ) -> tuple[se.MetricsTable, dict[str, int]]:
    """Greedy evaluation over a scenario batch -> metrics + mode histogram."""
    results = []
    histogram = {m: 0 for m in MODE_NAMES}
    for sc in scenarios:
        env = se.RaceEnv(track, sc, planner_config=planner_config)
        env.reset()
        while not env.done:
            mode = agent.act(env, greedy=True)
            histogram[mode] += 1
            env.step(mode)
        results.append(env.result())
    return se.compute_metrics(results), histogram
