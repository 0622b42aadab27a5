"""Sampling-based Frenet trajectory planner.

Per planning cycle: identify the start state on the previously committed
trajectory, generate a grid of jerk-minimal candidates (quartic speed
profile x quintic lateral profile), discard candidates violating the hard
kinodynamic constraints, and return the cheapest survivor under the active
cost-weight set.

All candidates of one cycle are evaluated in a single vectorized batch;
the public single-trajectory operations wrap the same batch kernels so the
two paths cannot diverge.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .collision import rects_overlap
from .errors import (
    DegenerateHorizon,
    HorizonExhausted,
    NoFeasibleTrajectory,
)
from .track import TrackDefinition

# -- configuration types ---------------------------------------------------


@dataclass(frozen=True)
class ConstraintLimits:
    """Hard kinodynamic limits of the candidate filter."""

    kappa_max: float = 0.15
    v_max: float = 30.0
    ax_eng: float = 5.0
    ax_max: float = 10.0
    ay_max: float = 12.0
    p_exponent: float = 2.0

    def __post_init__(self):
        for name in ("kappa_max", "v_max", "ax_eng", "ax_max", "ay_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.p_exponent < 1.0:
            raise ValueError("p_exponent must be >= 1")

    def scaled(self, factor: float) -> "ConstraintLimits":
        """Acceleration limits scaled by ``factor`` (speed/curvature kept)."""
        return replace(self, ax_eng=self.ax_eng * factor,
                       ax_max=self.ax_max * factor,
                       ay_max=self.ay_max * factor)


@dataclass(frozen=True)
class WeightSet:
    """The five cost weights; one set per behavioral mode."""

    w_rl: float
    w_v: float
    w_a: float
    w_pr: float
    w_c: float

    def __post_init__(self):
        ws = (self.w_rl, self.w_v, self.w_a, self.w_pr, self.w_c)
        if any(w < 0 for w in ws):
            raise ValueError("weights must be nonnegative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_rl, self.w_v, self.w_a, self.w_pr, self.w_c])


#: Behavioral-mode weight library: nominal racing, aggressive, close driving.
WEIGHT_LIBRARY: dict[str, WeightSet] = {
    "NR": WeightSet(w_rl=50.0, w_v=10.0, w_a=500.0, w_pr=1e5, w_c=1e8),
    "AG": WeightSet(w_rl=1.0, w_v=10.0, w_a=200.0, w_pr=1e4, w_c=1.0),
    "CD": WeightSet(w_rl=1.0, w_v=1.0, w_a=1.0, w_pr=1.0, w_c=100.0),
}

MODE_NAMES = ("NR", "AG", "CD")


@dataclass(frozen=True)
class PlannerConfig:
    horizon_T: float = 3.0
    replan_dt: float = 0.35
    traj_dt: float = 0.05
    n_lat_samples: int = 15
    n_speed_samples: int = 9
    lat_range: float = 12.0
    # the low end leaves real braking authority: ducking behind a slower
    # car mid-corner needs terminal speeds well under the raceline pace
    speed_range: tuple[float, float] = (0.35, 1.1)
    limits: ConstraintLimits = field(default_factory=ConstraintLimits)
    # cost-term shape parameters
    u_thresh: float = 0.9
    # proximity bubble: large enough that a trailing car starts its move
    # with room to spare, small enough that a committed side-by-side pass
    # on a 16 m wide track can clear it laterally
    d_proximity: float = 7.0
    # inflation absorbs roughly one replan cycle of unpredicted lateral
    # convergence by the opponent
    collision_margin: float = 1.0
    # ego footprint used by the collision cost term
    veh_length: float = 4.5
    veh_width: float = 2.0
    # sampling keeps this clearance between vehicle center and track edge
    sample_margin: float = 1.3

    def __post_init__(self):
        if self.horizon_T < self.replan_dt:
            raise ValueError("horizon_T must cover replan_dt")
        ratio = self.replan_dt / self.traj_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("traj_dt must divide replan_dt")
        if self.n_lat_samples < 1 or self.n_speed_samples < 1:
            raise ValueError("sample counts must be >= 1")

    @property
    def n_points(self) -> int:
        return int(round(self.horizon_T / self.traj_dt)) + 1


# -- planner state / result types -------------------------------------------


@dataclass(frozen=True)
class StartState:
    """Frenet start state; lateral derivatives are time derivatives."""

    s: float
    n: float
    s_dot: float
    s_ddot: float = 0.0
    n_dot: float = 0.0
    n_ddot: float = 0.0

    @property
    def n_prime(self) -> float:
        """dn/ds, defined as 0 at standstill."""
        return self.n_dot / self.s_dot if self.s_dot > 1e-6 else 0.0


@dataclass(frozen=True)
class Verdict:
    feasible: bool
    constraint: str | None = None
    point_index: int | None = None


@dataclass(frozen=True)
class CostBreakdown:
    c_rl: float
    c_v: float
    c_a: float
    c_pr: float
    c_c: float
    total: float

    @staticmethod
    def from_terms(terms: np.ndarray, weights: WeightSet) -> "CostBreakdown":
        total = float(weights.as_array() @ terms)
        return CostBreakdown(*[float(v) for v in terms], total)


@dataclass(frozen=True)
class TrajPoint:
    t: float
    s: float
    s_dot: float
    s_ddot: float
    n: float
    n_prime: float
    v: float
    a_long: float
    a_lat: float
    kappa_path: float
    x: float
    y: float


@dataclass
class CandidateTrajectory:
    """Time-sampled candidate with feasibility verdict and cost breakdown.

    Column arrays are aligned with ``t``; ``points`` offers a row view.
    """

    t: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    s_ddot: np.ndarray
    n: np.ndarray
    n_dot: np.ndarray
    n_ddot: np.ndarray
    v: np.ndarray
    a_long: np.ndarray
    a_lat: np.ndarray
    kappa_path: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    # corridor bounds and raceline profile sampled along the candidate
    n_min: np.ndarray
    n_max: np.ndarray
    n_raceline: np.ndarray
    v_raceline: np.ndarray
    end_state: tuple[float, float]  # (s_dot_end, n_end)
    feasible: Verdict | None = None
    cost: CostBreakdown | None = None

    @property
    def points(self) -> list[TrajPoint]:
        sd = np.where(self.s_dot > 1e-6, self.s_dot, np.inf)
        n_prime = self.n_dot / sd
        return [
            TrajPoint(*vals)
            for vals in zip(self.t, self.s, self.s_dot, self.s_ddot, self.n,
                            n_prime, self.v, self.a_long, self.a_lat,
                            self.kappa_path, self.x, self.y)
        ]

    def state_at(self, t: float) -> StartState:
        """Interpolated Frenet state at time t along this trajectory."""
        if t > self.t[-1] + 1e-9:
            raise HorizonExhausted(
                f"t={t:.3f} beyond trajectory horizon {self.t[-1]:.3f}")

        def itp(col):
            return float(np.interp(t, self.t, col))

        return StartState(s=itp(self.s), n=itp(self.n), s_dot=itp(self.s_dot),
                          s_ddot=itp(self.s_ddot), n_dot=itp(self.n_dot),
                          n_ddot=itp(self.n_ddot))


@dataclass(frozen=True)
class OpponentPrediction:
    """Predicted opponent motion on the candidate time grid."""

    t: np.ndarray
    s: np.ndarray
    n: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    length: float
    width: float


# -- polynomial generation ---------------------------------------------------


def gen_longitudinal(start: StartState, s_dot_end: float, T: float,
                     traj_dt: float = 0.05) -> np.ndarray:
    """Quartic speed-keeping profile: end velocity fixed, end position free."""
    if T < traj_dt:
        raise DegenerateHorizon(f"T={T} below traj_dt={traj_dt}")
    if s_dot_end < 0:
        raise ValueError("terminal speed must be nonnegative")
    return _gen_longitudinal_batch(start, np.array([s_dot_end]), T)[0]


def _gen_longitudinal_batch(start: StartState, s_dot_ends: np.ndarray,
                            T: float) -> np.ndarray:
    a0, a1, a2 = start.s, start.s_dot, start.s_ddot / 2.0
    # [3T^2 4T^3; 6T 12T^2] [a3 a4]^T = [sde - a1 - 2 a2 T; -2 a2]
    r1 = s_dot_ends - a1 - 2.0 * a2 * T
    r2 = np.full_like(s_dot_ends, -2.0 * a2)
    det = 3.0 * T**2 * 12.0 * T**2 - 4.0 * T**3 * 6.0 * T
    a3 = (12.0 * T**2 * r1 - 4.0 * T**3 * r2) / det
    a4 = (-6.0 * T * r1 + 3.0 * T**2 * r2) / det
    out = np.empty((s_dot_ends.size, 5))
    out[:, 0], out[:, 1], out[:, 2] = a0, a1, a2
    out[:, 3], out[:, 4] = a3, a4
    return out


def gen_lateral(start: StartState, n_end: float, T: float,
                traj_dt: float = 0.05) -> np.ndarray:
    """Quintic lateral profile to rest at n_end: n'(T) = n''(T) = 0."""
    if T < traj_dt:
        raise DegenerateHorizon(f"T={T} below traj_dt={traj_dt}")
    return _gen_lateral_batch(start, np.array([n_end]), T)[0]


_QUINTIC_INV_CACHE: dict[float, np.ndarray] = {}


def _quintic_inverse(T: float) -> np.ndarray:
    inv = _QUINTIC_INV_CACHE.get(T)
    if inv is None:
        A = np.array([
            [T**3, T**4, T**5],
            [3 * T**2, 4 * T**3, 5 * T**4],
            [6 * T, 12 * T**2, 20 * T**3],
        ])
        inv = np.linalg.inv(A)
        _QUINTIC_INV_CACHE[T] = inv
    return inv


def _gen_lateral_batch(start: StartState, n_ends: np.ndarray,
                       T: float) -> np.ndarray:
    b0, b1, b2 = start.n, start.n_dot, start.n_ddot / 2.0
    inv = _quintic_inverse(T)
    rhs = np.empty((3, n_ends.size))
    rhs[0] = n_ends - b0 - b1 * T - b2 * T**2
    rhs[1] = -b1 - 2.0 * b2 * T
    rhs[2] = -2.0 * b2
    out = np.empty((n_ends.size, 6))
    out[:, 0], out[:, 1], out[:, 2] = b0, b1, b2
    out[:, 3:] = (inv @ rhs).T
    return out


_TPOW_CACHE: dict[tuple, np.ndarray] = {}


def _t_power_matrix(t: np.ndarray, deg: int, deriv: int) -> np.ndarray:
    """Rows i of t^(i-deriv) * falling factorial, zero below the derivative."""
    key = (t.size, float(t[-1]) if t.size else 0.0, deg, deriv)
    mat = _TPOW_CACHE.get(key)
    if mat is None:
        mat = np.zeros((deg + 1, t.size))
        for i in range(deriv, deg + 1):
            fac = 1.0
            for j in range(deriv):
                fac *= i - j
            mat[i] = fac * t ** (i - deriv)
        _TPOW_CACHE[key] = mat
    return mat


def _poly_eval(coeffs: np.ndarray, t: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Evaluate batched polynomials (K, deg+1) at t (M,), -> (K, M)."""
    return coeffs @ _t_power_matrix(t, coeffs.shape[1] - 1, deriv)


# -- start state -------------------------------------------------------------


def identify_start_state(previous, replan_dt: float,
                         track: TrackDefinition | None = None) -> StartState:
    """Start state for the next cycle.

    Under perfect tracking this is the committed trajectory's state at
    t = replan_dt.  On the first cycle, ``previous`` is a (s, n, v, mu)
    tuple of the raw vehicle pose and ``track`` must be supplied.
    """
    if isinstance(previous, CandidateTrajectory):
        return previous.state_at(replan_dt)
    s, n, v, mu = previous
    if track is None:
        raise ValueError("track required to map a raw vehicle state")
    kappa = float(track.interp("kappa", s))
    denom = max(1.0 - n * kappa, 1e-3)
    return StartState(s=s, n=n, s_dot=v * np.cos(mu) / denom,
                      n_dot=v * np.sin(mu))


# -- assembly ----------------------------------------------------------------


class CandidateBatch:
    """All candidates of one planning cycle as stacked (K, M) arrays."""

    def __init__(self, track: TrackDefinition, config: PlannerConfig,
                 long_coeffs: np.ndarray, lat_coeffs: np.ndarray,
                 end_states: np.ndarray):
        self.track = track
        self.config = config
        self.end_states = end_states  # (K, 2): s_dot_end, n_end
        t = np.arange(config.n_points) * config.traj_dt
        self.t = t

        self.s = _poly_eval(long_coeffs, t)
        self.s_dot = _poly_eval(long_coeffs, t, 1)
        self.s_ddot = _poly_eval(long_coeffs, t, 2)
        self.n = _poly_eval(lat_coeffs, t)
        self.n_dot = _poly_eval(lat_coeffs, t, 1)
        self.n_ddot = _poly_eval(lat_coeffs, t, 2)

        # wrap once, interpolate all channels against the raw tables
        tr = track
        sw = tr._wrap(self.s)
        kappa = np.interp(sw, tr._si, tr._kappai)
        h = 0.25
        kappa_p = (np.interp(tr._wrap(self.s + h), tr._si, tr._kappai)
                   - np.interp(tr._wrap(self.s - h), tr._si, tr._kappai)) \
            / (2.0 * h)
        psi_ref = tr.interp_psi(self.s)

        sd_safe = np.where(np.abs(self.s_dot) > 0.1, self.s_dot, np.inf)
        n_prime = self.n_dot / sd_safe
        n_pprime = (self.n_ddot * self.s_dot - self.n_dot * self.s_ddot) \
            / np.where(np.isinf(sd_safe), np.inf, sd_safe**3)

        one_m_nk = 1.0 - self.n * kappa
        self.singular = np.any(one_m_nk <= 1e-6, axis=1)
        one_m_nk = np.maximum(one_m_nk, 1e-6)

        q = np.hypot(one_m_nk, n_prime)
        dtheta = np.arctan2(n_prime, one_m_nk)
        dtheta_p = (n_pprime * one_m_nk
                    + n_prime * (n_prime * kappa + self.n * kappa_p)) / q**2
        self.kappa_path = (kappa + dtheta_p) / q
        self.v = self.s_dot * q
        self.a_long = np.gradient(self.v, config.traj_dt, axis=1)
        self.a_lat = self.v**2 * self.kappa_path

        self.psi = psi_ref + dtheta
        self.x = np.interp(sw, tr._si, tr._xi) - self.n * np.sin(psi_ref)
        self.y = np.interp(sw, tr._si, tr._yi) + self.n * np.cos(psi_ref)

        self.n_min = np.interp(sw, tr._si, tr._nmini)
        self.n_max = np.interp(sw, tr._si, tr._nmaxi)
        self.n_raceline = np.interp(sw, tr._si, tr._nrli)
        self.v_raceline = np.interp(sw, tr._si, tr._vrli)

    @property
    def size(self) -> int:
        return self.s.shape[0]

    def extract(self, k: int) -> CandidateTrajectory:
        return CandidateTrajectory(
            t=self.t.copy(), s=self.s[k].copy(), s_dot=self.s_dot[k].copy(),
            s_ddot=self.s_ddot[k].copy(), n=self.n[k].copy(),
            n_dot=self.n_dot[k].copy(), n_ddot=self.n_ddot[k].copy(),
            v=self.v[k].copy(), a_long=self.a_long[k].copy(),
            a_lat=self.a_lat[k].copy(), kappa_path=self.kappa_path[k].copy(),
            x=self.x[k].copy(), y=self.y[k].copy(), psi=self.psi[k].copy(),
            n_min=self.n_min[k].copy(), n_max=self.n_max[k].copy(),
            n_raceline=self.n_raceline[k].copy(),
            v_raceline=self.v_raceline[k].copy(),
            end_state=(float(self.end_states[k, 0]),
                       float(self.end_states[k, 1])),
        )


def assemble_trajectory(long_coeffs: np.ndarray, lat_coeffs: np.ndarray,
                        track: TrackDefinition,
                        config: PlannerConfig) -> CandidateTrajectory:
    """Assemble a single candidate from polynomial coefficients.

    A candidate that leaves the nonsingular Frenet band is returned with
    a pre-set infeasible verdict rather than raising.
    """
    sde = float(np.polynomial.polynomial.polyval(
        config.horizon_T, np.polynomial.polynomial.polyder(long_coeffs)))
    n_end = float(np.polynomial.polynomial.polyval(config.horizon_T, lat_coeffs))
    batch = CandidateBatch(track, config, long_coeffs[None, :],
                           lat_coeffs[None, :],
                           np.array([[sde, n_end]]))
    traj = batch.extract(0)
    if batch.singular[0]:
        traj.feasible = Verdict(False, "singular_transform", None)
    return traj


# -- feasibility -------------------------------------------------------------

_CONSTRAINT_ORDER = ("curvature", "speed", "track", "engine", "gg")


def _violation_masks(kappa_path, v, n, n_min, n_max, a_long, a_lat,
                     limits: ConstraintLimits):
    """Pointwise violation masks in constraint order; shapes match inputs."""
    p = limits.p_exponent
    gg = (np.abs(a_long) / limits.ax_max) ** p \
        + (np.abs(a_lat) / limits.ay_max) ** p
    return (
        np.abs(kappa_path) > limits.kappa_max,
        v > limits.v_max,
        (n < n_min) | (n > n_max),
        a_long > limits.ax_eng,
        gg > 1.0,
    )


def _first_violation(masks) -> Verdict:
    """Verdict from pointwise masks: first bad point, constraint order ties."""
    any_bad = np.zeros_like(masks[0], dtype=bool)
    for m in masks:
        any_bad |= m
    if not any_bad.any():
        return Verdict(True)
    idx = int(np.argmax(any_bad))
    for name, m in zip(_CONSTRAINT_ORDER, masks):
        if m[idx]:
            return Verdict(False, name, idx)
    raise AssertionError("unreachable")


def check_feasibility(traj: CandidateTrajectory,
                      limits: ConstraintLimits) -> Verdict:
    """Hard-constraint verdict; a single violating point is disqualifying."""
    masks = _violation_masks(traj.kappa_path, traj.v, traj.n, traj.n_min,
                             traj.n_max, traj.a_long, traj.a_lat, limits)
    verdict = _first_violation(masks)
    traj.feasible = verdict
    return verdict


# -- cost evaluation ----------------------------------------------------------


def _cost_terms_batch(batch: CandidateBatch,
                      opponent: OpponentPrediction | None,
                      limits: ConstraintLimits) -> np.ndarray:
    """Trapezoid-integrated cost terms per candidate, shape (K, 5)."""
    cfg = batch.config
    p = limits.p_exponent
    c_rl = (batch.n - batch.n_raceline) ** 2
    c_v = (batch.v - batch.v_raceline) ** 2
    util = (np.abs(batch.a_long) / limits.ax_max) ** p \
        + (np.abs(batch.a_lat) / limits.ay_max) ** p
    c_a = np.maximum(0.0, util - cfg.u_thresh) ** 2

    if opponent is not None:
        d = np.hypot(batch.x - opponent.x[None, :],
                     batch.y - opponent.y[None, :])
        c_pr = np.maximum(0.0, cfg.d_proximity - d) ** 2
        c_c = np.zeros_like(d)
        # coarse circle gate before the exact rectangle test
        r_ego = 0.5 * np.hypot(cfg.veh_length, cfg.veh_width)
        r_opp = 0.5 * np.hypot(opponent.length, opponent.width)
        gate = d <= r_ego + r_opp + 2.0 * cfg.collision_margin
        if gate.any():
            ki, mi = np.nonzero(gate)
            hit = rects_overlap(
                batch.x[ki, mi], batch.y[ki, mi], batch.psi[ki, mi],
                cfg.veh_length + 2 * cfg.collision_margin,
                cfg.veh_width + 2 * cfg.collision_margin,
                opponent.x[mi], opponent.y[mi], opponent.psi[mi],
                opponent.length + 2 * cfg.collision_margin,
                opponent.width + 2 * cfg.collision_margin)
            c_c[ki, mi] = np.asarray(hit, dtype=float)
    else:
        c_pr = np.zeros_like(c_rl)
        c_c = np.zeros_like(c_rl)

    # trapezoid rule over the time axis
    w = np.full(c_rl.shape[1], cfg.traj_dt)
    w[0] = w[-1] = 0.5 * cfg.traj_dt
    out = np.empty((c_rl.shape[0], 5))
    for j, term in enumerate((c_rl, c_v, c_a, c_pr, c_c)):
        out[:, j] = term @ w
    return out


def evaluate_cost(traj: CandidateTrajectory, weights: WeightSet,
                  track: TrackDefinition,
                  opponent: OpponentPrediction | None,
                  limits: ConstraintLimits,
                  config: PlannerConfig | None = None) -> CostBreakdown:
    """Weighted, trapezoid-integrated cost of a single candidate."""
    config = config or PlannerConfig(limits=limits)
    batch = _batch_from_trajectory(traj, track, config)
    terms = _cost_terms_batch(batch, opponent, limits)[0]
    breakdown = CostBreakdown.from_terms(terms, weights)
    traj.cost = breakdown
    return breakdown


class _TrajView:
    """Adapter presenting one CandidateTrajectory as a size-1 batch."""

    def __init__(self, traj: CandidateTrajectory, config: PlannerConfig):
        self.config = config
        for name in ("t",):
            setattr(self, name, getattr(traj, name))
        for name in ("s", "s_dot", "s_ddot", "n", "n_dot", "n_ddot", "v",
                     "a_long", "a_lat", "kappa_path", "x", "y", "psi",
                     "n_min", "n_max", "n_raceline", "v_raceline"):
            setattr(self, name, getattr(traj, name)[None, :])


def _batch_from_trajectory(traj: CandidateTrajectory, track: TrackDefinition,
                           config: PlannerConfig) -> "_TrajView":
    return _TrajView(traj, config)


# -- opponent prediction -------------------------------------------------------


def predict_opponent(track: TrackDefinition, s: float, n: float, v: float,
                     config: PlannerConfig, length: float = 4.5,
                     width: float = 2.0,
                     decay_tau: float = 60.0) -> OpponentPrediction:
    """Constant-speed progression with lateral decay toward the raceline.

    The decay is deliberately slow relative to the planning horizon: a car
    that is off the raceline right now (typically one holding a defensive
    line) is best modeled as keeping its offset over the next few seconds,
    while the raceline-sweep baseline still carries it through corners.
    """
    t = np.arange(config.n_points) * config.traj_dt
    kappa0 = float(track.interp("kappa", s))
    denom = max(1.0 - n * kappa0, 0.2)
    s_pred = s + (v / denom) * t
    n_rl = track.interp("n_raceline", s_pred)
    n0_rl = float(track.interp("n_raceline", s))
    n_pred = n_rl + (n - n0_rl) * np.exp(-t / decay_tau)
    psi_ref = track.interp_psi(s_pred)
    x = track.interp("x", s_pred) - n_pred * np.sin(psi_ref)
    y = track.interp("y", s_pred) + n_pred * np.cos(psi_ref)
    return OpponentPrediction(t=t, s=s_pred, n=n_pred, x=x, y=y, psi=psi_ref,
                              length=length, width=width)


# -- the planning cycle ---------------------------------------------------------


@dataclass
class PlanDiagnostics:
    """Per-cycle diagnostics; exposes the full scan for tests and reports."""

    end_states: np.ndarray        # (K, 2) s_dot_end, n_end
    feasible_mask: np.ndarray     # (K,) bool
    totals: np.ndarray            # (K,) weighted cost, inf where infeasible
    term_matrix: np.ndarray       # (K, 5) unweighted integrated terms
    selected_index: int
    n_candidates: int
    n_feasible: int


def generate_candidate_batch(start: StartState, track: TrackDefinition,
                             config: PlannerConfig) -> CandidateBatch:
    """End-state grid and batch assembly for one cycle.

    Lateral end states span lat_range intersected with the corridor
    (minus the sampling margin) at both the start and estimated end s;
    terminal speeds span the configured fraction band around the raceline
    speed at the start s, clipped to [0, v_max].
    """
    s_end_est = start.s + max(start.s_dot, 1.0) * config.horizon_T
    lo = max(-config.lat_range / 2.0,
             float(track.interp("n_min", start.s)) + config.sample_margin,
             float(track.interp("n_min", s_end_est)) + config.sample_margin)
    hi = min(config.lat_range / 2.0,
             float(track.interp("n_max", start.s)) - config.sample_margin,
             float(track.interp("n_max", s_end_est)) - config.sample_margin)
    if hi < lo:
        lo = hi = 0.5 * (lo + hi)
    n_ends = np.linspace(lo, hi, config.n_lat_samples)

    v_rl = float(track.interp("v_raceline", start.s))
    sde = np.linspace(config.speed_range[0] * v_rl,
                      config.speed_range[1] * v_rl, config.n_speed_samples)
    sde = np.clip(sde, 0.0, config.limits.v_max)

    # grid: speed-major so candidate index = i_speed * n_lat + i_lat
    sde_grid = np.repeat(sde, n_ends.size)
    n_grid = np.tile(n_ends, sde.size)
    long_c = _gen_longitudinal_batch(start, sde_grid, config.horizon_T)
    lat_c = _gen_lateral_batch(start, n_grid, config.horizon_T)
    end_states = np.stack([sde_grid, n_grid], axis=1)
    return CandidateBatch(track, config, long_c, lat_c, end_states)


def plan(start: StartState, track: TrackDefinition, weights: WeightSet,
         opponent: OpponentPrediction | None, config: PlannerConfig,
         ) -> tuple[CandidateTrajectory, PlanDiagnostics]:
    """One full planning cycle; deterministic in its inputs.

    Among feasible candidates the minimum weighted cost wins; exact ties
    break by (lower collision term, lower |n_end - n_raceline|, lower
    candidate index).
    """
    batch = generate_candidate_batch(start, track, config)
    limits = config.limits

    masks = _violation_masks(batch.kappa_path, batch.v, batch.n, batch.n_min,
                             batch.n_max, batch.a_long, batch.a_lat, limits)
    violated = np.zeros(batch.size, dtype=bool)
    for m in masks:
        violated |= m.any(axis=1)
    # generation-stage filters: reverse motion and Frenet-band exits are
    # defects of the candidate itself, not Eq-style constraint verdicts
    reverse = (batch.s_dot < -1e-9).any(axis=1)
    ok = ~(violated | batch.singular | reverse)

    terms = _cost_terms_batch(batch, opponent, limits)
    totals = terms @ weights.as_array()
    totals_masked = np.where(ok, totals, np.inf)

    n_feasible = int(ok.sum())
    if n_feasible == 0:
        raise NoFeasibleTrajectory(
            f"all {batch.size} candidates rejected at s={start.s:.1f}")

    n_rl_end = track.interp("n_raceline", batch.s[:, -1])
    order_keys = list(zip(totals_masked, terms[:, 4],
                          np.abs(batch.end_states[:, 1] - n_rl_end),
                          range(batch.size)))
    best = min(range(batch.size), key=lambda k: order_keys[k])

    traj = batch.extract(best)
    traj.feasible = Verdict(True)
    traj.cost = CostBreakdown.from_terms(terms[best], weights)
    diag = PlanDiagnostics(end_states=batch.end_states,
                           feasible_mask=ok, totals=totals_masked,
                           term_matrix=terms, selected_index=best,
                           n_candidates=batch.size, n_feasible=n_feasible)
    return traj, diag
