"""Arc-length track model: Frenet transforms, geometry queries, synthesis.

A track is a reference line sampled at (near-)uniform arc length.  Each
sample carries the Cartesian pose of the reference point, its curvature,
the signed lateral corridor bounds, and the raceline offset/speed profile.
All reference quantities are interpolated linearly in s; heading is stored
unwrapped so interpolation never crosses a 2*pi jump.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InfeasibleGeometry,
    InvariantViolation,
    OffTrackProjection,
    ParseError,
    SingularTransform,
)

CSV_HEADER = "s,x,y,psi,kappa,n_min,n_max,n_raceline,v_raceline"

# Track samples must be at least this dense for linear interpolation.
MAX_SPACING = 5.0


@dataclass(frozen=True)
class ReferenceSample:
    """One arc-length sample of the reference line."""

    s: float
    x: float
    y: float
    psi_ref: float
    kappa_ref: float
    n_min: float
    n_max: float
    n_raceline: float
    v_raceline: float


@dataclass(frozen=True)
class FrenetPose:
    """Curvilinear pose: progress s, lateral offset n, relative heading mu."""

    s: float
    n: float
    mu: float = 0.0


@dataclass(frozen=True)
class CartesianPose:
    x: float
    y: float
    psi: float


@dataclass(frozen=True)
class GeometryConfig:
    """Lookahead grid for geometry feature queries."""

    n_lookahead: int = 20
    spacing: float = 10.0


class TrackDefinition:
    """Immutable arc-length-sampled track.

    Construction validates all invariants; instances are safe to share
    across threads.  Column arrays are row-aligned with ``s``.
    """

    def __init__(
        self,
        s: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        psi: np.ndarray,
        kappa: np.ndarray,
        n_min: np.ndarray,
        n_max: np.ndarray,
        n_raceline: np.ndarray,
        v_raceline: np.ndarray,
        closed: bool,
    ):
        self.s = np.asarray(s, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.psi = np.unwrap(np.asarray(psi, dtype=float))
        self.kappa = np.asarray(kappa, dtype=float)
        self.n_min = np.asarray(n_min, dtype=float)
        self.n_max = np.asarray(n_max, dtype=float)
        self.n_raceline = np.asarray(n_raceline, dtype=float)
        self.v_raceline = np.asarray(v_raceline, dtype=float)
        self.closed = bool(closed)

        self._validate()

        if self.closed:
            spacing = self.s[-1] - self.s[-2]
            self.lap_length = float(self.s[-1] + spacing)
        else:
            self.lap_length = float(self.s[-1])

        self._build_interp_tables()
        for a in (self.s, self.x, self.y, self.psi, self.kappa, self.n_min,
                  self.n_max, self.n_raceline, self.v_raceline):
            a.setflags(write=False)

    # -- construction / validation -------------------------------------

    def _validate(self) -> None:
        n = self.s.size
        if n < 3:
            raise InvariantViolation("track needs at least 3 samples")
        cols = (self.x, self.y, self.psi, self.kappa, self.n_min,
                self.n_max, self.n_raceline, self.v_raceline)
        if any(c.size != n for c in cols):
            raise InvariantViolation("column length mismatch")
        for c in cols + (self.s,):
            bad = np.flatnonzero(~np.isfinite(c))
            if bad.size:
                raise InvariantViolation("non-finite value", int(bad[0]))
        if self.s[0] != 0.0:
            raise InvariantViolation("s does not start at 0", 0)
        ds = np.diff(self.s)
        bad = np.flatnonzero(ds <= 0)
        if bad.size:
            raise InvariantViolation("s not increasing", int(bad[0]) + 1)
        bad = np.flatnonzero(ds > MAX_SPACING + 1e-9)
        if bad.size:
            raise InvariantViolation("sample spacing exceeds 5 m", int(bad[0]) + 1)
        # Nonsingular Frenet band: 1 - n*kappa > 0 for the worst-case n of
        # the corridor at every sample.
        worst_n = np.where(self.kappa >= 0.0, self.n_max, self.n_min)
        bad = np.flatnonzero(1.0 - worst_n * self.kappa <= 0.0)
        if bad.size:
            raise InvariantViolation("Frenet singularity", int(bad[0]))
        bad = np.flatnonzero(~((self.n_min < 0.0) & (self.n_max > 0.0)))
        if bad.size:
            raise InvariantViolation("lateral bounds must straddle 0", int(bad[0]))
        bad = np.flatnonzero(
            ~((self.n_min < self.n_raceline) & (self.n_raceline < self.n_max)))
        if bad.size:
            raise InvariantViolation("raceline outside corridor", int(bad[0]))
        bad = np.flatnonzero(self.v_raceline <= 0.0)
        if bad.size:
            raise InvariantViolation("non-positive raceline speed", int(bad[0]))
        dpsi = np.diff(np.unwrap(self.psi))
        bad = np.flatnonzero(np.abs(dpsi) > np.pi)
        if bad.size:
            raise InvariantViolation("heading jump across samples", int(bad[0]) + 1)

    def _build_interp_tables(self) -> None:
        """Interpolation knots; closed tracks get a virtual knot at s=L."""
        if self.closed:
            close_dpsi = _wrap_to_pi(self.psi[0] - self.psi[-1])
            self._si = np.append(self.s, self.lap_length)
            self._xi = np.append(self.x, self.x[0])
            self._yi = np.append(self.y, self.y[0])
            self._psii = np.append(self.psi, self.psi[-1] + close_dpsi)
            self._kappai = np.append(self.kappa, self.kappa[0])
            self._nmini = np.append(self.n_min, self.n_min[0])
            self._nmaxi = np.append(self.n_max, self.n_max[0])
            self._nrli = np.append(self.n_raceline, self.n_raceline[0])
            self._vrli = np.append(self.v_raceline, self.v_raceline[0])
            self._turn_per_lap = float(self._psii[-1] - self._psii[0])
        else:
            self._si = self.s
            self._xi = self.x
            self._yi = self.y
            self._psii = self.psi
            self._kappai = self.kappa
            self._nmini = self.n_min
            self._nmaxi = self.n_max
            self._nrli = self.n_raceline
            self._vrli = self.v_raceline
            self._turn_per_lap = 0.0

    @property
    def samples(self) -> list[ReferenceSample]:
        return [
            ReferenceSample(*vals)
            for vals in zip(self.s, self.x, self.y, self.psi, self.kappa,
                            self.n_min, self.n_max, self.n_raceline,
                            self.v_raceline)
        ]

    # -- interpolated channel access ------------------------------------

    def _wrap(self, s):
        if self.closed:
            return np.mod(s, self.lap_length)
        return np.clip(s, 0.0, self.lap_length)

    def interp(self, channel: str, s):
        """Linear interpolation of a reference channel at (raw) s."""
        table = {
            "x": self._xi, "y": self._yi, "kappa": self._kappai,
            "n_min": self._nmini, "n_max": self._nmaxi,
            "n_raceline": self._nrli, "v_raceline": self._vrli,
        }[channel]
        return np.interp(self._wrap(s), self._si, table)

    def interp_psi(self, s):
        """Unwrapped heading at raw s; accumulates full turns across laps."""
        s = np.asarray(s, dtype=float)
        if self.closed:
            laps = np.floor(s / self.lap_length)
            frac = s - laps * self.lap_length
            return np.interp(frac, self._si, self._psii) + laps * self._turn_per_lap
        return np.interp(np.clip(s, 0.0, self.lap_length), self._si, self._psii)

    def kappa_prime(self, s, h: float = 0.25):
        """d(kappa)/ds by central difference of the interpolated channel."""
        return (self.interp("kappa", np.asarray(s) + h)
                - self.interp("kappa", np.asarray(s) - h)) / (2.0 * h)

    def width(self, s):
        return self.interp("n_max", s) - self.interp("n_min", s)


def _wrap_to_pi(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


# -- I/O -----------------------------------------------------------------


def load_track(path) -> TrackDefinition:
    """Load and validate a track CSV.

    Header must match ``CSV_HEADER``; comment lines start with ``#``.  A
    ``# closed=<0|1>`` comment sets the closed flag explicitly; otherwise
    closure is inferred from endpoint proximity.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return _parse_track(text)


def _parse_track(text: str) -> TrackDefinition:
    closed_flag = None
    rows = []
    header_seen = False
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            meta = line.lstrip("#").strip()
            if meta.startswith("closed="):
                closed_flag = meta.split("=", 1)[1] in ("1", "true", "True")
            continue
        if not header_seen:
            if line.replace(" ", "") != CSV_HEADER:
                raise ParseError(f"bad header at line {lineno}: {line!r}")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise ParseError(f"expected 9 fields at line {lineno}: {line!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"non-numeric field at line {lineno}: {exc}") from exc
    if not header_seen:
        raise ParseError("missing header")
    if len(rows) < 3:
        raise ParseError("fewer than 3 data rows")
    arr = np.asarray(rows, dtype=float)
    s, x, y, psi, kappa, n_min, n_max, n_rl, v_rl = arr.T
    if closed_flag is None:
        spacing = np.median(np.diff(s)) if s.size > 1 else MAX_SPACING
        gap = float(np.hypot(x[-1] - x[0], y[-1] - y[0]))
        closed_flag = gap < 1.5 * spacing
    return TrackDefinition(s, x, y, psi, kappa, n_min, n_max, n_rl, v_rl,
                           closed=closed_flag)


def save_track(track: TrackDefinition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# closed={1 if track.closed else 0}\n")
        fh.write(CSV_HEADER + "\n")
        for row in zip(track.s, track.x, track.y, track.psi, track.kappa,
                       track.n_min, track.n_max, track.n_raceline,
                       track.v_raceline):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# -- synthetic tracks ------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Knobs for synthetic track generation.

    Raceline speeds are derived from a lateral-acceleration budget with a
    forward/backward pass limiting longitudinal acceleration, so the
    profile is drivable under the default planner limits.
    """

    # wide enough for two cars plus the proximity bubble, so a pass does
    # not require leaving the bubble through the track boundary
    width: float = 16.0
    spacing: float = 3.0
    # oval
    straight: float = 200.0
    radius: float = 50.0
    # chicane / random_loop
    base_radius: float = 120.0
    wiggle: float = 0.18
    harmonics: int = 5
    # raceline profile budget
    # kept below the planner's ConstraintLimits (30 m/s, ay_max 12) so that
    # driving the raceline at v_raceline leaves feasibility headroom
    v_max: float = 29.0
    ay_budget: float = 11.5
    # gentler than the planner's engine/brake capability: jerk-minimal
    # trajectories build deceleration gradually, so the speed profile must
    # start braking earlier than a bang-bang profile would
    ax_accel: float = 3.5
    ax_decel: float = 4.0
    raceline_gain: float = 0.65
    boundary_margin: float = 1.0


def synth_track(kind: str, params: SynthParams | None = None,
                seed: int = 0) -> TrackDefinition:
    """Generate a closed synthetic track of the given kind.

    Deterministic in (kind, params, seed); the result always passes the
    full ``load_track`` validation suite.
    """
    params = params or SynthParams()
    if params.radius <= params.width / 2.0 + 0.5:
        raise InfeasibleGeometry("corner radius must exceed half width")
    if params.spacing > MAX_SPACING:
        raise InfeasibleGeometry("spacing exceeds interpolation limit")

    if kind == "oval":
        s, x, y, psi, kappa = _oval_centerline(params)
    elif kind == "chicane":
        s, x, y, psi, kappa = _loop_centerline(params, seed, chicane=True)
    elif kind == "random_loop":
        s, x, y, psi, kappa = _loop_centerline(params, seed, chicane=False)
    else:
        raise ValueError(f"unknown track kind {kind!r}")

    half = params.width / 2.0
    if np.max(np.abs(kappa)) * half >= 0.95:
        raise InfeasibleGeometry("corridor touches the Frenet singularity")
    n_min = np.full_like(s, -half)
    n_max = np.full_like(s, half)
    n_rl = _raceline_offset(s, kappa, half, params)
    v_rl = _raceline_speed(s, kappa, n_rl, params)
    return TrackDefinition(s, x, y, psi, kappa, n_min, n_max, n_rl, v_rl,
                           closed=True)


def _oval_centerline(p: SynthParams):
    """Stadium shape with linear curvature ramps into and out of each turn.

    Pure arc/straight junctions have a curvature step, which a planner
    sees as an instantaneous lateral-acceleration jump; the ramps keep
    kappa continuous.  Each turn integrates to exactly pi of heading
    (trapezoid area kappa_max*(L_flat + L_ramp)), so the loop closes by
    symmetry.
    """
    L, R = p.straight, p.radius
    k_max = 1.0 / R
    l_ramp = min(25.0, 0.4 * np.pi * R)
    l_flat = np.pi * R - l_ramp
    l_turn = l_flat + 2.0 * l_ramp
    lap = 2.0 * L + 2.0 * l_turn

    fine = 0.25
    m = int(round(lap / fine))
    s_f = np.arange(m) * (lap / m)
    kappa_f = np.zeros(m)
    for turn_start in (L, 2.0 * L + l_turn):
        u = s_f - turn_start
        kappa_f += k_max * np.clip(
            np.minimum(u / l_ramp, (l_turn - u) / l_ramp), 0.0, 1.0)

    psi_f = np.concatenate(([0.0], np.cumsum(0.5 * (kappa_f[1:] + kappa_f[:-1])
                                             * np.diff(s_f))))
    x_f = np.concatenate(([0.0], np.cumsum(0.5 * (np.cos(psi_f[1:]) + np.cos(psi_f[:-1]))
                                           * np.diff(s_f))))
    y_f = np.concatenate(([0.0], np.cumsum(0.5 * (np.sin(psi_f[1:]) + np.sin(psi_f[:-1]))
                                           * np.diff(s_f))))

    n = int(round(lap / p.spacing))
    s = np.arange(n) * (lap / n)
    return (s, np.interp(s, s_f, x_f), np.interp(s, s_f, y_f),
            np.interp(s, s_f, psi_f), np.interp(s, s_f, kappa_f))


def _loop_centerline(p: SynthParams, seed: int, chicane: bool):
    """Closed loop from a perturbed-radius polar curve, resampled in s."""
    rng = np.random.default_rng(seed)
    theta = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
    r = np.full_like(theta, p.base_radius)
    if chicane:
        # Fixed harmonic pattern: alternating left/right kinks.
        for k, a in ((3, 0.10), (5, 0.06), (7, 0.035)):
            r += p.base_radius * a * np.cos(k * theta + 0.7 * k)
    else:
        for k in range(2, 2 + p.harmonics):
            amp = p.wiggle / k * p.base_radius
            phase = rng.uniform(0.0, 2.0 * np.pi)
            r += amp * np.cos(k * theta + phase)
    x = r * np.cos(theta)
    y = r * np.sin(theta)
    dx = np.gradient(x, theta, edge_order=2)
    dy = np.gradient(y, theta, edge_order=2)
    # periodic gradients: recompute with wrap padding for clean closure
    xp = np.concatenate([x[-8:], x, x[:8]])
    yp = np.concatenate([y[-8:], y, y[:8]])
    tp = np.concatenate([theta[-8:] - 2 * np.pi, theta, theta[:8] + 2 * np.pi])
    dx = np.gradient(xp, tp)[8:-8]
    dy = np.gradient(yp, tp)[8:-8]
    ddx = np.gradient(np.gradient(xp, tp), tp)[8:-8]
    ddy = np.gradient(np.gradient(yp, tp), tp)[8:-8]
    speed = np.hypot(dx, dy)
    kappa = (dx * ddy - dy * ddx) / speed**3
    s_dense = np.concatenate([[0.0], np.cumsum(
        0.5 * (speed[1:] + speed[:-1]) * np.diff(theta))])
    lap = s_dense[-1] + speed[-1] * (theta[1] - theta[0])
    n = int(round(lap / p.spacing))
    ds = lap / n
    s = np.arange(n) * ds
    x_s = np.interp(s, s_dense, x)
    y_s = np.interp(s, s_dense, y)
    psi_dense = np.unwrap(np.arctan2(dy, dx))
    psi_s = np.interp(s, s_dense, psi_dense)
    kappa_s = np.interp(s, s_dense, kappa)
    return s, x_s, y_s, psi_s, kappa_s


def _circular_smooth(a: np.ndarray, sigma_samples: float) -> np.ndarray:
    if sigma_samples <= 0:
        return a.copy()
    half = int(np.ceil(3 * sigma_samples))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma_samples) ** 2)
    k /= k.sum()
    pad = np.concatenate([a[-half:], a, a[:half]])
    return np.convolve(pad, k, mode="same")[half:-half]


def _raceline_offset(s, kappa, half, p: SynthParams):
    """Curvature-proportional out-in-out heuristic.

    Difference of two smoothing scales: the narrow scale pulls to the
    inside at the apex, the wide scale pushes to the outside on entry
    and exit where the corner itself has ended.
    """
    ds = s[1] - s[0]
    narrow = _circular_smooth(kappa, 15.0 / ds)
    wide = _circular_smooth(kappa, 60.0 / ds)
    shape = narrow - 0.55 * wide
    peak = np.max(np.abs(shape))
    lim = p.raceline_gain * (half - p.boundary_margin)
    if peak < 1e-12:
        return np.zeros_like(s)
    return np.clip(shape / peak * lim,
                   -(half - p.boundary_margin), half - p.boundary_margin)


def _raceline_speed(s, kappa, n_rl, p: SynthParams):
    """Lateral-budget speed with accel/decel-limited forward/backward pass.

    The sweeps scale the available longitudinal acceleration by the share
    of the lateral budget already spent (friction-circle coupling), so a
    vehicle tracking the profile never needs combined accelerations beyond
    the budget.
    """
    kappa_path = kappa / np.maximum(1.0 - n_rl * kappa, 0.1)
    v = np.minimum(p.v_max, np.sqrt(p.ay_budget / np.maximum(np.abs(kappa_path), 1e-6)))
    ds = np.diff(s, append=s[-1] + (s[1] - s[0]))

    def ax_avail(limit, i):
        lat_share = (v[i] ** 2 * abs(kappa_path[i])) / p.ay_budget
        return limit * math.sqrt(max(0.0, 1.0 - min(1.0, lat_share) ** 2))

    # two wrap-around sweeps each way so limits propagate across the lap line
    for _ in range(2):
        for i in range(len(v) - 1, -1, -1):  # backward: decel limit
            j = (i + 1) % len(v)
            v[i] = min(v[i], np.sqrt(v[j] ** 2 + 2.0 * ax_avail(p.ax_decel, j) * ds[i]))
        for i in range(len(v)):  # forward: accel limit
            j = (i - 1) % len(v)
            v[i] = min(v[i], np.sqrt(v[j] ** 2 + 2.0 * ax_avail(p.ax_accel, j) * ds[j]))
    return np.maximum(v, 1.0)


# -- Frenet transforms -----------------------------------------------------


def frenet_to_cartesian(track: TrackDefinition, s, n):
    """Map Frenet (s, n) to Cartesian pose of the reference-offset point.

    Scalar inputs give a CartesianPose; array inputs give (x, y, psi)
    arrays, where psi is the reference heading at s.
    """
    s_arr = np.asarray(s, dtype=float)
    n_arr = np.asarray(n, dtype=float)
    kap = track.interp("kappa", s_arr)
    if np.any(1.0 - n_arr * kap <= 0.0):
        raise SingularTransform("1 - n*kappa <= 0")
    psi = track.interp_psi(s_arr)
    x = track.interp("x", s_arr) - n_arr * np.sin(psi)
    y = track.interp("y", s_arr) + n_arr * np.cos(psi)
    if np.isscalar(s) or (s_arr.ndim == 0 and n_arr.ndim == 0):
        return CartesianPose(float(x), float(y), float(_wrap_to_pi(psi)))
    return x, y, psi


def cartesian_to_frenet(track: TrackDefinition, x: float, y: float,
                        psi: float | None = None,
                        s_hint: float | None = None) -> FrenetPose:
    """Project a Cartesian point onto the reference line.

    The perpendicular foot is found by a bracketed root solve of the
    tangential residual around the nearest sample (local window when
    ``s_hint`` is given).  Raises OffTrackProjection when the point is
    farther than twice the local track width from the reference line.
    """
    q = np.array([x, y])
    si, xi, yi = track._si, track._xi, track._yi

    if s_hint is not None:
        h = track._wrap(s_hint)
        window = 40.0
        lo, hi = h - window, h + window
        if track.closed:
            rel = _wrap_to_center(si, h, track.lap_length)
            mask = np.abs(rel) <= window
        else:
            mask = (si >= lo) & (si <= hi)
        idxs = np.flatnonzero(mask)
        if idxs.size == 0:
            idxs = np.arange(si.size)
    else:
        idxs = np.arange(si.size)

    d2 = (xi[idxs] - x) ** 2 + (yi[idxs] - y) ** 2
    best = idxs[int(np.argmin(d2))]

    s_star = _refine_projection(track, q, best)
    n = _offset_at(track, q, s_star)
    mu = 0.0 if psi is None else float(_wrap_to_pi(psi - track.interp_psi(s_star)))

    width = float(track.width(s_star))
    if abs(n) > 2.0 * width:
        raise OffTrackProjection(
            f"|n|={abs(n):.1f} m exceeds 2x track width {width:.1f} m")
    return FrenetPose(float(track._wrap(s_star)), float(n), float(mu))


def _wrap_to_center(s, center, lap):
    return (s - center + lap / 2.0) % lap - lap / 2.0


def _tangential_residual(track: TrackDefinition, q, s):
    psi = track.interp_psi(s)
    dx = q[0] - track.interp("x", s)
    dy = q[1] - track.interp("y", s)
    return dx * np.cos(psi) + dy * np.sin(psi)


def _refine_projection(track: TrackDefinition, q, knot_idx: int) -> float:
    """Root of the tangential residual near knot ``knot_idx``."""
    si = track._si
    lap = track.lap_length
    s0 = si[knot_idx]
    step = float(np.median(np.diff(si)))
    cand_s = s0 + step * np.arange(-2, 3)
    if not track.closed:
        cand_s = np.clip(cand_s, 0.0, lap)

    f = np.array([_tangential_residual(track, q, s) for s in cand_s])
    # exact hit on a knot
    for s_k, f_k in zip(cand_s, f):
        if abs(f_k) < 1e-12:
            return float(s_k)
    best_s, best_d2 = None, np.inf
    for i in range(len(cand_s) - 1):
        if cand_s[i + 1] <= cand_s[i]:
            continue
        if f[i] == 0.0 or f[i] * f[i + 1] < 0.0:
            s_r = _brent(lambda s: _tangential_residual(track, q, s),
                         cand_s[i], cand_s[i + 1])
            px = track.interp("x", s_r)
            py = track.interp("y", s_r)
            d2 = (q[0] - px) ** 2 + (q[1] - py) ** 2
            if d2 < best_d2:
                best_s, best_d2 = s_r, d2
    if best_s is not None:
        return float(best_s)
    # no perpendicular foot in the window: nearest endpoint of the window
    d2 = [(q[0] - track.interp("x", s)) ** 2 + (q[1] - track.interp("y", s)) ** 2
          for s in cand_s]
    return float(cand_s[int(np.argmin(d2))])


def _brent(f, a, b, tol=1e-10, maxiter=80):
    """Bisection-safeguarded secant root finder on a sign-changing bracket."""
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    for _ in range(maxiter):
        if abs(fb - fa) > 1e-300:
            m = b - fb * (b - a) / (fb - fa)
        else:
            m = 0.5 * (a + b)
        if not (min(a, b) < m < max(a, b)):
            m = 0.5 * (a + b)
        fm = f(m)
        if abs(fm) < 1e-13 or abs(b - a) < tol:
            return m
        if fa * fm < 0.0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _offset_at(track: TrackDefinition, q, s):
    psi = float(track.interp_psi(s))
    dx = q[0] - float(track.interp("x", s))
    dy = q[1] - float(track.interp("y", s))
    return -dx * np.sin(psi) + dy * np.cos(psi)


# -- geometry features ------------------------------------------------------


def query_geometry(track: TrackDefinition, s: float,
                   config: GeometryConfig | None = None) -> np.ndarray:
    """Lookahead feature matrix, channels x n_lookahead.

    Channel order: kappa, delta_psi (heading relative to heading at s,
    unwrapped), n_min, n_max, n_raceline, v_raceline.  Lookahead wraps on
    closed tracks.
    """
    cfg = config or GeometryConfig()
    grid = s + cfg.spacing * np.arange(cfg.n_lookahead)
    psi0 = track.interp_psi(s)
    out = np.vstack([
        track.interp("kappa", grid),
        track.interp_psi(grid) - psi0,
        track.interp("n_min", grid),
        track.interp("n_max", grid),
        track.interp("n_raceline", grid),
        track.interp("v_raceline", grid),
    ])
    return out


GEOMETRY_CHANNELS = ("kappa", "delta_psi", "n_min", "n_max",
                     "n_raceline", "v_raceline")


def wrap_progress(track: TrackDefinition, s_raw: float) -> float:
    """s_raw folded into [0, lap_length); lap counting is the caller's job."""
    return float(np.mod(s_raw, track.lap_length))
