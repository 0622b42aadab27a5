"""Synthetic track construction and Frenet transform tests."""

import numpy as np
import pytest

from adaptrace.errors import InfeasibleGeometry, OffTrackProjection, ParseError
from adaptrace.track import (
    GeometryConfig,
    SynthParams,
    cartesian_to_frenet,
    frenet_to_cartesian,
    load_track,
    query_geometry,
    save_track,
    synth_track,
    wrap_progress,
)


@pytest.fixture(scope="module")
def oval():
    return synth_track("oval", seed=0)


@pytest.fixture(scope="module")
def chicane():
    return synth_track("chicane", seed=0)


class TestSynth:
    def test_closed_loop_geometry(self, oval):
        """Last sample sits within one spacing step of the start."""
        p = SynthParams()
        assert oval.closed
        gap = np.hypot(oval.x[-1] - oval.x[0], oval.y[-1] - oval.y[0])
        assert gap < 1.5 * p.spacing

    def test_arc_length_consistency(self, oval):
        """s must be the cumulative chord length of the samples."""
        chords = np.hypot(np.diff(oval.x), np.diff(oval.y))
        np.testing.assert_allclose(np.diff(oval.s), chords, rtol=5e-3)

    def test_raceline_inside_bounds(self, chicane):
        assert np.all(chicane.n_raceline <= chicane.n_max + 1e-9)
        assert np.all(chicane.n_raceline >= chicane.n_min - 1e-9)

    def test_speed_profile_positive_and_bounded(self, chicane):
        p = SynthParams()
        assert np.all(chicane.v_raceline > 0)
        assert np.all(chicane.v_raceline <= p.v_max + 1e-9)

    def test_speed_profile_respects_lateral_budget(self, oval):
        """v² · κ at the raceline stays within the commissioning budget."""
        p = SynthParams()
        a_lat = oval.v_raceline**2 * np.abs(oval.kappa)
        assert np.max(a_lat) <= p.ay_budget * 1.05

    def test_random_loop_seed_determinism(self):
        a = synth_track("random_loop", seed=3)
        b = synth_track("random_loop", seed=3)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.v_raceline, b.v_raceline)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            synth_track("mobius", seed=0)

    def test_degenerate_radius_rejected(self):
        with pytest.raises(InfeasibleGeometry):
            synth_track("oval", SynthParams(radius=5.0, width=16.0))


class TestTransforms:
    @pytest.mark.parametrize("kind", ["oval", "chicane"])
    def test_round_trip(self, kind):
        track = synth_track(kind, seed=0)
        rng = np.random.default_rng(42)
        n_pts = 2000
        s = rng.uniform(0.0, track.lap_length, n_pts)
        n = rng.uniform(track.interp("n_min", s) + 0.1,
                        track.interp("n_max", s) - 0.1)
        x, y, _ = frenet_to_cartesian(track, s, n)
        for i in range(n_pts):
            pose = cartesian_to_frenet(track, x[i], y[i], s_hint=s[i])
            ds = pose.s - s[i]
            ds = min(abs(ds), track.lap_length - abs(ds))
            assert abs(pose.n - n[i]) < 1e-6 and ds < 1e-6

    def test_scalar_pose_offset_is_normal(self, oval):
        pose = frenet_to_cartesian(oval, 10.0, 2.0)
        base = frenet_to_cartesian(oval, 10.0, 0.0)
        d = np.hypot(pose.x - base.x, pose.y - base.y)
        assert d == pytest.approx(2.0, abs=1e-9)

    def test_projection_tolerates_stale_hint(self, oval):
        s, n = np.array([500.0]), np.array([1.0])
        x, y, _ = frenet_to_cartesian(oval, s, n)
        pose = cartesian_to_frenet(oval, float(x[0]), float(y[0]), s_hint=512.0)
        ds = abs(pose.s - 500.0)
        assert min(ds, oval.lap_length - ds) < 1e-6

    def test_far_off_track_raises(self, oval):
        base = frenet_to_cartesian(oval, 100.0, 0.0)
        with pytest.raises(OffTrackProjection):
            cartesian_to_frenet(oval, base.x + 500.0, base.y + 500.0,
                                s_hint=100.0)

    def test_wrap_progress(self, oval):
        L = oval.lap_length
        assert wrap_progress(oval, L + 5.0) == pytest.approx(5.0)
        assert 0.0 <= wrap_progress(oval, -3.0) < L
        assert wrap_progress(oval, -3.0) == pytest.approx(L - 3.0)


class TestGeometryQuery:
    def test_shape_and_channels(self, oval):
        cfg = GeometryConfig()
        g = query_geometry(oval, 0.0, cfg)
        assert g.shape == (6, cfg.n_lookahead)

    def test_lookahead_wraps_the_lap(self, oval):
        """Shifting the query by one spacing shifts the columns by one.

        delta_psi (channel 1) is referenced to the query point, so only the
        absolute channels are compared.
        """
        cfg = GeometryConfig(n_lookahead=20, spacing=10.0)
        s0 = oval.lap_length - 5.0
        g_end = query_geometry(oval, s0, cfg)
        g_next = query_geometry(oval, wrap_progress(oval, s0 + cfg.spacing), cfg)
        for ch in (0, 2, 3, 4, 5):
            np.testing.assert_allclose(g_end[ch, 1:], g_next[ch, :-1], atol=1e-9)

    def test_channel_values_match_interp(self, chicane):
        cfg = GeometryConfig(n_lookahead=4, spacing=25.0)
        s0 = 100.0
        g = query_geometry(chicane, s0, cfg)
        s_pts = s0 + np.arange(4) * 25.0
        np.testing.assert_allclose(g[0], chicane.interp("kappa", s_pts), atol=1e-12)
        np.testing.assert_allclose(g[4], chicane.interp("n_raceline", s_pts), atol=1e-12)


class TestSerialization:
    def test_save_load_round_trip(self, oval, tmp_path):
        path = tmp_path / "oval.csv"
        save_track(oval, path)
        back = load_track(path)
        np.testing.assert_array_equal(back.x, oval.x)
        np.testing.assert_array_equal(back.kappa, oval.kappa)
        assert back.lap_length == oval.lap_length
        assert back.closed == oval.closed

    def test_load_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("s,x,y\n1,2,3\n")
        with pytest.raises(ParseError):
            load_track(path)

    def test_load_rejects_non_numeric(self, oval, tmp_path):
        path = tmp_path / "t.csv"
        save_track(oval, path)
        lines = path.read_text().splitlines()
        lines[5] = lines[5].replace(lines[5].split(",")[1], "banana", 1)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError):
            load_track(path)

    def test_load_rejects_short_file(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("s,x,y,psi,kappa,n_min,n_max,n_raceline,v_raceline\n")
        with pytest.raises(ParseError):
            load_track(path)
