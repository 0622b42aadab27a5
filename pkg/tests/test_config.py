"""Run-configuration parsing, echoing, and report file round-trips."""

import json

import pytest
import yaml

from adaptrace.config import (
    BatchSpec,
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    echo_config,
    load_config,
)
from adaptrace.errors import MissingLogs, ParseError
from adaptrace.report import read_episodes, write_episodes, write_metrics


class TestRunConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        back = config_from_dict(config_to_dict(cfg))
        assert back == cfg

    def test_yaml_round_trip(self, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(config_to_dict(cfg)))
        assert load_config(path) == cfg

    def test_partial_dict_uses_defaults(self):
        cfg = config_from_dict({"track": {"kind": "chicane"}})
        assert cfg.track.kind == "chicane"
        assert cfg.batch.count == RunConfig().batch.count

    def test_unknown_key_rejected(self):
        with pytest.raises(ParseError):
            config_from_dict({"track": {"kind": "oval", "flavor": "spicy"}})

    def test_unknown_weight_mode_rejected(self):
        with pytest.raises(ParseError):
            config_from_dict({"weights": {"WARP": [1, 1, 1, 1, 1]}})

    def test_echo_is_stable(self, tmp_path):
        cfg = RunConfig()
        p1 = echo_config(cfg, tmp_path / "a")
        p2 = echo_config(cfg, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()
        assert load_config(p1) == cfg

    def test_apply_overrides(self):
        cfg = apply_overrides(RunConfig(), out_dir="elsewhere")
        assert cfg.out_dir == "elsewhere"

    def test_batch_scenarios_are_seeded(self):
        spec = BatchSpec(count=5, first_seed=3)
        scenarios = spec.scenarios(1000.0)
        assert [sc.seed for sc in scenarios] == [3, 4, 5, 6, 7]
        assert len({sc.opp_start_s for sc in scenarios}) > 1


class TestReportFiles:
    EPISODES = [
        {"seed": 1, "outcome": "success", "steps": 5, "overtake_times": [9.1],
         "overtakes_completed": 1, "laps_driven": 1.0, "total_reward": 10.0,
         "log": []},
        {"seed": 0, "outcome": "timeout", "steps": 9, "overtake_times": [],
         "overtakes_completed": 0, "laps_driven": 0.8, "total_reward": -1.0,
         "log": []},
    ]

    def test_episodes_round_trip_sorted(self, tmp_path):
        write_episodes(tmp_path, self.EPISODES)
        back = read_episodes(tmp_path)
        assert [e["seed"] for e in back] == [0, 1]
        assert back[1]["overtake_times"] == [9.1]

    def test_read_missing_raises(self, tmp_path):
        with pytest.raises(MissingLogs):
            read_episodes(tmp_path)

    def test_metrics_files(self, tmp_path):
        rows = [{"label": "static:NR", "episodes": 2, "collision_pct": 0.0,
                 "mean_overtake_time_s": 9.1, "overtakes_per_lap": 0.56,
                 "success_pct": 50.0}]
        csv_path, txt_path = write_metrics(tmp_path, rows)
        text = csv_path.read_text()
        assert "static:NR" in text and "collision_pct" in text
        assert "static:NR" in txt_path.read_text()
