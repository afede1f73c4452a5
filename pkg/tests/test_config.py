import json

import pytest

from config.settings import Thresholds, default_threads, load_settings
from config.state import load_preset, load_state, save_state, validate_preset
from core.errors import InvalidPreset


class TestThresholds:
    def test_defaults(self):
        t = Thresholds()
        assert (t.quantile, t.grad_threshold, t.tau_d) == (0.9, 0.05, 0.2)
        assert (t.tau_g, t.tau_c, t.tau_num, t.lam) == (0.01, 0.1, 10, 0.2)
        assert t.zoom_range == (4.0, 5.0) and t.dolly_range == (0.5, 0.6)

    def test_replace_ignores_none(self):
        t = Thresholds().replace(tau_d=0.5, tau_g=None)
        assert t.tau_d == 0.5
        assert t.tau_g == 0.01

    def test_replace_turns_ranges_into_float_tuples(self):
        t = Thresholds().replace(zoom_range=[3, 6])
        assert t.zoom_range == (3.0, 6.0)

    def test_as_dict_is_json_ready(self):
        data = Thresholds().as_dict()
        assert data["zoom_range"] == [4.0, 5.0]
        assert json.loads(json.dumps(data)) == data


class TestSettings:
    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv("CLOSEUP_THREADS", "3")
        assert default_threads() == 3
        assert load_settings().threads == 3

    def test_bad_thread_value_falls_back(self, monkeypatch):
        monkeypatch.setenv("CLOSEUP_THREADS", "many")
        assert 1 <= default_threads() <= 8

    def test_log_level_is_upper_cased(self, monkeypatch):
        monkeypatch.setenv("CLOSEUP_LOG_LEVEL", "debug")
        assert load_settings().log_level == "DEBUG"


class TestPresets:
    def test_valid_preset(self):
        assert validate_preset({"tau_num": 5, "lam": 0.0, "zoom_range": [4, 4.5]})

    @pytest.mark.parametrize("lam", [0, 0.0, 0.5, 1, 1.0])
    def test_lam_accepts_the_closed_unit_interval(self, lam):
        assert validate_preset({"lam": lam})

    @pytest.mark.parametrize("preset,key", [
        ({"tau_x": 1}, "tau_x"),
        ({"tau_num": 2.5}, "tau_num"),
        ({"tau_num": True}, "tau_num"),
        ({"tau_d": -0.1}, "tau_d"),
        ({"quantile": 1.0}, "quantile"),
        ({"lam": 1.5}, "lam"),
        ({"lam": -0.1}, "lam"),
        ({"dolly_range": [0.6, 0.5]}, "dolly_range"),
        ({"zoom_range": [4]}, "zoom_range"),
    ])
    def test_invalid_preset_names_the_key(self, preset, key):
        with pytest.raises(InvalidPreset) as err:
            validate_preset(preset)
        assert err.value.key == key

    def test_preset_must_be_an_object(self):
        with pytest.raises(InvalidPreset):
            validate_preset([1, 2])

    def test_load_preset_overrides_defaults(self, tmp_path):
        path = tmp_path / "preset.json"
        path.write_text(json.dumps({"tau_num": 4, "tau_d": 0.3}))
        t = load_preset(path)
        assert (t.tau_num, t.tau_d, t.tau_g) == (4, 0.3, 0.01)

    def test_missing_preset(self, tmp_path):
        with pytest.raises(InvalidPreset):
            load_preset(tmp_path / "nope.json")

    def test_malformed_preset(self, tmp_path):
        path = tmp_path / "preset.json"
        path.write_text("{")
        with pytest.raises(InvalidPreset):
            load_preset(path)


class TestState:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "nested" / "state.json"
        save_state(path, {"b": 1, "a": [1, 2]})
        assert load_state(path) == {"a": [1, 2], "b": 1}
        assert path.read_text().startswith('{\n  "a"')

    def test_missing_or_corrupt_state_is_empty(self, tmp_path):
        assert load_state(tmp_path / "nope.json") == {}
        path = tmp_path / "bad.json"
        path.write_text("not json")
        assert load_state(path) == {}

    def test_failed_write_leaves_no_temp_file(self, tmp_path):
        path = tmp_path / "state.json"
        save_state(path, {"a": 1})
        with pytest.raises(TypeError):
            save_state(path, {"a": object()})
        assert load_state(path) == {"a": 1}
        assert sorted(p.name for p in tmp_path.iterdir()) == ["state.json"]
