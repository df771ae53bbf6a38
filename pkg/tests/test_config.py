import json

import numpy as np
import pytest

from config import EXACT, FpSlack, Settings, load_settings
from errors import ConfigurationError


class TestFpSlack:
    def test_widens_outward(self):
        lo, hi = FpSlack(1e-3, 1e-2).widen([-1.0, 0.0], [2.0, 0.0])
        np.testing.assert_allclose(lo, [-1.011, -0.001])
        np.testing.assert_allclose(hi, [2.021, 0.001])

    def test_exact_is_the_identity(self):
        lo, hi = EXACT.widen([-1.5], [2.5])
        assert lo.tolist() == [-1.5] and hi.tolist() == [2.5]
        assert EXACT.margin(3.0) == 0.0


class TestSettings:
    def test_bundled_defaults_match_the_dataclass(self):
        assert load_settings() == Settings()

    def test_user_file_and_overrides(self, tmp_path):
        path = tmp_path / "settings.json"
        path.write_text(json.dumps({"workers": 4, "eps_split": 1e-4}))
        settings = load_settings(path, workers=2, timeout_ra=None)
        assert settings.workers == 2
        assert settings.eps_split == 1e-4
        assert settings.timeout_ra is None

    def test_slack_follows_the_settings(self):
        assert Settings(eps_fp_abs=0.0, eps_fp_rel=0.0).slack() == EXACT

    def test_with_overrides(self):
        assert Settings().with_overrides(binary_search=False).binary_search is False
        with pytest.raises(ConfigurationError):
            Settings().with_overrides(colour="blue")

    @pytest.mark.parametrize("values", [
        {"workers": 0},
        {"eps_split": 0.0},
        {"eps_fp_abs": -1e-9},
        {"timeout_milp": -1.0},
        {"oracle_samples": -1},
    ])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigurationError):
            Settings(**values)

    def test_unknown_keys(self, tmp_path):
        path = tmp_path / "settings.json"
        path.write_text(json.dumps({"solver": "gurobi"}))
        with pytest.raises(ConfigurationError):
            load_settings(path)

    @pytest.mark.parametrize("content", ["[1, 2]", "{not json"])
    def test_malformed_files(self, tmp_path, content):
        path = tmp_path / "settings.json"
        path.write_text(content)
        with pytest.raises(ConfigurationError):
            load_settings(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_settings(tmp_path / "absent.json")
