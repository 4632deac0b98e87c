import pytest

from dsvo.config import (
    ConfigError,
    OdometryConfig,
    apply_config_line,
    load_config,
)


class TestDefaults:
    def test_key_defaults(self):
        cfg = OdometryConfig()
        assert cfg.num_levels == 5
        assert cfg.select.cell_size == 16
        assert cfg.select.g_min_init == 64.0
        assert cfg.align.c == 4.0
        assert cfg.align.nu == 5.0
        assert cfg.align.max_iters == 4
        assert cfg.window.N == 4
        assert cfg.window.Q_min == 0.6
        assert cfg.pba.rho_min == 1e-4
        assert cfg.pba.rho_max == 10.0


class TestLineParsing:
    def test_dotted_key(self):
        cfg = OdometryConfig()
        apply_config_line(cfg, "window.N = 6")
        assert cfg.window.N == 6

    def test_flat_key(self):
        cfg = OdometryConfig()
        apply_config_line(cfg, "cell_size = 24")
        assert cfg.select.cell_size == 24

    def test_bool_value(self):
        cfg = OdometryConfig()
        apply_config_line(cfg, "align.stereo = false")
        assert cfg.align.stereo is False

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_config_line(OdometryConfig(), "warp_speed = 9")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown config section"):
            apply_config_line(OdometryConfig(), "rocket.fuel = 1")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            apply_config_line(OdometryConfig(), "window.N 6")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            apply_config_line(OdometryConfig(), "window.N = banana")


class TestFileLoading:
    def test_file_with_comments(self, tmp_path):
        p = tmp_path / "odo.cfg"
        p.write_text(
            "# tracker settings\n"
            "align.max_iters = 8   # more refinement\n"
            "\n"
            "window.Q_min = 0.7\n"
            "num_levels = 4\n"
        )
        cfg = load_config(str(p))
        assert cfg.align.max_iters == 8
        assert cfg.window.Q_min == 0.7
        assert cfg.num_levels == 4

    def test_error_names_line_number(self, tmp_path):
        p = tmp_path / "odo.cfg"
        p.write_text("window.N = 4\nnonsense = 1\n")
        with pytest.raises(ConfigError, match="line 2"):
            load_config(str(p))

    def test_base_config_is_extended(self, tmp_path):
        base = OdometryConfig()
        base.window.N = 7
        p = tmp_path / "odo.cfg"
        p.write_text("align.c = 5\n")
        cfg = load_config(str(p), base=base)
        assert cfg.window.N == 7
        assert cfg.align.c == 5.0
