import pytest

from tcfp.config import CONFIG_ENV, Config, dump, load, loads, parse_overrides, resolve
from tcfp.errors import ConfigError


def test_defaults():
    cfg = Config()
    assert (cfg.fs, cfg.m, cfg.n, cfg.q, cfg.r, cfg.c) == (8820, 72, 4, 12, 12, 10)
    assert cfg.chroma.n_bins == 288
    assert cfg.detect.alpha == 0.6 and cfg.detect.localize.min_support == 5


def test_round_trip(tmp_path):
    cfg = Config().replace(alpha=0.55, keep_boundary=False, match_mode="literal", seed=9)
    dump(cfg, tmp_path / "c.cfg")
    assert load(tmp_path / "c.cfg") == cfg


def test_comments_and_blank_lines():
    cfg = loads("# tuned\n\nalpha = 0.5  # looser\nnum_scales=20\n")
    assert cfg.alpha == 0.5 and cfg.num_scales == 20


@pytest.mark.parametrize("text", ["bogus = 1", "alpha = nope", "keep_boundary = maybe", "just words"])
def test_bad_input(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_unknown_replace_key():
    with pytest.raises(ConfigError):
        Config().replace(nope=1)


def test_overrides_are_typed():
    assert parse_overrides(["q=8", "alpha=0.7", "keep_boundary=false"]) == {
        "q": 8, "alpha": 0.7, "keep_boundary": False}


def test_env_var(tmp_path, monkeypatch):
    path = tmp_path / "env.cfg"
    path.write_text("theta_max = 0.3\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert resolve().theta_max == 0.3
    assert resolve(overrides=["theta_max=0.2"]).theta_max == 0.2
    monkeypatch.delenv(CONFIG_ENV)
    assert resolve() == Config()
