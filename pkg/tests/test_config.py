import json
import os
import re

import pytest

from rxnvae.config import DecodeLimits, ModelConfig, Settings, load_settings, override, settings_from_dict
from rxnvae.errors import ConfigError
from rxnvae.logger import RunLogger


def test_packaged_settings_match_defaults():
    assert load_settings() == Settings()


def test_defaults():
    m = ModelConfig()
    assert (m.latent_dim, m.hidden_dim, m.lr, m.batch_size) == (50, 200, 0.001, 32)
    assert DecodeLimits().rxn_max_depth == 5


def test_unreadable_file_falls_back(tmp_path, caplog):
    path = os.path.join(tmp_path, "settings.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write("{nope")
    assert load_settings(path) == Settings()
    assert "using defaults" in caplog.text


def test_partial_sections_keep_defaults(tmp_path):
    path = os.path.join(tmp_path, "settings.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"model": {"latent_dim": 8}, "oracle": {"timeout_s": 2}}, f)
    s = load_settings(path)
    assert s.model.latent_dim == 8
    assert s.model.hidden_dim == 200
    assert s.oracle_timeout_s == 2.0


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        settings_from_dict({"model": {"latent": 8}})


@pytest.mark.parametrize("changes", [{"latent_dim": 0}, {"lr": -1.0}, {"kl_warmup_epochs": -1}])
def test_invalid_model_values(changes):
    with pytest.raises(ConfigError):
        override(ModelConfig(), **changes)


def test_override_ignores_unset_flags():
    base = ModelConfig()
    assert override(base, epochs=None, lr=None) is base
    assert override(base, epochs=3).epochs == 3


def test_decode_limits_need_room_for_one_reaction():
    with pytest.raises(ConfigError):
        DecodeLimits(rxn_max_nodes=4).validate()


def test_run_logger_line_format(tmp_path):
    path = os.path.join(tmp_path, "run.log")
    seen = []
    logger = RunLogger(path, ui_callback=seen.append)
    logger.log_event("EPOCH", "1/3 total=2.0", elapsed=75, suffix="beta 0.00")
    assert re.fullmatch(r"\[\d\d:\d\d:\d\d\] \[\+01:15\] EPOCH 1/3 total=2\.0 \(beta 0\.00\)", logger.get_last_line())
    assert seen == [logger.get_last_line()]
    with open(path, encoding="utf-8") as f:
        assert f.read() == logger.get_last_line() + "\n"
