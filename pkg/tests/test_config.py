import math

import pytest

from protoalign.config import BUILTIN_CONFIGS, KEYS, RunConfig, builtin_config, load_config, parse_config
from protoalign.errors import InvalidArgumentError


def test_every_key_documented_with_default():
    names = [k.name for k in KEYS]
    assert len(names) == len(set(names))
    for k in KEYS:
        assert k.doc
    defaults = RunConfig()
    assert all(k.name in defaults.to_dict() for k in KEYS)


def test_defaults_follow_reference_hyperparameters():
    acfg = RunConfig().adaptation_config()
    assert (acfg.lr, acfg.weight_decay, acfg.tau, acfg.batch_size) == (1e-4, 5e-4, 0.1, 16)
    assert (acfg.pfa_iters, acfg.alpha, acfg.K, acfg.N, acfg.rank_threshold) == (200, 80.0, 64, 256, 3)


def test_parse_comments_blank_lines_and_types():
    cfg = parse_config("# header\n\nseed = 7  # trailing\nalpha = 60,70,80,90\n"
                       "target_proportions = 0.4,0.3,0.2,0.1\ncl_keep_pfa_loss = yes\n")
    assert cfg["seed"] == 7 and cfg["alpha"] == (60.0, 70.0, 80.0, 90.0)
    assert cfg["cl_keep_pfa_loss"] is True
    assert cfg.adaptation_config().alpha == (60.0, 70.0, 80.0, 90.0)
    assert cfg.domain_spec().target_proportions == (0.4, 0.3, 0.2, 0.1)


@pytest.mark.parametrize("text", [
    "mystery = 1\n", "seed = 1\nseed = 2\n", "seed 1\n", "seed = one\n",
    "pfa_mode = sideways\n", "cl_keep_pfa_loss = maybe\n",
])
def test_parse_rejects(text):
    with pytest.raises(InvalidArgumentError):
        parse_config(text)


def test_unknown_key_rejected_programmatically():
    with pytest.raises(InvalidArgumentError):
        RunConfig({"learning_rate": 0.1})


def test_dumps_round_trip():
    cfg = builtin_config("s2").with_overrides(seed=5, rotation=math.pi / 7)
    assert parse_config(cfg.dumps()) == cfg


def test_overrides_ignore_none():
    cfg = RunConfig().with_overrides(seed=None, lr=0.5)
    assert cfg["seed"] == 0 and cfg["lr"] == 0.5


@pytest.mark.parametrize("name", BUILTIN_CONFIGS)
def test_builtins_load_and_validate(name):
    cfg = load_config(name)
    cfg.domain_spec()
    cfg.adaptation_config()
    assert cfg.extractor_sizes()[0] == cfg["input_dim"]


def test_s1_and_s2_scenarios():
    s1, s2 = builtin_config("s1"), builtin_config("s2")
    assert (s1["num_classes"], s1["input_dim"], s1["class_std"]) == (4, 8, 0.3)
    assert s1["separation"] == pytest.approx(4 * s1["class_std"])
    assert s1["rotation"] == pytest.approx(math.pi / 6) and s1["scale"] == 1.3 and s1["shift_norm"] == 1.0
    assert s2["target_proportions"] == (0.85, 0.05, 0.05, 0.05)
    assert RunConfig(dict(s2.values, target_proportions=None)) == s1


def test_load_from_path(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("num_classes = 3\n")
    assert load_config(path)["num_classes"] == 3
    with pytest.raises(InvalidArgumentError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(InvalidArgumentError):
        builtin_config("s9")
