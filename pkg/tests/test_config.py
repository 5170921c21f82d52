from pathlib import Path

import numpy as np
import pytest

from relsa.config import (
    BaselineToggles,
    ConfigError,
    GridSpec,
    dump_config,
    load_config,
    parse_config,
)
from relsa.distributions import Normal

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASIC = """\
[study]
model = hyperplane
n = 1000
seed = 5

[perturbation m]
kind = mean_shift
inputs = X2, X3
lo = -1
hi = 1
points = 4
"""


def _line_of(text: str, needle: str) -> int:
    return next(k for k, line in enumerate(text.splitlines(), 1) if needle in line)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = load_config(path)
    again = parse_config(dump_config(cfg), "dumped")
    assert again == cfg


def test_basic_parse_and_defaults():
    cfg = parse_config(BASIC)
    assert (cfg.model, cfg.n, cfg.seed, cfg.ci_level, cfg.replications, cfg.threads) == (
        "hyperplane", 1000, 5, 0.95, 1, 1
    )
    (block,) = cfg.blocks
    assert block.label == "m" and block.inputs == ("X2", "X3")
    np.testing.assert_allclose(block.grid.values(), np.linspace(-1, 1, 4))
    assert cfg.baselines == BaselineToggles()


def test_marginal_override_is_applied():
    text = BASIC + "\n[marginals]\nX1 = normal(1, 2)\n"
    model = parse_config(text).build_model()
    assert model.marginals[0] == Normal(1.0, 2.0)
    assert model.marginals[1] == Normal(0.0, 1.0)


def test_unknown_family_names_key_and_line():
    text = BASIC + "\n[marginals]\nX3 = lognormal(0, 1)\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text, "study.ini")
    msg = str(info.value)
    assert f"study.ini:{_line_of(text, 'lognormal')}:" in msg
    assert "[marginals]" in msg and "x3" in msg.lower() and "lognormal" in msg


def test_grid_through_null_point_is_rejected():
    text = BASIC.replace("points = 4", "points = 5")  # -1, -0.5, 0, 0.5, 1
    with pytest.raises(ConfigError, match="null"):
        parse_config(text)


def test_infeasible_variance_target_is_rejected():
    text = """\
[study]
model = ishigami_threshold
n = 1000
seed = 1

[perturbation v]
kind = variance_shift
lo = 0.5
hi = 12
points = 3
"""
    with pytest.raises(ConfigError, match="perturbation v"):
        parse_config(text)


@pytest.mark.parametrize(
    "old,new,needle",
    [
        ("n = 1000", "n = 99", "n"),
        ("n = 1000", "n = many", "n"),
        ("model = hyperplane", "model = beam", "unknown model"),
        ("kind = mean_shift", "kind = quantile_shift", "unknown constraint kind"),
        ("points = 4", "points = 1", "points"),
        ("hi = 1", "hi = -2", "lo < hi"),
        ("inputs = X2, X3", "inputs = X9", "unknown input"),
        ("seed = 5", "seed = 5\ncolour = red", "colour"),
        ("[perturbation m]", "[sweep m]", "unknown section"),
    ],
)
def test_invalid_values_are_reported(old, new, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(BASIC.replace(old, new))


def test_missing_required_pieces():
    with pytest.raises(ConfigError, match="study"):
        parse_config("[baselines]\nform = true\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_config(BASIC.replace("seed = 5\n", ""))


def test_overrides_ignore_none():
    cfg = parse_config(BASIC)
    assert cfg.with_overrides(seed=None, threads=None) == cfg
    assert cfg.with_overrides(seed=9).seed == 9


def test_mean_shift_sigma_block_uses_input_std():
    text = BASIC.replace("kind = mean_shift", "kind = mean_shift_sigma")
    block = parse_config(text).blocks[0]
    values = [c.value for c in block.constraints(Normal(2.0, 3.0))]
    np.testing.assert_allclose(values, 2.0 + 3.0 * np.linspace(-1, 1, 4))
    assert block.constraint_kind == "mean_shift"


def test_grid_spec_values():
    np.testing.assert_array_equal(GridSpec(0.0, 1.0, 3).values(), [0.0, 0.5, 1.0])
