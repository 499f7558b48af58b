import numpy as np
import pytest

from ezdual.config import load_config, parse_text
from ezdual.errors import ConfigError
from ezdual.market import HestonModel, KimOmbergModel

BASE = """\
[preference]
delta = 0.05
gamma = 2
psi = 2

[model]
kind = constant
r = 0.02
mu = 0.05, 0.03
sigma = 0.2, 0.0; 0.05, 0.3
rho = 0.3, -0.2
"""


def test_defaults_and_matrix():
    cfg = load_config(BASE)
    assert (cfg.T, cfg.K, cfg.nodes, cfg.N, cfg.seed, cfg.batches) == (1.0, 200, 400, 10_000, 0, 20)
    np.testing.assert_array_equal(cfg.model.sigma0, [[0.2, 0.0], [0.05, 0.3]])
    assert cfg.model_kind == "constant" and not cfg.override


def test_families():
    h = load_config(open("configs/heston.ini").read())
    assert isinstance(h.model, HestonModel) and h.model.x0 == 0.09
    k = load_config(open("configs/kim_omberg.ini").read())
    assert isinstance(k.model, KimOmbergModel)


@pytest.mark.parametrize("extra,line", [
    ("[solver]\nK = ten\n", 13),
    ("[solver]\nfoo = 1\n", 13),
    ("[solver]\nT = -1\n", 13),
    ("[mc]\nN = 10\nbatches = 20\n", 13),
    ("[mc]\nseed = -3\n", 13),
    ("[bogus]\n", 12),
    ("oops\n", 12),
    ("[mc]\nN = 1\nN = 2\n", 14),
])
def test_errors_carry_line_numbers(extra, line):
    with pytest.raises(ConfigError) as exc:
        load_config(BASE + extra)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_invalid_model_and_missing_keys():
    with pytest.raises(ConfigError, match="missing required key 'psi'"):
        load_config(BASE.replace("psi = 2\n", ""))
    with pytest.raises(ConfigError, match="invalid model"):
        load_config(BASE.replace("rho = 0.3, -0.2", "rho = 0.9, 0.9"))
    with pytest.raises(ConfigError, match="unknown model kind"):
        load_config(BASE.replace("kind = constant", "kind = sabr"))
    with pytest.raises(ConfigError, match="missing section"):
        load_config("[preference]\ndelta = 0.05\n")


def test_comments_and_blank_lines():
    raw = parse_text("# c\n\n[mc]  # trailing\nN = 5 # five\n")
    assert raw.sections["mc"]["N"].value == "5" and raw.sections["mc"]["N"].line == 4
