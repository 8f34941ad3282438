import numpy as np
import pytest

from fracmv.errors import ConfigError
from fracmv.model import DegenerateSpec, LinearMeanFieldModel
from fracmv.scenario import CHECKS, load_scenario, shipped_scenarios

BASE = """
[model]
family = "linear"
d = 1
H = 0.7
Htilde = 0.8
A0 = [[-1.0]]
A1 = [[0.5]]
c = [1.0]
sigma = [[0.5]]
S0 = [[0.3]]
S1 = [[0.2]]

[initial]
mean = [0.0]
std = [0.1]

[run]
T = 1.0
steps = 32
paths = 100
seed = 1
t0 = [0.5, 1.0]

[experiment]
checks = []
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_shipped_scenarios_load():
    names = shipped_scenarios()
    assert {"linear_1d_H07", "linear_1d_H03", "kinetic_H07", "brownian_zero_drift"} <= set(names)
    for n in names:
        scn = load_scenario(n)
        assert scn.name == n
        assert set(scn.checks) <= set(CHECKS)
        for t in scn.run.t0:
            scn.run.grid.node_index(t)


def test_kinetic_scenario_is_degenerate():
    scn = load_scenario("kinetic_H07")
    assert scn.degenerate and isinstance(scn.model, DegenerateSpec)
    assert scn.model.m == 1 and scn.model.l == 1
    np.testing.assert_array_equal(scn.model.B_mat, [[1.0]])


def test_file_scenario(tmp_path):
    scn = load_scenario(write(tmp_path, BASE))
    assert isinstance(scn.model, LinearMeanFieldModel)
    assert scn.model.hurst.H == 0.7
    assert scn.checks == ()
    assert scn.run.grid.n_steps == 32
    assert scn.option("harnack", "tolerance", 0.1) == 0.1


def test_dotted_options(tmp_path):
    text = BASE.replace("checks = []", 'checks = ["harnack"]\nharnack.shifts = [0.5]')
    scn = load_scenario(write(tmp_path, text))
    assert scn.option("harnack", "shifts") == [0.5]


@pytest.mark.parametrize("old,new", [
    ("steps = 32", "steps = 8"),
    ("t0 = [0.5, 1.0]", "t0 = [0.51]"),
    ("T = 1.0", "T = -1.0"),
    ('family = "linear"', 'family = "quadratic"'),
    ("A0 = [[-1.0]]", "A0 = [[-1.0, 2.0]]"),
    ("checks = []", 'checks = ["everything"]'),
    ("A1 = [[0.5]]\n", ""),
])
def test_invalid_scenarios(tmp_path, old, new):
    assert old in BASE
    with pytest.raises(ConfigError):
        load_scenario(write(tmp_path, BASE.replace(old, new)))


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(write(tmp_path, "model = ["))
    with pytest.raises(ConfigError):
        load_scenario("no_such_scenario")
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.toml")


def test_degenerate_dimension_mismatch(tmp_path):
    text = BASE + "\n[degenerate]\nm = 1\nl = 1\nA = [[0.0]]\nB = [[1.0]]\n"
    with pytest.raises(ConfigError):
        load_scenario(write(tmp_path, text))
