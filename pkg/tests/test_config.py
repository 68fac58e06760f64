"""Configuration parsing, defaults and failure modes."""
import pytest

from fedincentives.config import ConfigError, default_config_path, load_config
from fedincentives.model import truncated_normal_moments


def _write(tmp_path, body, name="case.ini"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


MINIMAL = """
[types.1]
theta = 2.0
xi = 900
"""


def test_packaged_default_loads():
    setup = load_config(None)
    assert len(setup.types) == 5
    assert setup.cfg.T == 100.0
    assert setup.cfg.lam == 0.04
    assert setup.spread_is_std
    assert [t.theta for t in setup.types] == [1.0, 4.0, 6.0, 9.0, 10.0]
    assert [t.xi for t in setup.types] == [800.0, 1700.0, 1400.0, 2200.0, 1200.0]
    assert all(t.count == 1000 for t in setup.types)
    assert setup.learn.schedule == "inverse_t"
    assert setup.experiment.mechanisms == ["NRI", "LLA", "RAR"]
    assert default_config_path().endswith("base.ini")


def test_minimal_file_fills_defaults(tmp_path):
    setup = load_config(_write(tmp_path, MINIMAL))
    assert len(setup.types) == 1
    t = setup.types[0]
    assert (t.theta, t.xi) == (2.0, 900.0)
    assert t.p == 0.0028 and t.q == 0.5 and t.count == 1000
    # loss moments resolved from the game-level sampling defaults (variance mode)
    mean, var = truncated_normal_moments(0.5, 0.2 ** 0.5, 0.0, 1.0)
    assert t.loss_mean == pytest.approx(mean)
    assert t.loss_var == pytest.approx(var)
    assert setup.sampling.loss_mu == (0.5,)
    assert setup.sampling.loss_sigma == (pytest.approx(0.2 ** 0.5),)
    assert setup.experiment.trials == 50


def test_spread_interpreted_as_std_when_flagged(tmp_path):
    body = """
[game]
spread_is_std = true
loss_spread = 0.2
shapley_spread = 0.04

[types.1]
theta = 2.0
xi = 900
"""
    setup = load_config(_write(tmp_path, body))
    assert setup.sampling.loss_sigma == (0.2,)
    assert setup.sampling.shapley_sigma == 0.04
    mean, var = truncated_normal_moments(0.5, 0.2, 0.0, 1.0)
    assert setup.types[0].loss_mean == pytest.approx(mean)
    assert setup.types[0].loss_var == pytest.approx(var)


def test_per_type_overrides_beat_game_defaults(tmp_path):
    body = """
[game]
p = 0.01
count = 50

[types.1]
theta = 2.0
xi = 900
p = 0.2
count = 7
loss_mu = 0.3
loss_spread = 0.0

[types.2]
theta = 3.0
xi = 1000
"""
    setup = load_config(_write(tmp_path, body))
    first, second = setup.types
    assert first.p == 0.2 and first.count == 7
    assert second.p == 0.01 and second.count == 50
    # zero spread collapses the loss to the clipped mean
    assert first.loss_mean == 0.3 and first.loss_var == 0.0
    assert setup.sampling.loss_sigma[0] == 0.0


def test_type_sections_sorted_by_number(tmp_path):
    body = """
[types.2]
theta = 3.0
xi = 1000

[types.1]
theta = 2.0
xi = 900
"""
    setup = load_config(_write(tmp_path, body))
    assert [t.theta for t in setup.types] == [2.0, 3.0]


def test_unknown_key_is_an_error_with_key_name(tmp_path):
    body = MINIMAL + "\n[game]\nlamda = 0.05\n"
    with pytest.raises(ConfigError, match="lamda"):
        load_config(_write(tmp_path, body))
    body = """
[types.1]
theta = 2.0
xi = 900
thetta = 1.0
"""
    with pytest.raises(ConfigError, match="thetta"):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[learning]\nstepc = 2.0\n"
    with pytest.raises(ConfigError, match="stepc"):
        load_config(_write(tmp_path, body))


def test_unknown_section_rejected(tmp_path):
    body = MINIMAL + "\n[typos.1]\ntheta = 1.0\n"
    with pytest.raises(ConfigError, match="typos"):
        load_config(_write(tmp_path, body))
    with pytest.raises(ConfigError, match="types.x"):
        load_config(_write(tmp_path, "[types.x]\ntheta = 1.0\nxi = 900\n"))


def test_missing_required_type_keys(tmp_path):
    with pytest.raises(ConfigError, match="theta"):
        load_config(_write(tmp_path, "[types.1]\nxi = 900\n"))
    with pytest.raises(ConfigError, match="xi"):
        load_config(_write(tmp_path, "[types.1]\ntheta = 2.0\n"))
    with pytest.raises(ConfigError, match="types"):
        load_config(_write(tmp_path, "[game]\nt = 50\n"))


def test_unparseable_values(tmp_path):
    body = MINIMAL + "\n[game]\nt = fast\n"
    with pytest.raises(ConfigError, match=r"\[game\] t"):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[game]\nspread_is_std = maybe\n"
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[experiment]\nuser_counts = 10, twenty\n"
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, body))


def test_domain_validation_delegated(tmp_path):
    body = MINIMAL + "\n[game]\nt = -5\n"
    with pytest.raises(ValueError):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[game]\nloss_spread = -1\n"
    with pytest.raises(ConfigError, match="spread"):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[learning]\nschedule = cosine\n"
    with pytest.raises(ConfigError, match="schedule"):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[experiment]\nlla_retention = half\n"
    with pytest.raises(ConfigError, match="lla_retention"):
        load_config(_write(tmp_path, body))
    body = MINIMAL + "\n[experiment]\nmechanisms = RAR, XXX\n"
    with pytest.raises(ConfigError, match="XXX"):
        load_config(_write(tmp_path, body))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "absent.ini"))


def test_learn_config_builders(tmp_path):
    body = MINIMAL + """
[learning]
users = 3
dim = 4
data_size = 8
schedule = constant
step_c = 0.001
seeds = 2
"""
    setup = load_config(_write(tmp_path, body))
    prob = setup.learn.make_problem(seed=0)
    assert prob.users == 3 and prob.dim == 4
    sch = setup.learn.make_schedule()
    sch.validate(prob)
    assert sch.value(5) == 0.001


def test_comma_lists_parsed(tmp_path):
    body = MINIMAL + """
[experiment]
user_counts = 10, 20, 30
p_grid = 0.0, 0.5
q_grid = 1.0
mechanisms = rar, nri
"""
    setup = load_config(_write(tmp_path, body))
    e = setup.experiment
    assert e.user_counts == [10, 20, 30]
    assert e.p_grid == [0.0, 0.5]
    assert e.q_grid == [1.0]
    assert e.mechanisms == ["rar", "nri"]
