import json
import math
from pathlib import Path

import numpy as np
import pytest

from mhfdia.errors import ConfigError
from mhfdia.harness import (GRID_SUPPORT, RunConfig, SweepSpec, build_plant, load_config, random_support,
                            rep_config, run, sweep, synthetic_plant, worker_count)
from mhfdia.plant import build_horizon
from mhfdia.trace import load

SHORT = dict(duration=2.5, attack_start=1.8)
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_grid_defaults():
    c = RunConfig()
    assert (c.Ts, c.T, c.attack_start, c.duration) == (0.01, 20, 1.8, 10.0)
    assert c.support == GRID_SUPPORT == (1, 2, 9, 11, 12, 16, 17)
    assert c.delta == pytest.approx(0.6352)
    assert (c.lambda0, c.M, c.tau) == (1e-4, 2000, 1e-6)


def test_ini_loading_and_overrides(tmp_path):
    ini = tmp_path / "r.ini"
    ini.write_text("[run]\nattack = eig\ngzip = yes\n[model]\nT = 10\n[attack]\nsupport = 1, 3\nlambda0 = 1e-3\n")
    c = load_config(ini, {"seed": 4, "M": None, "support": "2,5"})
    assert c.attack == "eig" and c.gzip is True and c.T == 10 and c.lambda0 == 1e-3
    assert c.seed == 4 and c.M == 2000 and c.support == (2, 5)


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[run]\nspeed = 1\n", "[model]\nT = ten\n",
                                  "[run]\ngzip = maybe\n", "[run]\nattack = laser\n", "not an ini"])
def test_bad_ini(tmp_path, text):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    with pytest.raises(ConfigError):
        load_config(ini)


def test_config_invariants():
    with pytest.raises(ConfigError):
        load_config(overrides={"attack_start": 0.1})  # before the first full window
    with pytest.raises(ConfigError):
        load_config(overrides={"duration": 1.0})
    with pytest.raises(ConfigError):
        load_config(overrides={"nonsense": 1})
    with pytest.raises(ConfigError):
        load_config(None, {"scenario": "vehicle", "path": "spiral"})
    with pytest.raises(ConfigError):
        run(load_config(overrides={"support": "1,40", **SHORT}))
    with pytest.raises(ConfigError):
        load_config(path="/nonexistent/file.ini")


@pytest.fixture(scope="module")
def mh_trace():
    return run(load_config(overrides=dict(duration=3.0)))


def test_row_count_and_time(mh_trace):
    assert len(mh_trace) == math.ceil(3.0 / 0.01)
    t = mh_trace.column("t")
    assert np.all(np.diff(t) > 0)
    assert np.isnan(mh_trace.column("residual")[:19]).all()


def test_effectiveness_and_stealthiness_recomputed_from_trace(mh_trace, grid_horizon):
    cols = mh_trace.columns
    E = mh_trace.data[:, [cols.index(f"e{i}") for i in range(1, 20)]]
    alpha = mh_trace.column("alpha_measured")
    resid = mh_trace.column("residual")
    for k in range(19, len(mh_trace)):
        e_I = E[k - 19:k + 1].ravel()
        assert abs(np.linalg.norm(grid_horizon.pinv @ e_I) - alpha[k]) <= 1e-9
        assert abs(np.linalg.norm(grid_horizon.U2.T @ e_I) - resid[k]) <= 1e-9


def test_design_alpha_matches_measured_when_noiseless(mh_trace):
    on = mh_trace.column("t") >= 1.8
    assert np.allclose(mh_trace.column("alpha_design")[on], mh_trace.column("alpha_measured")[on], atol=1e-8)


def test_attack_off_before_start_and_on_support(mh_trace):
    cols = mh_trace.columns
    E = mh_trace.data[:, [cols.index(f"e{i}") for i in range(1, 20)]]
    t = mh_trace.column("t")
    assert not np.any(E[t < 1.8 - 1e-9])
    off = [c - 1 for c in range(1, 20) if c not in GRID_SUPPORT]
    assert not np.any(E[:, off])
    assert np.any(E[t >= 1.8])


def test_no_attack_means_no_alarm_and_no_effect():
    tr = run(load_config(overrides=dict(attack="none", **SHORT)))
    assert tr.column("alarm").sum() == 0
    assert np.nanmax(tr.column("alpha_measured")) == 0


@pytest.mark.parametrize("attack", ["range", "gstealth", "static", "eig"])
def test_every_attack_kind_runs(attack):
    tr = run(load_config(overrides=dict(attack=attack, **SHORT)))
    on = tr.column("t") >= 1.8
    assert np.nanmax(tr.column("alpha_measured")[on]) > 0


def test_bias_override_length_checked():
    with pytest.raises(ConfigError):
        run(load_config(overrides=dict(attack="range", bias="1,2", **SHORT)))


def test_same_seed_same_trace():
    c = load_config(overrides=dict(noise="uniform-ball", epsilon_v=0.1, budget="triangle", **SHORT))
    assert run(c).to_csv_text() == run(c).to_csv_text()
    other = load_config(overrides=dict(noise="uniform-ball", epsilon_v=0.1, budget="triangle", seed=1, **SHORT))
    assert run(other).to_csv_text() != run(c).to_csv_text()


def test_triangle_budget_never_alarms_under_noise():
    c = load_config(overrides=dict(noise="uniform-ball", epsilon_v=0.2, budget="triangle", duration=4.0))
    tr = run(c)
    assert tr.column("alarm").sum() == 0
    assert np.nanmax(tr.column("residual")) <= c.delta


def test_write_and_dump(tmp_path):
    c = load_config(overrides=dict(out=str(tmp_path), dump=True, format="json", **SHORT))
    tr = run(c, write=True)
    back = load(tmp_path / "trace.json")
    assert back.columns == tr.columns and len(back) == len(tr)
    recs = [json.loads(line) for line in (tmp_path / "dump.jsonl").read_text().splitlines()]
    assert len(recs) == 70 and recs[0]["step"] == 180 and recs[0]["feasible"]


def test_synthetic_scenario(tmp_path):
    p = synthetic_plant(4, 6, 3)
    assert p.spectral_radius == pytest.approx(0.95)
    with pytest.raises(ConfigError):
        synthetic_plant(5, 3, 0)
    c = load_config(CONFIGS / "synthetic.ini")
    tr = run(c)
    assert len(tr) == 300 and tr.column("alarm").sum() == 0
    assert np.nanmax(tr.column("alpha_measured")) > 0.1


def test_vehicle_through_harness():
    c = load_config(overrides=dict(scenario="vehicle", path="line", attack="none", duration=7.0))
    tr = run(c)
    assert len(tr) == 700 and "deviation" in tr.columns
    with pytest.raises(ConfigError):
        run(load_config(overrides=dict(scenario="vehicle", attack="range")))


def test_random_support_uniform():
    rng = np.random.default_rng(0)
    counts = np.zeros(19)
    for _ in range(2000):
        s = random_support(19, 5, rng)
        assert len(set(s)) == 5 and list(s) == sorted(s) and 1 <= s[0] and s[-1] <= 19
        counts[np.array(s) - 1] += 1
    expected = 2000 * 5 / 19
    assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))
    with pytest.raises(ConfigError):
        random_support(19, 0, rng)


def test_rep_configs():
    base = RunConfig()
    spec = SweepSpec("M", (100, 500), reps=3)
    a, b = rep_config(base, spec, 100, 1), rep_config(base, spec, 500, 1)
    assert a.support == b.support and a.seed == 1 and (a.M, b.M) == (100, 500)
    assert rep_config(base, spec, 100, 2).support != a.support
    s = rep_config(base, SweepSpec("support_size", (3,), reps=1), 3, 0)
    assert len(s.support) == 3
    lam = rep_config(base, SweepSpec("lambda0", (1e-3,), reps=1), 1e-3, 0)
    assert lam.lambda0 == 1e-3


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec("epsilon", (1,))
    with pytest.raises(ConfigError):
        SweepSpec("M", (1,), reps=0)
    with pytest.raises(ConfigError):
        SweepSpec("M", ())


def test_small_sweep_table():
    base = load_config(overrides=dict(duration=2.5))
    table, raw = sweep(SweepSpec("T", (10, 20), reps=2), base, workers=1)
    assert len(table) == 2 and set(raw) == {10, 20}
    row = dict(zip(table.columns, table.rows[0]))
    assert row["reps"] == 2 and row["eff_min"] <= row["eff_median"] <= row["eff_max"]
    with pytest.raises(ConfigError):
        sweep(SweepSpec("M", (1,)), load_config(overrides={"scenario": "vehicle"}))


def test_parallel_sweep_matches_sequential():
    base = load_config(overrides=dict(duration=2.2))
    spec = SweepSpec("M", (50,), reps=2)
    seq, _ = sweep(spec, base, workers=1)
    par, _ = sweep(spec, base, workers=2)
    assert seq.to_csv_text() == par.to_csv_text()


def test_worker_count(monkeypatch):
    monkeypatch.delenv("MHFDIA_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("MHFDIA_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("MHFDIA_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count()


def test_build_plant_grid_matches_horizon(grid_horizon):
    h = build_horizon(build_plant(RunConfig()), 20)
    assert np.allclose(h.H, grid_horizon.H)
