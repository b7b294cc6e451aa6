import math

import numpy as np
import pytest

from conftest import efficiency_config
from micrlb.deployment import RadioConfig, ScenarioConfig, build_measurement_graph, generate_deployment
from micrlb.experiments import (
    CSV_HEADER,
    AllTrialsSingularError,
    EfficiencyRow,
    Scenario,
    SweepConfig,
    SweepResult,
    SweepRow,
    check_range,
    efficiency_study,
    emit_csv,
    emit_plotdata,
    format_efficiency,
    monte_carlo_crlb,
    read_csv,
    run_sweep,
    summarize_bounds,
    trial_bounds,
)
from micrlb.fim import crlb_paper, crlb_standard, fim_standard
from micrlb.seeding import trial_seed

SMALL = Scenario(ScenarioConfig(thing_count=6))


def test_single_trial_equals_direct_computation():
    mc = monte_carlo_crlb(SMALL, 1, seed=3)
    dep = generate_deployment(SMALL.config, trial_seed(3, 0, 0))
    rep = crlb_standard(fim_standard(build_measurement_graph(dep, SMALL.config, SMALL.radio), dep.things))
    assert mc.mean == rep.aggregate_bound and mc.std == 0.0 and mc.singular_count == 0


def test_same_seed_same_bits_any_threads():
    a = monte_carlo_crlb(SMALL, 40, seed=5, threads=1)
    b = monte_carlo_crlb(SMALL, 40, seed=5, threads=4)
    assert a == b
    assert monte_carlo_crlb(SMALL, 40, seed=6) != a


def test_summarize_excludes_singular_trials():
    s = summarize_bounds(np.array([1.0, math.nan, 3.0]))
    assert s.mean == 2.0 and s.singular_count == 1 and s.std == pytest.approx(math.sqrt(2))
    with pytest.raises(AllTrialsSingularError):
        summarize_bounds(np.array([math.nan, math.nan]))
    with pytest.raises(ValueError):
        trial_bounds(SMALL, 0, 1)


def test_standard_error_halves_from_500_to_2000_trials():
    # the block bound has a finite spread; see the trace-bound note in the README
    sc = Scenario(ScenarioConfig())
    a = monte_carlo_crlb(sc, 500, 1, bound="block", threads=4)
    b = monte_carlo_crlb(sc, 2000, 1, bound="block", threads=4)
    ratio = (a.std / math.sqrt(500 - a.singular_count)) / (b.std / math.sqrt(2000 - b.singular_count))
    assert 1.5 < ratio < 2.5


def test_paired_noise_sweep_strictly_increasing():
    res = run_sweep(SweepConfig(SMALL, "noise_sigma", (0.05, 0.1, 0.3, 0.7), trials=30))
    assert all(r.status == "ok" for r in res.rows)
    assert np.all(np.diff(res.means) > 0)
    # sigma^2 law carries through the mean of paired trials
    np.testing.assert_allclose(res.means / res.means[0], (res.values / 0.05) ** 2, rtol=1e-9)


def test_turns_sweep_strictly_decreasing():
    res = run_sweep(SweepConfig(SMALL, "coil_turns", (10, 20, 30), trials=30))
    assert np.all(np.diff(res.means) < 0)


def test_anchor_sweep_three_not_worse_than_two():
    res = run_sweep(SweepConfig(SMALL, "anchor_count", (2, 3), trials=50, bound="block"))
    assert res.rows[1].mean_crlb <= res.rows[0].mean_crlb


def test_sweep_rows_sorted_and_failures_in_status():
    base = Scenario(ScenarioConfig(thing_count=3, anchor_count=1))
    res = run_sweep(SweepConfig(base, "noise_sigma", (0.3, 0.1), trials=3))
    assert list(res.values) == [0.1, 0.3]
    assert all(r.status == "all_singular" and r.singular == 3 for r in res.rows)


def test_sweep_config_validation():
    with pytest.raises(ValueError, match="physical range"):
        SweepConfig(SMALL, "noise_sigma", (0.05, 2.0))
    SweepConfig(SMALL, "noise_sigma", (0.05, 2.0), allow_out_of_range=True)
    with pytest.raises(ValueError):
        SweepConfig(SMALL, "wind_speed", (1.0,))
    with pytest.raises(ValueError):
        check_range("anchor_count", (2.5,))
    with pytest.raises(ValueError):
        SMALL.with_parameter("coil_turns", 12.5)


def test_published_mode_sweep_runs():
    res = run_sweep(SweepConfig(SMALL, "noise_sigma", (0.05, 0.1), trials=5, fim_mode="paper", bound="block"))
    assert len(res.rows) == 2


# --- output ------------------------------------------------------------------------

def sample_result():
    rows = (SweepRow(0.05, 1.234567891234, 0.5, 500, 3), SweepRow(0.1, 4.9e-7, 2e-7, 500, 0),
            SweepRow(0.2, math.nan, math.nan, 500, 500, "all_singular"))
    return SweepResult("noise_sigma", rows, "demo")


def test_csv_round_trip_and_format(tmp_path):
    res = sample_result()
    path = tmp_path / "s.csv"
    emit_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + len(res.rows)
    assert lines[1] == "0.05,1.23456789,0.5,500,3,ok"
    back = read_csv(path, "noise_sigma", "demo")
    for a, b in zip(back.rows, res.rows):
        assert a.param == b.param and a.trials == b.trials and a.status == b.status
        if math.isfinite(b.mean_crlb):
            assert a.mean_crlb == pytest.approx(b.mean_crlb, rel=5e-9)
    emit_csv(back, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_bytes() == path.read_bytes()


def test_plotdata_byte_stable(tmp_path):
    res = [sample_result()]
    a = emit_plotdata(res, str(tmp_path / "a"), "title")
    b = emit_plotdata(res, str(tmp_path / "b"), "title")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()
    assert open(a[1]).read().lstrip().startswith("<?xml")


# --- efficiency ---------------------------------------------------------------------

def test_efficiency_rows():
    sc = Scenario(efficiency_config(), RadioConfig())
    rows = efficiency_study(sc, (0.0, 0.05, 5.0), 200, seed=3)
    zero, small, big = rows
    assert zero.rmse < 1e-6 and zero.sqrt_bound == 0.0
    assert all(r.respects_bound(3.0) for r in rows)
    assert abs(small.ratio - 1) < 0.25
    assert big.sqrt_bound == pytest.approx(100 * small.sqrt_bound, rel=1e-9)
    text = format_efficiency(rows)
    assert text.splitlines()[0] == "sigma,rmse,sqrt_crlb,rmse_se,ratio,trials,converged"


def test_efficiency_row_bound_check():
    assert EfficiencyRow(1.0, 0.9, 1.0, 0.04, 100, 100).respects_bound(3.0)
    assert not EfficiencyRow(1.0, 0.8, 1.0, 0.04, 100, 100).respects_bound(3.0)


def test_block_bound_trial_matches_direct():
    sc = Scenario(ScenarioConfig(thing_count=4))
    b = trial_bounds(sc, 3, 2, bound="block")
    for t in range(3):
        dep = sc.deploy(trial_seed(2, t, 0))
        assert b[t] == crlb_paper(fim_standard(sc.graph(dep), dep.things))
