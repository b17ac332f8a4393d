import math

import numpy as np
import pytest

from qdtimebin.qmath import TwoQubitDensity, bell_state, concurrence, projector, random_density, werner
from qdtimebin.tomography import (
    SETTINGS,
    BootstrapError,
    PairEnsemble,
    TomographyPlan,
    TomographySettingCount,
    best_phase_fidelity,
    bootstrap_errors,
    expected_counts,
    linear_reconstruct,
    matrix_to_params,
    measurement_operators,
    mle_reconstruct,
    params_to_matrix,
    read_counts_csv,
    simulate_counts,
    timebin_discriminate,
    write_counts_csv,
)
from qdtimebin.detection import TimeTags
from qdtimebin.source import InvalidParameter

OPS = measurement_operators()
PHI = 0.141 * math.pi


def trace_distance(a, b):
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(a - b)))


def noiseless(rho, total=1e6):
    return expected_counts(rho, OPS, total)


def poisson(rho, total, seed):
    return np.random.default_rng(seed).poisson(noiseless(rho, total))


def test_settings_are_the_sixteen_standard_pairs():
    labels = ["".join(s) for s in SETTINGS]
    assert labels == ["HH", "HV", "HD", "HL", "VH", "VV", "VD", "VL",
                      "DH", "DV", "DD", "DL", "LH", "LV", "LD", "LL"]
    for (a, b), m in zip(SETTINGS, OPS):
        np.testing.assert_allclose(m, projector(a, b).matrix, atol=1e-15)


def test_plan_defaults_and_validation():
    assert TomographyPlan().effective_integration_time == 300.0
    assert TomographyPlan(mode="timebin").effective_integration_time == 1800.0
    assert TomographyPlan().coincidence_window == 3e-9
    with pytest.raises(InvalidParameter):
        TomographyPlan(coincidence_window=0.0)
    with pytest.raises(InvalidParameter):
        TomographyPlan(settings=SETTINGS[:15])
    with pytest.raises(InvalidParameter):
        TomographyPlan(bootstrap_resamples=50)
    with pytest.raises(ValueError):
        TomographySettingCount(("H", "H"), -1)


# -- linear inversion --------------------------------------------------------------

def test_linear_inversion_of_maximally_mixed_state():
    rho = linear_reconstruct(noiseless(np.eye(4) / 4))
    np.testing.assert_allclose(rho.matrix, np.eye(4) / 4, atol=1e-9)


def test_linear_inversion_exact_for_werner():
    truth = werner(0.693, PHI)
    np.testing.assert_allclose(linear_reconstruct(noiseless(truth)).matrix, truth.matrix, atol=1e-9)


def test_linear_inversion_exact_for_random_states():
    rng = np.random.default_rng(1)
    for _ in range(10):
        truth = random_density(rng)
        np.testing.assert_allclose(linear_reconstruct(noiseless(truth, 1.0)).matrix, truth.matrix, atol=1e-9)


def test_linear_inversion_bell_with_statistics():
    truth = bell_state(0).density()
    rho = linear_reconstruct(poisson(truth, 1e6, 2))
    assert trace_distance(rho.matrix, truth.matrix) < 0.01
    assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-12)


def test_linear_inversion_can_be_unphysical():
    counts = poisson(bell_state(0).density(), 200, 3)
    rho = linear_reconstruct(counts)
    assert not rho.is_physical
    with pytest.raises(ValueError):
        linear_reconstruct(np.zeros(16))


# -- maximum likelihood --------------------------------------------------------------

def test_cholesky_parameters_round_trip():
    rho = werner(0.693, PHI).matrix
    np.testing.assert_allclose(params_to_matrix(matrix_to_params(rho, floor=0.0)), rho, atol=1e-12)


def test_mle_maximally_mixed():
    res = mle_reconstruct(noiseless(np.eye(4) / 4))
    np.testing.assert_allclose(res.rho.matrix, np.eye(4) / 4, atol=1e-6)
    assert res.concurrence == 0.0
    assert res.converged


def test_mle_werner_with_statistics():
    res = mle_reconstruct(poisson(werner(0.693, PHI), 1e6, 4))
    assert res.concurrence == pytest.approx(0.54, abs=0.03)
    assert res.fidelity_best == pytest.approx(0.77, abs=0.01)
    assert abs(res.best_phase) == pytest.approx(PHI, abs=0.02 * math.pi)
    assert res.converged


def test_mle_is_physical_where_linear_inversion_is_not():
    counts = poisson(bell_state(0).density(), 200, 3)
    assert not linear_reconstruct(counts).is_physical
    res = mle_reconstruct(counts)
    assert res.rho.is_physical
    assert res.rho.eigenvalues().min() >= -1e-12


def test_mle_history_is_monotone():
    res = mle_reconstruct(poisson(werner(0.6, 0.3), 5e4, 5))
    assert len(res.history) > 2
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert res.likelihood == pytest.approx(res.history[-1])


def test_mle_not_worse_than_init():
    counts = poisson(werner(0.6, 0.3), 5e4, 6)
    init = TwoQubitDensity(np.eye(4) / 4)
    res = mle_reconstruct(counts, init=init)
    from qdtimebin.tomography import _Cost
    assert res.likelihood <= _Cost(np.asarray(counts, float), OPS)(matrix_to_params(init.matrix))


def test_mle_budget_exhaustion_reports_not_converged():
    res = mle_reconstruct(poisson(werner(0.6, 0.3), 5e4, 7), max_evals=50)
    assert not res.converged
    assert res.rho.is_physical


@pytest.mark.parametrize("phase", [0.0, 0.141 * math.pi, 0.672 * math.pi])
def test_best_phase_recovery(phase):
    res = mle_reconstruct(noiseless(werner(0.693, phase)))
    assert abs(res.best_phase - phase) < 0.02 * math.pi
    assert res.fidelity_best == pytest.approx((3 * 0.693 + 1) / 4, abs=1e-3)


def test_best_phase_fidelity_folds_phase():
    f, phase = best_phase_fidelity(bell_state(-0.9 * math.pi).density())
    assert f == pytest.approx(1.0, abs=1e-9)
    assert phase == pytest.approx(-0.9 * math.pi, abs=1e-6)


def test_timebin_operators_reconstruct_timebin_states():
    ops = measurement_operators("timebin")
    truth = werner(0.693, 0.672 * math.pi, "timebin")
    res = mle_reconstruct(expected_counts(truth, ops, 1e6), mode="timebin")
    assert res.rho.basis_label == "timebin"
    assert res.best_phase == pytest.approx(0.672 * math.pi, abs=0.02 * math.pi)


# -- bootstrap -----------------------------------------------------------------------

def test_bootstrap_sigma_scales_with_counts():
    truth = werner(0.693, PHI)
    small = bootstrap_errors(np.rint(noiseless(truth, 1e4)), 100, seed=1)
    large = bootstrap_errors(np.rint(noiseless(truth, 4e4)), 100, seed=1)
    assert large.sigma_c / small.sigma_c == pytest.approx(0.5, rel=0.3)


def test_bootstrap_giant_counts():
    res = bootstrap_errors(np.rint(noiseless(werner(0.693, PHI), 1e9)), 100, seed=2)
    assert res.sigma_c < 0.005
    assert res.n_failed == 0


def test_bootstrap_requires_enough_resamples():
    with pytest.raises(ValueError):
        bootstrap_errors(np.ones(16), 10)


def test_bootstrap_fails_when_fits_do_not_converge(monkeypatch):
    import qdtimebin.tomography as tomo

    real = tomo.mle_reconstruct

    def never(*args, **kwargs):
        kwargs["max_evals"] = 5
        return real(*args, **kwargs)

    counts = np.rint(noiseless(werner(0.693, PHI), 1e4))
    init = real(counts).rho
    monkeypatch.setattr(tomo, "mle_reconstruct", never)
    with pytest.raises(BootstrapError):
        tomo.bootstrap_errors(counts, 100, init=init)


@pytest.mark.slow
def test_bootstrap_stable_in_resample_count():
    counts = np.rint(noiseless(werner(0.693, PHI), 2e4))
    a = bootstrap_errors(counts, 100, seed=3)
    b = bootstrap_errors(counts, 1000, seed=3)
    assert a.sigma_c == pytest.approx(b.sigma_c, rel=0.2)
    assert a.sigma_f == pytest.approx(b.sigma_f, rel=0.2)


# -- count simulation -------------------------------------------------------------------

def by_setting(counts):
    return {"".join(c.setting): c.coincidences for c in counts}


def test_simulated_counts_for_product_source():
    hh = np.zeros((4, 4))
    hh[0, 0] = 1
    counts = by_setting(simulate_counts(PairEnsemble.from_state(hh, 100_000), TomographyPlan(photon_efficiency=1.0,
                                                                                              integration_time=1.0), 1))
    assert counts["HV"] == 0 and counts["VV"] == 0
    assert counts["HH"] == max(counts.values())


def test_simulated_dd_da_ratio():
    plan = TomographyPlan(photon_efficiency=1.0, integration_time=1.0)
    from qdtimebin.tomography import probabilities
    ens = PairEnsemble.from_state(werner(0.693), 1_000_000)
    dd = probabilities(ens.state_sum, projector("D", "D").matrix[None])[0]
    da = probabilities(ens.state_sum, projector("D", "A").matrix[None])[0]
    assert dd / da == pytest.approx((1 + 0.693) / (1 - 0.693), rel=1e-9)
    counts = by_setting(simulate_counts(ens, plan, 2))
    # DA is not among the settings; DD against the noiseless mean
    assert abs(counts["DD"] - dd) < 4 * math.sqrt(dd)
    bell = by_setting(simulate_counts(PairEnsemble.from_state(bell_state(0).density(), 1000), plan, 2, noiseless=True))
    assert bell["DD"] == 500


def test_simulated_counts_scale_with_integration_time_and_efficiency():
    ens = PairEnsemble.from_state(np.eye(4) / 4, 16_000, duration=2.0)
    counts = by_setting(simulate_counts(ens, TomographyPlan(integration_time=4.0, photon_efficiency=0.5), 0,
                                        noiseless=True))
    # Tr(I/4 P_HH) = 1/4: 16000 pairs * 1/4 * (4 s / 2 s) * 0.5^2
    assert counts["HH"] == 2000


def test_counts_deterministic_per_seed():
    ens = PairEnsemble.from_state(werner(0.7), 10_000)
    plan = TomographyPlan(photon_efficiency=1.0, integration_time=1.0)
    assert simulate_counts(ens, plan, 5) == simulate_counts(ens, plan, 5)
    assert simulate_counts(ens, plan, 5) != simulate_counts(ens, plan, 6)


def test_counts_csv_round_trip(tmp_path):
    counts = simulate_counts(PairEnsemble.from_state(werner(0.7), 10_000),
                             TomographyPlan(photon_efficiency=1.0, integration_time=1.0), 5)
    path = tmp_path / "counts.csv"
    write_counts_csv(path, counts)
    assert path.read_text().splitlines()[0] == "setting_a,setting_b,coincidences"
    assert read_counts_csv(path) == counts
    path.write_text("setting_a,setting_b,coincidences\nH,H,3\n")
    with pytest.raises(ValueError):
        read_counts_csv(path)


# -- time-bin discrimination ---------------------------------------------------------------

def tags_from(rows):
    ch = np.array([r[0] for r in rows], np.int8)
    t = np.array([r[1] for r in rows], np.int64)
    return TimeTags(ch, t, np.full(len(rows), -1, np.int64)).sorted()


def test_discrimination_categories_and_pairs():
    # trigger at 0; XX photons at 0.2, 4.6, 8.9 ns; X partner of the middle one 1 ns later
    tags = tags_from([(2, 0), (0, 200), (0, 4600), (1, 5600), (0, 8900), (1, 12_450)])
    disc = timebin_discriminate(tags, 4.3e-9)
    cats = {(int(c), int(t)): int(k) for c, t, k in zip(tags.channel, tags.time_ps, disc.category)}
    assert cats[(0, 200)] == 0 and cats[(0, 4600)] == 1 and cats[(0, 8900)] == 2
    assert cats[(2, 0)] == -1
    # the third window ends at 3 * 4.3 ns - 0.5 ns margin = 12.4 ns
    assert cats[(1, 12_450)] == -1
    assert list(zip(tags.time_ps[disc.pair_xx], tags.time_ps[disc.pair_x])) == [(4600, 5600)]


def test_discrimination_window_centers_fit_in_one_period():
    assert 2 * 4.3e-9 < 12.5e-9
    tags = tags_from([(2, 0)] + [(0, k * 4300 + 100) for k in range(3)])
    assert list(timebin_discriminate(tags, 4.3e-9).category[1:]) == [0, 1, 2]


def test_discrimination_rejects_ambiguous_and_requires_triggers():
    tags = tags_from([(2, 0), (0, 3790), (0, 6000)])
    disc = timebin_discriminate(tags, 4.3e-9, guard=50e-12, reject_ambiguous=True)
    assert list(disc.category) == [-1, -1, 1]
    with pytest.raises(ValueError):
        timebin_discriminate(tags_from([(0, 10)]), 4.3e-9)
    unsorted = TimeTags(np.array([2, 0], np.int8), np.array([10, 0], np.int64), np.array([-1, -1]))
    with pytest.raises(ValueError):
        timebin_discriminate(unsorted, 4.3e-9)


def test_photon_jittered_ahead_of_its_trigger_stays_in_first_window():
    # 0.2 ns before the second trigger: early jitter of that pulse, not a late photon of the first
    tags = tags_from([(2, 0), (2, 12_500), (0, 12_300)])
    disc = timebin_discriminate(tags, 4.3e-9, margin=0.5e-9)
    assert list(disc.category[tags.channel == 0]) == [0]
    assert disc.trigger_delay_ps[tags.channel == 0][0] == -200
