import math
import subprocess
import sys

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from awfl.wireless import (
    CellConfig,
    ClientProfile,
    FadingConfig,
    InfeasibleEnergyError,
    channel_gain,
    channel_gains,
    dbm_per_hz_to_w_per_hz,
    expected_round_energy,
    fading_factors,
    path_loss_db,
    place_clients,
    realized_transmission_energy,
    scenario_annuli,
    transmission_rate,
)


@pytest.mark.parametrize("r, expected", [(1.0, 128.1), (0.1, 90.5), (10.0, 165.7)])
def test_path_loss_reference_distances(r, expected):
    assert path_loss_db(r) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("r", [0.0, -1.0, float("nan")])
def test_path_loss_rejects_non_positive(r):
    with pytest.raises(ValueError):
        path_loss_db(r)


def test_noise_density_conversion():
    assert dbm_per_hz_to_w_per_hz(-174.0) == pytest.approx(10 ** -20.4, rel=1e-14)
    assert dbm_per_hz_to_w_per_hz(30.0) == 1.0


def test_static_gain_at_one_km():
    prof = ClientProfile(1, 1.0, 0.2)
    g = [channel_gain(prof, r).gain for r in range(5)]
    assert g[0] == pytest.approx(10 ** -12.81, rel=1e-13)
    assert len(set(g)) == 1


def test_rayleigh_factors_have_unit_mean():
    f = np.concatenate([fading_factors(1000, r, FadingConfig("rayleigh"), 3) for r in range(100)])
    assert 0.99 <= f.mean() <= 1.01


def test_gain_matrix_matches_scalar_calls():
    cell = CellConfig.from_dbm(5e6, -174.0, 1e6)
    profs = place_clients(4, cell, 1)
    fad = FadingConfig("rayleigh")
    m = channel_gains(profs, [0, 3, 7], fad, 9)
    for k, p in enumerate(profs):
        for j, r in enumerate([0, 3, 7]):
            assert m[k, j] == channel_gain(p, r, fad, 9).gain


def test_gain_reproducible_across_processes():
    code = ("from awfl.wireless import *;"
            "print(repr(channel_gain(ClientProfile(2, 0.4, 0.2), 5, FadingConfig('rayleigh'), 11).gain))")
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                           check=True).stdout for _ in range(2)}
    here = channel_gain(ClientProfile(2, 0.4, 0.2), 5, FadingConfig("rayleigh"), 11).gain
    assert outs == {repr(here) + "\n"}


def test_rate_zero_share_is_zero(cell):
    assert transmission_rate(0.0, cell, 0.2, 1e-13) == 0.0


def test_rate_at_unit_log_argument():
    W, N0, P = 5e6, 1e-20, 0.2
    cell = CellConfig(W, N0, 1e6)
    h = (math.e - 1) * 0.5 * W * N0 / P
    assert transmission_rate(0.5, cell, P, h) == pytest.approx(2.5e6, rel=1e-12)


def test_rate_full_band_reference():
    cell = CellConfig(5e6, 10 ** -20.4, 1e6)
    mpmath.mp.dps = 40
    h = mpmath.mpf(10) ** mpmath.mpf("-12.81")
    ref = 5e6 * mpmath.log(1 + mpmath.mpf("0.2") * h / (5e6 * mpmath.mpf(10) ** mpmath.mpf("-20.4")))
    got = transmission_rate(1.0, cell, 0.2, 10 ** -12.81)
    assert got == pytest.approx(float(ref), rel=1e-13)
    assert got == pytest.approx(4.69e6, rel=1e-3)


@given(st.floats(1e-16, 1e-9), st.floats(0.01, 1.0))
def test_rate_increasing_and_concave_in_share(h, P):
    cell = CellConfig(5e6, 1e-20, 1e6)
    w = np.linspace(1e-3, 1.0, 200)
    R = transmission_rate(w, cell, P, h)
    assert np.all(np.diff(R) > 0)
    assert np.all(np.diff(R, 2) <= 1e-9 * R.max())


def test_rate_rejects_bad_share(cell):
    with pytest.raises(ValueError):
        transmission_rate(1.5, cell, 0.2, 1e-13)


def test_expected_energy_trivial_cases(cell):
    profs = [ClientProfile(1, 0.5, 0.2)]
    g = channel_gains(profs, [0])[:, 0]
    assert expected_round_energy([0.0], [1.0], profs, g, cell) == 0.0
    R = transmission_rate(1.0, cell, 0.2, g[0])
    assert expected_round_energy([1.0], [1.0], profs, g, cell) == 0.2 * cell.model_size_nats / R


def test_expected_energy_symmetric_pair(cell):
    one = [ClientProfile(1, 0.5, 0.2)]
    two = [ClientProfile(1, 0.5, 0.2), ClientProfile(2, 0.5, 0.2)]
    g1 = channel_gains(one, [0])[:, 0]
    g2 = channel_gains(two, [0])[:, 0]
    e1 = expected_round_energy([0.5], [0.5], one, g1, cell)
    e2 = expected_round_energy([0.5, 0.5], [0.5, 0.5], two, g2, cell)
    assert e2 == pytest.approx(2 * e1, rel=1e-15)


def test_expected_energy_linear_in_p_and_decreasing_in_w(cell):
    profs = place_clients(3, cell, 2)
    g = channel_gains(profs, [0])[:, 0]
    w = np.array([0.2, 0.3, 0.5])
    e = lambda p, w=w: expected_round_energy(np.asarray(p), w, profs, g, cell)
    assert e([0.2, 0.4, 0.6]) == pytest.approx(0.5 * e([0.4, 0.4, 0.6]) + 0.5 * e([0.0, 0.4, 0.6]),
                                               rel=1e-13)
    assert e([0.5] * 3, np.array([0.3, 0.3, 0.4])) < e([0.5] * 3, np.array([0.2, 0.3, 0.4]))


def test_expected_energy_rejects_selected_without_band(cell):
    profs = place_clients(2, cell, 0)
    g = channel_gains(profs, [0])[:, 0]
    with pytest.raises(InfeasibleEnergyError, match=r"\[2\]"):
        expected_round_energy([0.5, 0.5], [1.0, 0.0], profs, g, cell)


def test_realized_energy():
    cell = CellConfig(5e6, 1e-20, 1e6 / math.log(2))
    assert realized_transmission_energy(0.2, cell, 1e6) == pytest.approx(0.2, rel=1e-15)
    assert realized_transmission_energy(0.2, cell, 2e6) == pytest.approx(0.1, rel=1e-15)
    with pytest.raises(ValueError):
        realized_transmission_energy(0.2, cell, 0.0)


def test_monte_carlo_energy_matches_expectation(cell):
    profs = place_clients(5, cell, 4)
    g = channel_gains(profs, [0])[:, 0]
    p = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    w = np.full(5, 0.2)
    P = np.array([q.tx_power_w for q in profs])
    per = realized_transmission_energy(P, cell, transmission_rate(w, cell, P, g))
    draws = np.random.default_rng(0).random((10_000, 5)) < p
    mc = (draws * per).sum(axis=1).mean()
    assert mc == pytest.approx(expected_round_energy(p, w, profs, g, cell), rel=0.02)


@pytest.mark.parametrize("kw", [
    dict(total_bandwidth_hz=0, noise_density_w_per_hz=1e-20, model_size_bits=1),
    dict(total_bandwidth_hz=1, noise_density_w_per_hz=-1, model_size_bits=1),
    dict(total_bandwidth_hz=1, noise_density_w_per_hz=1e-20, model_size_bits=0.5),
])
def test_cell_validation(kw):
    with pytest.raises(ValueError):
        CellConfig(**kw)


def test_profile_validation(cell):
    with pytest.raises(ValueError):
        ClientProfile(0, 0.5, 0.2)
    with pytest.raises(ValueError):
        ClientProfile(1, 0.0, 0.2)
    with pytest.raises(ValueError, match="outside"):
        ClientProfile(1, 1.5, 0.2).check_in_cell(cell)


def test_scenario_placement_rings(cell):
    for scen, (lo, hi) in [(1, (100, 200)), (2, (900, 1000))]:
        profs = place_clients(10, cell, 5, annuli=scenario_annuli(scen))
        d = np.array([p.distance_km * 1000 for p in profs])
        assert np.all((d[:5] >= lo) & (d[:5] <= hi))
        assert np.all(d <= cell.cell_radius_m)
    with pytest.raises(ValueError):
        scenario_annuli(3)
