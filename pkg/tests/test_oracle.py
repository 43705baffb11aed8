import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfdesign.environment import TargetSpec, measure
from rfdesign.layout import make_template
from rfdesign.oracle import (DEFAULT_GRID, CircuitParams, FrequencyGrid, OracleConfig,
                             OracleSimulator, SMatrixSpectrum, map_template, oracle_label,
                             oracle_label_batch, pack_spectrum, solve_sparams, unpack_spectrum)

circuits = st.builds(
    lambda n, f0, ks, qi, qo: CircuitParams(n, f0, ks[: n - 1], qi, qo),
    st.integers(1, 7), st.floats(25.0, 45.0),
    st.lists(st.floats(0.005, 0.4), min_size=6, max_size=6),
    st.floats(2.0, 60.0), st.floats(2.0, 60.0))


def test_default_grid():
    g = DEFAULT_GRID.array
    assert g.size == 28 and g[0] == 26.5 and g[-1] == 40.0
    np.testing.assert_allclose(np.diff(g), 0.5)
    with pytest.raises(ValueError):
        FrequencyGrid((30.0, 29.0))


def test_calibration():
    p = map_template(make_template(4, 2.8, 2.0))
    assert p.f0_res == pytest.approx(33.0, abs=1e-12)
    assert p.k == pytest.approx((0.1, 0.1, 0.1))
    assert p.qe_in == pytest.approx(10.0) and p.qe_out == pytest.approx(10.0)
    assert p.qu == 500.0


def test_single_resonator_closed_form():
    p = CircuitParams(1, 33.0, (), 7.0, 7.0)
    s = solve_sparams(p, FrequencyGrid((30.0, 33.0, 36.0)))
    assert s.s21[1] == pytest.approx(-1.0, abs=1e-12)
    assert s.s11[1] == pytest.approx(0.0, abs=1e-12)


def test_critically_coupled_pair():
    # A = [[-j/Qe, k], [k, -j/Qe]] at resonance with k = 1/Qe gives S21 = j exactly
    qe = 8.0
    s = solve_sparams(CircuitParams(2, 33.0, (1 / qe,), qe, qe), FrequencyGrid((32.0, 33.0)))
    assert s.s21[1] == pytest.approx(1j, abs=1e-12)
    assert abs(s.s11[1]) < 1e-12


@given(circuits)
def test_lossless_unitarity(p):
    s = solve_sparams(p)
    np.testing.assert_allclose(abs(s.s11) ** 2 + abs(s.s21) ** 2, 1.0, atol=1e-9)
    np.testing.assert_allclose(abs(s.s22) ** 2 + abs(s.s21) ** 2, 1.0, atol=1e-9)
    # columns of a lossless S-matrix are orthogonal
    np.testing.assert_allclose(s.s11 * np.conj(s.s21) + s.s21 * np.conj(s.s22), 0.0, atol=1e-9)


@given(circuits, st.floats(50.0, 5000.0))
def test_lossy_passivity(p, qu):
    s = solve_sparams(CircuitParams(p.n, p.f0_res, p.k, p.qe_in, p.qe_out, qu))
    assert np.all(abs(s.s11) ** 2 + abs(s.s21) ** 2 <= 1 + 1e-12)
    for x in (s.s11, s.s21, s.s22):
        assert np.all(abs(x) <= 1 + 1e-9)


def test_bandpass_rolloff():
    p = CircuitParams(4, 33.0, (0.1, 0.08, 0.1), 10.0, 10.0, 500.0)
    f = FrequencyGrid((33.0, 33.0 * 1.3))
    s = solve_sparams(p, f)
    assert abs(s.s21[1]) < abs(s.s21[0]) <= 1


def test_label_properties():
    t = make_template(4, 2.8, 1.9)
    v = oracle_label(t)
    assert v.shape == (168,)
    assert np.all(np.abs(v) <= 1 + 1e-9)
    assert np.array_equal(v, oracle_label(t))
    assert np.all(np.isfinite(oracle_label(make_template(7, 3.6, 2.6))))
    np.testing.assert_array_equal(OracleSimulator().simulate(np.array([t.to_array()]))[0], v)


def test_pack_round_trip(rng):
    s11, s21, s22 = (rng.normal(size=28) + 1j * rng.normal(size=28) for _ in range(3))
    out = unpack_spectrum(pack_spectrum(s11, s21, s22))
    for a, b in zip(out, (s11, s21, s22)):
        np.testing.assert_array_equal(a, b)
    spec = SMatrixSpectrum.from_vector(pack_spectrum(s11, s21, s22))
    np.testing.assert_array_equal(spec.s12, s21)


def test_invalid_params():
    with pytest.raises(ValueError):
        CircuitParams(3, 33.0, (0.1,), 10, 10)
    with pytest.raises(ValueError):
        CircuitParams(2, 33.0, (-0.1,), 10, 10)
    with pytest.raises(ValueError):
        CircuitParams(2, 33.0, (0.1,), 10, 10, qu=0.0)


def test_center_frequency_decreases_with_length():
    spec = TargetSpec(33.0, 0.1, -3.0, -20.0, -20.0)
    f0m = [measure(spec, oracle_label(make_template(4, length, 1.9))).f0m
           for length in (2.0, 2.4, 2.8, 3.2, 3.6)]
    assert all(a > b for a, b in zip(f0m, f0m[1:]))


@pytest.mark.parametrize("length", [2.4, 2.8, 3.2])
def test_rejection_grows_with_order(length):
    f = map_template(make_template(2, length, 1.9)).f0_res * 1.15
    grid = FrequencyGrid((f - 0.01, f))
    db = []
    for n in range(2, 8):
        s = solve_sparams(map_template(make_template(n, length, 1.9)), grid)
        db.append(20 * np.log10(abs(s.s21[1])))
    assert all(a >= b for a, b in zip(db, db[1:]))


@given(st.integers(2, 7), st.integers(20, 36), st.integers(12, 25), st.integers(0, 7))
def test_continuity_under_small_perturbation(n, l10, c10, i):
    t = make_template(n, l10 / 10, c10 / 10)
    cw = list(t.cw)
    i = min(i, n)
    cw[i] = round(cw[i] + 0.1, 1)
    u = make_template(n, l10 / 10, cw)
    d = np.abs(oracle_label(t) - oracle_label(u))
    assert np.all(np.isfinite(d))


def test_alternate_config():
    cfg = OracleConfig(kappa_ghz_mm=84.0)
    assert map_template(make_template(2, 2.8, 2.0), cfg).f0_res == pytest.approx(30.0)
    lossless = oracle_label_batch([make_template(3, 2.8, 2.0)], cfg=OracleConfig(qu=float("inf")))
    s11, s21, _ = unpack_spectrum(lossless[0])
    np.testing.assert_allclose(abs(s11) ** 2 + abs(s21) ** 2, 1.0, atol=1e-9)
