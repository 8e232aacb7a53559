"""Direct-path detection, excitation bank, matching pursuit, T60, Prony, DRR."""

import numpy as np
import pytest
from scipy.signal import lfilter

from airgen.core import AIRSignal
from airgen.encoding import (
    EncodeError,
    EstimationError,
    build_excitation_bank,
    detect_direct_path,
    direct_window_len,
    encode,
    estimate_reflections,
    estimate_t60,
    estimate_tail_iir,
    measure_drr,
    mixing_point_for,
    schroeder_curve,
)
from airgen.representation import (
    D_MAX,
    EarlyReflectionSet,
    LowDimRep,
    denominator_poles,
)
from airgen.synthdata import make_excitation, stable_poles
from airgen.synthesis import SynthesisConfig, add_atom, assemble, place_atom

FS = 16000
EXC = make_excitation(np.random.default_rng(1234))


def a_from_poles(poles):
    return np.atleast_1d(np.poly(poles)).real[1:]


def scene(atoms, length=4000, exc=None):
    """Sum of excitation atoms at (toa, scale) pairs."""
    exc = EXC if exc is None else exc
    out = np.zeros(length)
    for toa, s in atoms:
        add_atom(out, s, toa, exc)
    return AIRSignal(out, FS), exc


# ---------------------------------------------------------------- detection

def test_detect_single_impulse():
    taps = np.zeros(256)
    taps[100] = 1.0
    assert detect_direct_path(AIRSignal(taps, FS)) == (100.0, 1.0)


def test_detect_first_arrival_wins():
    # the half-max rule keeps the first strong tap, not the global peak
    taps = np.zeros(256)
    taps[50] = 0.8
    taps[90] = 0.3
    k_d, beta = detect_direct_path(AIRSignal(taps, FS))
    assert k_d == 50.0 and beta == 0.8


def test_detect_fractional_position():
    taps = place_atom(1.0, 64.5, np.array([1.0]), 256)   # interpolated impulse
    k_d, _ = detect_direct_path(AIRSignal(taps, FS))
    assert abs(k_d - 64.5) < 0.1


def test_detect_edge_and_zero():
    taps = np.zeros(64)
    taps[0] = 1.0
    assert detect_direct_path(AIRSignal(taps, FS)) == (0.0, 1.0)
    with pytest.raises(EstimationError):
        detect_direct_path(AIRSignal(np.zeros(64), FS))


# ---------------------------------------------------------- excitation bank

def test_bank_identical_windows_need_one_component():
    air, exc = scene([(100.0, 1.0)], length=2000)
    bank = build_excitation_bank([air, air, air])
    assert bank.count == 3
    assert bank.window_len == direct_window_len(FS) == 17
    assert bank.n_components == 1
    for row in bank.excitations:
        np.testing.assert_allclose(row, exc, atol=1e-9)


def test_bank_rank_one_variation():
    airs = []
    for c in (-0.08, -0.03, 0.03, 0.08):
        taps = place_atom(1.0, 100.0, EXC, 2000)
        taps[104] += c                      # one direction of variation
        airs.append(AIRSignal(taps, FS))
    bank = build_excitation_bank(airs)
    assert bank.n_components == 1


def test_bank_two_balanced_directions():
    airs = []
    # two orthogonal perturbations with a 55/45 power split: one component
    # cannot reach the 95% variance target
    for c1, c2 in ((-0.1, 0.0), (0.1, 0.0), (0.0, -0.09), (0.0, 0.09)):
        taps = place_atom(1.0, 100.0, EXC, 2000)
        taps[103] += c1
        taps[112] += c2
        airs.append(AIRSignal(taps, FS))
    bank = build_excitation_bank(airs)
    assert bank.n_components == 2


def test_bank_input_validation():
    air, _ = scene([(100.0, 1.0)], length=2000)
    with pytest.raises(EstimationError):
        build_excitation_bank([air])
    other = AIRSignal(air.taps, 48000)
    with pytest.raises(EstimationError):
        build_excitation_bank([air, other])


# --------------------------------------------------------- matching pursuit

def test_mp_recovers_fractional_atoms_exactly():
    air, exc = scene([(100.0, 1.0), (220.0, 0.5), (250.5, -0.3), (301.25, 0.2)])
    refl = estimate_reflections(air, exc)
    assert refl.d_count == 3
    assert refl.beta_d == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(refl.kappa - refl.k_d, [120.0, 150.5, 201.25],
                               atol=1e-6)
    np.testing.assert_allclose(refl.beta, [0.5, -0.3, 0.2], atol=1e-6)
    assert np.all(np.diff(refl.kappa) > 0)


def test_mp_direct_only_yields_no_reflections():
    air, exc = scene([(100.0, 1.0)])
    refl = estimate_reflections(air, exc)
    assert refl.d_count == 0


def test_mp_respects_max_reflections():
    air, exc = scene([(100.0, 1.0), (220.0, 0.5), (250.5, -0.3), (301.25, 0.2)])
    refl = estimate_reflections(air, exc, max_reflections=1)
    assert refl.d_count == 1
    assert refl.kappa[0] - refl.k_d == pytest.approx(120.0, abs=1e-3)
    assert refl.beta[0] == pytest.approx(0.5, abs=1e-3)
    assert estimate_reflections(air, exc, max_reflections=0).d_count == 0


def test_mp_input_validation():
    air, exc = scene([(100.0, 1.0)])
    with pytest.raises(ValueError):
        estimate_reflections(air, exc, max_reflections=D_MAX + 1)
    with pytest.raises(ValueError):
        estimate_reflections(air, np.zeros(17))


def test_mp_random_sparse_scenes():
    # spaced atoms anywhere in the window come back within half a sample
    # and 5% of their amplitude
    rng = np.random.default_rng(31)
    for _ in range(5):
        while True:
            toas = np.sort(rng.uniform(160.0, 520.0, size=6))
            if np.all(np.diff(toas) >= 3.0):
                break
        scales = rng.uniform(0.2, 0.8, size=6) * rng.choice([-1.0, 1.0], size=6)
        air, _ = scene([(150.0, 1.0)] + list(zip(toas, scales)), length=2000)
        refl = estimate_reflections(air, EXC)
        got = refl.kappa - refl.k_d + 150.0   # back to absolute positions
        for toa, s in zip(toas, scales):
            j = int(np.argmin(np.abs(got - toa)))
            assert abs(got[j] - toa) < 0.5
            assert abs(refl.beta[j] - s) / abs(s) < 0.05


# ----------------------------------------------------------------------- T60

def test_t60_exact_exponential():
    t60 = 0.3
    n = np.arange(int(1.5 * t60 * FS), dtype=np.float64)
    taps = np.exp(-3.0 * np.log(10.0) * n / (t60 * FS))
    est = estimate_t60(AIRSignal(taps, FS))
    assert abs(est - t60) / t60 < 1e-6


def test_t60_noisy_exponential():
    rng = np.random.default_rng(123)
    t60 = 0.5
    n = np.arange(int(2.2 * t60 * FS) + 4000, dtype=np.float64)
    taps = rng.standard_normal(n.size) * np.exp(-3.0 * np.log(10.0) * n / (t60 * FS))
    est = estimate_t60(AIRSignal(taps, FS))
    assert abs(est - t60) / t60 < 0.05


def test_t60_rejects_non_decaying_input():
    rng = np.random.default_rng(0)
    with pytest.raises(EstimationError, match="single-slope"):
        estimate_t60(AIRSignal(rng.standard_normal(8000), FS))
    with pytest.raises(EstimationError, match="span"):
        estimate_t60(AIRSignal(np.ones(100), FS))


def test_t60_clamps_absurd_estimates():
    t60 = 20.0
    n = np.arange(int(0.62 * t60 * FS), dtype=np.float64)
    taps = np.exp(-3.0 * np.log(10.0) * n / (t60 * FS))
    assert estimate_t60(AIRSignal(taps, FS)) == 10.0


def test_schroeder_curve_starts_at_zero_and_decreases():
    rng = np.random.default_rng(5)
    taps = rng.standard_normal(4000) * np.exp(-np.arange(4000) / 800.0)
    curve = schroeder_curve(taps)
    assert abs(curve[0]) < 1e-12        # full remaining energy: 0 dB up to rounding
    assert np.all(np.diff(curve) <= 1e-12)
    with pytest.raises(EstimationError):
        schroeder_curve(np.zeros(16))


# --------------------------------------------------------------------- Prony

def test_prony_rank_deficient_recovers_true_poles():
    # 3 active poles under a 5-pole fit: minimum-norm solution keeps them
    true = np.array([0.9, 0.7, -0.5])
    h = lfilter([1.0, 0.2, -0.1], np.concatenate(([1.0], a_from_poles(true))),
                np.eye(1, 3000, 0)[0])
    b, a = estimate_tail_iir(AIRSignal(h, FS), 0)
    est = denominator_poles(a)
    for p in true:
        assert np.min(np.abs(est - p)) < 1e-6
    recon = lfilter(b, np.concatenate(([1.0], a)), np.eye(1, 6, 0)[0])
    np.testing.assert_allclose(recon, h[:6], atol=1e-9)


def test_prony_impulse_tail_gives_flat_filter():
    taps = np.zeros(200)
    taps[0] = 1.0
    b, a = estimate_tail_iir(AIRSignal(taps, FS), 0)
    np.testing.assert_array_equal(a, np.zeros(5))
    np.testing.assert_array_equal(b, [1, 0, 0, 0, 0, 0])


def test_prony_random_stable_filters():
    rng = np.random.default_rng(77)
    for _ in range(5):
        a_true = stable_poles(rng)
        b_true = np.concatenate(([1.0], rng.uniform(-0.5, 0.5, 5)))
        h = lfilter(b_true, np.concatenate(([1.0], a_true)), np.eye(1, 3000, 0)[0])
        _, a = estimate_tail_iir(AIRSignal(h, FS), 0)
        est = denominator_poles(a)
        for p in denominator_poles(a_true):
            assert np.min(np.abs(est - p)) < 1e-6


def test_prony_input_validation():
    taps = np.ones(100)
    with pytest.raises(ValueError):
        estimate_tail_iir(AIRSignal(taps, FS), 200)
    with pytest.raises(EstimationError):
        estimate_tail_iir(AIRSignal(taps, FS), 60)   # only 40 tail samples


# ----------------------------------------------------------------------- DRR

def test_drr_segment_arithmetic():
    taps = np.zeros(2000)
    taps[92:109] = 2.0       # direct: +/- 8 samples around k_d = 100
    taps[109:484] = 0.5      # early, up to n_m = 100 + 384
    taps[484:] = 0.1         # tail
    refl = EarlyReflectionSet(100.0, 2.0, np.array([130.0]), np.array([0.5]))
    n_m = mixing_point_for(100.0, FS)
    assert n_m == 484
    eta1, eta2 = measure_drr(AIRSignal(taps, FS), refl, n_m)
    e_d, e_r, e_t = 17 * 4.0, 375 * 0.25, 1516 * 0.01
    assert eta1 == pytest.approx(e_d / e_r, rel=1e-12)
    assert eta2 == pytest.approx(e_d / e_t, rel=1e-12)


def test_drr_caps_degenerate_ratios():
    taps = np.zeros(2000)
    taps[92:109] = 1.0
    refl = EarlyReflectionSet(100.0, 1.0, np.empty(0), np.empty(0))
    eta1, eta2 = measure_drr(AIRSignal(taps, FS), refl, 492)
    assert eta1 == 1e12 and eta2 == 1e12
    with pytest.raises(ValueError):
        measure_drr(AIRSignal(taps, FS), refl, 2000)


# -------------------------------------------------------------------- encode

def test_encode_requires_dataset_rate():
    air = AIRSignal(np.random.default_rng(1).standard_normal(1000), 48000)
    with pytest.raises(ValueError, match="resample"):
        encode(air)


def test_encode_names_failing_stage():
    rng = np.random.default_rng(2)
    air = AIRSignal(rng.standard_normal(4000), FS)   # no decay: T60 must fail
    with pytest.raises(EncodeError, match="estimate_t60"):
        encode(air)


def test_decode_then_encode_round_trip():
    rep = LowDimRep.from_parts(
        t60=0.5, eta1=2.0, eta2=5.0,
        a=a_from_poles([0.5, -0.4, 0.3, 0.15, -0.1]),
        b=[1.0, 0.3, 0.0, 0.0, 0.0, 0.0],
        kappa=[50.0, 120.25, 200.5], beta=[0.6, -0.4, 0.3],
    )
    air = assemble(rep, EXC, SynthesisConfig(seed=42))
    back, excitation = encode(air)
    assert excitation.size == 17
    assert abs(back.t60 - rep.t60) / rep.t60 < 0.05
    assert abs(back.eta1 - rep.eta1) / rep.eta1 < 0.10
    assert abs(back.eta2 - rep.eta2) / rep.eta2 < 0.10
    assert abs(back.d_count - rep.d_count) <= 2
    for toa in rep.kappa:
        assert np.min(np.abs(back.kappa - toa)) < 1.0
    back.validate(FS)
