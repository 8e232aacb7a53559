"""Estimate the low-dimensional representation from measured AIR taps.

The encoder chain: locate the direct path, extract its window as the
excitation estimate, greedily fit early-reflection atoms by matching
pursuit, estimate the reverberation time from the Schroeder curve, fit
the tail coloration IIR by Prony's method, and measure the two
direct-to-reverberant energy ratios on the same segment boundaries the
decoder uses.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.signal import correlate

from .core import AIRSignal
from .representation import (
    D_MAX,
    NUM_POLES,
    NUM_ZEROS,
    REFLECTION_WINDOW_S,
    T60_MAX,
    EarlyReflectionSet,
    ExcitationBank,
    LowDimRep,
    stabilize_denominator,
)
from .synthesis import SINC_HALF_WIDTH, atom_shape

log = logging.getLogger(__name__)

DIRECT_HALF_S = 0.0005        # direct-path window: +/- 0.5 ms around k_d
TOA_GRID_STEP = 0.25          # fractional-delay search grid, samples
MP_MIN_GAIN = 1e-3            # stop when an atom removes < 0.1% of residual energy
MERGE_WINDOW = 1.0            # picks closer than this are the same atom, samples
PRONY_MAX_SAMPLES = 4000
SCHROEDER_FIT_DB = (-5.0, -35.0)
SCHROEDER_MIN_R2 = 0.9
DRR_CAP = 1e12


class EstimationError(RuntimeError):
    """A parameter estimator could not produce a usable value."""


class EncodeError(RuntimeError):
    """A stage of the encoder failed; the message names the stage."""


def direct_window_len(sample_rate: int) -> int:
    return 2 * round(DIRECT_HALF_S * sample_rate) + 1


def mixing_point_for(k_d: float, sample_rate: int) -> int:
    return round(k_d) + round(REFLECTION_WINDOW_S * sample_rate)


def detect_direct_path(air: AIRSignal) -> tuple[float, float]:
    """TOA and signed scale of the direct sound.

    The TOA is the first tap whose magnitude reaches half the global
    maximum, refined to sub-sample precision by a parabola through the
    squared envelope; the scale is the signed quadratic interpolation of
    the taps at the refined position.
    """
    taps = air.taps
    peak = np.abs(taps).max()
    if peak == 0.0:
        raise EstimationError("all-zero input, no direct path")
    idx = int(np.argmax(np.abs(taps) >= 0.5 * peak))
    if idx == 0 or idx == taps.size - 1:
        return float(idx), float(taps[idx])
    ym, y0, yp = taps[idx - 1], taps[idx], taps[idx + 1]
    pm, p0, pp = ym * ym, y0 * y0, yp * yp
    denom = pm - 2.0 * p0 + pp
    offset = 0.5 * (pm - pp) / denom if denom < 0 else 0.0
    offset = float(np.clip(offset, -1.0, 1.0))
    beta = y0 + 0.5 * (yp - ym) * offset + 0.5 * (yp - 2.0 * y0 + ym) * offset * offset
    return idx + offset, float(beta)


def _direct_window(taps: np.ndarray, k_d: float, window_len: int) -> np.ndarray:
    """Window of taps centered on round(k_d), zero-padded at the edges."""
    start = round(k_d) - (window_len - 1) // 2
    out = np.zeros(window_len)
    lo = max(start, 0)
    hi = min(start + window_len, taps.size)
    if lo < hi:
        out[lo - start: hi - start] = taps[lo:hi]
    return out


def build_excitation_bank(airs: list[AIRSignal], window_len: int | None = None) -> ExcitationBank:
    """PCA-reconstruct every direct-path window from the leading components.

    Keeps the smallest component count explaining at least 95% of the
    window-collection variance; each reconstruction is rescaled to unit
    peak magnitude.
    """
    if len(airs) < 2:
        raise EstimationError("need at least 2 AIRs to build an excitation bank")
    rate = airs[0].sample_rate
    w = window_len if window_len is not None else direct_window_len(rate)
    rows = []
    for air in airs:
        if air.sample_rate != rate:
            raise EstimationError("mixed sample rates in excitation bank input")
        k_d, _ = detect_direct_path(air)
        rows.append(_direct_window(air.taps, k_d, w))
    x = np.stack(rows)
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    power = svals * svals
    total = power.sum()
    if total <= 0.0:
        n_comp = 1
        recon = np.tile(mean, (x.shape[0], 1))
    else:
        ratios = np.cumsum(power) / total
        n_comp = int(np.searchsorted(ratios, 0.95 - 1e-12) + 1)
        basis = vt[:n_comp]
        recon = mean + (centered @ basis.T) @ basis
    peaks = np.abs(recon).max(axis=1)
    if np.any(peaks == 0.0):
        raise EstimationError("flat direct-path window, cannot normalize excitation")
    return ExcitationBank(recon / peaks[:, None], w, n_comp)


def _mp_gains(segment: np.ndarray, shapes: list[np.ndarray], norms: np.ndarray) -> np.ndarray:
    """Correlation of the residual segment with every grid-offset atom shape.

    Row q, column j: inner product of shape q with the segment starting
    at offset j (valid positions only).
    """
    return np.stack([correlate(segment, s, mode="valid") for s in shapes])


def estimate_reflections(air: AIRSignal, excitation: np.ndarray,
                         max_reflections: int = D_MAX) -> EarlyReflectionSet:
    """Greedy matching pursuit over the 24 ms window after the direct path.

    Dictionary atoms are the excitation convolved with fractional-delay
    sinc kernels on a 0.25-sample grid. The direct path itself is fitted
    the same way first and subtracted; picking stops at max_reflections
    atoms or when the best atom removes less than 0.1% of the residual
    energy in the early window.
    """
    if not 0 <= max_reflections <= D_MAX:
        raise ValueError(f"max_reflections must be in [0, {D_MAX}]")
    excitation = np.asarray(excitation, dtype=np.float64)
    if excitation.size == 0 or not np.any(excitation):
        raise ValueError("excitation must be non-empty and nonzero")
    k_d, _ = detect_direct_path(air)
    center = (excitation.size - 1) // 2
    window = REFLECTION_WINDOW_S * air.sample_rate

    steps_per = int(round(1.0 / TOA_GRID_STEP))
    shapes = [atom_shape(excitation, q / steps_per) for q in range(steps_per)]
    norms = np.array([s @ s for s in shapes])
    span = shapes[0].size                      # identical for every offset

    # Work on a zero-padded copy so atoms near the edges stay in range.
    pad = span + SINC_HALF_WIDTH
    res = np.zeros(air.taps.size + 2 * pad)
    res[pad: pad + air.taps.size] = air.taps
    orig = res.copy()

    def fit_at(toa: float):
        """Least-squares scale of a single atom at an arbitrary delay."""
        at = int(np.floor(toa)) - SINC_HALF_WIDTH + 1 + pad
        shape = atom_shape(excitation, toa - np.floor(toa))
        norm = shape @ shape
        scale = (res[at: at + span] @ shape) / norm
        return float(scale), float(scale * scale * norm), at, shape

    def pick(lo: float, hi: float):
        """Best (toa, scale, gain, start, shape) with toa inside [lo, hi].

        The grid winner is polished by a step-halving line search on the
        exact single-atom gain; an on-grid atom polishes to itself.
        """
        first = int(np.floor(lo)) - SINC_HALF_WIDTH + 1 + pad
        last = int(np.floor(hi)) + 1 + pad
        seg = res[first: last + span]
        gains = _mp_gains(seg, shapes, norms)
        starts = np.arange(gains.shape[1], dtype=np.float64)
        toas = (first - pad + SINC_HALF_WIDTH - 1 + starts)[None, :] \
            + np.arange(steps_per)[:, None] / steps_per
        valid = (toas >= lo - 1e-9) & (toas <= hi + 1e-9)
        score = np.where(valid, gains * gains / norms[:, None], -np.inf)
        q, j = np.unravel_index(np.argmax(score), score.shape)
        toa = float(toas[q, j])
        best = fit_at(toa)
        step = TOA_GRID_STEP
        for _ in range(3):
            step *= 0.5
            for cand in (toa - step, toa + step):
                cand = min(max(cand, lo), hi)
                trial = fit_at(cand)
                if trial[1] > best[1]:
                    toa, best = cand, trial
        return toa, best[0], best[1], best[2], best[3]

    # Matched direct-path fit and subtraction.
    toa_d, beta_d, _, at, shape = pick(k_d - center - 2.0, k_d - center + 2.0)
    res[at: at + span] -= beta_d * shape

    lo, hi = toa_d + TOA_GRID_STEP, toa_d + window
    if int(np.floor(lo)) >= air.taps.size:
        raise EstimationError("early window is empty")
    e_lo = int(np.floor(lo)) - SINC_HALF_WIDTH + 1 + pad
    e_hi = int(np.floor(hi)) + 1 + pad + span
    e_init = float(res[e_lo:e_hi] @ res[e_lo:e_hi])

    picks: list[tuple[float, float]] = []
    while len(picks) < max_reflections:
        e_res = float(res[e_lo:e_hi] @ res[e_lo:e_hi])
        if e_res <= 1e-14 * max(e_init, 1e-300):
            break
        toa, scale, gain, at, shape = pick(lo, hi)
        if gain < MP_MIN_GAIN * e_res or scale == 0.0:
            break
        res[at: at + span] -= scale * shape
        picks.append((toa, scale))

    # Picks within a sample of each other are revisits of one atom (the
    # estimator cannot resolve closer pairs); keep the dominant position.
    def merge_close(toas: np.ndarray, scales: np.ndarray):
        merged: list[list[float]] = []
        for t, s in zip(toas, scales):
            if merged and t - merged[-1][0] <= MERGE_WINDOW:
                if abs(s) > abs(merged[-1][1]):
                    merged[-1][0] = t
                merged[-1][1] += s
            else:
                merged.append([t, s])
        return (np.array([t for t, _ in merged]),
                np.array([s for _, s in merged]))

    # Greedy scales are biased where atom supports overlap, and each
    # delay pick is biased by its unsubtracted neighbors. Alternate a
    # joint least-squares refit of all scales with a re-polish of every
    # delay on its own residual, then drop atoms whose refit energy falls
    # below the pursuit's own stopping resolution.
    picks.sort()
    toas = np.array([t for t, _ in picks])
    scales = np.array([s for _, s in picks])

    def atom_at(toa: float):
        at = int(np.floor(toa)) - SINC_HALF_WIDTH + 1 + pad
        return at, atom_shape(excitation, toa - np.floor(toa))

    def refit(toas: np.ndarray) -> np.ndarray:
        all_toas = np.concatenate(([toa_d], toas))
        starts = [int(np.floor(t)) - SINC_HALF_WIDTH + 1 + pad for t in all_toas]
        r_lo = min(min(starts), e_lo)
        a_mat = np.zeros((e_hi - r_lo, all_toas.size))
        for i, t in enumerate(all_toas):
            at, shape = atom_at(t)
            a_mat[at - r_lo: at - r_lo + span, i] = shape
        sol, *_ = np.linalg.lstsq(a_mat, orig[r_lo:e_hi], rcond=None)
        return sol

    def own_residual(skip: int) -> np.ndarray:
        buf = orig.copy()
        at, shape = atom_at(toa_d)
        buf[at: at + span] -= beta_d * shape
        for i, (t, s) in enumerate(zip(toas, scales)):
            if i != skip:
                at, shape = atom_at(t)
                buf[at: at + span] -= s * shape
        return buf

    def polish(buf: np.ndarray, toa: float):
        def gain_at(t: float):
            at, shape = atom_at(t)
            c = buf[at: at + span] @ shape
            norm = shape @ shape
            return c * c / norm, c / norm
        best_g, best_s = gain_at(toa)
        step = 0.5 * TOA_GRID_STEP
        for _ in range(4):
            for cand in (toa - step, toa + step):
                cand = min(max(cand, lo), hi)
                g, s = gain_at(cand)
                if g > best_g:
                    toa, best_g, best_s = cand, g, s
            step *= 0.5
        return toa, best_s

    for _ in range(3 if toas.size else 0):
        toas, scales = merge_close(toas, scales)
        sol = refit(toas)
        if np.all(np.isfinite(sol)):
            beta_d, scales = float(sol[0]), sol[1:]
        for i in range(toas.size):
            toas[i], scales[i] = polish(own_residual(i), toas[i])
        order = np.argsort(toas)
        toas, scales = toas[order], scales[order]

    if toas.size:
        toas, scales = merge_close(toas, scales)
    while toas.size:
        sol = refit(toas)
        if not np.all(np.isfinite(sol)):
            break
        beta_d = float(sol[0])
        scales = sol[1:]
        norm0 = float(shapes[0] @ shapes[0])
        keep = scales * scales * norm0 >= MP_MIN_GAIN * max(e_init, 1e-300)
        if keep.all():
            break
        toas, scales = toas[keep], scales[keep]

    keep = scales != 0.0 if toas.size else np.zeros(0, dtype=bool)
    return EarlyReflectionSet(
        k_d=k_d,
        beta_d=beta_d,
        kappa=k_d + (toas[keep] - toa_d),
        beta=scales[keep],
    )


def schroeder_curve(taps: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, relative to total energy."""
    h2 = taps * taps
    total = h2.sum()
    if total <= 0.0:
        raise EstimationError("zero-energy input")
    remaining = np.cumsum(h2[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(remaining / total)


def estimate_t60(air: AIRSignal) -> float:
    """Reverberation time from a line fit to the Schroeder decay curve.

    Fits the -5 dB to -35 dB span; rejects inputs whose decay never spans
    that range or does not follow a single slope (line-fit R^2 < 0.9).
    Estimates beyond the 10 s sanity bound are clamped and flagged.
    """
    curve = schroeder_curve(air.taps)
    top, bottom = SCHROEDER_FIT_DB
    below_top = curve <= top
    below_bottom = curve <= bottom
    if not below_bottom.any() or not below_top.any():
        raise EstimationError("decay span shorter than required for the line fit")
    i0 = int(np.argmax(below_top))
    i1 = int(np.argmax(below_bottom))
    if i1 - i0 < 2:
        raise EstimationError("decay span too short for a line fit")
    t = np.arange(i0, i1 + 1) / air.sample_rate
    y = curve[i0: i1 + 1]
    slope, intercept = np.polyfit(t, y, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    if r2 < SCHROEDER_MIN_R2:
        raise EstimationError(f"no single-slope decay (line fit R^2 = {r2:.3f})")
    if slope >= 0:
        raise EstimationError("non-decaying energy curve")
    t60 = -60.0 / slope
    if t60 > T60_MAX:
        log.warning("t60 estimate %.2f s beyond sanity bound, clamped to %.1f s", t60, T60_MAX)
        return T60_MAX
    return float(t60)


def estimate_tail_iir(air: AIRSignal, n_m: int) -> tuple[np.ndarray, np.ndarray]:
    """Prony fit of the tail: denominator by least-squares linear
    prediction over min(4000, tail length) samples (minimum-norm when the
    prediction system is rank-deficient), numerator by forward
    substitution on the first 6 tail samples, poles stabilized
    afterwards."""
    taps = air.taps
    if not 0 <= n_m < taps.size:
        raise ValueError("n_m outside the AIR")
    tail = taps[n_m:]
    if tail.size < 50:
        raise EstimationError("tail shorter than 50 samples")
    h = tail[: min(PRONY_MAX_SAMPLES, tail.size)]
    p, r = NUM_ZEROS, NUM_POLES
    rows = np.arange(p + 1, h.size)
    m = np.stack([h[rows - j] for j in range(1, r + 1)], axis=1)
    y = h[rows]
    try:
        a, *_ = np.linalg.lstsq(m, -y, rcond=None)
    except np.linalg.LinAlgError:
        a = None
    if a is None or not np.all(np.isfinite(a)):
        log.warning("singular Prony normal equations, falling back to a flat tail filter")
        b = np.zeros(p + 1)
        b[0] = 1.0
        return b, np.zeros(r)
    a, changed = stabilize_denominator(a)
    if changed:
        log.warning("tail filter poles stabilized")
    b = np.array([h[i] + sum(a[j - 1] * h[i - j] for j in range(1, min(i, r) + 1))
                  for i in range(p + 1)])
    return b, a


def measure_drr(air: AIRSignal, refl: EarlyReflectionSet, n_m: int) -> tuple[float, float]:
    """Direct-to-early and direct-to-tail energy ratios.

    Direct energy is summed over +/- 0.5 ms around k_d, early energy over
    (direct window end, n_m), tail energy over [n_m, end). A zero early or
    tail energy is degenerate: the ratio is capped at 1e12 and flagged.
    """
    taps = air.taps
    half = round(DIRECT_HALF_S * air.sample_rate)
    kd_r = round(refl.k_d)
    d_lo = max(kd_r - half, 0)
    d_hi = min(kd_r + half + 1, taps.size)
    if not d_lo < d_hi <= n_m < taps.size:
        raise ValueError("segments are empty for this n_m")
    e_d = float(taps[d_lo:d_hi] @ taps[d_lo:d_hi])
    e_r = float(taps[d_hi:n_m] @ taps[d_hi:n_m])
    e_t = float(taps[n_m:] @ taps[n_m:])

    def ratio(num, den, name):
        if den == 0.0:
            log.warning("zero %s energy, ratio capped", name)
            return DRR_CAP
        return min(num / den, DRR_CAP)

    return ratio(e_d, e_r, "early"), ratio(e_d, e_t, "tail")


def encode(air: AIRSignal, bank_window: int | None = None) -> tuple[LowDimRep, np.ndarray]:
    """Full encoder: AIR taps to the 170-element vector plus excitation.

    Returns the representation and the AIR's own direct-path window (the
    per-AIR excitation estimate). The input must already be at 16 kHz.
    """
    if air.sample_rate != 16000:
        raise ValueError(
            f"input at {air.sample_rate} Hz: resample first (16 kHz required)"
        )
    w = bank_window if bank_window is not None else direct_window_len(air.sample_rate)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            raise EncodeError(f"{name}: {exc}") from exc

    k_d, _ = stage("detect_direct_path", detect_direct_path, air)
    excitation = _direct_window(air.taps, k_d, w)
    refl = stage("estimate_reflections", estimate_reflections, air, excitation, D_MAX)
    n_m = mixing_point_for(k_d, air.sample_rate)
    # fit the decay on the tail segment only: the direct/early hump ahead of
    # the mixing point inflates the Schroeder curve and biases the slope
    t60 = stage("estimate_t60", estimate_t60,
                AIRSignal(air.taps[n_m:], air.sample_rate))
    b, a = stage("estimate_tail_iir", estimate_tail_iir, air, n_m)
    eta1, eta2 = stage("measure_drr", measure_drr, air, refl, n_m)
    kappa = np.minimum(refl.kappa - refl.k_d,
                       REFLECTION_WINDOW_S * air.sample_rate)
    rep = stage("layout", LowDimRep.from_parts,
                t60, eta1, eta2, a, b, kappa, refl.beta)
    stage("validate", rep.validate, air.sample_rate)
    return rep, excitation
