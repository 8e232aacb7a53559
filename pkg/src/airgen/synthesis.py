"""Render an encoding vector back into FIR taps.

The decoder places a direct-path excitation at the origin, adds the early
reflections as fractionally delayed copies of the same excitation, renders
a stochastic reverberant tail (exponentially decaying white noise colored
by the tail IIR filter), and joins the three on disjoint segments whose
energies are scaled to hit the encoded direct-to-early and direct-to-tail
ratios exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .core import AIRSignal
from .representation import (
    REFLECTION_WINDOW_S,
    ExcitationBank,
    LowDimRep,
    denominator_poles,
)

SINC_HALF_WIDTH = 32
MIX_MODES = ("verbatim", "continuous")


@dataclass(frozen=True)
class SynthesisConfig:
    sample_rate: int = 16000
    length: int = 33600
    mix_mode: str = "continuous"
    seed: int = 0

    def __post_init__(self):
        if self.mix_mode not in MIX_MODES:
            raise ValueError(f"mix_mode must be one of {MIX_MODES}")
        if self.sample_rate <= 0 or self.length <= 0:
            raise ValueError("sample_rate and length must be positive")


def fractional_delay_kernel(frac: float, half_width: int = SINC_HALF_WIDTH) -> np.ndarray:
    """Hann-windowed sinc interpolation kernel for a delay of ``frac`` samples.

    ``frac`` must lie in [0, 1). The kernel covers integer offsets
    -half_width+1 .. half_width; for frac == 0 it reduces to a unit impulse
    at offset 0 because the sinc zeros out on the remaining integers.
    """
    if not 0.0 <= frac < 1.0:
        raise ValueError("frac must be in [0, 1)")
    j = np.arange(-half_width + 1, half_width + 1, dtype=np.float64)
    x = j - frac
    return np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / half_width))


def atom_shape(excitation: np.ndarray, frac: float,
               half_width: int = SINC_HALF_WIDTH) -> np.ndarray:
    """Excitation convolved with the fractional-delay kernel.

    An atom with time of arrival ``toa = i + frac`` occupies absolute
    samples ``i - half_width + 1 .. i - half_width + len(shape)``.
    """
    excitation = np.asarray(excitation, dtype=np.float64)
    return np.convolve(excitation, fractional_delay_kernel(frac, half_width))


def place_atom(scale: float, toa: float, excitation: np.ndarray, length: int) -> np.ndarray:
    """Scaled excitation at a fractional-sample time of arrival.

    Samples that fall outside [0, length) are clipped away.
    """
    if not np.isfinite(toa):
        raise ValueError("toa must be finite")
    out = np.zeros(length)
    add_atom(out, scale, toa, np.asarray(excitation, dtype=np.float64))
    return out


def add_atom(out: np.ndarray, scale: float, toa: float, excitation: np.ndarray,
             half_width: int = SINC_HALF_WIDTH) -> None:
    i = int(np.floor(toa))
    shape = atom_shape(excitation, toa - i, half_width)
    start = i - half_width + 1
    lo = max(start, 0)
    hi = min(start + shape.size, out.size)
    if lo < hi:
        out[lo:hi] += scale * shape[lo - start: hi - start]


def synth_direct(rep: LowDimRep, excitation: np.ndarray, cfg: SynthesisConfig) -> np.ndarray:
    """Unit-scale direct path at TOA 0: the excitation itself on [0, w)."""
    del rep
    return place_atom(1.0, 0.0, excitation, cfg.length)


def synth_early(rep: LowDimRep, excitation: np.ndarray, cfg: SynthesisConfig) -> np.ndarray:
    """Sum of the early-reflection atoms at their direct-relative TOAs.

    A TOA marks where the excitation's first sample lands, matching the
    direct path's placement at 0, so stored TOA offsets carry over."""
    excitation = np.asarray(excitation, dtype=np.float64)
    out = np.zeros(cfg.length)
    for kappa, beta in zip(rep.kappa, rep.beta):
        add_atom(out, beta, kappa, excitation)
    return out


def synth_polack(t60: float, length: int, cfg: SynthesisConfig) -> np.ndarray:
    """White Gaussian noise under the exponential reverberation envelope.

    The envelope reaches -60 dB (amplitude 1e-3) exactly at n*Ts = t60.
    """
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    rng = np.random.default_rng([cfg.seed, 0])
    n = np.arange(length, dtype=np.float64)
    envelope = np.exp(-3.0 * np.log(10.0) * n / (t60 * cfg.sample_rate))
    return rng.standard_normal(length) * envelope


def apply_tail_iir(tail: np.ndarray, b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Color the stochastic tail with the all-pole/zero filter b(z)/(1 + a(z)).

    The denominator must be strictly stable.
    """
    a = np.asarray(a, dtype=np.float64)
    poles = denominator_poles(a)
    if poles.size and np.abs(poles).max() >= 1.0:
        raise ValueError("unstable tail filter: pole magnitude >= 1")
    return lfilter(np.asarray(b, dtype=np.float64), np.concatenate(([1.0], a)), tail)


def apply_crossfade(tail: np.ndarray, k_d: int, n_m: int, mode: str = "continuous") -> np.ndarray:
    """Piecewise placement of the tail behind a mixing point.

    Output is zero before ``k_d``, the time-reversed tail read at
    ``2*n_m - n + k_d`` on ``[k_d, n_m)`` (a fade-in whose envelope meets
    the fade-out branch), and the tail shifted to start at the mixing
    point from ``n_m`` on. ``verbatim`` reads the shifted branch at
    ``n - n_m - k_d`` exactly; ``continuous`` drops the extra ``k_d``
    offset so the tail's first sample lands on ``n_m`` with no gap.
    Reads outside the tail's support are zero.
    """
    if mode not in MIX_MODES:
        raise ValueError(f"mode must be one of {MIX_MODES}")
    tail = np.asarray(tail, dtype=np.float64)
    length = tail.size
    if not 0 <= k_d < n_m < length:
        raise ValueError("need 0 <= k_d < n_m < len(tail)")
    out = np.zeros(length)
    n = np.arange(k_d, n_m)
    src = 2 * n_m - n + k_d
    ok = src < length
    out[n[ok]] = tail[src[ok]]
    n = np.arange(n_m, length)
    src = n - n_m - (k_d if mode == "verbatim" else 0)
    ok = src >= 0
    out[n[ok]] = tail[src[ok]]
    return out


def mixing_point(excitation_len: int, sample_rate: int) -> int:
    """First tail sample: one reflection window past the direct-path peak."""
    center = (excitation_len - 1) // 2
    return center + round(REFLECTION_WINDOW_S * sample_rate)


@dataclass(frozen=True)
class AssemblyParts:
    """Diagnostic breakdown of one decoded AIR."""

    direct: np.ndarray        # nonzero on [0, direct_len) only
    early: np.ndarray         # scaled, nonzero on [direct_len, n_m) only
    late: np.ndarray          # scaled, nonzero on [n_m, length) only
    s_early: float
    s_late: float
    direct_len: int
    n_m: int


def assemble_parts(rep: LowDimRep, excitation: np.ndarray,
                   cfg: SynthesisConfig) -> AssemblyParts:
    """Compose direct, early and tail segments with exact energy ratios.

    Each component is masked to its own segment before scaling, so the
    segment energy ratios of the result equal eta1 and eta2 exactly; any
    interpolation ringing that falls outside a component's segment is
    discarded rather than blended. With no reflections the early segment
    stays zero and eta1 cannot be realized.
    """
    rep.validate(cfg.sample_rate)
    excitation = np.asarray(excitation, dtype=np.float64)
    w = excitation.size
    n_m = mixing_point(w, cfg.sample_rate)
    if not w < n_m < cfg.length:
        raise ValueError("output too short for the direct/early/tail split")

    direct = synth_direct(rep, excitation, cfg)
    direct[w:] = 0.0
    e_direct = float(np.dot(direct, direct))
    if e_direct == 0.0:
        raise ValueError("excitation has no energy")

    early = synth_early(rep, excitation, cfg)
    early[:w] = 0.0
    early[n_m:] = 0.0
    e_early = float(np.dot(early, early))
    s_early = np.sqrt(e_direct / (rep.eta1 * e_early)) if e_early > 0 else 0.0

    tail = apply_tail_iir(synth_polack(rep.t60, cfg.length, cfg), rep.b, rep.a)
    late = apply_crossfade(tail, 0, n_m, cfg.mix_mode)
    late[:n_m] = 0.0
    e_late = float(np.dot(late, late))
    if e_late == 0.0:
        raise ValueError("reverberant tail has no energy")
    s_late = np.sqrt(e_direct / (rep.eta2 * e_late))

    return AssemblyParts(direct, s_early * early, s_late * late,
                         s_early, s_late, w, n_m)


def assemble(rep: LowDimRep, excitation: np.ndarray, cfg: SynthesisConfig) -> AIRSignal:
    parts = assemble_parts(rep, excitation, cfg)
    taps = parts.direct + parts.early + parts.late
    return AIRSignal(taps, cfg.sample_rate)


def decode(rep: LowDimRep, bank: ExcitationBank, cfg: SynthesisConfig) -> AIRSignal:
    """Decode with an excitation drawn uniformly from the bank.

    The draw uses a seed stream derived from ``cfg.seed`` that is separate
    from the tail-noise stream, so decodes are reproducible bit for bit.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    idx = int(rng.integers(bank.count))
    return assemble(rep, bank.excitations[idx], cfg)
