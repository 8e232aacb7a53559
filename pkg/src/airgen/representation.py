"""Domain types for the low-dimensional AIR representation.

The fixed-length encoding vector packs, in order: the reverberation time,
two direct-to-reverberant energy ratios, the tail IIR denominator and
numerator coefficients, and two zero-padded blocks holding the early
reflection times-of-arrival and scales. Padding zeros precede the data in
each block, so the D detected reflections always occupy the block tail.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

D_MAX = 78
NUM_POLES = 5            # R: denominator order
NUM_ZEROS = 5            # P: numerator order (P + 1 coefficients)
REP_LENGTH = 3 + NUM_POLES + (NUM_ZEROS + 1) + 2 * D_MAX  # 170

IDX_T60 = 0
IDX_ETA1 = 1
IDX_ETA2 = 2
SLICE_A = slice(3, 3 + NUM_POLES)                     # a_1..a_5
SLICE_B = slice(8, 8 + NUM_ZEROS + 1)                 # b_0..b_5
SLICE_KAPPA = slice(14, 14 + D_MAX)                   # zero-pad + TOAs
SLICE_BETA = slice(14 + D_MAX, 14 + 2 * D_MAX)        # zero-pad + scales

T60_MAX = 10.0
POLE_MARGIN = 1e-6
REFLECTION_WINDOW_S = 0.024   # reflections up to 24 ms after the direct path


class InvalidRepresentation(ValueError):
    """An encoding vector violates the layout or parameter invariants."""


@dataclass(frozen=True)
class EarlyReflectionSet:
    """Direct path (k_d, beta_d) plus D early-reflection TOAs and scales.

    TOAs are fractional sample indices in the coordinates of the signal
    they were estimated from, strictly increasing and all after ``k_d``.
    """

    k_d: float
    beta_d: float
    kappa: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        if kappa.shape != beta.shape or kappa.ndim != 1:
            raise ValueError("kappa and beta must be 1-D and the same length")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "beta", beta)

    @property
    def d_count(self) -> int:
        return self.kappa.size

    def validate(self, sample_rate: int) -> None:
        if self.k_d < 0:
            raise InvalidRepresentation("k_d must be >= 0")
        if self.d_count > D_MAX:
            raise InvalidRepresentation(f"more than {D_MAX} reflections")
        if self.d_count == 0:
            return
        if np.any(np.diff(self.kappa) <= 0):
            raise InvalidRepresentation("reflection TOAs must be strictly increasing")
        window = REFLECTION_WINDOW_S * sample_rate
        if self.kappa[0] <= self.k_d or self.kappa[-1] > self.k_d + window + 1e-9:
            raise InvalidRepresentation(
                "reflection TOAs must lie in (k_d, k_d + 24 ms]"
            )


@dataclass(frozen=True)
class TailModel:
    """Reverberant-tail parameters: T60 plus the coloration IIR filter.

    ``b`` holds the 6 numerator coefficients, ``a`` the 5 denominator
    coefficients a_1..a_5 (a_0 = 1 is implicit).
    """

    t60: float
    b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        if b.shape != (NUM_ZEROS + 1,) or a.shape != (NUM_POLES,):
            raise ValueError(f"need {NUM_ZEROS + 1} b and {NUM_POLES} a coefficients")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    def validate(self) -> None:
        if not (0.0 < self.t60 <= T60_MAX):
            raise InvalidRepresentation(f"t60 {self.t60} outside (0, {T60_MAX}] s")
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.a))):
            raise InvalidRepresentation("non-finite IIR coefficients")
        mags = np.abs(denominator_poles(self.a))
        if mags.size and mags.max() > 1.0 - POLE_MARGIN + 1e-12:
            raise InvalidRepresentation("denominator has poles at or outside the stability margin")


def denominator_poles(a: np.ndarray) -> np.ndarray:
    """Poles of 1 / (1 + sum_j a_j z^-j)."""
    return np.roots(np.concatenate(([1.0], np.asarray(a, dtype=np.float64))))


def stabilize_denominator(a: np.ndarray, margin: float = POLE_MARGIN):
    """Remove poles outside the unit circle and pull the rest inside it.

    Poles with |p| > 1 are dropped and the polynomial re-expanded at the
    reduced order (vacated coefficient slots are zero). Surviving poles are
    radially clamped to magnitude 1 - margin so the filter is strictly
    stable. Returns ``(a_stable, changed)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        return np.zeros_like(a), True
    try:
        poles = denominator_poles(a)
    except np.linalg.LinAlgError:
        return np.zeros_like(a), True
    mags = np.abs(poles)
    keep = poles[mags <= 1.0]
    changed = keep.size != poles.size
    limit = 1.0 - margin
    kmags = np.abs(keep)
    over = kmags > limit
    if np.any(over):
        keep = keep.copy()
        keep[over] *= limit / kmags[over]
        changed = True
    coeffs = np.atleast_1d(np.poly(keep)).real
    out = np.zeros_like(a)
    out[: coeffs.size - 1] = coeffs[1:]
    if not changed and not np.allclose(out, a, rtol=0, atol=1e-12):
        changed = True
    return out, changed


@dataclass(frozen=True)
class LowDimRep:
    """The fixed-length 170-element encoding vector of one AIR."""

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.shape != (REP_LENGTH,):
            raise InvalidRepresentation(
                f"encoding vector must have length {REP_LENGTH}, got {vec.shape}"
            )
        vec = vec.copy()
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    @classmethod
    def from_parts(cls, t60, eta1, eta2, a, b, kappa, beta) -> "LowDimRep":
        kappa = np.asarray(kappa, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        d = kappa.size
        if d > D_MAX:
            raise InvalidRepresentation(f"D = {d} exceeds D_max = {D_MAX}")
        if beta.size != d:
            raise InvalidRepresentation("kappa and beta lengths differ")
        vec = np.zeros(REP_LENGTH)
        vec[IDX_T60] = t60
        vec[IDX_ETA1] = eta1
        vec[IDX_ETA2] = eta2
        vec[SLICE_A] = np.asarray(a, dtype=np.float64)
        vec[SLICE_B] = np.asarray(b, dtype=np.float64)
        if d:
            vec[SLICE_KAPPA][D_MAX - d:] = kappa
            vec[SLICE_BETA][D_MAX - d:] = beta
        return cls(vec)

    @property
    def t60(self) -> float:
        return float(self.vector[IDX_T60])

    @property
    def eta1(self) -> float:
        return float(self.vector[IDX_ETA1])

    @property
    def eta2(self) -> float:
        return float(self.vector[IDX_ETA2])

    @property
    def a(self) -> np.ndarray:
        return self.vector[SLICE_A]

    @property
    def b(self) -> np.ndarray:
        return self.vector[SLICE_B]

    @property
    def d_count(self) -> int:
        return int(np.count_nonzero(self.vector[SLICE_KAPPA]))

    @property
    def kappa(self) -> np.ndarray:
        """Direct-relative reflection TOAs (the nonzero tail of the block)."""
        d = self.d_count
        return self.vector[SLICE_KAPPA][D_MAX - d:] if d else np.empty(0)

    @property
    def beta(self) -> np.ndarray:
        d = self.d_count
        return self.vector[SLICE_BETA][D_MAX - d:] if d else np.empty(0)

    def tail_model(self) -> TailModel:
        return TailModel(self.t60, self.b.copy(), self.a.copy())

    def validate(self, sample_rate: int = 16000) -> None:
        vec = self.vector
        if not np.all(np.isfinite(vec)):
            raise InvalidRepresentation("vector contains non-finite values")
        if not (0.0 < self.t60 <= T60_MAX):
            raise InvalidRepresentation(f"t60 {self.t60} outside (0, {T60_MAX}] s")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise InvalidRepresentation("energy ratios must be positive")
        kblock = vec[SLICE_KAPPA]
        bblock = vec[SLICE_BETA]
        d = self.d_count
        if d and np.any(kblock[: D_MAX - d] != 0.0):
            raise InvalidRepresentation("TOA block padding must precede the data")
        if np.any(bblock[: D_MAX - d] != 0.0):
            raise InvalidRepresentation("scale block padding must precede the data")
        if d:
            kappa = kblock[D_MAX - d:]
            if np.any(kappa <= 0) or np.any(np.diff(kappa) <= 0):
                raise InvalidRepresentation("TOAs must be positive and strictly increasing")
            window = REFLECTION_WINDOW_S * sample_rate
            if kappa[-1] > window + 1e-9:
                raise InvalidRepresentation("TOA beyond the 24 ms reflection window")
        self.tail_model().validate()


def write_rep_csv(rep: LowDimRep, path) -> None:
    """Serialize one encoding vector as a single CSV row of 170 values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = ",".join(repr(float(v)) for v in rep.vector)
    path.write_text(line + "\n", encoding="utf-8")


def read_rep_csv(path) -> LowDimRep:
    text = Path(path).read_text(encoding="utf-8").strip()
    values = [float(tok) for tok in text.split(",")]
    if len(values) != REP_LENGTH:
        raise InvalidRepresentation(
            f"{path}: expected {REP_LENGTH} values, found {len(values)}"
        )
    return LowDimRep(np.array(values))


@dataclass(frozen=True)
class ExcitationBank:
    """PCA-reconstructed direct-path pulses used as synthesis excitations."""

    excitations: np.ndarray     # (count, window_len), each unit peak magnitude
    window_len: int
    n_components: int

    def __post_init__(self):
        exc = np.asarray(self.excitations, dtype=np.float64)
        if exc.ndim != 2 or exc.shape[1] != self.window_len:
            raise ValueError("excitations must be (count, window_len)")
        object.__setattr__(self, "excitations", exc)

    @property
    def count(self) -> int:
        return self.excitations.shape[0]


_BANK_HEADER = struct.Struct("<iii")


def write_bank(bank: ExcitationBank, path) -> None:
    """Binary bank file: int32 header (count, window_len, n_components)
    followed by count*window_len float32 values, row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_BANK_HEADER.pack(bank.count, bank.window_len, bank.n_components))
        fh.write(np.ascontiguousarray(bank.excitations, dtype="<f4").tobytes())


def read_bank(path) -> ExcitationBank:
    raw = Path(path).read_bytes()
    count, window_len, n_components = _BANK_HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f4", offset=_BANK_HEADER.size)
    if data.size != count * window_len:
        raise ValueError(f"{path}: truncated excitation bank")
    exc = data.astype(np.float64).reshape(count, window_len)
    return ExcitationBank(exc, window_len, n_components)
