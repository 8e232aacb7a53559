"""Core signal types, WAV I/O, resampling, padding and dataset manifests."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

DATASET_RATE = 16000
DATASET_LENGTH = 33600  # 2.1 s at 16 kHz

_PCM16_SCALE = 32768.0


class WavFormatError(ValueError):
    """Raised for WAV files we cannot read or are not willing to write."""


@dataclass(frozen=True)
class AIRSignal:
    """A sampled acoustic impulse response (FIR taps) at a known rate.

    ``taps`` is a 1-D float64 array of sound-pressure samples. Instances are
    immutable; operations return new signals.
    """

    taps: np.ndarray
    sample_rate: int
    room_label: str | None = None
    source_id: str | None = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError("taps must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps contain non-finite values")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.taps.size

    @property
    def duration(self) -> float:
        return self.taps.size / self.sample_rate


def load_air(path, room_label: str | None = None) -> AIRSignal:
    """Read a mono WAV file (PCM16 or float) into an AIRSignal.

    PCM16 samples are scaled by 1/32768 so full scale maps to [-1, 1).
    Float samples are taken verbatim.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise WavFormatError(f"unreadable WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"multi-channel WAV unsupported: {path}")
    if data.dtype == np.int16:
        taps = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype in (np.float32, np.float64):
        taps = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"unsupported WAV encoding {data.dtype} in {path} (PCM16 or float only)"
        )
    return AIRSignal(taps, rate, room_label=room_label, source_id=str(path))


def save_air(air: AIRSignal, path) -> None:
    """Write an AIRSignal as a 32-bit float mono WAV.

    Taps are cast to float32; a float32-valued signal round-trips bit-exactly
    through ``load_air``.
    """
    path = Path(path)
    data = air.taps.astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite taps")
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), air.sample_rate, data)


def resample(air: AIRSignal, target_rate: int) -> AIRSignal:
    """Polyphase-downsample to ``target_rate`` (upsampling is refused).

    Output length is round(len * target / source).
    """
    target_rate = int(target_rate)
    if target_rate > air.sample_rate:
        raise ValueError(
            f"upsampling requested ({air.sample_rate} -> {target_rate} Hz); "
            "only downsampling is supported"
        )
    if target_rate == air.sample_rate:
        return air
    g = math.gcd(target_rate, air.sample_rate)
    up, down = target_rate // g, air.sample_rate // g
    out = resample_poly(air.taps, up, down)
    n_out = round(air.taps.size * target_rate / air.sample_rate)
    if out.size > n_out:
        out = out[:n_out]
    elif out.size < n_out:
        out = np.pad(out, (0, n_out - out.size))
    return AIRSignal(out, target_rate, air.room_label, air.source_id)


def pad_to(air: AIRSignal, length: int) -> AIRSignal:
    """Append zeros so the signal has exactly ``length`` taps."""
    length = int(length)
    if length < air.taps.size:
        raise ValueError(f"cannot pad {air.taps.size} taps down to {length}")
    if length == air.taps.size:
        return air
    out = np.pad(air.taps, (0, length - air.taps.size))
    return AIRSignal(out, air.sample_rate, air.room_label, air.source_id)


def normalize_for_dataset(air: AIRSignal) -> AIRSignal:
    """Bring a measured AIR to the dataset convention: 16 kHz, 33600 taps.

    Longer signals are truncated; shorter ones zero-padded.
    """
    air = resample(air, DATASET_RATE)
    if air.taps.size > DATASET_LENGTH:
        air = AIRSignal(
            air.taps[:DATASET_LENGTH], air.sample_rate, air.room_label, air.source_id
        )
    return pad_to(air, DATASET_LENGTH)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    room: str
    meta: str = ""


@dataclass
class DatasetManifest:
    """Index of a measured-AIR corpus: one WAV per entry, grouped by room.

    Stored as ``manifest.csv`` with header ``path,room,meta``; relative paths
    resolve against the manifest's directory.
    """

    entries: list[ManifestEntry]
    base_dir: Path

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest contains duplicate file paths")

    @property
    def rooms(self) -> list[str]:
        return sorted({e.room for e in self.entries})

    def by_room(self, room: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.room == room]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.base_dir / p

    def load_entry(self, entry: ManifestEntry) -> AIRSignal:
        """Load one entry and normalize it to 16 kHz / 33600 taps."""
        air = load_air(self.resolve(entry), room_label=entry.room)
        return normalize_for_dataset(air)

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["path", "room", "meta"]:
                raise ValueError(f"bad manifest header in {path}: expected path,room,meta")
            entries = [ManifestEntry(row[0], row[1], row[2] if len(row) > 2 else "")
                       for row in reader if row]
        if not entries:
            raise ValueError(f"manifest {path} lists no files")
        return cls(entries, path.parent)

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "room", "meta"])
            for e in self.entries:
                writer.writerow([e.path, e.room, e.meta])
