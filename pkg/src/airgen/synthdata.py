"""Synthetic room corpora for tests and pipeline demos.

Rooms are parameter distributions: each draws reverberation times,
energy ratios, reflection patterns and a tail-filter pole template from
its own seeded generator, so per-room statistics differ while every AIR
is a valid decodable representation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import AIRSignal, DatasetManifest, ManifestEntry, save_air
from .representation import LowDimRep, NUM_POLES, NUM_ZEROS
from .synthesis import SynthesisConfig, assemble


def stable_poles(rng: np.random.Generator, max_radius: float = 0.9) -> np.ndarray:
    """Denominator a_1..a_5 from two conjugate pole pairs plus one real pole."""
    radii = rng.uniform(0.3, max_radius, size=2)
    angles = rng.uniform(0.2, np.pi - 0.2, size=2)
    pair = radii * np.exp(1j * angles)
    real = rng.uniform(-max_radius, max_radius)
    poles = np.concatenate([pair, pair.conj(), [real]])
    coeffs = np.poly(poles).real
    return coeffs[1: NUM_POLES + 1]


def make_excitation(rng: np.random.Generator, window_len: int = 17,
                    jitter: float = 0.05) -> np.ndarray:
    """Band-limited pulse with its peak pinned to the window center."""
    center = (window_len - 1) // 2
    n = np.arange(window_len, dtype=np.float64) - center
    bw = rng.uniform(0.6, 0.95)
    hann = 0.5 + 0.5 * np.cos(np.pi * n / (center + 1))
    pulse = np.sinc(bw * n) * hann
    while True:
        shaped = pulse * (1.0 + jitter * rng.standard_normal(window_len))
        if np.argmax(np.abs(shaped)) == center:
            return shaped / np.abs(shaped[center])


def random_rep(rng: np.random.Generator,
               t60_range: tuple[float, float] = (0.25, 0.9),
               eta_range: tuple[float, float] = (0.8, 6.0),
               d_range: tuple[int, int] = (1, 10),
               kappa_range: tuple[float, float] = (20.0, 310.0),
               min_separation: float = 3.0,
               on_grid: bool = False) -> LowDimRep:
    """Random valid encoding vector.

    TOAs keep at least ``min_separation`` samples between reflections;
    ``on_grid`` snaps them to the analysis grid of 0.25 samples.
    """
    t60 = rng.uniform(*t60_range)
    eta1, eta2 = rng.uniform(*eta_range, size=2)
    a = stable_poles(rng)
    b = np.concatenate([[1.0], rng.uniform(-0.5, 0.5, size=NUM_ZEROS)])
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    while True:
        kappa = np.sort(rng.uniform(*kappa_range, size=d))
        if on_grid:
            kappa = np.round(kappa * 4.0) / 4.0
        if d < 2 or np.diff(kappa).min() >= min_separation:
            break
    beta = rng.uniform(0.15, 0.9, size=d) * rng.choice([-1.0, 1.0], size=d)
    return LowDimRep.from_parts(t60, eta1, eta2, a, b, kappa, beta)


def sub_seed(*parts: int) -> int:
    """Stable derived integer seed for nested deterministic streams."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def make_synthetic_corpus(root, rooms: int = 7, airs_per_room: int = 94,
                          seed: int = 0, length: int = 33600,
                          sample_rate: int = 16000) -> Path:
    """Write a WAV corpus plus manifest; returns the manifest path.

    Each room gets its own narrow T60 band, energy-ratio band and a
    shared excitation family, so rooms are statistically separable.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in range(rooms):
        room = f"room_{r:02d}"
        room_rng = np.random.default_rng([seed, 10, r])
        t60_center = 0.3 + 0.5 * r / max(rooms - 1, 1)
        eta_center = room_rng.uniform(1.5, 4.0)
        base_pulse = make_excitation(room_rng)
        for i in range(airs_per_room):
            rep = random_rep(
                room_rng,
                t60_range=(t60_center - 0.04, t60_center + 0.04),
                eta_range=(max(eta_center - 0.6, 0.4), eta_center + 0.6),
            )
            jittered = base_pulse * (1.0 + 0.03 * room_rng.standard_normal(base_pulse.size))
            center = (base_pulse.size - 1) // 2
            if np.argmax(np.abs(jittered)) != center:
                jittered = base_pulse
            excitation = jittered / np.abs(jittered[center])
            cfg = SynthesisConfig(sample_rate=sample_rate, length=length,
                                  seed=sub_seed(seed, 11, r, i))
            air = assemble(rep, excitation, cfg)
            rel = f"{room}/air_{i:03d}.wav"
            save_air(air, root / rel)
            entries.append(ManifestEntry(path=rel, room=room, meta=f"synthetic_{r}_{i}"))
    manifest = DatasetManifest(entries, base_dir=root)
    manifest_path = root / "manifest.csv"
    manifest.write(manifest_path)
    return manifest_path


def make_toy_rooms(rooms: int = 3, vectors_per_room: int = 94, dim: int = 10,
                   seed: int = 0) -> dict[str, np.ndarray]:
    """Per-room Gaussian parameter clouds in a reduced dimension.

    Dimension 0 plays the reverberation-time role. Values stay in a
    bounded positive range so min-max scaling is well conditioned.
    """
    out = {}
    for r in range(rooms):
        rng = np.random.default_rng([seed, 20, r])
        mean = rng.uniform(0.25, 0.75, size=dim)
        std = rng.uniform(0.02, 0.07, size=dim)
        data = mean + std * rng.standard_normal((vectors_per_room, dim))
        out[f"room_{r:02d}"] = np.clip(data, 0.01, 0.99)
    return out
