"""Per-room adversarial model over encoding vectors.

One small generator/discriminator pair is trained per room on that
room's encoding vectors, min-max scaled to [0, 1] per dimension. The
discriminator sees instance noise; generated vectors are denormalized
and repaired (clamping, TOA sorting, pole stabilization) before use.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from .nn import (
    BatchNorm,
    Dense,
    LeakyReLU,
    Network,
    Sigmoid,
    adam_step,
    bce_loss,
    init_adam_state,
    load_network,
    save_network,
)
from .representation import (
    IDX_ETA1,
    IDX_ETA2,
    IDX_T60,
    REP_LENGTH,
    SLICE_A,
    SLICE_KAPPA,
    LowDimRep,
    stabilize_denominator,
)

log = logging.getLogger(__name__)

FIR_TAPS = 33248


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 20
    hidden: int = 256
    epochs: int = 6000
    batch_size: int = 32
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    instance_noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.instance_noise_sigma < 0:
            raise ValueError("instance_noise_sigma must be >= 0")
        if min(self.latent_dim, self.hidden, self.epochs, self.batch_size) <= 0:
            raise ValueError("latent_dim, hidden, epochs, batch_size must be positive")


class MinMaxNormalizer:
    """Per-dimension [0, 1] scaling fitted to the training set.

    Constant dimensions map to 0.5 on the way in and back to the constant
    on the way out, so exact zeros (block padding) survive a round trip.
    """

    def __init__(self, mins: np.ndarray, maxs: np.ndarray):
        self.mins = np.asarray(mins, dtype=np.float64)
        self.maxs = np.asarray(maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape or np.any(self.maxs < self.mins):
            raise ValueError("need max >= min per dimension")
        self.constant = self.maxs == self.mins

    @classmethod
    def fit(cls, data: np.ndarray) -> "MinMaxNormalizer":
        data = np.asarray(data, dtype=np.float64)
        return cls(data.min(axis=0), data.max(axis=0))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.constant, 1.0, self.maxs - self.mins)
        out = (np.asarray(x, dtype=np.float64) - self.mins) / span
        out[..., self.constant] = 0.5
        return out

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64) * (self.maxs - self.mins) + self.mins
        out[..., self.constant] = self.mins[self.constant]
        return out

    def to_dict(self) -> dict:
        return {"min": self.mins.tolist(), "max": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxNormalizer":
        return cls(np.array(d["min"]), np.array(d["max"]))


@dataclass
class GanModel:
    generator: Network
    discriminator: Network
    normalizer: MinMaxNormalizer | None
    room_label: str = ""
    history: list = field(default_factory=list)   # (d_loss, g_loss, d_accuracy)

    @property
    def data_dim(self) -> int:
        return self.generator.layers[-2].n_out


def build_gan(cfg: GanConfig, data_dim: int) -> GanModel:
    """Generator/discriminator pair for vectors of the given width."""
    rng = np.random.default_rng([cfg.seed, 0])
    h = cfg.hidden
    gen = Network([
        Dense(cfg.latent_dim, h, rng), BatchNorm(h), LeakyReLU(),
        Dense(h, h, rng), BatchNorm(h), LeakyReLU(),
        Dense(h, h, rng), BatchNorm(h), LeakyReLU(),
        Dense(h, data_dim, rng), Sigmoid(),
    ])
    dis = Network([
        Dense(data_dim, h, rng), LeakyReLU(),
        Dense(h, h, rng), LeakyReLU(),
        Dense(h, 1, rng), Sigmoid(),
    ])
    return GanModel(gen, dis, None)


def build_lowdim_gan(cfg: GanConfig) -> GanModel:
    return build_gan(cfg, REP_LENGTH)


def build_fir_gan(cfg: GanConfig, taps: int = FIR_TAPS) -> GanModel:
    return build_gan(cfg, taps)


def _as_matrix(reps) -> np.ndarray:
    if len(reps) and isinstance(reps[0], LowDimRep):
        return np.stack([r.vector for r in reps])
    return np.asarray(reps, dtype=np.float64)


def train(model: GanModel, reps, cfg: GanConfig, train_generator: bool = True) -> GanModel:
    """Adversarial training loop, deterministic under cfg.seed.

    Each minibatch runs one discriminator step on a combined batch of
    noisy real rows (label 1) and noisy generated rows (label 0), then
    one generator step through the frozen discriminator with label 1.
    History records per-epoch mean losses and discriminator accuracy at
    the 0.5 threshold. ``train_generator = False`` leaves the generator
    at its initial weights (the generator loss is still recorded).
    """
    data = _as_matrix(reps)
    if data.ndim != 2 or data.shape[1] != model.data_dim:
        raise ValueError(f"training vectors must be N x {model.data_dim}")
    if data.shape[0] < cfg.batch_size:
        raise ValueError(
            f"insufficient data: {data.shape[0]} rows < batch_size {cfg.batch_size}"
        )
    if not np.all(np.isfinite(data)):
        raise ValueError("training vectors contain non-finite values")

    model.normalizer = MinMaxNormalizer.fit(data)
    x = model.normalizer.normalize(data)
    gen, dis = model.generator, model.discriminator
    g_state = init_adam_state(gen.params())
    d_state = init_adam_state(dis.params())
    rng = np.random.default_rng([cfg.seed, 1])
    sigma = cfg.instance_noise_sigma

    for epoch in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        d_losses, g_losses, accs = [], [], []
        for lo in range(0, x.shape[0], cfg.batch_size):
            real = x[order[lo: lo + cfg.batch_size]]
            b = real.shape[0]
            if b < 2:
                continue

            z = rng.standard_normal((b, cfg.latent_dim))
            fake = gen.forward(z, train=True)
            d_in = np.vstack([real, fake])
            if sigma > 0:
                d_in = d_in + sigma * rng.standard_normal(d_in.shape)
            labels = np.concatenate([np.ones(b), np.zeros(b)])
            p = dis.forward(d_in, train=True)[:, 0]
            d_loss, grad = bce_loss(p, labels)
            dis.backward(grad[:, None], from_logits=True)
            adam_step(dis.params(), dis.grads(), d_state,
                      cfg.lr, cfg.beta1, cfg.beta2)
            accs.append(float(np.mean((p > 0.5) == (labels > 0.5))))

            z = rng.standard_normal((b, cfg.latent_dim))
            fake = gen.forward(z, train=True)
            p = dis.forward(fake, train=True)[:, 0]
            g_loss, grad = bce_loss(p, np.ones(b))
            if train_generator:
                input_grad = dis.backward(grad[:, None], from_logits=True)
                gen.backward(input_grad)
                adam_step(gen.params(), gen.grads(), g_state,
                          cfg.lr, cfg.beta1, cfg.beta2)

            if not np.isfinite(d_loss) or not np.isfinite(g_loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            d_losses.append(d_loss)
            g_losses.append(g_loss)
        model.history.append((float(np.mean(d_losses)),
                              float(np.mean(g_losses)),
                              float(np.mean(accs))))
    return model


def _seed_parts(seed) -> list[int]:
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return [int(seed)]


def sample_raw(model: GanModel, n: int, seed) -> np.ndarray:
    """Denormalized generator outputs with no validity repairs.

    ``seed`` may be an int or a tuple of ints (a derived seed stream).
    """
    if model.normalizer is None:
        raise RuntimeError("model has not been trained (no normalizer)")
    rng = np.random.default_rng([*_seed_parts(seed), 2])
    z = rng.standard_normal((n, model.generator.layers[0].n_in))
    out = model.generator.forward(z, train=False)
    return model.normalizer.denormalize(out)


def stabilize_poles(rep: LowDimRep) -> LowDimRep:
    """Drop denominator poles outside the unit circle, re-embed the
    reduced-order coefficients; numerator untouched."""
    a, changed = stabilize_denominator(rep.a)
    if not changed:
        return rep
    vec = rep.vector.copy()
    vec[SLICE_A] = a
    return LowDimRep(vec)


def _repair(vector: np.ndarray, normalizer: MinMaxNormalizer, counts: dict) -> LowDimRep:
    vec = vector.copy()
    for idx in (IDX_T60, IDX_ETA1, IDX_ETA2):
        if vec[idx] <= 0:
            vec[idx] = normalizer.mins[idx]
            counts["clamped"] += 1
    block = vec[SLICE_KAPPA]
    nz = np.flatnonzero(block)
    if nz.size:
        kappa = np.sort(block[nz])
        if not np.array_equal(kappa, block[nz]):
            counts["sorted"] += 1
        for i in range(1, kappa.size):
            if kappa[i] <= kappa[i - 1]:
                kappa[i] = kappa[i - 1] + 1e-6
                counts["ties_broken"] += 1
        block[nz] = kappa
    rep = LowDimRep(vec)
    fixed = stabilize_poles(rep)
    if fixed is not rep:
        counts["poles_stabilized"] += 1
    return fixed


def generate_with_stats(model: GanModel, n: int, seed) -> tuple[list[LowDimRep], dict]:
    """Generated encoding vectors plus a tally of the repairs applied."""
    if model.data_dim != REP_LENGTH:
        raise ValueError(f"generate needs a {REP_LENGTH}-wide generator")
    raw = sample_raw(model, n, seed)
    counts = {"clamped": 0, "sorted": 0, "ties_broken": 0, "poles_stabilized": 0}
    reps = [_repair(row, model.normalizer, counts) for row in raw]
    if any(counts.values()):
        log.info("generation repairs: %s", counts)
    return reps, counts


def generate(model: GanModel, n: int, seed: int) -> list[LowDimRep]:
    reps, _ = generate_with_stats(model, n, seed)
    return reps


@dataclass(frozen=True)
class ParamDistribution:
    name: str
    bin_edges: np.ndarray
    real_counts: np.ndarray
    gen_counts: np.ndarray
    ks: float


@dataclass(frozen=True)
class DistributionReport:
    entries: list[ParamDistribution]
    n_real: int
    n_generated: int


def _compare(name: str, real: np.ndarray, gen: np.ndarray, bins: int = 20) -> ParamDistribution:
    if real.size == 0 or gen.size == 0:
        return ParamDistribution(name, np.array([0.0, 1.0]),
                                 np.zeros(1), np.zeros(1), float("nan"))
    edges = np.histogram_bin_edges(np.concatenate([real, gen]), bins=bins)
    ks = float(ks_2samp(real, gen).statistic)
    return ParamDistribution(name, edges,
                             np.histogram(real, edges)[0].astype(float),
                             np.histogram(gen, edges)[0].astype(float), ks)


def zero_frequencies(rep: LowDimRep, sample_rate: int = 16000) -> np.ndarray:
    """Frequencies (Hz) of the tail-filter numerator roots."""
    b = rep.b
    if not np.any(b):
        return np.empty(0)
    roots = np.roots(b)
    return np.abs(np.angle(roots)) * sample_rate / (2.0 * np.pi)


def evaluate_distribution(real: list[LowDimRep], generated: list[LowDimRep],
                          sample_rate: int = 16000) -> DistributionReport:
    """Histogram + two-sample KS comparison of scalar parameters and of
    the tail-filter zero frequencies between real and generated sets."""
    if not real or not generated:
        raise ValueError("both rep lists must be non-empty")
    rm, gm = _as_matrix(real), _as_matrix(generated)
    entries = [
        _compare("t60", rm[:, IDX_T60], gm[:, IDX_T60]),
        _compare("eta1", rm[:, IDX_ETA1], gm[:, IDX_ETA1]),
        _compare("eta2", rm[:, IDX_ETA2], gm[:, IDX_ETA2]),
        _compare("zero_freq_hz",
                 np.concatenate([zero_frequencies(r, sample_rate) for r in real]),
                 np.concatenate([zero_frequencies(g, sample_rate) for g in generated])),
    ]
    return DistributionReport(entries, len(real), len(generated))


def save_gan(model: GanModel, cfg: GanConfig, out_dir, room: str) -> None:
    """Checkpoint pair plus a JSON sidecar with the normalizer, config,
    room label and final history entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_network(model.generator, out_dir / f"{room}.gen.net")
    save_network(model.discriminator, out_dir / f"{room}.dis.net")
    sidecar = {
        "room": room,
        "normalizer": model.normalizer.to_dict() if model.normalizer else None,
        "config": {k: getattr(cfg, k) for k in (
            "latent_dim", "hidden", "epochs", "batch_size", "lr",
            "beta1", "beta2", "instance_noise_sigma", "seed")},
        "final_history": list(model.history[-1]) if model.history else None,
        "epochs_trained": len(model.history),
    }
    (out_dir / f"{room}.gan.json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_gan(out_dir, room: str) -> tuple[GanModel, GanConfig]:
    out_dir = Path(out_dir)
    sidecar = json.loads((out_dir / f"{room}.gan.json").read_text(encoding="utf-8"))
    cfg = GanConfig(**sidecar["config"])
    model = GanModel(
        generator=load_network(out_dir / f"{room}.gen.net"),
        discriminator=load_network(out_dir / f"{room}.dis.net"),
        normalizer=(MinMaxNormalizer.from_dict(sidecar["normalizer"])
                    if sidecar["normalizer"] else None),
        room_label=sidecar["room"],
        history=[tuple(sidecar["final_history"])] if sidecar["final_history"] else [],
    )
    return model, cfg
