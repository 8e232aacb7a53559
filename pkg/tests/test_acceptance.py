"""Acceptance gate: one test per shipped guarantee, tolerances pinned.

1. GAN parameter counts, per layer and total, bit-exact.
2. Encoding-vector geometry: 170 = 3 + 5 + 6 + 2 * 78 and block layout.
3. Decay law: stochastic tails round-trip T60 within 5% (mean of 20 seeds).
4. Energy-ratio exactness: decoded segment ratios equal eta1/eta2 to 1e-6.
5. Analysis-synthesis round-trip: TOAs 0.5 sample, scales 5%, T60 10%.
6. Gradient oracle: backprop vs central differences, rel. err. < 1e-4,
   100 random networks.
7. Prony oracle: 5-pole recovery < 1e-3; 1000 stabilized filters BIBO.
8. Toy GAN convergence: per-dim means within 0.05 normalized, KS < 0.25.
9. Pipeline scale: 7 rooms x 94 AIRs in, exactly 700 valid AIRs out.

Run with -v for one pass/fail line per criterion.
"""

import numpy as np
import pytest
from scipy.signal import lfilter
from scipy.stats import ks_2samp

from airgen.cli import main
from airgen.core import AIRSignal, load_air
from airgen.encoding import encode, estimate_t60, estimate_tail_iir
from airgen.gan import (
    GanConfig,
    build_fir_gan,
    build_gan,
    build_lowdim_gan,
    sample_raw,
    train,
)
from airgen.nn import (
    BatchNorm,
    Dense,
    LeakyReLU,
    Network,
    Sigmoid,
    bce_loss,
    parameter_count,
)
from airgen.representation import (
    D_MAX,
    IDX_ETA1,
    IDX_ETA2,
    IDX_T60,
    REP_LENGTH,
    SLICE_A,
    SLICE_B,
    SLICE_BETA,
    SLICE_KAPPA,
    LowDimRep,
    denominator_poles,
    read_rep_csv,
    stabilize_denominator,
)
from airgen.synthdata import (
    make_excitation,
    make_synthetic_corpus,
    make_toy_rooms,
    random_rep,
    stable_poles,
)
from airgen.synthesis import SynthesisConfig, assemble, assemble_parts, synth_polack

FS = 16000


def layer_totals(net):
    return [tot for layer in net.layers for _, tot in [layer.counts()] if tot]


def test_01_parameter_counts_match_reference_tables():
    lowdim = build_lowdim_gan(GanConfig())
    assert layer_totals(lowdim.generator) == [
        5376, 1024, 65792, 1024, 65792, 1024, 43690]
    assert layer_totals(lowdim.discriminator) == [43776, 65792, 257]
    g_tot = parameter_count(lowdim.generator)[1]
    d_tot = parameter_count(lowdim.discriminator)[1]
    assert g_tot + d_tot == 293547

    fir = build_fir_gan(GanConfig())
    assert layer_totals(fir.generator) == [
        5376, 1024, 65792, 1024, 65792, 1024, 8544736]
    assert layer_totals(fir.discriminator) == [8511744, 65792, 257]
    total = parameter_count(fir.generator)[1] + parameter_count(fir.discriminator)[1]
    assert total == 17262561
    print("criterion 1: lowdim 293,547 / fir 17,262,561, per-layer exact")


def test_02_encoding_vector_geometry():
    assert REP_LENGTH == 170
    assert D_MAX == 78
    assert 170 == 3 + 5 + 6 + 2 * 78
    assert (IDX_T60, IDX_ETA1, IDX_ETA2) == (0, 1, 2)
    assert (SLICE_A.start, SLICE_A.stop) == (3, 8)
    assert (SLICE_B.start, SLICE_B.stop) == (8, 14)
    assert (SLICE_KAPPA.start, SLICE_KAPPA.stop) == (14, 92)
    assert (SLICE_BETA.start, SLICE_BETA.stop) == (92, 170)
    rep = LowDimRep.from_parts(0.5, 1.0, 1.0, np.zeros(5), [1, 0, 0, 0, 0, 0],
                               [10.0, 20.0], [0.4, -0.2])
    v = rep.vector
    assert np.all(v[14:90] == 0.0) and v[90] == 10.0 and v[91] == 20.0
    assert np.all(v[92:168] == 0.0) and v[168] == 0.4 and v[169] == -0.2
    print("criterion 2: layout 170 = 3 + 5 + 6 + 2*78, padding before data")


def test_03_decay_law_round_trip():
    worst = 0.0
    for t60 in (0.2, 0.5, 1.0):
        errs = []
        for seed in range(20):
            n = int(2.2 * t60 * FS) + 4000
            tail = synth_polack(t60, n, SynthesisConfig(length=n, seed=seed))
            est = estimate_t60(AIRSignal(tail, FS))
            errs.append(abs(est - t60) / t60)
        mean_err = float(np.mean(errs))
        worst = max(worst, mean_err)
        assert mean_err < 0.05, f"t60 {t60}: mean error {mean_err:.4f}"
    print(f"criterion 3: worst mean T60 error {worst:.4f} (bound 0.05)")


def test_04_energy_ratio_exactness():
    rng = np.random.default_rng(2024)
    exc = make_excitation(np.random.default_rng(7))
    worst = 0.0
    for trial in range(100):
        rep = random_rep(rng)
        parts = assemble_parts(rep, exc, SynthesisConfig(seed=trial))
        e_d = np.dot(parts.direct, parts.direct)
        r1 = e_d / np.dot(parts.early, parts.early)
        r2 = e_d / np.dot(parts.late, parts.late)
        worst = max(worst, abs(r1 - rep.eta1) / rep.eta1,
                    abs(r2 - rep.eta2) / rep.eta2)
    assert worst < 1e-6
    print(f"criterion 4: worst relative ratio error {worst:.2e} (bound 1e-6)")


def test_05_analysis_synthesis_round_trip():
    rng = np.random.default_rng(2025)
    exc = make_excitation(np.random.default_rng(7))
    worst_toa = worst_scale = worst_t60 = 0.0
    for trial in range(50):
        rep = random_rep(rng)                  # D <= 10, separation >= 3
        parts = assemble_parts(rep, exc, SynthesisConfig(seed=500 + trial))
        air = AIRSignal(parts.direct + parts.early + parts.late, FS)
        back, _ = encode(air)
        err = abs(back.t60 - rep.t60) / rep.t60
        worst_t60 = max(worst_t60, err)
        assert err < 0.10, f"trial {trial}: T60 error {err:.3f}"
        # the decoder scales the early segment by s_early to hit eta1, so
        # the amplitudes physically present in the AIR are s_early * beta
        for toa, beta in zip(rep.kappa, parts.s_early * rep.beta):
            j = int(np.argmin(np.abs(back.kappa - toa)))
            d_toa = abs(back.kappa[j] - toa)
            d_scale = abs(back.beta[j] - beta) / abs(beta)
            worst_toa = max(worst_toa, d_toa)
            worst_scale = max(worst_scale, d_scale)
            assert d_toa < 0.5, f"trial {trial}: TOA error {d_toa:.3f}"
            assert d_scale < 0.05, f"trial {trial}: scale error {d_scale:.4f}"
    print(f"criterion 5: worst TOA {worst_toa:.4f} samples, "
          f"scale {worst_scale:.4f}, T60 {worst_t60:.4f}")


def random_network(rng):
    np_rng = np.random.default_rng(rng.integers(1 << 31))
    width = int(rng.integers(3, 9))
    layers = []
    prev = width
    for _ in range(int(rng.integers(1, 5))):
        w = int(rng.integers(4, 65))
        layers.append(Dense(prev, w, np_rng))
        if rng.random() < 0.5:
            layers.append(BatchNorm(w))
        layers.append(LeakyReLU())
        prev = w
    layers += [Dense(prev, 1, np_rng), Sigmoid()]
    return Network(layers), width


def loss_and_kink_signs(net, x, t):
    """Loss plus the sign pattern at every LeakyReLU input.

    Central differences are only trusted when neither perturbed forward
    crosses a kink, i.e. when the sign patterns match the base run."""
    h = x
    signs = []
    for layer in net.layers:
        if isinstance(layer, LeakyReLU):
            signs.append(h < 0)
        h = layer.forward(h, train=True)
    return bce_loss(h, t)[0], signs


def max_margin_batch(net, rng, batch, width, draws=100):
    best_x, best_margin = None, -1.0
    for _ in range(draws):
        x = rng.standard_normal((batch, width))
        h, margin = x, np.inf
        for layer in net.layers:
            if isinstance(layer, LeakyReLU):
                margin = min(margin, float(np.min(np.abs(h))))
            h = layer.forward(h, train=True)
        if margin > best_margin:
            best_x, best_margin = x, margin
    return best_x


def test_06_gradient_oracle_100_networks():
    rng = np.random.default_rng(606)
    h = 1e-4
    worst, checked, skipped = 0.0, 0, 0
    for _ in range(100):
        net, width = random_network(rng)
        x = max_margin_batch(net, rng, 8, width)
        t = rng.integers(0, 2, size=(8, 1)).astype(np.float64)

        p = net.forward(x, train=True)
        _, grad = bce_loss(p, t)
        net.backward(grad, from_logits=True)
        params, grads = net.params(), net.grads()
        _, base_signs = loss_and_kink_signs(net, x, t)
        sizes = np.array([q.size for q in params])
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        picks = rng.choice(int(offsets[-1]), size=min(50, int(offsets[-1])),
                           replace=False)
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            i = int(flat - offsets[k])
            p_arr, g = params[k].ravel(), grads[k].ravel()[i]
            keep = p_arr[i]
            p_arr[i] = keep + h
            up, s_up = loss_and_kink_signs(net, x, t)
            p_arr[i] = keep - h
            down, s_dn = loss_and_kink_signs(net, x, t)
            p_arr[i] = keep
            crossed = any(
                np.any(a != b) or np.any(a != c)
                for a, b, c in zip(base_signs, s_up, s_dn))
            if crossed:
                skipped += 1
                continue
            checked += 1
            fd = (up - down) / (2 * h)
            if abs(fd) < 1e-6 and abs(g) < 1e-6:
                continue
            rel = abs(fd - g) / max(abs(fd), abs(g))
            worst = max(worst, rel)
            assert rel < 1e-4, f"gradient mismatch {rel:.2e}"
    assert checked > 0 and skipped / (checked + skipped) < 0.2
    print(f"criterion 6: worst relative gradient error {worst:.2e} over "
          f"{checked} coordinates (bound 1e-4, {skipped} kink-skipped)")


def test_07_prony_oracle_and_stabilization():
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(10):
        a_true = stable_poles(rng)
        b_true = np.concatenate(([1.0], rng.uniform(-0.5, 0.5, 5)))
        h = lfilter(b_true, np.concatenate(([1.0], a_true)), np.eye(1, 3000, 0)[0])
        _, a_est = estimate_tail_iir(AIRSignal(h, FS), 0)
        est = denominator_poles(a_est)
        for p in denominator_poles(a_true):
            worst = max(worst, float(np.min(np.abs(est - p))))
    assert worst < 1e-3
    impulse = np.eye(1, 2000, 0)[0]
    for _ in range(1000):
        a_st, _ = stabilize_denominator(rng.uniform(-2.0, 2.0, 5))
        assert np.all(np.abs(denominator_poles(a_st)) <= 1.0 - 1e-6 + 1e-12)
        resp = lfilter([1.0], np.concatenate(([1.0], a_st)), impulse)
        assert np.all(np.abs(resp) < 1e6)
    print(f"criterion 7: worst pole error {worst:.2e} (bound 1e-3); "
          "1000/1000 stabilized filters BIBO")


def test_08_toy_gan_convergence():
    rooms = make_toy_rooms(rooms=3, vectors_per_room=94, dim=10, seed=0)
    worst_mean = worst_ks = 0.0
    for ri, (room, data) in enumerate(sorted(rooms.items())):
        cfg = GanConfig(epochs=2500, seed=100 + ri)
        model = train(build_gan(cfg, data.shape[1]), data, cfg)
        gen = sample_raw(model, 1000, seed=500 + ri)
        gen_n = model.normalizer.normalize(gen)
        data_n = model.normalizer.normalize(data)
        mean_err = float(np.max(np.abs(gen_n.mean(axis=0) - data_n.mean(axis=0))))
        ks = float(ks_2samp(gen[:, 0], data[:, 0]).statistic)
        tail_acc = float(np.mean([h[2] for h in model.history[-500:]]))
        worst_mean = max(worst_mean, mean_err)
        worst_ks = max(worst_ks, ks)
        assert mean_err < 0.05, f"{room}: mean error {mean_err:.4f}"
        assert ks < 0.25, f"{room}: KS {ks:.3f}"
        assert tail_acc > 0.5, f"{room}: discriminator accuracy {tail_acc:.3f}"
    print(f"criterion 8: worst normalized mean error {worst_mean:.4f} "
          f"(bound 0.05), worst KS {worst_ks:.3f} (bound 0.25)")


def test_09_pipeline_scale(tmp_path):
    corpus = tmp_path / "corpus"
    manifest = make_synthetic_corpus(corpus, rooms=7, airs_per_room=94, seed=0)
    out = tmp_path / "out"
    rc = main(["pipeline", "--manifest", str(manifest), "--out", str(out),
               "--count", "100", "--seed", "0", "--epochs", "800"])
    assert rc == 0
    wavs = sorted(out.glob("generated/*/*.wav"))
    assert len(wavs) == 700
    per_room = {}
    for wav in wavs:
        per_room[wav.parent.name] = per_room.get(wav.parent.name, 0) + 1
        air = load_air(wav)
        assert air.sample_rate == FS and len(air) == 33600
        assert np.all(np.isfinite(air.taps)) and np.max(np.abs(air.taps)) > 0
    assert per_room == {f"room_{r:02d}": 100 for r in range(7)}
    for rep_path in out.glob("generated/*/*.rep.csv"):
        read_rep_csv(rep_path).validate(FS)
    print("criterion 9: 700/700 generated AIRs valid across 7 rooms")
