"""Command-line pipeline: encode, train, generate, stats, decode.

Stage outputs are plain files under one output directory so any stage
can be rerun or inspected on its own:

    out/
      effective_config.toml      echoed run configuration
      banks/<room>.bank          per-room excitation banks
      reps/<room>/*.rep.csv      encoded representations
      encode_summary.csv
      models/<room>.{gen,dis}.net + .gan.json + history CSV/PNG
      generated/<room>/gen_*.wav + gen_*.rep.csv
      stats/<room>.dist.{csv,json,png} + rollup.csv
"""

from __future__ import annotations

import argparse
import logging
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import DatasetManifest, save_air
from .encoding import EncodeError, build_excitation_bank, encode
from .gan import (
    GanConfig,
    build_lowdim_gan,
    evaluate_distribution,
    generate_with_stats,
    load_gan,
    save_gan,
    train,
)
from .representation import (
    InvalidRepresentation,
    read_bank,
    read_rep_csv,
    write_bank,
    write_rep_csv,
)
from .reports import (
    plot_history,
    write_distribution_report,
    write_encode_summary,
    write_history_csv,
    write_stats_rollup,
)
from .synthdata import sub_seed
from .synthesis import MIX_MODES, SynthesisConfig, decode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    manifest: str = ""
    out: str = "out"
    rooms: tuple[str, ...] = ()          # empty = all rooms found
    count: int = 100
    seed: int = 0
    epochs: int = 6000
    batch_size: int = 32
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    instance_noise_sigma: float = 0.1
    latent_dim: int = 20
    hidden: int = 256
    mix_mode: str = "continuous"
    jobs: int = 1
    length: int = 33600
    sample_rate: int = 16000
    max_retries: int = 5

    def __post_init__(self):
        if self.count <= 0 or self.jobs <= 0 or self.max_retries <= 0:
            raise ValueError("count, jobs and max_retries must be positive")
        if self.mix_mode not in MIX_MODES:
            raise ValueError(f"mix_mode must be one of {MIX_MODES}")


_CONFIG_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Flat key = value file: comments with #, quoted or bare strings,
    ints, floats, booleans. Keys must be RunConfig fields."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, rest = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_TYPES:
            raise ValueError(
                f"{path}:{lineno}: unknown key {key!r} (valid: {', '.join(sorted(_CONFIG_TYPES))})"
            )
        rest = rest.strip()
        if rest.startswith('"'):
            end = rest.find('"', 1)
            if end < 0:
                raise ValueError(f"{path}:{lineno}: unterminated string")
            values[key] = rest[1:end]
            continue
        token = rest.split("#", 1)[0].strip()
        if token.lower() in ("true", "false"):
            values[key] = token.lower() == "true"
        else:
            try:
                values[key] = int(token)
            except ValueError:
                try:
                    values[key] = float(token)
                except ValueError:
                    values[key] = token
    if "rooms" in values and isinstance(values["rooms"], str):
        values["rooms"] = tuple(r.strip() for r in values["rooms"].split(",") if r.strip())
    return values


def write_effective_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "rooms":
            value = ",".join(value)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        else:
            text = repr(value)
        lines.append(f"{f.name} = {text}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def room_seed(cfg_seed: int, room: str) -> int:
    """Stable per-room seed independent of room order or subset choice."""
    return sub_seed(cfg_seed, zlib.crc32(room.encode("utf-8")))


def _select_rooms(available: list[str], wanted) -> list[str]:
    if not wanted:
        return sorted(available)
    missing = sorted(set(wanted) - set(available))
    if missing:
        raise ValueError(f"rooms not found: {', '.join(missing)}")
    return sorted(wanted)


def _rooms_under(directory: Path) -> list[str]:
    if not directory.is_dir():
        return []
    return sorted(p.name for p in directory.iterdir() if p.is_dir())


def _run_per_room(worker, cfg: RunConfig, rooms: list[str]) -> list[dict]:
    args = [(cfg, room) for room in rooms]
    if cfg.jobs == 1 or len(rooms) <= 1:
        return [worker(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(rooms))) as pool:
        return list(pool.map(worker, args))


# ---------------------------------------------------------------- encode

def _encode_room(args) -> dict:
    cfg, room = args
    out = Path(cfg.out)
    manifest = DatasetManifest.read(cfg.manifest)
    entries = manifest.by_room(room)
    airs, names, failures = [], [], []
    for entry in entries:
        try:
            airs.append(manifest.load_entry(entry))
            names.append(Path(entry.path).stem)
        except Exception as exc:
            failures.append(f"{entry.path}: {exc}")
            log.error("encode %s: loading %s failed: %s", room, entry.path, exc)
    result = {"room": room, "failures": failures, "encoded": 0}
    if len(airs) < 2:
        failures.append(f"{room}: fewer than 2 loadable AIRs, no excitation bank")
        return result
    write_bank(build_excitation_bank(airs), out / "banks" / f"{room}.bank")
    rep_dir = out / "reps" / room
    t60s, d_counts = [], []
    for air, name in zip(airs, names):
        try:
            rep, _ = encode(air)
        except (EncodeError, ValueError) as exc:
            failures.append(f"{room}/{name}: {exc}")
            log.error("encode %s/%s failed: %s", room, name, exc)
            continue
        write_rep_csv(rep, rep_dir / f"{name}.rep.csv")
        t60s.append(rep.t60)
        d_counts.append(rep.d_count)
    result["encoded"] = len(t60s)
    if t60s:
        result["summary"] = {
            "room": room,
            "count": len(t60s),
            "t60_mean": float(np.mean(t60s)),
            "t60_std": float(np.std(t60s)),
            "mean_d": float(np.mean(d_counts)),
        }
    return result


def cmd_encode(cfg: RunConfig) -> int:
    manifest = DatasetManifest.read(cfg.manifest)   # fails fast if empty/invalid
    rooms = _select_rooms(manifest.rooms, cfg.rooms)
    results = _run_per_room(_encode_room, cfg, rooms)
    summaries = [r["summary"] for r in results if "summary" in r]
    write_encode_summary(summaries, Path(cfg.out) / "encode_summary.csv")
    n_failed = sum(len(r["failures"]) for r in results)
    n_encoded = sum(r["encoded"] for r in results)
    log.info("encoded %d AIRs across %d rooms (%d failures)", n_encoded, len(rooms), n_failed)
    return 1 if n_failed else 0


# ----------------------------------------------------------------- train

def _train_room(args) -> dict:
    cfg, room = args
    out = Path(cfg.out)
    model_dir = out / "models"
    if (model_dir / f"{room}.gan.json").exists():
        log.info("train %s: checkpoint exists, skipping", room)
        return {"room": room, "skipped": True, "failures": []}
    rep_paths = sorted((out / "reps" / room).glob("*.rep.csv"))
    failures = []
    try:
        reps = [read_rep_csv(p) for p in rep_paths]
        gan_cfg = GanConfig(
            latent_dim=cfg.latent_dim, hidden=cfg.hidden, epochs=cfg.epochs,
            batch_size=cfg.batch_size, lr=cfg.lr, beta1=cfg.beta1,
            beta2=cfg.beta2, instance_noise_sigma=cfg.instance_noise_sigma,
            seed=room_seed(cfg.seed, room),
        )
        model = build_lowdim_gan(gan_cfg)
        model.room_label = room
        train(model, reps, gan_cfg)
        save_gan(model, gan_cfg, model_dir, room)
        write_history_csv(model.history, model_dir / f"{room}.history.csv")
        plot_history(model.history, model_dir / f"{room}.history.png")
        d_loss, g_loss, acc = model.history[-1]
        log.info("train %s: %d epochs, d_loss %.4f g_loss %.4f acc %.3f",
                 room, len(model.history), d_loss, g_loss, acc)
    except Exception as exc:
        failures.append(f"{room}: {exc}")
        log.error("train %s failed: %s", room, exc)
    return {"room": room, "skipped": False, "failures": failures}


def cmd_train(cfg: RunConfig) -> int:
    rooms = _select_rooms(_rooms_under(Path(cfg.out) / "reps"), cfg.rooms)
    if not rooms:
        log.error("no encoded reps under %s", Path(cfg.out) / "reps")
        return 1
    results = _run_per_room(_train_room, cfg, rooms)
    return 1 if any(r["failures"] for r in results) else 0


# -------------------------------------------------------------- generate

def _generate_room(args) -> dict:
    cfg, room = args
    out = Path(cfg.out)
    failures: list[str] = []
    try:
        model, _ = load_gan(out / "models", room)
        bank = read_bank(out / "banks" / f"{room}.bank")
    except Exception as exc:
        return {"room": room, "failures": [f"{room}: {exc}"], "written": 0}
    rseed = room_seed(cfg.seed, room)
    reps, repairs = generate_with_stats(model, cfg.count, rseed)
    gen_dir = out / "generated" / room
    gen_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    redraws = 0
    for i, rep in enumerate(reps):
        valid = False
        for attempt in range(cfg.max_retries + 1):
            try:
                rep.validate(cfg.sample_rate)
                valid = True
                break
            except InvalidRepresentation as exc:
                if attempt == cfg.max_retries:
                    break
                redraws += 1
                log.warning("generate %s sample %d invalid (%s), redrawing", room, i, exc)
                rep = generate_with_stats(model, 1, (rseed, i, attempt))[0][0]
        if not valid:
            failures.append(f"{room}: sample {i} still invalid after {cfg.max_retries} redraws")
            continue
        syn = SynthesisConfig(sample_rate=cfg.sample_rate, length=cfg.length,
                              mix_mode=cfg.mix_mode, seed=sub_seed(rseed, 30, i))
        air = decode(rep, bank, syn)
        save_air(air, gen_dir / f"gen_{i:03d}.wav")
        write_rep_csv(rep, gen_dir / f"gen_{i:03d}.rep.csv")
        written += 1
    repairs["redraws"] = redraws
    log.info("generate %s: %d/%d AIRs written, repairs %s", room, written, cfg.count, repairs)
    return {"room": room, "failures": failures, "written": written}


def cmd_generate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    model_rooms = {p.name[: -len(".gan.json")] for p in (out / "models").glob("*.gan.json")}
    bank_rooms = {p.name[: -len(".bank")] for p in (out / "banks").glob("*.bank")}
    rooms = _select_rooms(sorted(model_rooms & bank_rooms), cfg.rooms)
    if not rooms:
        log.error("no trained models with matching banks under %s", out)
        return 1
    results = _run_per_room(_generate_room, cfg, rooms)
    total = sum(r["written"] for r in results)
    log.info("generated %d AIRs across %d rooms", total, len(rooms))
    return 1 if any(r["failures"] for r in results) else 0


# ----------------------------------------------------------------- stats

def _stats_room(args) -> dict:
    cfg, room = args
    out = Path(cfg.out)
    try:
        real = [read_rep_csv(p) for p in sorted((out / "reps" / room).glob("*.rep.csv"))]
        gen = [read_rep_csv(p) for p in sorted((out / "generated" / room).glob("*.rep.csv"))]
        report = evaluate_distribution(real, gen, cfg.sample_rate)
        write_distribution_report(report, out / "stats", room)
        return {"room": room, "failures": [], "report": report}
    except Exception as exc:
        log.error("stats %s failed: %s", room, exc)
        return {"room": room, "failures": [f"{room}: {exc}"]}


def cmd_stats(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    rooms = _select_rooms(
        sorted(set(_rooms_under(out / "reps")) & set(_rooms_under(out / "generated"))),
        cfg.rooms)
    if not rooms:
        log.error("need both reps/ and generated/ under %s", out)
        return 1
    results = _run_per_room(_stats_room, cfg, rooms)
    reports = {r["room"]: r["report"] for r in results if "report" in r}
    if reports:
        write_stats_rollup(reports, out / "stats" / "rollup.csv")
    return 1 if any(r["failures"] for r in results) else 0


# ---------------------------------------------------------------- decode

def cmd_decode(rep_path, bank_path, out_wav, mix_mode: str, seed: int,
               length_s: float, sample_rate: int = 16000) -> int:
    rep = read_rep_csv(rep_path)
    rep.validate(sample_rate)
    bank = read_bank(bank_path)
    cfg = SynthesisConfig(sample_rate=sample_rate,
                          length=round(length_s * sample_rate),
                          mix_mode=mix_mode, seed=seed)
    save_air(decode(rep, bank, cfg), out_wav)
    log.info("decoded %s -> %s", rep_path, out_wav)
    return 0


# ------------------------------------------------------------------ main

def cmd_pipeline(cfg: RunConfig) -> int:
    for stage in (cmd_encode, cmd_train, cmd_generate, cmd_stats):
        code = stage(cfg)
        if code != 0:
            log.error("pipeline stopped: %s failed", stage.__name__)
            return code
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airgen",
        description="Parametric AIR codec with per-room adversarial generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--manifest", help="dataset manifest CSV")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--rooms", help="comma-separated room subset")
        p.add_argument("--count", type=int, help="generated AIRs per room (default: 100)")
        p.add_argument("--seed", type=int, help="base random seed (default: 0)")
        p.add_argument("--epochs", type=int, help="training epochs (default: 6000)")
        p.add_argument("--mix-mode", choices=MIX_MODES, dest="mix_mode")
        p.add_argument("--jobs", type=int, help="parallel rooms (default: 1)")

    for name, text in (
        ("encode", "encode a WAV corpus into reps and excitation banks"),
        ("train", "train one GAN per room on encoded reps"),
        ("generate", "sample reps from trained GANs and decode to WAVs"),
        ("stats", "real-vs-generated distribution reports"),
        ("pipeline", "run encode, train, generate, stats in order"),
    ):
        add_common(sub.add_parser(name, help=text))

    dec = sub.add_parser("decode", help="decode one rep CSV to a WAV")
    dec.add_argument("--rep", required=True, help="input .rep.csv")
    dec.add_argument("--bank", required=True, help="excitation bank file")
    dec.add_argument("--out-wav", required=True, help="output WAV path")
    dec.add_argument("--mix-mode", choices=MIX_MODES, dest="mix_mode", default="continuous")
    dec.add_argument("--seed", type=int, default=0)
    dec.add_argument("--length-s", type=float, dest="length_s", default=2.1)
    return parser


_FLAG_KEYS = ("manifest", "out", "count", "seed", "epochs", "mix_mode", "jobs")


def build_run_config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if ns.config:
        cfg = replace(cfg, **parse_config_file(ns.config))
    overrides = {k: getattr(ns, k) for k in _FLAG_KEYS if getattr(ns, k, None) is not None}
    if getattr(ns, "rooms", None):
        overrides["rooms"] = tuple(r.strip() for r in ns.rooms.split(",") if r.strip())
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ns = _build_parser().parse_args(argv)
    if ns.command == "decode":
        try:
            return cmd_decode(ns.rep, ns.bank, ns.out_wav, ns.mix_mode, ns.seed, ns.length_s)
        except (ValueError, OSError, RuntimeError) as exc:
            log.error("%s", exc)
            return 1
    try:
        cfg = build_run_config(ns)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    write_effective_config(cfg, Path(cfg.out) / "effective_config.toml")
    command = {
        "encode": cmd_encode,
        "train": cmd_train,
        "generate": cmd_generate,
        "stats": cmd_stats,
        "pipeline": cmd_pipeline,
    }[ns.command]
    try:
        return command(cfg)
    except (ValueError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
