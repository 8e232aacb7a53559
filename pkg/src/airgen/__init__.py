"""Parametric codec and per-room adversarial generator for acoustic
impulse responses."""

from .core import (
    AIRSignal,
    DatasetManifest,
    ManifestEntry,
    WavFormatError,
    load_air,
    normalize_for_dataset,
    pad_to,
    resample,
    save_air,
)
from .encoding import (
    EncodeError,
    EstimationError,
    build_excitation_bank,
    detect_direct_path,
    encode,
    estimate_reflections,
    estimate_t60,
    estimate_tail_iir,
    measure_drr,
)
from .gan import (
    DistributionReport,
    GanConfig,
    GanModel,
    MinMaxNormalizer,
    build_fir_gan,
    build_gan,
    build_lowdim_gan,
    evaluate_distribution,
    generate,
    generate_with_stats,
    load_gan,
    save_gan,
    stabilize_poles,
    train,
)
from .representation import (
    D_MAX,
    REP_LENGTH,
    EarlyReflectionSet,
    ExcitationBank,
    InvalidRepresentation,
    LowDimRep,
    TailModel,
    read_bank,
    read_rep_csv,
    write_bank,
    write_rep_csv,
)
from .synthesis import (
    SynthesisConfig,
    apply_crossfade,
    apply_tail_iir,
    assemble,
    assemble_parts,
    decode,
    place_atom,
    synth_direct,
    synth_early,
    synth_polack,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
