"""Conversational acoustic model toolkit (C++ core)."""

from ._m2ctts import (
    Trainer,
    ablation_modules,
    default_config,
    gen_toy_corpus,
    load_manifest,
    preprocess,
    prosody_loss,
    read_tensor,
    run_ablation,
    sinusoidal_positions,
    verify,
    window_indices,
    write_tensor,
)

__all__ = [
    "Trainer",
    "ablation_modules",
    "default_config",
    "gen_toy_corpus",
    "load_manifest",
    "preprocess",
    "prosody_loss",
    "read_tensor",
    "run_ablation",
    "sinusoidal_positions",
    "verify",
    "window_indices",
    "write_tensor",
]
