"""Synthetic paired-modality data with known token correspondence.

Each sample starts from latent tokens Z; the two modalities are fixed
random linear images of Z (plus Gaussian noise), with the visual tokens
optionally shuffled by a per-sample permutation. The permutation is the
ground-truth correspondence the alignment metrics check against, and the
caption tokens are a deterministic quantization of the latent tokens, so
captions are predictable from either modality.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError
from .fileio import read_fmat, write_fmat
from .numerics import make_rng

__all__ = [
    "SyntheticDatasetSpec",
    "Sample",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "dataset_spec_from_dict",
]

DATASET_MANIFEST = "dataset.json"


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_samples: int = 500
    n_latent_tokens: int = 6
    latent_dim: int = 8
    audio_dim: int = 10
    visual_dim: int = 12
    noise_sigma: float = 0.1
    permute: bool = True
    vocab_size: int = 12
    caption_len: int = 6
    seed: int = 0

    def validate(self) -> None:
        for name in (
            "n_samples",
            "n_latent_tokens",
            "latent_dim",
            "audio_dim",
            "visual_dim",
            "vocab_size",
            "caption_len",
        ):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ArgumentError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.noise_sigma < 0:
            raise ArgumentError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class Sample:
    """One paired observation.

    correspondence[i] is the visual token index matching audio token i;
    caption tokens live in [0, vocab_size).
    """

    x_a: np.ndarray
    x_v: np.ndarray
    correspondence: np.ndarray
    caption: np.ndarray


def dataset_spec_from_dict(data: dict) -> SyntheticDatasetSpec:
    allowed = {f.name for f in fields(SyntheticDatasetSpec)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown dataset spec keys: {sorted(unknown)}")
    spec = SyntheticDatasetSpec(**data)
    spec.validate()
    return spec


def _caption_tokens(latents: np.ndarray, vocab_size: int, caption_len: int) -> np.ndarray:
    """Quantize each latent token's sign pattern into a vocabulary bucket."""
    n_latent = latents.shape[0]
    caption = np.empty(caption_len, dtype=np.int64)
    for i in range(caption_len):
        bits = latents[i % n_latent] > 0
        code = 0
        for bit in bits:
            code = (code << 1) | int(bit)
        caption[i] = code % vocab_size
    return caption


def generate_dataset(
    spec: SyntheticDatasetSpec,
    modality_maps: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> list[Sample]:
    """Draw the full dataset deterministically from spec.seed.

    ``modality_maps`` overrides the dataset-level random latent->audio and
    latent->visual maps (shape latent_dim x audio_dim / latent_dim x
    visual_dim); tests use identity maps to build perfectly aligned pairs.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    # Maps are always drawn so that overriding them leaves the rest of the
    # sample stream (latents, permutations, noise) unchanged.
    map_a = rng.standard_normal((spec.latent_dim, spec.audio_dim))
    map_v = rng.standard_normal((spec.latent_dim, spec.visual_dim))
    if modality_maps is not None:
        map_a, map_v = modality_maps
        if map_a.shape != (spec.latent_dim, spec.audio_dim):
            raise ArgumentError(f"audio map must be {(spec.latent_dim, spec.audio_dim)}")
        if map_v.shape != (spec.latent_dim, spec.visual_dim):
            raise ArgumentError(f"visual map must be {(spec.latent_dim, spec.visual_dim)}")

    samples = []
    n = spec.n_latent_tokens
    for _ in range(spec.n_samples):
        latents = rng.standard_normal((n, spec.latent_dim))
        if spec.permute:
            sigma = rng.permutation(n)
        else:
            sigma = np.arange(n)
        x_a = latents @ map_a
        x_v = np.empty((n, spec.visual_dim))
        x_v[sigma] = latents @ map_v
        if spec.noise_sigma > 0:
            x_a = x_a + spec.noise_sigma * rng.standard_normal(x_a.shape)
            x_v = x_v + spec.noise_sigma * rng.standard_normal(x_v.shape)
        caption = _caption_tokens(latents, spec.vocab_size, spec.caption_len)
        samples.append(
            Sample(x_a=x_a, x_v=x_v, correspondence=sigma.astype(np.int64), caption=caption)
        )
    return samples


def _spec_to_dict(spec: SyntheticDatasetSpec) -> dict:
    return {f.name: getattr(spec, f.name) for f in fields(SyntheticDatasetSpec)}


def save_dataset(directory, samples: list[Sample], spec: SyntheticDatasetSpec) -> None:
    """Write the dataset as a manifest plus two stacked FMAT files.

    Output is byte-identical for identical (spec, samples): the manifest
    is canonical JSON and the FMAT payloads are exact float64 bytes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "otalign-dataset",
        "version": 1,
        "spec": _spec_to_dict(spec),
        "captions": [s.caption.tolist() for s in samples],
        "correspondences": [s.correspondence.tolist() for s in samples],
    }
    (directory / DATASET_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    )
    write_fmat(directory / "xa.fmat", np.vstack([s.x_a for s in samples]))
    write_fmat(directory / "xv.fmat", np.vstack([s.x_v for s in samples]))


def load_dataset(directory) -> tuple[SyntheticDatasetSpec, list[Sample]]:
    directory = Path(directory)
    manifest_path = directory / DATASET_MANIFEST
    if not manifest_path.exists():
        raise FormatError(f"no {DATASET_MANIFEST} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "otalign-dataset":
        raise FormatError(f"{manifest_path} is not a dataset manifest")
    spec = dataset_spec_from_dict(manifest["spec"])
    xa = read_fmat(directory / "xa.fmat")
    xv = read_fmat(directory / "xv.fmat")
    n = spec.n_latent_tokens
    expected_rows = spec.n_samples * n
    if xa.shape != (expected_rows, spec.audio_dim) or xv.shape != (expected_rows, spec.visual_dim):
        raise FormatError(
            f"dataset tensors {xa.shape}/{xv.shape} inconsistent with spec "
            f"({expected_rows} rows expected)"
        )
    samples = []
    for i in range(spec.n_samples):
        samples.append(
            Sample(
                x_a=xa[i * n : (i + 1) * n].copy(),
                x_v=xv[i * n : (i + 1) * n].copy(),
                correspondence=np.asarray(manifest["correspondences"][i], dtype=np.int64),
                caption=np.asarray(manifest["captions"][i], dtype=np.int64),
            )
        )
    return spec, samples


def dataset_digest(directory) -> str:
    """SHA-256 over the dataset files, for determinism checks."""
    directory = Path(directory)
    h = hashlib.sha256()
    for name in (DATASET_MANIFEST, "xa.fmat", "xv.fmat"):
        h.update((directory / name).read_bytes())
    return h.hexdigest()
