"""Checkpoint persistence.

A checkpoint is a pair of files sharing a stem: `<stem>.json` holds the
architecture descriptor, parameter shapes, seed, epoch, and validation
loss; `<stem>.bin` holds every parameter flattened and concatenated as
little-endian float64. The manifest records a SHA-256 of the binary so
corruption is detected at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IntegrityError, MissingInputError


@dataclass
class Checkpoint:
    arch: dict
    shapes: list[tuple[int, ...]]
    values: list[np.ndarray]
    seed: int
    epoch: int
    validation_loss: float
    extra: dict

    def flat(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for v in self.values])


def save_checkpoint(stem, arch: dict, values: list[np.ndarray], seed: int,
                    epoch: int, validation_loss: float,
                    extra: dict | None = None) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    flat = np.concatenate([np.asarray(v, dtype=np.float64).reshape(-1)
                           for v in values])
    payload = flat.astype("<f8").tobytes()
    (stem.with_suffix(".bin")).write_bytes(payload)
    manifest = {
        "arch": arch,
        "shapes": [list(np.asarray(v).shape) for v in values],
        "seed": seed,
        "epoch": epoch,
        "validation_loss": validation_loss,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    (stem.with_suffix(".json")).write_text(json.dumps(manifest, indent=2) + "\n")
    return stem.with_suffix(".json")


def load_checkpoint(stem) -> Checkpoint:
    stem = Path(stem)
    manifest_path = stem.with_suffix(".json")
    binary_path = stem.with_suffix(".bin")
    if not manifest_path.exists():
        raise MissingInputError(f"checkpoint manifest not found: {manifest_path}")
    if not binary_path.exists():
        raise MissingInputError(f"checkpoint binary not found: {binary_path}")
    manifest = json.loads(manifest_path.read_text())
    payload = binary_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise IntegrityError(f"checkpoint binary is corrupted: {binary_path}")
    flat = np.frombuffer(payload, dtype="<f8")
    shapes = [tuple(s) for s in manifest["shapes"]]
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise IntegrityError(
            f"checkpoint binary has {flat.size} values, manifest says {expected}: "
            f"{binary_path}")
    values = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        values.append(flat[offset:offset + count].reshape(shape).copy())
        offset += count
    return Checkpoint(
        arch=manifest["arch"],
        shapes=shapes,
        values=values,
        seed=manifest["seed"],
        epoch=manifest["epoch"],
        validation_loss=manifest["validation_loss"],
        extra=manifest.get("extra", {}),
    )
