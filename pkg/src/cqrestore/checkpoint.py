"""Checkpoint and run-manifest persistence.

A checkpoint is self-contained: denoiser config (including the transform
parameters), sigma_data, training step, RNG state and the full parameter
store, so restoration needs nothing beyond the checkpoint plus a
degradation spec. Binary layout: magic, little-endian u32 JSON-header
length, JSON header, raw ParamStore blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

from .autodiff import ParamStore
from .denoiser import Denoiser, DenoiserConfig

__all__ = ["CHECKPOINT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint",
           "write_manifest", "file_digest"]

MAGIC = b"CQRCKPT1"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: DenoiserConfig
    sigma_data: float
    train_step: int
    rng_state: dict | None
    params: ParamStore

    def to_model(self) -> Denoiser:
        return Denoiser(self.config, self.sigma_data, params=self.params)


def save_checkpoint(
    path,
    model: Denoiser,
    train_step: int = 0,
    rng_state: dict | None = None,
) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "sigma_data": model.sigma_data,
        "train_step": train_step,
        "rng_state": rng_state,
    }
    hdr = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        fh.write(model.params.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {header['version']} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        params = ParamStore.from_bytes(fh.read())
    return Checkpoint(
        config=DenoiserConfig.from_dict(header["config"]),
        sigma_data=float(header["sigma_data"]),
        train_step=int(header["train_step"]),
        rng_state=header["rng_state"],
        params=params,
    )


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
