"""Checkpoint serialization: a directory with manifest.json + tensors.bin.

Tensors are stored as little-endian 32-bit floats, row-major, at byte
offsets recorded in the manifest.  The manifest also pins the config,
the sha256 hashes of both graphs' intern tables (so a checkpoint cannot
silently be applied to different data), the epoch count, and the loss
history.  Everything is written with sorted keys and no timestamps so
identical runs produce bitwise-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .kg import GraphPair, KnowledgeGraph
from .model import AlignmentModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for malformed or mismatched checkpoints."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def intern_hash(names: list[str]) -> str:
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def graph_hashes(kg_a: KnowledgeGraph, kg_b: KnowledgeGraph) -> dict[str, str]:
    return {
        "kg_a_entities": intern_hash(kg_a.entities.names),
        "kg_a_predicates": intern_hash(kg_a.predicates.names),
        "kg_b_entities": intern_hash(kg_b.entities.names),
        "kg_b_predicates": intern_hash(kg_b.predicates.names),
    }


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray] = field(repr=False)

    @property
    def config(self) -> dict:
        return self.manifest["config"]

    @property
    def epoch(self) -> int:
        return self.manifest["epoch"]


def snapshot(model: AlignmentModel, config: dict, epoch: int,
             loss_history: list[dict], diverged_at: int | None = None) -> Checkpoint:
    """Freeze the model (params, optimizer moments, historical store) to float32."""
    tensors: dict[str, np.ndarray] = {}
    opt_steps: dict[str, int] = {}
    for name, p in model.store.items():
        tensors[name] = np.ascontiguousarray(p.data, dtype=np.float32)
        m, v, t = model.store.opt_state(name)
        tensors["opt.m." + name] = np.ascontiguousarray(m, dtype=np.float32)
        tensors["opt.v." + name] = np.ascontiguousarray(v, dtype=np.float32)
        opt_steps[name] = t
    tensors["hist.x0"] = np.ascontiguousarray(model.hist.x0, dtype=np.float32)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": dict(config),
        "hashes": graph_hashes(model.pair.a, model.pair.b),
        "n_entities": model.pair.n_entities,
        "n_predicates": model.pair.n_predicates,
        "epoch": epoch,
        "loss_history": list(loss_history),
        "opt_steps": opt_steps,
        "diverged_at": diverged_at,
    }
    return Checkpoint(manifest=manifest, tensors=tensors)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    index = {}
    offset = 0
    names = sorted(ckpt.tensors)
    for name in names:
        arr = ckpt.tensors[name]
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        offset += arr.size * 4
    manifest = dict(ckpt.manifest)
    manifest["tensors"] = index
    manifest["blob_bytes"] = offset
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "tensors.bin"), "wb") as fh:
        for name in names:
            fh.write(ckpt.tensors[name].astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"no manifest.json under {path}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r}, expected {FORMAT_VERSION}")
    index = manifest.pop("tensors", None)
    expected = manifest.pop("blob_bytes", None)
    if index is None or expected is None:
        raise CheckpointError("manifest missing tensor index")
    blob_path = os.path.join(path, "tensors.bin")
    actual = os.path.getsize(blob_path)
    if actual < expected:
        raise CheckpointTruncatedError(
            f"truncated blob: tensors.bin has {actual} bytes, manifest expects {expected}")
    if actual != expected:
        raise CheckpointError(
            f"blob size mismatch: tensors.bin has {actual} bytes, manifest expects {expected}")
    tensors: dict[str, np.ndarray] = {}
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    for name, entry in index.items():
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + n * 4
        if end > len(blob):
            raise CheckpointTruncatedError(
                f"truncated blob: tensor {name} ends at byte {end}, blob has {len(blob)}")
        tensors[name] = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
    return Checkpoint(manifest=manifest, tensors=tensors)


def check_hashes(ckpt: Checkpoint, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph) -> None:
    expected = graph_hashes(kg_a, kg_b)
    got = ckpt.manifest.get("hashes", {})
    for key, val in expected.items():
        if got.get(key) != val:
            raise CheckpointHashError(
                f"intern-table hash mismatch for {key}: checkpoint was built on different data")


def model_from_checkpoint(ckpt: Checkpoint, pair: GraphPair) -> AlignmentModel:
    """Rebuild a model from a checkpoint, validating the data hashes."""
    check_hashes(ckpt, pair.a, pair.b)
    cfg = ckpt.config
    model = AlignmentModel(
        pair,
        d=cfg["d"],
        d_c=cfg["d_c"],
        heads=cfg["heads"],
        layers=cfg["layers"],
        rng_seed=cfg["rng_seed"],
    )
    restore_into(model, ckpt)
    return model


def restore_into(model: AlignmentModel, ckpt: Checkpoint) -> None:
    opt_steps = ckpt.manifest.get("opt_steps", {})
    for name, p in model.store.items():
        arr = ckpt.tensors.get(name)
        if arr is None:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"tensor {name} has shape {arr.shape}, model expects {p.data.shape}")
        p.data[...] = arr.astype(np.float64)
        m = ckpt.tensors.get("opt.m." + name)
        v = ckpt.tensors.get("opt.v." + name)
        if m is not None and v is not None:
            model.store.set_opt_state(name, m.astype(np.float64), v.astype(np.float64),
                                      opt_steps.get(name, 0))
    x0 = ckpt.tensors.get("hist.x0")
    if x0 is None:
        raise CheckpointError("checkpoint missing tensor hist.x0")
    if x0.shape != model.hist.x0.shape:
        raise CheckpointError(
            f"tensor hist.x0 has shape {x0.shape}, model expects {model.hist.x0.shape}")
    model.hist.x0[...] = x0.astype(np.float64)
