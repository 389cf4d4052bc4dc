"""Checkpoint files: JSON envelope with base64 little-endian float64 payloads.

A SHA-256 digest over the canonical parameter byte stream is stored in the
envelope and verified on load.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from otcalib.picnn import PicnnConfig, PicnnPotential, parameter_shapes
from otcalib.quantile import OtQuantileModel, QrModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"), validate=True)
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if arr.size != int(np.prod(shape)):
        raise CheckpointError("payload size does not match its shape")
    return arr.reshape(shape)


def _blob(arrays: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": k, "shape": list(v.shape), "data": _encode(v)} for k, v in arrays.items()]


def _unblob(items: list[dict]) -> dict[str, np.ndarray]:
    return {it["name"]: _decode(it["data"], tuple(it["shape"])) for it in items}


def canonical_digest(groups: dict[str, dict[str, np.ndarray]]) -> str:
    h = hashlib.sha256()
    for gname in sorted(groups):
        for name, arr in groups[gname].items():
            h.update(f"{gname}/{name}{list(arr.shape)}".encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    kind: str
    groups: dict[str, dict[str, np.ndarray]]
    meta: dict = field(default_factory=dict)


def save(path, ckpt: Checkpoint) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "meta": ckpt.meta,
        "arrays": {g: _blob(a) for g, a in ckpt.groups.items()},
        "digest": canonical_digest(ckpt.groups),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc.msg})") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
    try:
        groups = {g: _unblob(items) for g, items in doc["arrays"].items()}
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt payload ({exc})") from None
    if canonical_digest(groups) != doc.get("digest"):
        raise CheckpointError(f"{path}: digest mismatch")
    return Checkpoint(doc["kind"], groups, doc.get("meta", {}))


def save_checkpoint(path, f: PicnnPotential, g: PicnnPotential, meta: dict) -> None:
    """Write an OT checkpoint holding both potentials.

    ``meta`` should carry ``source_mode``, ``inference_potential`` and, in
    score mode, ``source_table``; the PICNN config is taken from ``g``.
    """
    groups = {"f": dict(f.params), "g": dict(g.params)}
    table = meta.get("source_table")
    meta = {k: v for k, v in meta.items() if k != "source_table"}
    if table is not None:
        groups["source_table"] = {"table": np.asarray(table, dtype=np.float64)}
    meta["pconfig"] = g.config.to_json()
    save(path, Checkpoint("ot", groups, meta))


def load_checkpoint(path):
    """Return ``(f, g, meta)`` from an OT checkpoint."""
    ckpt = load(path)
    if ckpt.kind != "ot":
        raise CheckpointError(f"{path}: expected an OT checkpoint, found {ckpt.kind!r}")
    config = PicnnConfig.from_json(ckpt.meta["pconfig"])
    expected = parameter_shapes(config)
    pots = {}
    for name in ("f", "g"):
        params = ckpt.groups[name]
        if {k: v.shape for k, v in params.items()} != expected:
            raise CheckpointError(f"{path}: parameters of {name} do not match the config")
        pots[name] = PicnnPotential(config, {k: params[k].copy() for k in expected})
    meta = dict(ckpt.meta)
    if "source_table" in ckpt.groups:
        meta["source_table"] = ckpt.groups["source_table"]["table"]
    return pots["f"], pots["g"], meta


def ot_model_from_checkpoint(path) -> OtQuantileModel:
    f, g, meta = load_checkpoint(path)
    which = meta.get("inference_potential", "g")
    return OtQuantileModel({"f": f, "g": g}[which], meta.get("source_mode", "uniform"),
                           meta.get("source_table"), which)


def save_qr(path, model: QrModel, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["levels"] = list(model.levels)
    save(path, Checkpoint("qr", {"qr": {"weights": model.weights, "biases": model.biases}},
                          meta))


def load_qr(path) -> QrModel:
    ckpt = load(path)
    if ckpt.kind != "qr":
        raise CheckpointError(f"{path}: expected a QR checkpoint, found {ckpt.kind!r}")
    arrays = ckpt.groups["qr"]
    return QrModel(arrays["weights"], arrays["biases"], tuple(ckpt.meta["levels"]))


def load_model(path):
    """Load whichever quantile model a checkpoint holds."""
    kind = load(path).kind
    return ot_model_from_checkpoint(path) if kind == "ot" else load_qr(path)
