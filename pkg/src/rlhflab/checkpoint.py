"""Versioned binary checkpoints for policies, reward models and ENNs.

Layout (all integers little-endian)::

    magic      8 bytes  b"RLHFCKPT"
    version    u16
    kind       u8       1 policy, 2 reward, 3 enn
    meta_len   u32, then meta_len bytes of sorted-key JSON
    n_seg      u32
    per segment:
        name_len u16, name (utf-8)
        ndim u8, dims u64 * ndim
        data f8 * prod(dims)
    sha256     32 bytes over everything above

Encoding is a pure function of the model and metadata, so a save / load /
save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Any

import numpy as np

from .errors import CheckpointError, KindMismatchError
from .kernels import MlpSpec, ParamVector
from .policy import PolicyArch, TokenPolicy
from .reward import EnnRewardModel, RewardModel

MAGIC = b"RLHFCKPT"
VERSION = 1
KINDS = {"policy": 1, "reward": 2, "enn": 3}
_KIND_NAMES = {v: k for k, v in KINDS.items()}


def kind_of(model) -> str:
    if isinstance(model, TokenPolicy):
        return "policy"
    if isinstance(model, RewardModel):
        return "reward"
    if isinstance(model, EnnRewardModel):
        return "enn"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _model_parts(model) -> tuple[dict, ParamVector]:
    kind = kind_of(model)
    if kind == "policy":
        return {"arch": model.arch.to_dict()}, model.params
    if kind == "reward":
        return {"arch": model.arch.to_dict(), "head_widths": list(model.head.hidden_widths)}, model.params
    meta = {"arch": model.arch.to_dict(), "head_widths": list(model.base.head.hidden_widths),
            "prior_widths": list(model.prior_spec.hidden_widths),
            "diff_widths": list(model.diff_spec.hidden_widths),
            "prior_scale": model.prior_scale, "ensemble_size": model.ensemble_size}
    params = ParamVector.concat({"point": model.base.params, "prior": model.prior_params,
                                 "diff": model.diff_params})
    return meta, params


def _prefixed(params: ParamVector, prefix: str) -> ParamVector:
    dot = prefix + "."
    return ParamVector.from_segments({k[len(dot):]: params[k].copy() for k in params.layout
                                      if k.startswith(dot)})


def _build_model(kind: str, meta: dict, params: ParamVector):
    arch = PolicyArch.from_dict(meta["arch"])
    if kind == "policy":
        return TokenPolicy(arch, params)
    head = MlpSpec(arch.embedding_dim, tuple(meta["head_widths"]), 1)
    if kind == "reward":
        return RewardModel(arch, head, params)
    point = _prefixed(params, "point")
    prior = _prefixed(params, "prior")
    diff = _prefixed(params, "diff")
    return EnnRewardModel(RewardModel(arch, head, point),
                          MlpSpec(arch.embedding_dim, tuple(meta["prior_widths"]), 1), prior,
                          MlpSpec(arch.embedding_dim, tuple(meta["diff_widths"]), 1), diff,
                          float(meta["prior_scale"]))


def encode(model, metadata: dict[str, Any] | None = None) -> bytes:
    kind = kind_of(model)
    model_meta, params = _model_parts(model)
    meta = {"model": model_meta, "user": metadata or {}}
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<HB", VERSION, KINDS[kind]),
           struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(params.layout))]
    for name in params.layout:
        arr = params[name]
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes, expected_kind: str | None = None):
    """Returns ``(model, metadata)``; raises :class:`CheckpointError` on any corruption."""
    if len(data) < len(MAGIC) + 32 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch")
    rd = _Reader(body)
    rd.take(len(MAGIC))
    version, code = rd.unpack("<HB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if code not in _KIND_NAMES:
        raise CheckpointError(f"unknown model kind tag {code}")
    kind = _KIND_NAMES[code]
    if expected_kind is not None and kind != expected_kind:
        raise KindMismatchError(f"expected a {expected_kind} checkpoint, found {kind}")
    (meta_len,) = rd.unpack("<I")
    try:
        meta = json.loads(rd.take(meta_len).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError("metadata is not valid JSON") from exc
    (n_seg,) = rd.unpack("<I")
    segments = {}
    for _ in range(n_seg):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64))
        segments[name] = np.frombuffer(rd.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if rd.pos != len(body):
        raise CheckpointError("trailing bytes after last segment")
    model = _build_model(kind, meta["model"], ParamVector.from_segments(segments))
    return model, meta["user"]


def save_checkpoint(path, model, metadata: dict[str, Any] | None = None) -> None:
    data = encode(model, metadata)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path, expected_kind: str | None = None):
    with open(path, "rb") as fh:
        return decode(fh.read(), expected_kind)
