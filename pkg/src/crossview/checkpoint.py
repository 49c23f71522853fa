"""Versioned single-file checkpoints.

Layout (all little-endian):
    bytes 0..3   magic  b"CVCK"
    bytes 4..7   uint32 format version (1)
    bytes 8..11  uint32 JSON header length
    header       UTF-8 JSON: stage tag, config hash, model config, view ids,
                 mask-field kinds, and an entry table (name, partition,
                 shape, byte offset into the payload)
    payload      raw float32 values, entry order

Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import CorruptDataError
from .masking import MaskValueField, ROLES
from .model import ModelConfig, VideoTransformer, parameter_partition
from .prompts import ViewPromptBank

MAGIC = b"CVCK"
VERSION = 1


@dataclasses.dataclass
class Checkpoint:
    stage: str
    config_hash: str
    model_config: ModelConfig
    view_ids: list[str]
    mask_kind: Optional[str]
    entries: dict[str, np.ndarray]  # "partition/name" -> float32 array
    meta: dict

    def build_model(self, dtype: torch.dtype = torch.float32) -> VideoTransformer:
        model = VideoTransformer(self.model_config, dtype=dtype)
        state = {}
        for key, arr in self.entries.items():
            part, _, name = key.partition("/")
            if part in ("backbone", "head"):
                state[name] = torch.from_numpy(arr.copy()).to(dtype)
        missing = set(dict(model.named_parameters())) - set(state)
        if missing:
            raise CorruptDataError(f"checkpoint missing parameters: {sorted(missing)}")
        model.load_state_dict(state)
        return model

    def build_bank(self, dtype: torch.dtype = torch.float32) -> Optional[ViewPromptBank]:
        key = "view_prompt/prompts"
        if key not in self.entries:
            return None
        arr = self.entries[key]
        bank = ViewPromptBank(
            self.view_ids, arr.shape[1], arr.shape[2], arr.shape[3], dtype=dtype
        )
        with torch.no_grad():
            bank.prompts.copy_(torch.from_numpy(arr.copy()).to(dtype))
        return bank

    def build_mask_fields(
        self, dtype: torch.dtype = torch.float32
    ) -> Optional[dict[str, MaskValueField]]:
        fields = {}
        for role in ROLES:
            key = f"mask_field/{role}"
            if key not in self.entries:
                continue
            values = torch.from_numpy(self.entries[key].copy()).to(dtype)
            if self.mask_kind == "soft":
                values = torch.nn.Parameter(values)
            fields[role] = MaskValueField(role=role, kind=self.mask_kind, values=values)
        return fields or None


def save_checkpoint(
    path: Path,
    stage: str,
    model: VideoTransformer,
    bank: Optional[ViewPromptBank] = None,
    mask_fields: Optional[dict[str, MaskValueField]] = None,
    config_hash: str = "",
    meta: Optional[dict] = None,
) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    parts = parameter_partition(model, bank, list(mask_fields.values()) if mask_fields else None)
    for part in ("backbone", "head", "view_prompt"):
        for name, t in parts[part]:
            entries.append((f"{part}/{name}", t.detach().cpu().to(torch.float32).numpy()))
    mask_kind = None
    if mask_fields:
        for role in ROLES:
            f = mask_fields[role]
            mask_kind = f.kind
            entries.append(
                (f"mask_field/{role}", f.values.detach().cpu().to(torch.float32).numpy())
            )
    table = []
    offset = 0
    for name, arr in entries:
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = {
        "stage": stage,
        "config_hash": config_hash,
        "model_config": model.config.to_dict(),
        "view_ids": list(bank.view_ids) if bank is not None else [],
        "mask_kind": mask_kind,
        "entries": table,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(hbytes))
    blob += hbytes
    for _, arr in entries:
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, path)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CorruptDataError(f"cannot read checkpoint {path}: {e}") from e
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptDataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CorruptDataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + hlen].decode())
    payload = data[12 + hlen :]
    entries = {}
    for e in header["entries"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        raw = payload[start : start + n * 4]
        if len(raw) != n * 4:
            raise CorruptDataError(f"{path}: truncated payload at {e['name']}")
        entries[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(
        stage=header["stage"],
        config_hash=header["config_hash"],
        model_config=ModelConfig.from_dict(header["model_config"]),
        view_ids=header["view_ids"],
        mask_kind=header["mask_kind"],
        entries=entries,
        meta=header.get("meta", {}),
    )
