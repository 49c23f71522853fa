"""Dataset generation, on-disk formats, and split loading.

Frame files are raw interleaved RGB, 8-bit, row-major, frame-major, behind a
fixed 16-byte little-endian header (magic, version, T, H, W). The manifest is
newline-delimited JSON, one record per clip, with centers, box size, and a
SHA-256 checksum of the frame file. The whole dataset is a pure function of
the WorldSpec.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from .errors import (
    ConfigurationError,
    CorruptDataError,
    ProtocolViolationError,
    ValidationError,
)
from .masking import InteractionAnnotation
from . import world as world_mod
from .world import (
    ViewSpec,
    VideoClip,
    default_ego_view,
    default_heldout_views,
    default_train_views,
    render_clip,
    script_scene,
)

FRAME_MAGIC = b"CVF1"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sHHHH4x")  # magic, version, T, H, W, pad -> 16 bytes

SPLITS = ("train", "ego_tune", "ego_test", "heldout")
_SPLIT_CODE = {s: i for i, s in enumerate(SPLITS)}


# -- frame files --------------------------------------------------------


def write_frames(path: Path, frames: np.ndarray) -> None:
    if frames.dtype != np.uint8 or frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValidationError(f"expected uint8 [T,H,W,3], got {frames.dtype} {frames.shape}")
    T, H, W, _ = frames.shape
    payload = _HEADER.pack(FRAME_MAGIC, FRAME_VERSION, T, H, W) + frames.tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def read_frames(path: Path) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CorruptDataError(f"cannot read frame file {path}: {e}") from e
    if len(data) < _HEADER.size:
        raise CorruptDataError(f"{path}: truncated header")
    magic, version, T, H, W = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise CorruptDataError(f"{path}: bad magic {magic!r}")
    if version != FRAME_VERSION:
        raise CorruptDataError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + T * H * W * 3
    if len(data) != expected:
        raise CorruptDataError(
            f"{path}: size {len(data)} != expected {expected} for T={T} H={H} W={W}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(T, H, W, 3)


# -- world spec ---------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class WorldSpec:
    num_verbs: int = 6
    num_nouns: int = 6
    frames: int = 4
    height: int = 32
    width: int = 32
    train_views: tuple[ViewSpec, ...] = ()
    heldout_views: tuple[ViewSpec, ...] = ()
    ego_view: Optional[ViewSpec] = None
    clips_per_action_per_view: int = 4
    ego_tune_clips_per_action: int = 2
    ego_test_clips_per_action: int = 2
    heldout_clips_per_action: int = 1
    mask_box_size: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_verbs <= len(world_mod.VERBS):
            raise ConfigurationError(f"num_verbs must be 1..{len(world_mod.VERBS)}")
        if not 1 <= self.num_nouns <= len(world_mod.NOUNS):
            raise ConfigurationError(f"num_nouns must be 1..{len(world_mod.NOUNS)}")
        tv = self.train_views or tuple(default_train_views(self.height, self.width))
        hv = self.heldout_views or tuple(default_heldout_views(self.height, self.width))
        ev = self.ego_view or default_ego_view(self.height, self.width)
        object.__setattr__(self, "train_views", tuple(tv))
        object.__setattr__(self, "heldout_views", tuple(hv))
        object.__setattr__(self, "ego_view", ev)
        ids = [v.view_id for v in self.all_views()]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate view ids: {ids}")

    @property
    def num_actions(self) -> int:
        return self.num_verbs * self.num_nouns

    def all_views(self) -> list[ViewSpec]:
        return list(self.train_views) + list(self.heldout_views) + [self.ego_view]

    def view(self, view_id: str) -> ViewSpec:
        for v in self.all_views():
            if v.view_id == view_id:
                return v
        raise ValidationError(f"unknown view id {view_id!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train_views"] = [dataclasses.asdict(v) for v in self.train_views]
        d["heldout_views"] = [dataclasses.asdict(v) for v in self.heldout_views]
        d["ego_view"] = dataclasses.asdict(self.ego_view)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        d = dict(d)

        def _vs(x):
            x = dict(x)
            x["affine"] = tuple(x["affine"])
            x["tint"] = tuple(x["tint"])
            return ViewSpec(**x)

        d["train_views"] = tuple(_vs(v) for v in d["train_views"])
        d["heldout_views"] = tuple(_vs(v) for v in d["heldout_views"])
        d["ego_view"] = _vs(d["ego_view"])
        return cls(**d)


# -- manifest -----------------------------------------------------------


@dataclasses.dataclass
class ClipRecord:
    clip_id: str
    path: str  # relative to dataset root
    view_id: str
    verb_id: int
    noun_id: int
    action_id: int
    split: str
    centers: dict[str, list[Optional[tuple[int, int]]]]
    box_size: int
    checksum: str
    seed: int

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["centers"] = {
            r: [list(c) if c is not None else None for c in cs]
            for r, cs in self.centers.items()
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ClipRecord":
        d = json.loads(line)
        d["centers"] = {
            r: [tuple(c) if c is not None else None for c in cs]
            for r, cs in d["centers"].items()
        }
        return cls(**d)

    def annotation(self) -> InteractionAnnotation:
        return InteractionAnnotation(centers=dict(self.centers), box_size=self.box_size)


@dataclasses.dataclass
class Manifest:
    root: Path
    spec: WorldSpec
    records: list[ClipRecord]

    def split(self, name: str) -> list[ClipRecord]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def checksum(self) -> str:
        return hashlib.sha256(
            (self.root / "manifest.jsonl").read_bytes()
        ).hexdigest()

    @classmethod
    def load(cls, root: Path) -> "Manifest":
        root = Path(root)
        world_path = root / "world.json"
        manifest_path = root / "manifest.jsonl"
        if not world_path.exists() or not manifest_path.exists():
            raise CorruptDataError(f"no dataset at {root}")
        spec = WorldSpec.from_dict(json.loads(world_path.read_text()))
        known = {v.view_id for v in spec.all_views()}
        records = []
        for line in manifest_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = ClipRecord.from_json(line)
            if rec.view_id not in known:
                raise ValidationError(
                    f"manifest record {rec.clip_id}: unknown view_id {rec.view_id!r}"
                )
            if rec.action_id != rec.verb_id * spec.num_nouns + rec.noun_id:
                raise ValidationError(
                    f"manifest record {rec.clip_id}: inconsistent action_id"
                )
            records.append(rec)
        return cls(root=root, spec=spec, records=records)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _make_clip(
    spec: WorldSpec, split: str, view: ViewSpec, verb: int, noun: int, k: int
) -> VideoClip:
    code = _SPLIT_CODE[split]
    # scene seed excludes the view: train clips of one action index are the
    # same canonical scene seen from every training camera
    scene_seed = _derived_seed(spec.seed, 1, code, verb, noun, k)
    view_index = [v.view_id for v in spec.all_views()].index(view.view_id)
    render_seed = _derived_seed(spec.seed, 2, code, verb, noun, k, view_index)
    traj = script_scene(verb, noun, spec.frames, scene_seed)
    clip_id = f"{split}-{view.view_id}-v{verb}n{noun}-{k}"
    return render_clip(
        traj, view, spec.height, spec.width, render_seed, clip_id,
        verb, noun, spec.mask_box_size,
    )


def iter_clip_plan(spec: WorldSpec) -> Iterator[tuple[str, ViewSpec, int, int, int]]:
    for k in range(spec.clips_per_action_per_view):
        for verb in range(spec.num_verbs):
            for noun in range(spec.num_nouns):
                for view in spec.train_views:
                    yield ("train", view, verb, noun, k)
    for split, count, views in (
        ("ego_tune", spec.ego_tune_clips_per_action, [spec.ego_view]),
        ("ego_test", spec.ego_test_clips_per_action, [spec.ego_view]),
        ("heldout", spec.heldout_clips_per_action, list(spec.heldout_views)),
    ):
        for k in range(count):
            for verb in range(spec.num_verbs):
                for noun in range(spec.num_nouns):
                    for view in views:
                        yield (split, view, verb, noun, k)


def generate_dataset(spec: WorldSpec, out_dir: Path) -> Manifest:
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    try:
        frames_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorruptDataError(f"cannot create dataset dir {out_dir}: {e}") from e
    records = []
    for split, view, verb, noun, k in iter_clip_plan(spec):
        clip = _make_clip(spec, split, view, verb, noun, k)
        rel = f"frames/{clip.clip_id}.cvf"
        path = out_dir / rel
        try:
            write_frames(path, clip.frames)
        except OSError as e:
            raise CorruptDataError(f"cannot write {path}: {e}") from e
        records.append(
            ClipRecord(
                clip_id=clip.clip_id,
                path=rel,
                view_id=clip.view_id,
                verb_id=clip.verb_id,
                noun_id=clip.noun_id,
                action_id=clip.verb_id * spec.num_nouns + clip.noun_id,
                split=split,
                centers=clip.annotation.centers,
                box_size=clip.annotation.box_size,
                checksum=hashlib.sha256(path.read_bytes()).hexdigest(),
                seed=clip.seed,
            )
        )
    manifest_path = out_dir / "manifest.jsonl"
    tmp = manifest_path.with_suffix(".tmp")
    tmp.write_text("".join(r.to_json() + "\n" for r in records))
    os.replace(tmp, manifest_path)
    (out_dir / "world.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1))
    return Manifest(root=out_dir, spec=spec, records=records)


def load_clip(record: ClipRecord, root: Path) -> VideoClip:
    path = Path(root) / record.path
    data_checksum = hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else None
    frames = read_frames(path)
    if data_checksum != record.checksum:
        raise CorruptDataError(f"{path}: checksum mismatch")
    return VideoClip(
        frames=frames,
        view_id=record.view_id,
        verb_id=record.verb_id,
        noun_id=record.noun_id,
        annotation=record.annotation(),
        clip_id=record.clip_id,
        seed=record.seed,
    )


def frames_to_tensor(frames: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """uint8 [T,H,W,3] -> float tensor in [0,1]."""
    return torch.from_numpy(np.array(frames, dtype=np.uint8)).to(dtype) / 255.0


# -- guarded split loader -----------------------------------------------


class SplitLoader:
    """In-memory batch loader with label-access instrumentation.

    In "unlabeled" mode any label access raises; the counter proves that a
    zero-shot run never dereferenced a label.
    """

    def __init__(
        self,
        records: Sequence[ClipRecord],
        root: Path,
        mode: str = "labeled",
        dtype: torch.dtype = torch.float32,
    ):
        if mode not in ("labeled", "unlabeled"):
            raise ConfigurationError(f"unknown loader mode {mode!r}")
        if not records:
            raise ValidationError("empty split")
        self.records = list(records)
        self.mode = mode
        self.dtype = dtype
        self.label_reads = 0
        self._frames = [
            frames_to_tensor(load_clip(r, root).frames, dtype) for r in self.records
        ]

    def __len__(self) -> int:
        return len(self.records)

    def frames(self, indices: Sequence[int]) -> torch.Tensor:
        return torch.stack([self._frames[i] for i in indices])

    def action_labels(self, indices: Sequence[int]) -> torch.Tensor:
        if self.mode == "unlabeled":
            raise ProtocolViolationError(
                "label access requested from an unlabeled loader"
            )
        self.label_reads += len(indices)
        return torch.tensor([self.records[i].action_id for i in indices], dtype=torch.long)

    def view_id(self, index: int) -> str:
        return self.records[index].view_id

    def annotations(self, indices: Sequence[int]) -> list[InteractionAnnotation]:
        return [self.records[i].annotation() for i in indices]

    def batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[list[int]]:
        order = rng.permutation(len(self.records))
        for i in range(0, len(order), batch_size):
            yield [int(j) for j in order[i : i + batch_size]]

    def batches_by_view(
        self, batch_size: int, rng: np.random.Generator
    ) -> Iterator[tuple[str, list[int]]]:
        """Batches drawn within a single view (view order interleaved)."""
        by_view: dict[str, list[int]] = {}
        for i, r in enumerate(self.records):
            by_view.setdefault(r.view_id, []).append(i)
        chunks = []
        for vid in sorted(by_view):
            idxs = by_view[vid]
            order = rng.permutation(len(idxs))
            for i in range(0, len(order), batch_size):
                chunks.append((vid, [idxs[int(j)] for j in order[i : i + batch_size]]))
        for i in rng.permutation(len(chunks)):
            yield chunks[int(i)]
