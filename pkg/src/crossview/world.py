"""Deterministic procedural multi-view hand-object world.

Scenes are scripted on a 64x64-unit canonical canvas: two hands and one
object. Verbs differ only in motion pattern (so verb recognition needs
temporal cues); nouns differ only in object shape/color (spatial cues).
Each clip is a view-specific rendering of a canonical scene: an affine map
to pixel space, a background style, a color tint, and (for the egocentric
view) per-frame translation jitter. Interaction centers are the affine
images of the canonical actor centers, rounded, or marked absent when they
fall outside the frame.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ValidationError
from .masking import InteractionAnnotation

CANVAS = 64.0

VERBS = ("approach", "retreat", "rotate-cw", "rotate-ccw", "push-left", "push-right")
SHAPES = ("square", "circle", "triangle")
OBJECT_COLORS = {"red": (204, 50, 50), "blue": (50, 80, 204)}
NOUNS = tuple(f"{c}-{s}" for s in SHAPES for c in OBJECT_COLORS)  # 6

HAND_COLOR = (150, 135, 115)
OBJECT_SIZE = 9.0  # canonical units (full side / diameter)
HAND_SIZE = 6.0


@dataclasses.dataclass
class SceneTrajectories:
    left: np.ndarray  # [T, 2] canonical (x, y)
    right: np.ndarray
    obj: np.ndarray
    shape: str
    color: tuple[int, int, int]


@dataclasses.dataclass(frozen=True)
class ViewSpec:
    view_id: str
    affine: tuple[float, float, float, float, float, float]  # a,b,tx,c,d,ty
    background: str = "plain"  # plain | gradient | checker
    tint: tuple[int, int, int] = (0, 0, 0)
    jitter_std: float = 0.0

    def __post_init__(self):
        a, b, _, c, d, _ = self.affine
        if abs(a * d - b * c) < 1e-9:
            raise ConfigurationError(f"view {self.view_id}: singular affine")

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        a, b, tx, c, d, ty = self.affine
        return np.array([[a, b], [c, d]]), np.array([tx, ty])

    def scale_factor(self) -> float:
        a, b, _, c, d, _ = self.affine
        return math.sqrt(abs(a * d - b * c))


@dataclasses.dataclass
class VideoClip:
    frames: np.ndarray  # uint8 [T, H, W, 3]
    view_id: str
    verb_id: int
    noun_id: int
    annotation: InteractionAnnotation
    clip_id: str
    seed: int

    @property
    def action_id(self) -> int:
        return self.verb_id * len(NOUNS) + self.noun_id


def _mirror(points: np.ndarray) -> np.ndarray:
    out = points.copy()
    out[:, 0] = CANVAS - out[:, 0]
    return out


def script_scene(verb_id: int, noun_id: int, T: int, seed: int) -> SceneTrajectories:
    """Canonical per-frame positions for left hand, right hand, object.

    Mirror pairs (rotate-cw/ccw, push-right/left) are exact reflections
    about the vertical canvas axis under the same seed; retreat is the time
    reverse of approach.
    """
    if not 0 <= verb_id < len(VERBS):
        raise ValidationError(f"verb_id {verb_id} out of range")
    if not 0 <= noun_id < len(NOUNS):
        raise ValidationError(f"noun_id {noun_id} out of range")
    if T < 2:
        raise ValidationError(f"need at least 2 frames, got {T}")

    # All draws happen in a verb-independent order so mirror/reverse pairs
    # share their randomness.
    rng = np.random.default_rng(seed)
    obj_center = CANVAS / 2 + rng.uniform(-4.0, 4.0, size=2)
    left_base = np.array([14.0, 48.0]) + rng.uniform(-2.0, 2.0, size=2)
    left_bob = rng.normal(0.0, 0.4, size=(T, 2))
    alpha = rng.uniform(0.0, 2 * math.pi)  # approach direction
    theta0 = rng.uniform(0.0, 2 * math.pi)  # orbit phase

    verb = VERBS[verb_id]
    ts = np.linspace(0.0, 1.0, T)

    left = left_base[None, :] + left_bob
    obj = np.repeat(obj_center[None, :], T, axis=0)

    if verb in ("approach", "retreat"):
        d0, d1 = 24.0, 5.0
        dist = d0 + (d1 - d0) * ts  # strictly decreasing
        direction = np.array([math.cos(alpha), math.sin(alpha)])
        right = obj + dist[:, None] * direction[None, :]
        if verb == "retreat":
            right = right[::-1].copy()
    elif verb in ("rotate-cw", "rotate-ccw"):
        radius = 12.0
        span = 1.5 * math.pi
        theta = theta0 - span * ts  # clockwise in image coords
        right = obj + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elif verb in ("push-left", "push-right"):
        shift = 14.0 * ts
        obj = obj + np.stack([shift, np.zeros(T)], axis=1)
        right = obj + np.array([-(OBJECT_SIZE / 2 + HAND_SIZE / 2), 0.0])[None, :]
    else:  # pragma: no cover
        raise AssertionError(verb)

    if verb in ("rotate-ccw", "push-left"):
        left, right, obj = _mirror(left), _mirror(right), _mirror(obj)

    noun = NOUNS[noun_id]
    color_name, shape = noun.split("-", 1)
    return SceneTrajectories(
        left=left, right=right, obj=obj, shape=shape,
        color=OBJECT_COLORS[color_name],
    )


# -- rendering ----------------------------------------------------------


def _background(view: ViewSpec, H: int, W: int) -> np.ndarray:
    img = np.empty((H, W, 3), dtype=np.float64)
    if view.background == "plain":
        img[:] = 70.0
    elif view.background == "gradient":
        col = np.linspace(40.0, 110.0, W)
        img[:] = col[None, :, None]
    elif view.background == "checker":
        yy, xx = np.mgrid[0:H, 0:W]
        img[:] = np.where(((yy // 8 + xx // 8) % 2 == 0), 55.0, 95.0)[..., None]
    else:
        raise ConfigurationError(f"unknown background {view.background!r}")
    return img


def _stamp(img: np.ndarray, center: np.ndarray, shape: str, half: float,
           color: tuple[int, int, int]) -> None:
    H, W = img.shape[:2]
    yy, xx = np.mgrid[0:H, 0:W]
    dx = xx - center[0]
    dy = yy - center[1]
    if shape == "square":
        mask = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    elif shape == "circle":
        mask = dx * dx + dy * dy <= half * half
    elif shape == "triangle":
        # upward-pointing: width grows linearly from apex to base
        mask = (dy >= -half) & (dy <= half) & (np.abs(dx) <= (dy + half) / 2)
    else:
        raise ConfigurationError(f"unknown shape {shape!r}")
    img[mask] = np.array(color, dtype=np.float64)


def render_clip(
    traj: SceneTrajectories,
    view: ViewSpec,
    H: int,
    W: int,
    seed: int,
    clip_id: str,
    verb_id: int,
    noun_id: int,
    box_size: int,
) -> VideoClip:
    T = traj.obj.shape[0]
    rng = np.random.default_rng(seed)
    jitter = (
        rng.normal(0.0, view.jitter_std, size=(T, 2))
        if view.jitter_std > 0
        else np.zeros((T, 2))
    )
    A, t = view.matrix()
    s = view.scale_factor()
    frames = np.empty((T, H, W, 3), dtype=np.uint8)
    centers: dict[str, list[Optional[tuple[int, int]]]] = {
        "left": [], "right": [], "object": []
    }
    actors = (("object", traj.obj), ("left", traj.left), ("right", traj.right))
    for fi in range(T):
        img = _background(view, H, W)
        for role, path in actors:
            p = A @ path[fi] + t + jitter[fi]
            if role == "object":
                _stamp(img, p, traj.shape, OBJECT_SIZE / 2 * s, traj.color)
            else:
                _stamp(img, p, "square", HAND_SIZE / 2 * s, HAND_COLOR)
            px = (int(np.round(p[0])), int(np.round(p[1])))
            centers[role].append(
                px if 0 <= px[0] < W and 0 <= px[1] < H else None
            )
        img += np.array(view.tint, dtype=np.float64)
        frames[fi] = np.clip(np.round(img), 0, 255).astype(np.uint8)
    annotation = InteractionAnnotation(centers=centers, box_size=box_size)
    return VideoClip(
        frames=frames, view_id=view.view_id, verb_id=verb_id, noun_id=noun_id,
        annotation=annotation, clip_id=clip_id, seed=seed,
    )


# -- default camera rig -------------------------------------------------


def _rotation_view(view_id: str, degrees: float, scale: float, H: int, W: int,
                   **kw) -> ViewSpec:
    th = math.radians(degrees)
    a, b = scale * math.cos(th), -scale * math.sin(th)
    c, d = scale * math.sin(th), scale * math.cos(th)
    # map canvas center to frame center
    cx, cy = CANVAS / 2, CANVAS / 2
    tx = W / 2 - (a * cx + b * cy)
    ty = H / 2 - (c * cx + d * cy)
    return ViewSpec(view_id=view_id, affine=(a, b, tx, c, d, ty), **kw)


def default_train_views(H: int, W: int) -> list[ViewSpec]:
    # cameras spread over ~75 degrees with mild scale differences, like a
    # rig of side-by-side third-person tripods
    u = min(H, W) / 32.0
    return [
        _rotation_view("v1", 0, 0.45 * u, H, W, background="plain", tint=(0, 0, 0)),
        _rotation_view("v2", 25, 0.42 * u, H, W, background="gradient", tint=(10, 0, -10)),
        _rotation_view("v3", 50, 0.48 * u, H, W, background="checker", tint=(-10, 5, 0)),
        _rotation_view("v4", 75, 0.45 * u, H, W, background="plain", tint=(0, -10, 10)),
    ]


def default_heldout_views(H: int, W: int) -> list[ViewSpec]:
    u = min(H, W) / 32.0
    return [
        _rotation_view("h1", 37, 0.44 * u, H, W, background="gradient", tint=(5, 5, -5)),
        _rotation_view("h2", 62, 0.46 * u, H, W, background="checker", tint=(-5, 0, 5)),
    ]


def default_ego_view(H: int, W: int) -> ViewSpec:
    # zoom-in + per-frame jitter + strong tint: the egocentric gap this world
    # can express (closer camera, shake, different color response)
    s = 0.7 * min(H, W) / 32.0
    return _rotation_view(
        "ego", 12, s, H, W, background="plain", tint=(25, 15, -20),
        jitter_std=0.8,
    )
