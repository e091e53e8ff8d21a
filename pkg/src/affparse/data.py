"""Deterministic synthetic stick-figure scenes.

Each sample is a randomized articulated figure rendered as filled capsules
onto a cluttered background: seven part classes (background, head, torso,
left/right arm, left/right leg) and six joints (head, neck, wrists,
ankles). Left and right limbs share one color so appearance alone cannot
separate them; striped shading and occluder boxes supply the
inconsistency and indistinction failure modes the attention modules
target. Same seed, same config -> bit-identical sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List

import numpy as np

from .acet import read_acet, write_acet
from .errors import ConfigurationError, DataError
from .losses import LabelMap

CLASS_NAMES = ("background", "head", "torso", "left-arm", "right-arm", "left-leg", "right-leg")
JOINT_NAMES = ("head", "neck", "left-wrist", "right-wrist", "left-ankle", "right-ankle")

# class-id pairs and joint-id pairs swapped by a horizontal flip
FLIP_CLASS_PAIRS = ((3, 4), (5, 6))
FLIP_JOINT_PAIRS = ((2, 3), (4, 5))

_PALETTE = {
    "background": (0.10, 0.11, 0.13),
    "head": (0.87, 0.72, 0.55),
    "torso": (0.25, 0.45, 0.80),
    "arm": (0.80, 0.30, 0.30),
    "leg": (0.30, 0.65, 0.35),
}


@dataclass
class DataConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 7
    num_joints: int = 6
    pose_range: float = 40.0       # limb angle spread, degrees
    color_jitter: float = 0.15
    occlusion_prob: float = 0.3
    sigma: float = 2.0             # heatmap width in pixels
    connectivity: int = 4          # 4 or 8 for boundary extraction
    noise_sigma: float = 0.04
    texture_strength: float = 0.25
    distractor_count: int = 3
    translate_jitter: float = 5.0
    scale_jitter: float = 0.15

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ConfigurationError(f"canvas must be at least 32x32, got {self.height}x{self.width}")
        if self.num_classes != len(CLASS_NAMES):
            raise ConfigurationError(f"the figure model defines {len(CLASS_NAMES)} classes, got {self.num_classes}")
        if self.num_joints != len(JOINT_NAMES):
            raise ConfigurationError(f"the figure model defines {len(JOINT_NAMES)} joints, got {self.num_joints}")
        if self.connectivity not in (4, 8):
            raise ConfigurationError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")


@dataclass
class Joint:
    joint_id: int
    x: int
    y: int
    visible: bool


@dataclass
class Sample:
    image: np.ndarray      # (3, H, W) float32 in [0, 1]
    labels: np.ndarray     # (H, W) int64
    joints: List[Joint]
    boundary: np.ndarray   # (H, W) uint8
    heatmaps: np.ndarray   # (J, H, W) float32
    seed: int = -1


def _grids(h, w):
    return np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")


def _capsule_mask(h, w, p0, p1, radius):
    """Pixels within ``radius`` of the segment p0-p1 (points are (x, y))."""
    yy, xx = _grids(h, w)
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    denom = dx * dx + dy * dy
    if denom < 1e-12:
        d2 = (xx - p0[0]) ** 2 + (yy - p0[1]) ** 2
    else:
        t = np.clip(((xx - p0[0]) * dx + (yy - p0[1]) * dy) / denom, 0.0, 1.0)
        d2 = (xx - p0[0] - t * dx) ** 2 + (yy - p0[1] - t * dy) ** 2
    return d2 <= radius * radius


def _disk_mask(h, w, center, radius):
    yy, xx = _grids(h, w)
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius * radius


def boundary_from_labels(labels, connectivity: int = 4) -> np.ndarray:
    """1 where any in-bounds neighbor carries a different label."""
    lab = labels.data if isinstance(labels, LabelMap) else np.asarray(labels)
    squeeze = False
    if lab.ndim == 2:
        lab = lab[None]
        squeeze = True
    out = np.zeros(lab.shape, dtype=np.uint8)
    out[:, 1:, :] |= lab[:, 1:, :] != lab[:, :-1, :]
    out[:, :-1, :] |= lab[:, :-1, :] != lab[:, 1:, :]
    out[:, :, 1:] |= lab[:, :, 1:] != lab[:, :, :-1]
    out[:, :, :-1] |= lab[:, :, :-1] != lab[:, :, 1:]
    if connectivity == 8:
        out[:, 1:, 1:] |= lab[:, 1:, 1:] != lab[:, :-1, :-1]
        out[:, :-1, :-1] |= lab[:, :-1, :-1] != lab[:, 1:, 1:]
        out[:, 1:, :-1] |= lab[:, 1:, :-1] != lab[:, :-1, 1:]
        out[:, :-1, 1:] |= lab[:, :-1, 1:] != lab[:, 1:, :-1]
    return out[0] if squeeze else out


def joints_to_heatmaps(joints: List[Joint], h: int, w: int, sigma: float) -> np.ndarray:
    """One Gaussian channel per joint, peaking at exactly 1; invisible
    joints give all-zero channels."""
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    maps = np.zeros((len(joints), h, w), dtype=np.float32)
    yy, xx = _grids(h, w)
    for j in joints:
        if not j.visible:
            continue
        d2 = (xx - j.x) ** 2 + (yy - j.y) ** 2
        maps[j.joint_id] = np.exp(-d2 / (2.0 * sigma * sigma)).astype(np.float32)
    return maps


def _jittered(rng, base, amount):
    return np.clip(np.asarray(base) + rng.uniform(-amount, amount, size=3), 0.0, 1.0)


def generate_sample(seed: int, cfg: DataConfig) -> Sample:
    """Render one figure; a pure function of (seed, config)."""
    rng = np.random.default_rng(seed)
    h, w = cfg.height, cfg.width
    sy, sx = h / 64.0, w / 64.0
    su = min(sy, sx)

    # background with part-colored distractor blobs
    colors = {name: _jittered(rng, rgb, cfg.color_jitter) for name, rgb in _PALETTE.items()}
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = colors["background"]
    for _ in range(cfg.distractor_count):
        name = ("head", "torso", "arm", "leg")[rng.integers(0, 4)]
        color = _jittered(rng, _PALETTE[name], cfg.color_jitter)
        center = (rng.uniform(0, w - 1), rng.uniform(0, h - 1))
        mask = _disk_mask(h, w, center, rng.uniform(2.0, 6.0) * su)
        image[mask] = color

    # figure geometry
    scl = (1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)) * su
    hip = np.array([
        w / 2.0 + rng.uniform(-cfg.translate_jitter, cfg.translate_jitter) * sx,
        h * 0.60 + rng.uniform(-cfg.translate_jitter, cfg.translate_jitter) * sy,
    ])
    pr = math.radians(cfg.pose_range)
    lean = rng.uniform(-pr, pr) * 0.15
    torso_len, arm_len, leg_len = 14.0 * scl, 13.0 * scl, 15.0 * scl
    neck = hip + torso_len * np.array([math.sin(lean), -math.cos(lean)])

    def limb_end(origin, length, angle):
        # angle from straight down, positive toward image right
        return origin + length * np.array([math.sin(angle), math.cos(angle)])

    arm_base, leg_base = math.radians(35.0), math.radians(18.0)
    l_wrist = limb_end(neck, arm_len, -(arm_base + rng.uniform(-pr, pr)))
    r_wrist = limb_end(neck, arm_len, +(arm_base + rng.uniform(-pr, pr)))
    l_ankle = limb_end(hip, leg_len, -(leg_base + rng.uniform(-pr, pr) * 0.6))
    r_ankle = limb_end(hip, leg_len, +(leg_base + rng.uniform(-pr, pr) * 0.6))
    head_c = neck + np.array([math.sin(lean), -math.cos(lean)]) * (6.0 * scl)

    labels = np.zeros((h, w), dtype=np.int64)

    def paint(mask, class_id, color_name):
        labels[mask] = class_id
        image[mask] = colors[color_name]

    paint(_capsule_mask(h, w, hip, neck, 4.0 * scl), 2, "torso")
    paint(_capsule_mask(h, w, hip, l_ankle, 2.6 * scl), 5, "leg")
    paint(_capsule_mask(h, w, hip, r_ankle, 2.6 * scl), 6, "leg")
    paint(_capsule_mask(h, w, neck, l_wrist, 2.4 * scl), 3, "arm")
    paint(_capsule_mask(h, w, neck, r_wrist, 2.4 * scl), 4, "arm")
    paint(_disk_mask(h, w, head_c, 4.8 * scl), 1, "head")

    # striped shading inside parts: intra-part appearance variation
    if cfg.texture_strength > 0:
        yy, xx = _grids(h, w)
        for class_id in (2, 3, 4, 5, 6):
            period = rng.uniform(3.0, 8.0)
            phase = rng.uniform(0.0, 2 * math.pi)
            orient = rng.uniform(0.0, math.pi)
            wave = np.sin(2 * math.pi * (xx * math.cos(orient) + yy * math.sin(orient)) / period + phase)
            mod = 1.0 + cfg.texture_strength * wave
            m = labels == class_id
            image[m] *= mod[m][:, None]

    joints = [
        Joint(0, int(round(head_c[0])), int(round(head_c[1])), True),
        Joint(1, int(round(neck[0])), int(round(neck[1])), True),
        Joint(2, int(round(l_wrist[0])), int(round(l_wrist[1])), True),
        Joint(3, int(round(r_wrist[0])), int(round(r_wrist[1])), True),
        Joint(4, int(round(l_ankle[0])), int(round(l_ankle[1])), True),
        Joint(5, int(round(r_ankle[0])), int(round(r_ankle[1])), True),
    ]

    # occluder box: pixels beneath it become background, joints under it invisible
    occluded = rng.uniform() < cfg.occlusion_prob
    if occluded:
        bw_, bh_ = rng.uniform(8, 18) * sx, rng.uniform(8, 18) * sy
        bx = rng.uniform(0, w - bw_)
        by = rng.uniform(0, h - bh_)
        x0, x1 = int(bx), int(bx + bw_)
        y0, y1 = int(by), int(by + bh_)
        shade = rng.uniform(0.25, 0.6)
        image[y0:y1, x0:x1] = shade + rng.uniform(-0.05, 0.05, size=3)
        labels[y0:y1, x0:x1] = 0
        for j in joints:
            if x0 <= j.x < x1 and y0 <= j.y < y1:
                j.visible = False

    for j in joints:
        if not (0 <= j.x < w and 0 <= j.y < h):
            j.visible = False

    if cfg.noise_sigma > 0:
        image += rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32).transpose(2, 0, 1)

    return Sample(
        image=image,
        labels=labels,
        joints=joints,
        boundary=boundary_from_labels(labels, cfg.connectivity),
        heatmaps=joints_to_heatmaps(joints, h, w, cfg.sigma),
        seed=seed,
    )


def flip_sample(s: Sample) -> Sample:
    """Horizontal flip with left/right label and joint swaps."""
    w = s.labels.shape[1]
    labels = s.labels[:, ::-1].copy()
    for a, b in FLIP_CLASS_PAIRS:
        ma, mb = labels == a, labels == b
        labels[ma], labels[mb] = b, a
    jid = np.arange(len(JOINT_NAMES))
    for a, b in FLIP_JOINT_PAIRS:
        jid[a], jid[b] = b, a
    joints = [Joint(int(jid[j.joint_id]), w - 1 - j.x, j.y, j.visible) for j in s.joints]
    joints.sort(key=lambda j: j.joint_id)
    heat = s.heatmaps[:, :, ::-1][jid].copy()
    return Sample(
        image=np.ascontiguousarray(s.image[:, :, ::-1]),
        labels=labels,
        joints=joints,
        boundary=np.ascontiguousarray(s.boundary[:, ::-1]),
        heatmaps=heat,
        seed=s.seed,
    )


# ---------------------------------------------------------------------------
# on-disk layout: <root>/<split>/<seed>/{image,labels,boundary,heatmaps}.acet
# + joints.csv, with a per-split manifest.txt listing seeds
# ---------------------------------------------------------------------------

def save_sample(directory, s: Sample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_acet(directory / "image.acet", s.image)
    write_acet(directory / "labels.acet", s.labels.astype(np.float32))
    write_acet(directory / "boundary.acet", s.boundary.astype(np.float32))
    write_acet(directory / "heatmaps.acet", s.heatmaps)
    lines = ["joint_id,x,y,visible"]
    for j in s.joints:
        lines.append(f"{j.joint_id},{j.x},{j.y},{int(j.visible)}")
    (directory / "joints.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sample(directory) -> Sample:
    directory = Path(directory)
    if not (directory / "image.acet").exists():
        raise FileNotFoundError(f"no sample at {directory}")
    image = read_acet(directory / "image.acet")
    labels = np.rint(read_acet(directory / "labels.acet")).astype(np.int64)
    boundary = np.rint(read_acet(directory / "boundary.acet")).astype(np.uint8)
    heatmaps = read_acet(directory / "heatmaps.acet")
    joints = []
    text = (directory / "joints.csv").read_text(encoding="utf-8").strip().splitlines()
    for line in text[1:]:
        jid, x, y, vis = line.split(",")
        joints.append(Joint(int(jid), int(x), int(y), bool(int(vis))))
    try:
        seed = int(directory.name)
    except ValueError:
        seed = -1
    return Sample(image=image, labels=labels, joints=joints, boundary=boundary, heatmaps=heatmaps, seed=seed)


def generate_split(root, split: str, count: int, seed_base: int, cfg: DataConfig) -> list:
    """Write ``count`` samples for seeds seed_base..seed_base+count-1."""
    root = Path(root)
    split_dir = root / split
    split_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(range(seed_base, seed_base + count))
    for seed in seeds:
        save_sample(split_dir / str(seed), generate_sample(seed, cfg))
    (split_dir / "manifest.txt").write_text("\n".join(str(s) for s in seeds) + "\n", encoding="utf-8")
    return seeds


def load_split(root, split: str) -> list:
    split_dir = Path(root) / split
    manifest = split_dir / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt under {split_dir}")
    seeds = [int(s) for s in manifest.read_text(encoding="utf-8").split()]
    if not seeds:
        raise DataError(f"{manifest} lists no seeds")
    return [load_sample(split_dir / str(s)) for s in seeds]
