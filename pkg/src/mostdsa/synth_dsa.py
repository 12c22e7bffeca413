"""Deterministic synthetic angiography-like sequences.

A scene is a random 3-D bifurcating vessel tree rendered as an X-ray style
projection: each branch contributes a cylinder-thickness profile weighted by
its contrast, and the total absorption maps to intensity through
``1 - exp(-a)``, so background is exactly 0 and values stay in [0, 1).

Regimes
    structure   fully opacified tree, no motion (all frames identical)
    diffusion   contrast front advancing along arc length from the root
    rotation    tree spinning about the image's vertical axis plus slow drift,
                so projected branches cross and swap depth order
    mixed       diffusion and rotation together

Everything is a smooth function of the continuous time index, which makes
``render(scene, t)`` an exact ground truth for any fractional ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import UsageError

REGIMES = ("structure", "diffusion", "rotation", "mixed")


@dataclass
class Branch:
    points: np.ndarray  # (m, 3) polyline in normalised scene units
    radius: float  # pixels
    arc: np.ndarray  # (m,) arc length from the root at each point
    depth: int


@dataclass
class VesselScene:
    seed: int
    regime: str
    n_frames: int
    res: Tuple[int, int]
    branches: List[Branch]
    spin_deg: float  # rotation per frame about the vertical axis
    drift: Tuple[float, float]  # pixels per frame (x, y)
    front_start: float
    front_speed: float  # arc length per frame; 0 with infinite start = static
    front_width: float
    absorption: float = 1.6
    meta: Dict[str, float] = field(default_factory=dict)

    def angle(self, t: float) -> float:
        return np.deg2rad(self.spin_deg * t)

    def front(self, t: float) -> float:
        return self.front_start + self.front_speed * t


def _rotate(vec: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    c, s = np.cos(angle), np.sin(angle)
    return vec * c + np.cross(axis, vec) * s + axis * np.dot(axis, vec) * (1 - c)


def _grow_tree(rng: np.random.Generator, scale: float) -> List[Branch]:
    branches: List[Branch] = []
    max_depth = int(rng.integers(4, 7))
    root_r = rng.uniform(1.8, 2.8) * scale
    theta = rng.uniform(-0.4, 0.4)
    start = np.array([rng.uniform(-0.3, 0.3), -0.95, rng.uniform(-0.1, 0.1)])
    direction = np.array([np.sin(theta), np.cos(theta), rng.uniform(-0.2, 0.2)])

    stack = [(start, direction / np.linalg.norm(direction), 0.55, root_r, 0, 0.0)]
    while stack:
        p0, d, length, radius, depth, s0 = stack.pop()
        n_seg = 4
        pts = [p0]
        dirn = d.copy()
        for _ in range(n_seg):
            dirn = dirn + rng.normal(0.0, 0.18, size=3) * np.array([1.0, 1.0, 0.6])
            dirn /= np.linalg.norm(dirn)
            pts.append(pts[-1] + dirn * length / n_seg)
        pts = np.array(pts)
        seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = s0 + np.concatenate([[0.0], np.cumsum(seg_len)])
        branches.append(Branch(pts, float(radius), arc, depth))
        if depth + 1 >= max_depth or radius < 0.45 * scale:
            continue
        tilt = rng.normal(0.0, 0.5, size=3)
        axis = np.array([0.0, 0.0, 1.0]) + tilt * np.array([1.0, 1.0, 0.0])
        for sign in (-1.0, 1.0):
            ang = sign * np.deg2rad(rng.uniform(15.0, 45.0))
            child = _rotate(dirn, axis, ang)
            child_r = radius * rng.uniform(0.6, 0.8)
            child_len = length * rng.uniform(0.7, 0.9)
            stack.append((pts[-1], child / np.linalg.norm(child), child_len, child_r, depth + 1, arc[-1]))
    return branches


def make_scene(seed: int, n_frames: int = 16, res: Tuple[int, int] = (64, 64), regime: str = "mixed") -> VesselScene:
    if regime not in REGIMES:
        raise UsageError(f"unknown regime {regime!r}; choose from {', '.join(REGIMES)}")
    if n_frames < 3:
        raise UsageError(f"n_frames must be >= 3, got {n_frames}")
    h, w = res
    if h % 4 or w % 4 or h < 8 or w < 8:
        raise UsageError(f"resolution {h}x{w} must be multiples of 4 (at least 8)")
    rng = np.random.default_rng(seed)
    scale = min(h, w) / 64.0
    branches = _grow_tree(rng, scale)
    max_arc = max(b.arc[-1] for b in branches)

    spin = 0.0
    drift = (0.0, 0.0)
    front_start, front_speed = np.inf, 0.0
    if regime in ("rotation", "mixed"):
        spin = float(rng.choice([-1.0, 1.0]) * rng.uniform(2.0, 3.5))
        drift = (float(rng.uniform(-0.5, 0.5) * scale), float(rng.uniform(-0.5, 0.5) * scale))
    if regime in ("diffusion", "mixed"):
        span = 1.25 * max_arc
        front_start = -0.1 * max_arc
        front_speed = span / (n_frames - 1)
    return VesselScene(
        seed=seed,
        regime=regime,
        n_frames=n_frames,
        res=(h, w),
        branches=branches,
        spin_deg=spin,
        drift=drift,
        front_start=float(front_start),
        front_speed=float(front_speed),
        front_width=0.06 * max_arc,
        meta={"max_arc": float(max_arc), "base_angle": 0.0},
    )


def _project(scene: VesselScene, t: float) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Per branch: pixel-space (m, 2) points and (m,) depth at time t."""
    h, w = scene.res
    a = scene.angle(t)
    c, s = np.cos(a), np.sin(a)
    dx, dy = scene.drift[0] * t, scene.drift[1] * t
    half = 0.46 * min(h, w)
    out = []
    for b in scene.branches:
        x, y, z = b.points.T
        xr = x * c + z * s
        zr = -x * s + z * c
        px = np.stack([xr * half + w / 2 + dx, y * half + h / 2 + dy], axis=1)
        out.append((px, zr))
    return out


def _branch_field(px: np.ndarray, arc: np.ndarray, depth: np.ndarray, radius: float, shape):
    """Thickness profile, arc length and depth of the closest point, over a bbox."""
    h, w = shape
    reach = radius + 1.0
    x0 = int(max(np.floor(px[:, 0].min() - reach), 0))
    x1 = int(min(np.ceil(px[:, 0].max() + reach) + 1, w))
    y0 = int(max(np.floor(px[:, 1].min() - reach), 0))
    y1 = int(min(np.ceil(px[:, 1].max() + reach) + 1, h))
    if x0 >= x1 or y0 >= y1:
        return None
    gy, gx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    best = np.full(gx.shape, np.inf)
    s_best = np.zeros(gx.shape)
    z_best = np.zeros(gx.shape)
    for k in range(len(px) - 1):
        a, b = px[k], px[k + 1]
        ab = b - a
        denom = float(ab @ ab) or 1e-12
        u = np.clip(((gx - a[0]) * ab[0] + (gy - a[1]) * ab[1]) / denom, 0.0, 1.0)
        d2 = (gx - a[0] - u * ab[0]) ** 2 + (gy - a[1] - u * ab[1]) ** 2
        closer = d2 < best
        best = np.where(closer, d2, best)
        s_best = np.where(closer, arc[k] + u * (arc[k + 1] - arc[k]), s_best)
        z_best = np.where(closer, depth[k] + u * (depth[k + 1] - depth[k]), z_best)
    rr = radius + 0.5
    profile = np.sqrt(np.clip(1.0 - best / (rr * rr), 0.0, 1.0))
    return (slice(y0, y1), slice(x0, x1)), profile, s_best, z_best


def render(scene: VesselScene, t: float, with_depth: bool = False):
    """Frame at continuous time index ``t`` (integer t = stored frame t).

    With ``with_depth`` also returns (front_id, second_id) maps: the branch
    nearest to the viewer at each pixel and the one directly behind it
    (-1 where fewer branches cover the pixel).
    """
    h, w = scene.res
    absorb = np.zeros((h, w))
    if with_depth:
        zbuf = np.full((2, h, w), -np.inf)
        ids = np.full((2, h, w), -1, dtype=np.int64)
    front = scene.front(t)
    max_r = max(b.radius for b in scene.branches)
    for bi, (b, (px, z)) in enumerate(zip(scene.branches, _project(scene, t))):
        res = _branch_field(px, b.arc, z, b.radius, (h, w))
        if res is None:
            continue
        win, profile, s, zc = res
        if np.isinf(front):
            contrast = 1.0
        else:
            contrast = 0.5 + 0.5 * np.tanh((front - s) / scene.front_width)
        weight = 0.35 + 0.65 * np.sqrt(b.radius / max_r)
        absorb[win] += scene.absorption * weight * profile * contrast
        if with_depth:
            cover = profile > 0
            zb, ib = zbuf[:, win[0], win[1]], ids[:, win[0], win[1]]
            zc = np.where(cover, zc, -np.inf)
            new_front = cover & (zc > zb[0])
            new_second = cover & ~new_front & (zc > zb[1])
            zb[1] = np.where(new_front, zb[0], np.where(new_second, zc, zb[1]))
            ib[1] = np.where(new_front, ib[0], np.where(new_second, bi, ib[1]))
            zb[0] = np.where(new_front, zc, zb[0])
            ib[0] = np.where(new_front, bi, ib[0])
            zbuf[:, win[0], win[1]] = zb
            ids[:, win[0], win[1]] = ib
    img = 1.0 - np.exp(-absorb)
    img = img.astype(np.float32)
    if with_depth:
        return img, ids[0], ids[1]
    return img


def analytic_midframe(scene: VesselScene, t: float) -> np.ndarray:
    """Exact frame at fractional time index ``t``."""
    return render(scene, float(t))


def generate_sequence(seed: int, n_frames: int = 16, res: Tuple[int, int] = (64, 64), regime: str = "mixed") -> np.ndarray:
    """(n_frames, H, W) float32 sequence in [0, 1]."""
    scene = make_scene(seed, n_frames, res, regime)
    return render_sequence(scene)


def render_sequence(scene: VesselScene) -> np.ndarray:
    return np.stack([render(scene, float(i)) for i in range(scene.n_frames)])


def occlusion_flips(scene: VesselScene) -> int:
    """Pixels where two branches swap front/back order between some frame
    and a later one while both still cover the pixel."""
    maps = [render(scene, float(i), with_depth=True)[1:] for i in range(scene.n_frames)]
    flips = np.zeros(scene.res, dtype=bool)
    for i in range(len(maps)):
        fa, sa = maps[i]
        for j in range(i + 1, len(maps)):
            fb, sb = maps[j]
            flips |= (fa >= 0) & (sa >= 0) & (fa == sb) & (sa == fb)
    return int(flips.sum())


def make_groups(seq: Sequence, n_interp: int) -> List[Tuple[int, ...]]:
    """Index windows of n_interp + 2 consecutive frames, stride 1."""
    size = n_interp + 2
    if n_interp < 1:
        raise UsageError(f"n_interp must be >= 1, got {n_interp}")
    if len(seq) < size:
        raise UsageError(f"sequence of {len(seq)} frames is too short for groups of {size}")
    return [tuple(range(i, i + size)) for i in range(len(seq) - size + 1)]


def group_times(n_interp: int) -> Tuple[float, ...]:
    """Exact fractional positions of the targets inside a group."""
    return tuple((i + 1) / (n_interp + 1) for i in range(n_interp))


# ---------------------------------------------------------------------------
# on-disk datasets
# ---------------------------------------------------------------------------

def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def write_sequence(path, frames: np.ndarray, scene: VesselScene) -> None:
    from PIL import Image

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        q = np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(q, mode="L").save(path / f"frame_{i:04d}.png", optimize=False)
    h, w = scene.res
    manifest = (
        f"seed = {scene.seed}\n"
        f"regime = {scene.regime}\n"
        f"resolution = {h}x{w}\n"
        f"frames = {len(frames)}\n"
    )
    (path / "manifest.txt").write_text(manifest)


def read_manifest(path) -> Dict[str, str]:
    values = {}
    for line in (Path(path) / "manifest.txt").read_text().splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
    return values


def read_sequence(path) -> np.ndarray:
    from PIL import Image

    files = sorted(Path(path).glob("frame_*.png"))
    if not files:
        raise FileNotFoundError(f"no frame_*.png files in {path}")
    return np.stack([np.asarray(Image.open(f), dtype=np.float32) / 255.0 for f in files])


def generate_dataset(out, scenes: int, frames: int, res: Tuple[int, int], regime: str, seed: int) -> List[Path]:
    """Write ``scenes`` sequences under ``out``; regime "all" cycles the four regimes."""
    out = Path(out)
    dirs = []
    for i in range(scenes):
        reg = REGIMES[i % len(REGIMES)] if regime == "all" else regime
        scene = make_scene(scene_seed(seed, i), frames, res, reg)
        d = out / f"scene_{i:04d}"
        write_sequence(d, render_sequence(scene), scene)
        dirs.append(d)
    return dirs


def list_sequences(root) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.txt").exists())
    if not dirs:
        raise FileNotFoundError(f"no sequences (subdirectories with manifest.txt) under {root}")
    return dirs
