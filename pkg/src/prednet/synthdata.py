"""Synthetic moving-shape sequences and frame-directory ingestion.

The generator renders one anti-aliased shape per sequence translating at a
constant velocity, with every latent parameter (shape class, size, start
position, velocity, intensity) recorded, so linear-readout experiments have
ground truth. Rendering supersamples 4x per axis and box-averages down, so
sub-pixel positions and velocities are representable.

Real footage is ingested from directories of 8-bit PGM/PNG frames:
center-cropped to the target aspect, area-averaged down to the target size,
and scaled to [0, 1].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

SHAPE_NAMES = ("square", "disc", "triangle")

_SUPERSAMPLE = 4
_EDGE_PAD = 1.0  # shapes keep this many pixels clear of the border

IMAGE_SUFFIXES = (".pgm", ".png", ".ppm")


@dataclass
class Latents:
    """Per-sequence generative parameters, aligned with the batch axis."""

    shape_names: tuple[str, ...]
    shape_id: np.ndarray  # (n,) indices into shape_names
    size: np.ndarray  # (n,) pixels
    position0: np.ndarray  # (n, 2) initial (row, col) center
    velocity: np.ndarray  # (n, 2) (d_row, d_col) pixels per frame
    intensity: np.ndarray  # (n,)

    def subset(self, idx) -> "Latents":
        return Latents(
            self.shape_names,
            self.shape_id[idx],
            self.size[idx],
            self.position0[idx],
            self.velocity[idx],
            self.intensity[idx],
        )

    def target(self, name: str) -> np.ndarray:
        """Readout target by name; 2-column arrays for vector latents."""
        if name == "shape_id":
            return self.shape_id
        if name == "velocity":
            return self.velocity
        if name == "position0":
            return self.position0
        if name == "size":
            return self.size[:, None]
        if name == "intensity":
            return self.intensity[:, None]
        raise KeyError(f"unknown latent target {name!r}")


@dataclass
class SequenceBatch:
    """Frames indexed [time][sequence] with optional per-sequence latents."""

    frames: np.ndarray  # (t, n, c, h, w) float32 in [0, 1]
    latents: Latents | None = None

    @property
    def t_steps(self) -> int:
        return self.frames.shape[0]

    @property
    def count(self) -> int:
        return self.frames.shape[1]

    def subset(self, idx) -> "SequenceBatch":
        lat = None if self.latents is None else self.latents.subset(idx)
        return SequenceBatch(self.frames[:, idx], lat)

    def split(self, *sizes: int) -> tuple["SequenceBatch", ...]:
        """Partition into consecutive blocks of the given sizes."""
        if sum(sizes) > self.count:
            raise ValueError(f"cannot split {self.count} sequences into {sizes}")
        out, start = [], 0
        for s in sizes:
            out.append(self.subset(np.arange(start, start + s)))
            start += s
        return tuple(out)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _render_frame(shape: str, cy: float, cx: float, size: float, intensity: float,
                  height: int, width: int) -> np.ndarray:
    ss = _SUPERSAMPLE
    yy = ((np.arange(height * ss) + 0.5) / ss)[:, None]
    xx = ((np.arange(width * ss) + 0.5) / ss)[None, :]
    half = size / 2.0
    if shape == "square":
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    elif shape == "disc":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= half * half
    elif shape == "triangle":
        # apex up at (cy - half, cx); base of full width at cy + half
        halfwidth = (yy - (cy - half)) / 2.0
        mask = (yy >= cy - half) & (yy <= cy + half) & (np.abs(xx - cx) <= halfwidth)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    img = mask.reshape(height, ss, width, ss).mean(axis=(1, 3))
    return (img * intensity).astype(np.float32)


def generate_moving_shapes(
    count: int,
    t_steps: int,
    height: int,
    width: int,
    shape_set: tuple[str, ...] = SHAPE_NAMES,
    velocity_range: tuple[float, float] = (0.5, 2.0),
    size_range: tuple[float, float] = (6.0, 14.0),
    intensity_range: tuple[float, float] = (0.4, 1.0),
    seed: int = 0,
) -> SequenceBatch:
    """Render ``count`` sequences of one translating shape each.

    Start positions are drawn uniformly over the region keeping the whole
    trajectory inside the frame, which is the distribution that rejecting
    and resampling out-of-bounds trajectories would produce. Output is
    bitwise deterministic in ``seed``.
    """
    for name in shape_set:
        if name not in SHAPE_NAMES:
            raise ValueError(f"unknown shape {name!r}; choose from {SHAPE_NAMES}")
    max_travel = velocity_range[1] * (t_steps - 1)
    if size_range[1] + 2 * _EDGE_PAD + max_travel > min(height, width):
        raise ValueError(
            f"velocity too large for frame bounds: size {size_range[1]:g} plus "
            f"travel {max_travel:g} px cannot stay inside {height}x{width}"
        )
    rng = np.random.default_rng(seed)
    frames = np.zeros((t_steps, count, 1, height, width), np.float32)
    shape_id = np.zeros(count, np.int64)
    sizes = np.zeros(count)
    pos0 = np.zeros((count, 2))
    vel = np.zeros((count, 2))
    inten = np.zeros(count)
    for i in range(count):
        shape_id[i] = rng.integers(len(shape_set))
        sizes[i] = rng.uniform(*size_range)
        inten[i] = rng.uniform(*intensity_range)
        speed = rng.uniform(*velocity_range)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        vy, vx = speed * math.sin(angle), speed * math.cos(angle)
        half = sizes[i] / 2.0
        lo_y = half + _EDGE_PAD - min(0.0, vy * (t_steps - 1))
        hi_y = height - half - _EDGE_PAD - max(0.0, vy * (t_steps - 1))
        lo_x = half + _EDGE_PAD - min(0.0, vx * (t_steps - 1))
        hi_x = width - half - _EDGE_PAD - max(0.0, vx * (t_steps - 1))
        cy, cx = rng.uniform(lo_y, hi_y), rng.uniform(lo_x, hi_x)
        pos0[i] = (cy, cx)
        vel[i] = (vy, vx)
        name = shape_set[shape_id[i]]
        for t in range(t_steps):
            frames[t, i, 0] = _render_frame(
                name, cy + t * vy, cx + t * vx, sizes[i], inten[i], height, width
            )
    latents = Latents(tuple(shape_set), shape_id, sizes, pos0, vel, inten)
    return SequenceBatch(frames, latents)


def scramble_time(batch: SequenceBatch, seed: int = 0) -> SequenceBatch:
    """Permute each sequence's frames with a non-identity permutation.

    The frame multiset is preserved exactly; latents no longer describe the
    (destroyed) dynamics and are dropped.
    """
    t_steps = batch.t_steps
    if t_steps < 2:
        raise ValueError("scrambling needs at least 2 frames per sequence")
    rng = np.random.default_rng(seed)
    identity = np.arange(t_steps)
    out = np.empty_like(batch.frames)
    for i in range(batch.count):
        perm = rng.permutation(t_steps)
        while np.array_equal(perm, identity):
            perm = rng.permutation(t_steps)
        out[:, i] = batch.frames[perm, i]
    return SequenceBatch(out, None)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def read_image(path: str | Path, grayscale: bool = True) -> np.ndarray:
    """Read an 8-bit image as float (c, h, w) scaled to [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("L" if grayscale else "RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr[None] if grayscale else arr.transpose(2, 0, 1)


def _overlap_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row i weights input cells by their overlap with output cell i."""
    s = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * s, (i + 1) * s
        for j in range(int(math.floor(lo)), min(int(math.ceil(hi)), n_in)):
            m[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
    return m / s


def area_downsample(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Exact box-filter (area-average) resampling of a (c, h, w) image."""
    c, h, w = image.shape
    my = _overlap_matrix(target_h, h)
    mx = _overlap_matrix(target_w, w)
    out = my @ image.astype(np.float64) @ mx.T
    return out.astype(np.float32)


def center_crop_to_aspect(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Largest centered crop of a (c, h, w) image with the target aspect."""
    _, h, w = image.shape
    if w * target_h >= h * target_w:
        ch, cw = h, max(1, (h * target_w) // target_h)
    else:
        ch, cw = max(1, (w * target_h) // target_w), w
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[:, top : top + ch, left : left + cw]


def load_frame_dir(
    path: str | Path,
    t_steps: int,
    stride: int,
    grayscale: bool = True,
    target_hw: tuple[int, int] | None = None,
) -> SequenceBatch:
    """Window a directory of lexicographically ordered frames into sequences.

    Windows of length ``t_steps`` start every ``stride`` frames. With
    ``target_hw`` set, frames are center-cropped to that aspect and
    area-averaged down to that size.
    """
    root = Path(path)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no image frames ({'/'.join(IMAGE_SUFFIXES)}) under {root}")
    imgs = []
    for f in files:
        img = read_image(f, grayscale)
        if target_hw is not None:
            img = area_downsample(center_crop_to_aspect(img, *target_hw), *target_hw)
        imgs.append(img)
    shapes = {i.shape for i in imgs}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent frame shapes under {root}: {sorted(shapes)}")
    starts = range(0, len(imgs) - t_steps + 1, stride)
    if len(imgs) < t_steps:
        raise ValueError(
            f"{len(imgs)} frames under {root} cannot fill one window of {t_steps}"
        )
    stacked = np.stack(imgs)  # (n_frames, c, h, w)
    windows = np.stack([stacked[s : s + t_steps] for s in starts], axis=1)
    return SequenceBatch(windows.astype(np.float32), None)


# ---------------------------------------------------------------------------
# materialization and manifests
# ---------------------------------------------------------------------------


def write_pgm(path: str | Path, image01: np.ndarray) -> None:
    """Write a (h, w) or (1, h, w) float image in [0, 1] as binary 8-bit PGM."""
    a = np.asarray(image01)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"PGM wants a single-channel image, got shape {a.shape}")
    data = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def write_ppm(path: str | Path, image01: np.ndarray) -> None:
    """Write a (3, h, w) float image in [0, 1] as binary 8-bit PPM."""
    a = np.asarray(image01)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"PPM wants a (3, h, w) image, got shape {a.shape}")
    data = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def write_frame(path: str | Path, image01: np.ndarray) -> None:
    if image01.ndim == 3 and image01.shape[0] == 3:
        write_ppm(path, image01)
    else:
        write_pgm(path, image01)


def materialize(batch: SequenceBatch, out_dir: str | Path) -> None:
    """Write every frame as an 8-bit image under seq_NNNNN/frame_NNN, plus a
    latents.csv when latents are present."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".ppm" if batch.frames.shape[2] == 3 else ".pgm"
    for i in range(batch.count):
        seq_dir = out / f"seq_{i:05d}"
        seq_dir.mkdir(exist_ok=True)
        for t in range(batch.t_steps):
            write_frame(seq_dir / f"frame_{t:03d}{suffix}", batch.frames[t, i])
    if batch.latents is not None:
        lat = batch.latents
        with open(out / "latents.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["sequence", "shape", "size", "row0", "col0", "d_row", "d_col", "intensity"]
            )
            for i in range(batch.count):
                writer.writerow(
                    [
                        i,
                        lat.shape_names[lat.shape_id[i]],
                        repr(float(lat.size[i])),
                        repr(float(lat.position0[i, 0])),
                        repr(float(lat.position0[i, 1])),
                        repr(float(lat.velocity[i, 0])),
                        repr(float(lat.velocity[i, 1])),
                        repr(float(lat.intensity[i])),
                    ]
                )


def generator_manifest(**params) -> dict:
    """Manifest block from which a generated dataset is reproducible."""
    return {"kind": "generated", "generator": params}


def frames_manifest(path: str, t_steps: int, stride: int, grayscale: bool = True,
                    target_hw: tuple[int, int] | None = None) -> dict:
    return {
        "kind": "frames",
        "loader": {
            "path": path,
            "t_steps": t_steps,
            "stride": stride,
            "grayscale": grayscale,
            "target_hw": None if target_hw is None else list(target_hw),
        },
    }


def write_manifest(path: str | Path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def dataset_from_manifest(manifest: dict, base_dir: str | Path | None = None) -> SequenceBatch:
    """Rebuild the dataset a manifest describes.

    Generated datasets are re-rendered from their recorded parameters and
    seed (bitwise reproducible); frame datasets are re-loaded from disk.
    """
    kind = manifest.get("kind")
    if kind == "generated":
        params = dict(manifest["generator"])
        if "shape_set" in params:
            params["shape_set"] = tuple(params["shape_set"])
        for key in ("velocity_range", "size_range", "intensity_range"):
            if key in params:
                params[key] = tuple(params[key])
        return generate_moving_shapes(**params)
    if kind == "frames":
        loader = dict(manifest["loader"])
        path = Path(loader.pop("path"))
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if loader.get("target_hw") is not None:
            loader["target_hw"] = tuple(loader["target_hw"])
        return load_frame_dir(path, **loader)
    raise ValueError(f"manifest kind must be 'generated' or 'frames', got {kind!r}")
