"""GNSS trajectory ingestion, rasterization, synthetic scenes and image I/O."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .lms import SIZE_MULTIPLE

CSV_HEADER = ("timestamp", "lon", "lat", "speed", "heading", "machine_id")
AUGMENT_OPS = ("rot90", "rot180", "rot270", "flip_h", "flip_v")


class TrajectoryFormatError(ValueError):
    pass


@dataclass
class TrajectoryLog:
    """Time-ordered GNSS fixes of one machine; columns of ``points`` follow POINT_FIELDS."""

    points: np.ndarray
    machine_id: str = ""

    POINT_FIELDS = ("timestamp", "lon", "lat", "speed", "heading")

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 5)
        t, lon, lat, _, heading = self.points.T
        if np.any(np.diff(t) < 0):
            raise ValueError(f"timestamps of machine {self.machine_id!r} are not nondecreasing")
        if np.any(np.abs(lon) > 180) or np.any(np.abs(lat) > 90):
            raise ValueError(f"machine {self.machine_id!r} has coordinates outside lon [-180, 180] / lat [-90, 90]")
        if np.any((heading < 0) | (heading >= 360)):
            raise ValueError(f"machine {self.machine_id!r} has headings outside [0, 360)")

    def __len__(self):
        return len(self.points)

    @property
    def lon(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def lat(self) -> np.ndarray:
        return self.points[:, 2]


@dataclass(frozen=True)
class RasterSpec:
    bounds: tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max
    grid: tuple[int, int] = (64, 64)  # H, W

    def __post_init__(self):
        lon_min, lat_min, lon_max, lat_max = self.bounds
        if not (lon_max > lon_min and lat_max > lat_min):
            raise ValueError(f"degenerate raster bounds {self.bounds}")
        h, w = self.grid
        if h < 16 or w < 16 or h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
            raise ValueError(f"raster grid must be >= 16 and a multiple of {SIZE_MULTIPLE}, got {self.grid}")


@dataclass
class SamplePair:
    image: np.ndarray
    mask: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(f"sample {self.id!r}: image shape {self.image.shape} != mask shape {self.mask.shape}")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError(f"sample {self.id!r}: mask is not binary")


# ------------------------------------------------------------------------ CSV


def read_trajectory_csv(path) -> list[TrajectoryLog]:
    """Read ``timestamp,lon,lat,speed,heading,machine_id`` rows, one log per machine."""
    rows: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrajectoryFormatError(f"{path}: empty trajectory")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise TrajectoryFormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise TrajectoryFormatError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                values = [float(c) for c in row[:5]]
            except ValueError:
                raise TrajectoryFormatError(f"{path}:{lineno}: non-numeric field in {row[:5]}") from None
            if not all(math.isfinite(v) for v in values):
                raise TrajectoryFormatError(f"{path}:{lineno}: non-finite value")
            rows.setdefault(row[5].strip(), []).append(values)
    if not rows:
        raise TrajectoryFormatError(f"{path}: empty trajectory")
    try:
        return [TrajectoryLog(np.array(pts), mid) for mid, pts in rows.items()]
    except ValueError as exc:
        raise TrajectoryFormatError(f"{path}: {exc}") from None


def write_trajectory_csv(path, logs: Iterable[TrajectoryLog]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for log in logs:
            for t, lon, lat, speed, heading in log.points:
                writer.writerow([repr(float(t)), repr(float(lon)), repr(float(lat)), f"{speed:.3f}", f"{heading:.3f}", log.machine_id])


# ------------------------------------------------------------------ rasterize


def pixel_indices(lon: np.ndarray, lat: np.ndarray, spec: RasterSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/column of each point plus a mask of points inside the bounds (edges inclusive)."""
    lon_min, lat_min, lon_max, lat_max = spec.bounds
    h, w = spec.grid
    inside = (lon >= lon_min) & (lon <= lon_max) & (lat >= lat_min) & (lat <= lat_max)
    c = np.floor((lon - lon_min) / (lon_max - lon_min) * w).astype(np.int64)
    r = np.floor((lat_max - lat) / (lat_max - lat_min) * h).astype(np.int64)
    return np.clip(r, 0, h - 1), np.clip(c, 0, w - 1), inside


def rasterize_counts(logs, spec: RasterSpec) -> tuple[np.ndarray, int]:
    """Per-pixel hit counts and the number of points dropped for lying outside the bounds."""
    if isinstance(logs, TrajectoryLog):
        logs = [logs]
    logs = list(logs)
    if not logs or sum(len(l) for l in logs) == 0:
        raise ValueError("empty trajectory")
    lon = np.concatenate([l.lon for l in logs])
    lat = np.concatenate([l.lat for l in logs])
    r, c, inside = pixel_indices(lon, lat, spec)
    counts = np.zeros(spec.grid, dtype=np.int64)
    np.add.at(counts, (r[inside], c[inside]), 1)
    return counts, int((~inside).sum())


def encode_counts(counts: np.ndarray) -> np.ndarray:
    """Log-compress hit counts into [0, 1]: ln(1 + n) / ln(1 + n_max)."""
    if counts.max() == 0:
        return np.zeros(counts.shape)
    logs = np.log1p(counts)
    # dividing by the array's own max makes the busiest pixel exactly 1
    return logs / logs.max()


def rasterize(logs, spec: RasterSpec) -> np.ndarray:
    """Trajectory image in [0, 1]; out-of-bounds points are dropped with a warning."""
    counts, outside = rasterize_counts(logs, spec)
    if outside:
        warnings.warn(f"{outside} trajectory points outside raster bounds were dropped", stacklevel=2)
    return encode_counts(counts)


# ------------------------------------------------------------------ synthesis


@dataclass(frozen=True)
class SynthConfig:
    jitter_px: float = 0.8
    road_width: tuple[int, int] = (2, 4)
    segments: tuple[int, int] = (2, 5)
    arc_probability: float = 0.35
    sample_spacing: tuple[float, float] = (0.7, 1.6)
    passes: tuple[int, int] = (1, 3)
    dropout_gaps: tuple[int, int] = (1, 4)
    gap_length: tuple[float, float] = (3.0, 9.0)
    fields: tuple[int, int] = (1, 3)
    field_size: tuple[float, float] = (0.15, 0.35)  # fraction of image side
    field_pass_spacing: float = 2.5
    mask_fraction: tuple[float, float] = (0.02, 0.25)
    max_attempts: int = 200


SYNTH = SynthConfig()
SYNTH_BOUNDS = (113.600, 34.700, 113.612, 34.710)


def default_spec(size: int = 64) -> RasterSpec:
    return RasterSpec(SYNTH_BOUNDS, (size, size))


@dataclass
class SynthScene:
    pair: SamplePair
    log: TrajectoryLog
    skeletons: list[np.ndarray] = field(default_factory=list)  # (k, 2) row/col pixels per segment


def _sample_curve(rng: np.random.Generator, h: int, w: int, cfg: SynthConfig) -> np.ndarray | None:
    """Dense (x, y) samples of one road centre line, fully inside the image."""
    margin = 1.0
    lo = np.array([margin, margin])
    hi = np.array([w - 1 - margin, h - 1 - margin])
    if rng.random() < cfg.arc_probability:
        radius = rng.uniform(0.3, 0.9) * min(h, w)
        center = rng.uniform(-0.2, 1.2, size=2) * [w, h]
        start = rng.uniform(0, 2 * math.pi)
        sweep = rng.uniform(0.4, 1.4) * rng.choice([-1, 1])
        n = max(int(abs(sweep) * radius / 0.25), 2)
        theta = start + sweep * np.linspace(0, 1, n)
        pts = center + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        if np.any(pts < lo) or np.any(pts > hi) or radius * abs(sweep) < 0.25 * min(h, w):
            return None
        return pts
    n_vertices = rng.integers(2, 4)
    verts = rng.uniform(lo, hi, size=(n_vertices, 2))
    pieces = []
    for a, b in zip(verts[:-1], verts[1:]):
        n = max(int(np.linalg.norm(b - a) / 0.25), 2)
        pieces.append(a + (b - a) * np.linspace(0, 1, n)[:, None])
    pts = np.concatenate(pieces)
    if np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)) < 0.3 * min(h, w):
        return None
    return pts


def _skeleton_pixels(curve: np.ndarray) -> np.ndarray:
    rc = np.floor(curve[:, ::-1]).astype(np.int64)
    keep = np.ones(len(rc), bool)
    keep[1:] = np.any(rc[1:] != rc[:-1], axis=1)
    return rc[keep]


def _road_points(rng: np.random.Generator, curve: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    total = arclen[-1]
    out = []
    for _ in range(rng.integers(cfg.passes[0], cfg.passes[1] + 1)):
        spacing = rng.uniform(*cfg.sample_spacing)
        s = np.arange(rng.uniform(0, spacing), total, spacing)
        for _ in range(rng.integers(cfg.dropout_gaps[0], cfg.dropout_gaps[1] + 1)):
            g0 = rng.uniform(0, total)
            s = s[(s < g0) | (s > g0 + rng.uniform(*cfg.gap_length))]
        xy = np.stack([np.interp(s, arclen, curve[:, 0]), np.interp(s, arclen, curve[:, 1])], axis=1)
        out.append(xy + rng.normal(0.0, cfg.jitter_px, size=xy.shape))
    return np.concatenate(out) if out else np.zeros((0, 2))


def _field_points(rng: np.random.Generator, h: int, w: int, mask: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """Boustrophedon passes over rectangular fields, with on-road points removed."""
    out = []
    for _ in range(rng.integers(cfg.fields[0], cfg.fields[1] + 1)):
        fw, fh = rng.uniform(*cfg.field_size, size=2) * [w, h]
        x0, y0 = rng.uniform(0, w - fw), rng.uniform(0, h - fh)
        horizontal = rng.random() < 0.5
        across, along = (fh, fw) if horizontal else (fw, fh)
        lanes = np.arange(0.5 * cfg.field_pass_spacing, across, cfg.field_pass_spacing)
        for i, lane in enumerate(lanes):
            t = np.arange(0.0, along, rng.uniform(*cfg.sample_spacing))
            if i % 2:
                t = t[::-1]
            if horizontal:
                xy = np.stack([x0 + t, np.full_like(t, y0 + lane)], axis=1)
            else:
                xy = np.stack([np.full_like(t, x0 + lane), y0 + t], axis=1)
            out.append(xy + rng.normal(0.0, cfg.jitter_px, size=xy.shape))
    if not out:
        return np.zeros((0, 2))
    pts = np.concatenate(out)
    r = np.clip(np.floor(pts[:, 1]).astype(int), 0, h - 1)
    c = np.clip(np.floor(pts[:, 0]).astype(int), 0, w - 1)
    return pts[~mask[r, c].astype(bool)]


def _to_log(xy: np.ndarray, spec: RasterSpec, machine_id: str) -> TrajectoryLog:
    lon_min, lat_min, lon_max, lat_max = spec.bounds
    h, w = spec.grid
    lon = lon_min + xy[:, 0] / w * (lon_max - lon_min)
    lat = lat_max - xy[:, 1] / h * (lat_max - lat_min)
    keep = (lon >= -180) & (lon <= 180) & (lat >= -90) & (lat <= 90)
    lon, lat = lon[keep], lat[keep]
    t = np.arange(len(lon), dtype=np.float64)
    dx = np.diff(lon, append=lon[-1:] if len(lon) else lon)
    dy = np.diff(lat, append=lat[-1:] if len(lat) else lat)
    heading = np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)
    heading[heading >= 360.0] = 0.0
    meters = np.hypot(dx * 111_320 * math.cos(math.radians(lat_min)), dy * 110_540)
    return TrajectoryLog(np.stack([t, lon, lat, meters, heading], axis=1), machine_id)


def generate_scene(seed: int, spec: RasterSpec | None = None, cfg: SynthConfig = SYNTH) -> SynthScene:
    """Road mask, trajectory log and rasterized image, all a pure function of ``seed``."""
    spec = spec or default_spec()
    h, w = spec.grid
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5CE4E])))
    for _ in range(cfg.max_attempts):
        width = int(rng.integers(cfg.road_width[0], cfg.road_width[1] + 1))
        n_seg = int(rng.integers(cfg.segments[0], cfg.segments[1] + 1))
        curves = []
        while len(curves) < n_seg:
            curve = _sample_curve(rng, h, w, cfg)
            if curve is not None:
                curves.append(curve)
        skeletons = [_skeleton_pixels(c) for c in curves]
        skel = np.zeros((h, w), bool)
        for sk in skeletons:
            skel[sk[:, 0], sk[:, 1]] = True
        mask = ndimage.binary_dilation(skel, structure=np.ones((width, width), bool))
        frac = mask.mean()
        if cfg.mask_fraction[0] <= frac <= cfg.mask_fraction[1]:
            break
    else:
        raise RuntimeError(f"seed {seed}: could not place roads within the mask-fraction range")
    mask = mask.astype(np.uint8)
    road = np.concatenate([_road_points(rng, c, cfg) for c in curves])
    noise = _field_points(rng, h, w, mask, cfg)
    log = _to_log(np.concatenate([road, noise]), spec, f"synth-{seed}")
    counts, _ = rasterize_counts(log, spec)
    pair = SamplePair(encode_counts(counts), mask, f"synth-{seed}")
    return SynthScene(pair, log, skeletons)


def synth_scene(seed: int, spec: RasterSpec | None = None) -> SamplePair:
    return generate_scene(seed, spec).pair


# ---------------------------------------------------------------- augmentation


def augment_array(a: np.ndarray, op: str) -> np.ndarray:
    if op in ("rot90", "rot180", "rot270"):
        if a.shape[-1] != a.shape[-2]:
            raise ValueError(f"rotation needs a square image, got {a.shape[-2:]}")
        return np.ascontiguousarray(np.rot90(a, {"rot90": 1, "rot180": 2, "rot270": 3}[op], axes=(-2, -1)))
    if op == "flip_h":
        return np.ascontiguousarray(a[..., ::-1])
    if op == "flip_v":
        return np.ascontiguousarray(a[..., ::-1, :])
    raise ValueError(f"unknown augmentation {op!r}; expected one of {AUGMENT_OPS}")


def augment(pair: SamplePair, op: str) -> SamplePair:
    """Apply the same rotation (counterclockwise) or flip to image and mask."""
    return SamplePair(augment_array(pair.image, op), augment_array(pair.mask, op), f"{pair.id}:{op}")


def augment_dataset(pairs: Sequence[SamplePair], ops: Sequence[str] = AUGMENT_OPS) -> list[SamplePair]:
    out = list(pairs)
    for p in pairs:
        out.extend(augment(p, op) for op in ops)
    return out


# ------------------------------------------------------------------------ I/O


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Scale [0, 1] values by 255 and round half up."""
    return np.floor(np.clip(np.asarray(image, np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, image: np.ndarray):
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Image.fromarray(arr, mode="L").save(path)


def load_png(path) -> np.ndarray:
    """8-bit grayscale PNG as float64 in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such image")
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def load_mask(path) -> np.ndarray:
    arr = load_png(path)
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError(f"{path}: mask is not binary (expected only 0 and 255)")
    return arr.astype(np.uint8)


def load_dataset(manifest) -> list[SamplePair]:
    """Load ``[{image, mask, id}, ...]``; relative paths resolve against the manifest's folder."""
    manifest = Path(manifest)
    if not manifest.is_file():
        raise FileNotFoundError(f"{manifest}: manifest not found")
    records = json.loads(manifest.read_text(encoding="utf-8"))
    if not isinstance(records, list):
        raise ValueError(f"{manifest}: manifest must be a JSON array")
    root = manifest.parent
    pairs = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or not {"image", "mask"} <= set(rec):
            raise ValueError(f"{manifest}: record {i} needs 'image' and 'mask' keys")
        img_path, mask_path = root / rec["image"], root / rec["mask"]
        image, mask = load_png(img_path), load_mask(mask_path)
        if image.shape != mask.shape:
            raise ValueError(f"{mask_path}: mask size {mask.shape} != image size {image.shape} ({img_path})")
        pairs.append(SamplePair(image, mask, str(rec.get("id", i))))
    return pairs


def write_dataset(pairs: Sequence[SamplePair], out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for p in pairs:
        name = p.id.replace(":", "_").replace("/", "_")
        save_png(out / "images" / f"{name}.png", p.image)
        save_png(out / "masks" / f"{name}.png", p.mask.astype(np.uint8) * 255)
        records.append({"image": f"images/{name}.png", "mask": f"masks/{name}.png", "id": p.id})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    return manifest


def split_dataset(pairs: Sequence[SamplePair], val_fraction: float, seed: int) -> tuple[list, list]:
    """Shuffle with ``seed`` and hold out ``round(val_fraction * n)`` pairs for validation."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n = len(pairs)
    order = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5E1]))).permutation(n)
    n_val = int(round(val_fraction * n))
    return [pairs[i] for i in order[n_val:]], [pairs[i] for i in order[:n_val]]
