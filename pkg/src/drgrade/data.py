"""APTOS-format dataset loading, preprocessing, augmentation, batching.

The manifest is a CSV with header ``id_code,diagnosis``; images live in a
directory as ``<id_code>.png`` or ``.jpg``. Each image is resized to the
model input size with bilinear interpolation (half-pixel centers), then
converted to grayscale via Rec.601 luma and scaled to [0, 1]. Training
data is doubled with horizontal flips that keep the original label;
validation never sees flipped copies.

Everything downstream of the manifest is deterministic given a seed.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NUM_GRADES = 5  # 0 = no DR .. 4 = proliferative DR
GRADE_NAMES = ("no DR", "mild", "moderate", "severe", "proliferative")

_LUMA = np.array([0.299, 0.587, 0.114])  # Rec.601

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class Sample:
    id: str
    pixels: np.ndarray  # [h, w, 1] float32 in [0, 1]
    grade: int
    augmented: bool = False


@dataclass
class DatasetManifest:
    entries: list[tuple[str, int]]
    csv_path: str
    image_dir: str
    missing: list[str] = field(default_factory=list)

    @property
    def histogram(self) -> list[int]:
        counts = [0] * NUM_GRADES
        for _, grade in self.entries:
            counts[grade] += 1
        return counts


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def validate(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise DataError(
                f"validation_fraction must lie in (0,1), got {self.validation_fraction}")


@dataclass
class SplitArrays:
    """One split served as dense arrays, row i belonging to ids[i]."""
    ids: list[str]
    x: np.ndarray  # [n, size, size, 1] float32
    y: np.ndarray  # [n] int64 grades


@dataclass
class DataBundle:
    train: SplitArrays
    val: SplitArrays


def read_manifest(csv_path, image_dir) -> DatasetManifest:
    """Parse and validate an APTOS-style CSV; missing images are reported."""
    csv_path, image_dir = os.fspath(csv_path), os.fspath(image_dir)
    if not os.path.isfile(csv_path):
        raise DataError(f"manifest not found: {csv_path}")
    if not os.path.isdir(image_dir):
        raise DataError(f"image directory not found: {image_dir}")
    entries: list[tuple[str, int]] = []
    seen: set[str] = set()
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id_code", "diagnosis"]:
            raise DataError(f"expected header id_code,diagnosis, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or not row[0]:
                raise DataError(f"{csv_path}:{lineno}: malformed row {row!r}")
            id_code, raw_grade = row
            try:
                grade = int(raw_grade)
            except ValueError:
                raise DataError(
                    f"{csv_path}:{lineno}: diagnosis {raw_grade!r} is not an integer") from None
            if not 0 <= grade < NUM_GRADES:
                raise DataError(
                    f"{csv_path}:{lineno}: grade {grade} outside 0..{NUM_GRADES - 1}")
            if id_code in seen:
                raise DataError(f"{csv_path}:{lineno}: duplicate id {id_code!r}")
            seen.add(id_code)
            entries.append((id_code, grade))
    manifest = DatasetManifest(entries, csv_path, image_dir)
    manifest.missing = [i for i, _ in entries if image_path(image_dir, i) is None]
    return manifest


def image_path(image_dir, id_code: str) -> str | None:
    for ext in IMAGE_EXTENSIONS:
        candidate = os.path.join(image_dir, id_code + ext)
        if os.path.isfile(candidate):
            return candidate
    return None


def decode_image(path) -> np.ndarray:
    """Decode PNG/JPEG to an RGB uint8 array [h, w, 3]."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers (no antialias filter)."""
    in_h, in_w = img.shape[:2]
    img = img.astype(np.float64, copy=False)

    def axis_coords(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis_coords(in_h, out_h)
    x0, x1, wx = axis_coords(in_w, out_w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = (1 - wx) * img[np.ix_(y0, x0)] + wx * img[np.ix_(y0, x1)]
    bot = (1 - wx) * img[np.ix_(y1, x0)] + wx * img[np.ix_(y1, x1)]
    return (1 - wy) * top + wy * bot


def preprocess(rgb: np.ndarray, size: int = 256) -> np.ndarray:
    """RGB image of any size -> [size, size, 1] float32 in [0, 1].

    Resize first, then grayscale: one resample of the quantized data.
    """
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"expected an RGB h x w x 3 image, got shape {rgb.shape}")
    resized = resize_bilinear(rgb, size, size)
    gray = resized @ _LUMA
    gray = np.clip(gray / 255.0, 0.0, 1.0).astype(np.float32)
    return gray[:, :, None]


def hflip_augment(s: Sample) -> Sample:
    """Mirror the image left-right; the diagnosis label is unchanged."""
    return Sample(id=s.id + "_hflip", pixels=np.ascontiguousarray(s.pixels[:, ::-1, :]),
                  grade=s.grade, augmented=True)


def split(manifest: DatasetManifest, spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Disjoint, exhaustive (train_ids, val_ids); stratified by default.

    Per-class validation counts are round(fraction * class size), so the
    per-class proportion is within one sample of the requested fraction.
    """
    spec.validate()
    if not manifest.entries:
        raise DataError("manifest is empty")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed])))
    train_ids: list[str] = []
    val_ids: list[str] = []
    if spec.stratified:
        groups: dict[int, list[str]] = {}
        for id_code, grade in manifest.entries:
            groups.setdefault(grade, []).append(id_code)
        for grade in sorted(groups):
            ids = sorted(groups[grade])
            if not ids:
                raise DataError(f"class {grade} has no samples")
            order = rng.permutation(len(ids))
            n_val = int(np.floor(len(ids) * spec.validation_fraction + 0.5))
            n_val = min(n_val, len(ids))
            val_ids += [ids[k] for k in order[:n_val]]
            train_ids += [ids[k] for k in order[n_val:]]
    else:
        ids = sorted(i for i, _ in manifest.entries)
        order = rng.permutation(len(ids))
        n_val = int(np.floor(len(ids) * spec.validation_fraction + 0.5))
        val_ids = [ids[k] for k in order[:n_val]]
        train_ids = [ids[k] for k in order[n_val:]]
    return sorted(train_ids), sorted(val_ids)


def load_samples(manifest: DatasetManifest, ids, size: int) -> list[Sample]:
    grades = dict(manifest.entries)
    samples = []
    for id_code in ids:
        path = image_path(manifest.image_dir, id_code)
        if path is None:
            raise DataError(f"image file for id {id_code!r} not found in {manifest.image_dir}")
        samples.append(Sample(id=id_code, pixels=preprocess(decode_image(path), size),
                              grade=grades[id_code]))
    return samples


def _to_arrays(samples: list[Sample]) -> SplitArrays:
    x = np.stack([s.pixels for s in samples]).astype(np.float32)
    y = np.array([s.grade for s in samples], dtype=np.int64)
    return SplitArrays(ids=[s.id for s in samples], x=x, y=y)


def load_dataset(manifest: DatasetManifest, spec: SplitSpec, size: int = 256) -> DataBundle:
    """Split, decode, preprocess, and augment (train side only)."""
    train_ids, val_ids = split(manifest, spec)
    train = load_samples(manifest, train_ids, size)
    train = train + [hflip_augment(s) for s in train]
    val = load_samples(manifest, val_ids, size)
    return DataBundle(train=_to_arrays(train), val=_to_arrays(val))


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch: seeded shuffle, short final batch kept."""
    if n < 1:
        raise DataError("cannot batch an empty id list")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def iter_batches(arrays: SplitArrays, batch_size: int, seed: int, epoch: int):
    """Yield (x [b,h,w,1], grades [b]) covering every sample exactly once."""
    for idx in batch_order(len(arrays.ids), batch_size, seed, epoch):
        yield arrays.x[idx], arrays.y[idx]
