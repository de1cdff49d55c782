"""Synthetic sparse-annotation volumes and the on-disk dataset manifest.

Each phantom volume holds one ellipsoid-like object whose cross-section drifts
and shrinks by at most ``deformation_amplitude`` pixels per slice away from the
centre, on a smooth textured background with Gaussian noise. Slices far from the
centre may also contain a brighter "distractor" blob in an image corner, which
is background. It imitates neighbouring organs that only show up towards the
ends of a scan and never appear on the annotated central slice.
"""

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import PhantomSpecError
from .metaimage import read_metaimage, read_metaimage_array, write_metaimage, write_metaimage_array
from .volume import CentralAnnotation, Volume, central_index

MANIFEST_NAME = "manifest.tsv"
MANIFEST_FIELDS = ("id", "path", "central_index", "annotation", "ground_truth")


@dataclass
class PhantomSpec:
    count: int = 20
    shape: tuple = (128, 128, 9)  # (H, W, N)
    center_range: tuple = (0.45, 0.55)  # fraction of H / W
    radius_range: tuple = (12.0, 20.0)  # pixels, on the central slice
    contrast_range: tuple = (0.8, 1.2)
    noise_sigma: float = 0.15
    texture_amplitude: float = 0.2
    deformation_amplitude: float = 2.0  # max per-slice shift / radius change, pixels
    min_radius: float = 4.0
    distractor_contrast: float = 2.0  # relative to the object contrast; 0 disables
    distractor_radius_range: tuple = (5.0, 9.0)
    distractor_min_offset: int = 2  # slices from the centre before it appears
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        for name in ("center_range", "radius_range", "contrast_range", "distractor_radius_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    def validate(self):
        h, w, n = self.shape
        if self.count < 1:
            raise PhantomSpecError("count must be positive")
        if n < 3 or h < 8 or w < 8:
            raise PhantomSpecError(f"shape {self.shape} too small (need H,W>=8, N>=3)")
        for name in ("center_range", "radius_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise PhantomSpecError(f"{name} must satisfy low < high, got {(lo, hi)}")
        if self.radius_range[1] > min(h, w) / 2:
            raise PhantomSpecError(f"radius {self.radius_range[1]} exceeds half the image size")
        if self.radius_range[0] <= 0 or self.contrast_range[0] <= 0:
            raise PhantomSpecError("radii and contrasts must be positive")
        if self.noise_sigma < 0 or self.texture_amplitude < 0 or self.deformation_amplitude < 0:
            raise PhantomSpecError("noise, texture and deformation must be non-negative")
        if not 0 < self.min_radius <= self.radius_range[0]:
            raise PhantomSpecError("min_radius must lie in (0, radius_range[0]]")
        lo, hi = self.center_range
        if lo < 0 or hi > 1:
            raise PhantomSpecError("center_range is a fraction of the image size")
        if self.distractor_contrast < 0 or self.distractor_min_offset < 1:
            raise PhantomSpecError("invalid distractor settings")

    def to_dict(self):
        return asdict(self)


def _ellipse(h, w, cy, cx, ry, rx, theta):
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = rr - cy, cc - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (ct * dy + st * dx) / ry
    v = (-st * dy + ct * dx) / rx
    return (u * u + v * v) <= 1.0


def _texture(h, w, rng, amplitude):
    if amplitude == 0:
        return np.zeros((h, w))
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    field_ = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field_ += np.cos(2 * np.pi * (fy * rr / h + fx * cc / w) + phase)
    return amplitude * field_ / 3.0


def _object_track(n, c, spec, rng, h, w):
    """Per-slice ellipse parameters, stepping outward from the centre."""
    amp = spec.deformation_amplitude
    cy = rng.uniform(*spec.center_range) * h
    cx = rng.uniform(*spec.center_range) * w
    ry = rng.uniform(*spec.radius_range)
    rx = rng.uniform(*spec.radius_range)
    theta = rng.uniform(0, np.pi)
    track = {c: (cy, cx, ry, rx)}
    for direction in (1, -1):
        py, px, pry, prx = track[c]
        k = c + direction
        while 0 <= k < n:
            angle = rng.uniform(0, 2 * np.pi)
            step = rng.uniform(0, 0.75 * amp)
            py, px = py + step * np.sin(angle), px + step * np.cos(angle)
            shrink = rng.uniform(0.25, 1.0) * amp
            pry, prx = max(spec.min_radius, pry - shrink), max(spec.min_radius, prx - shrink)
            track[k] = (py, px, pry, prx)
            k += direction
    return track, theta


def generate_phantom(spec):
    """Return a list of ``(Volume, ground_truth)`` pairs, fully determined by ``spec.seed``."""
    spec.validate()
    h, w, n = spec.shape
    c = central_index(n)
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    out = []
    for index, child in enumerate(children):
        rng = np.random.default_rng(child)
        track, theta = _object_track(n, c, spec, rng, h, w)
        contrast = rng.uniform(*spec.contrast_range)
        background = _texture(h, w, rng, spec.texture_amplitude)
        corner = rng.integers(4)
        d_radius0 = rng.uniform(*spec.distractor_radius_range)
        margin = spec.distractor_radius_range[1] + 2
        dcy = margin if corner in (0, 1) else h - 1 - margin
        dcx = margin if corner in (0, 2) else w - 1 - margin
        voxels = np.empty((n, h, w))
        mask = np.zeros((n, h, w), dtype=np.uint8)
        for k in range(n):
            cy, cx, ry, rx = track[k]
            obj = _ellipse(h, w, cy, cx, ry, rx, theta)
            mask[k] = obj
            image = background + contrast * obj
            offset = abs(k - c)
            if spec.distractor_contrast > 0 and offset >= spec.distractor_min_offset:
                radius = min(d_radius0 + (offset - spec.distractor_min_offset), margin - 1)
                blob = _ellipse(h, w, dcy, dcx, radius, radius, 0.0) & ~obj
                image = image + spec.distractor_contrast * contrast * blob
            if spec.noise_sigma > 0:
                image = image + rng.normal(0.0, spec.noise_sigma, size=(h, w))
            voxels[k] = image
        out.append((Volume(f"phantom_{index:03d}", voxels.astype(np.float32)), mask))
    return out


@dataclass
class DatasetEntry:
    volume: Volume
    annotation: CentralAnnotation
    ground_truth: np.ndarray = field(default=None, repr=False)


def write_dataset(directory, items):
    """Write ``(Volume, ground_truth)`` pairs as MetaImage files plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for volume, gt in items:
        annotation = CentralAnnotation.from_ground_truth(volume, gt)
        write_metaimage(directory / f"{volume.id}.mhd", volume)
        write_metaimage_array(
            directory / f"{volume.id}_central.mhd",
            annotation.mask,
            spacing=volume.spacing[:2],
        )
        sy, sx, sz = volume.spacing
        write_metaimage_array(
            directory / f"{volume.id}_gt.mhd", np.asarray(gt, dtype=np.uint8), spacing=(sz, sy, sx)
        )
        rows.append(
            {
                "id": volume.id,
                "path": f"{volume.id}.mhd",
                "central_index": annotation.central_index,
                "annotation": f"{volume.id}_central.mhd",
                "ground_truth": f"{volume.id}_gt.mhd",
            }
        )
    with open(directory / MANIFEST_NAME, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return directory / MANIFEST_NAME


def load_dataset(directory, with_ground_truth=True):
    """Read a manifest written by :func:`write_dataset` into :class:`DatasetEntry` objects."""
    directory = Path(directory)
    entries = []
    with open(directory / MANIFEST_NAME, newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            volume = read_metaimage(directory / row["path"], volume_id=row["id"])
            mask, _ = read_metaimage_array(directory / row["annotation"])
            annotation = CentralAnnotation(row["id"], int(row["central_index"]), mask)
            annotation.check_against(volume)
            gt = None
            if with_ground_truth and row.get("ground_truth"):
                gt, _ = read_metaimage_array(directory / row["ground_truth"])
                gt = (gt > 0).astype(np.uint8)
            entries.append(DatasetEntry(volume, annotation, gt))
    return entries


def load_promise12(directory):
    """Load PROMISE12-style ``CaseXX.mhd`` / ``CaseXX_segmentation.mhd`` pairs.

    Only the central slice of each reference segmentation becomes the
    annotation; the full reference is kept for evaluation.
    """
    directory = Path(directory)
    entries = []
    for header in sorted(directory.glob("Case*.mhd")):
        if header.stem.endswith("_segmentation"):
            continue
        seg_path = header.with_name(header.stem + "_segmentation.mhd")
        if not seg_path.exists():
            continue
        volume = read_metaimage(header, volume_id=header.stem)
        gt, _ = read_metaimage_array(seg_path)
        gt = (gt > 0).astype(np.uint8)
        entries.append(DatasetEntry(volume, CentralAnnotation.from_ground_truth(volume, gt), gt))
    return entries
