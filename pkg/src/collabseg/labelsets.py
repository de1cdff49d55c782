"""On-disk pseudo-label sets, predicted masks and deformation fields."""

import csv
from pathlib import Path

import numpy as np

from .data.metaimage import read_metaimage_array, write_metaimage_array
from .exceptions import PairingError
from .registration import DeformationField
from .semi import PseudoMask

LABELSET_MANIFEST = "labels.tsv"
LABELSET_FIELDS = ("volume_id", "slice", "provenance", "path")


def write_labelset(directory, masks):
    """Write one 2-D uint8 MetaImage per mask plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in sorted(masks, key=lambda m: m.key):
        name = f"{m.volume_id}_{m.slice_index:03d}_{m.provenance}.mhd"
        write_metaimage_array(directory / name, m.mask.astype(np.uint8))
        rows.append((m.volume_id, m.slice_index, m.provenance, name))
    manifest = directory / LABELSET_MANIFEST
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(LABELSET_FIELDS)
        writer.writerows(rows)
    return manifest


def read_labelset(directory, provenance=None):
    """Load a label set; optionally insist every entry has ``provenance``."""
    directory = Path(directory)
    out = []
    with open(directory / LABELSET_MANIFEST, newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            if provenance is not None and row["provenance"] != provenance:
                raise PairingError(f"{directory}: expected {provenance} labels, found {row['provenance']}")
            mask, _ = read_metaimage_array(directory / row["path"])
            out.append(PseudoMask(row["volume_id"], int(row["slice"]), mask, row["provenance"]))
    return out


def write_mask_volume(path, mask, spacing=None):
    """A predicted (N, H, W) binary mask as a uint8 MetaImage."""
    sp = None if spacing is None else (spacing[2], spacing[0], spacing[1])
    write_metaimage_array(path, np.asarray(mask, dtype=np.uint8), spacing=sp)


def write_fields(path, fields):
    """Stack ``{slice: DeformationField}`` into a 2-channel float MetaImage (N, H, W, 2)."""
    order = sorted(fields)
    stack = np.stack([fields[n].displacements for n in order]).astype(np.float32)
    write_metaimage_array(path, stack, channels=True)
    return order


def read_fields(path, slices):
    stack, _ = read_metaimage_array(path)
    return {n: DeformationField(stack[i]) for i, n in enumerate(slices)}
