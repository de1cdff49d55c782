"""Intersection of the two pseudo-label sets."""

import numpy as np

from .exceptions import PairingError
from .semi import PseudoMask


def fuse(semi, ssl):
    """Per-pixel AND of a ``semi`` and an ``ssl`` mask for the same slice."""
    if semi.key != ssl.key:
        raise PairingError(f"cannot fuse {semi.key} with {ssl.key}")
    if semi.mask.shape != ssl.mask.shape:
        raise PairingError(f"{semi.key}: mask shapes {semi.mask.shape} and {ssl.mask.shape} differ")
    if (semi.provenance, ssl.provenance) != ("semi", "ssl"):
        raise PairingError(f"{semi.key}: expected semi/ssl provenances, got {semi.provenance}/{ssl.provenance}")
    return PseudoMask(semi.volume_id, semi.slice_index, np.logical_and(semi.mask, ssl.mask), "fused")


def fuse_dataset(semis, ssls, drop_disagreements=False):
    """Fuse two label sets covering identical (volume, slice) keys.

    Empty fused masks are kept as background supervision. With
    ``drop_disagreements`` the slices whose intersection is empty while both
    inputs had foreground are left out.
    """
    semi_by_key = {m.key: m for m in semis}
    ssl_by_key = {m.key: m for m in ssls}
    missing = sorted(set(semi_by_key) ^ set(ssl_by_key))
    if missing:
        details = ", ".join(
            f"{vid} slice {n} (missing from {'ssl' if (vid, n) in semi_by_key else 'semi'})" for vid, n in missing
        )
        raise PairingError(f"label sets do not cover the same slices: {details}")
    fused = []
    for key in sorted(semi_by_key):
        a, b = semi_by_key[key], ssl_by_key[key]
        out = fuse(a, b)
        if drop_disagreements and not out.mask.any() and a.mask.any() and b.mask.any():
            continue
        fused.append(out)
    return fused
