"""Patch extraction and per-patch feature vectors.

The built-in extractor summarizes G-band appearance per patch: a normalized
intensity histogram over foreground pixels plus mean intensity, intensity
standard deviation (both /255), and the foreground fraction. Externally
computed embeddings can be imported through the KSEMB text format instead,
so a trained backbone can replace the built-in features without touching
anything downstream.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FeatureError

DEFAULT_BINS = 8


@dataclass(frozen=True)
class Patch:
    center: tuple               # (row, col) floats
    foreground_fraction: float
    bounds: tuple               # (r0, r1, c0, c1), half-open
    grid_pos: tuple             # (grid_row, grid_col) on the stride-P lattice


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    patches: tuple
    source_dims: tuple


@dataclass(frozen=True)
class FeatureMatrix:
    vectors: np.ndarray   # N x D float64
    patch_refs: tuple     # indices into the originating PatchGrid
    dim: int

    def __post_init__(self):
        vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        if vectors.ndim != 2:
            raise FeatureError("feature vectors must be a 2-D array", code="bad_shape")
        if not np.isfinite(vectors).all():
            raise FeatureError("feature vectors contain non-finite values",
                               code="non_finite")
        if vectors.shape[0] != len(self.patch_refs):
            raise FeatureError("vector count does not match patch count",
                               code="count_mismatch")
        if vectors.shape[1] != self.dim:
            raise FeatureError("dim field disagrees with vector width",
                               code="bad_shape")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "patch_refs", tuple(self.patch_refs))


def extract_patches(img, patch_size=8, fg_min=0.3):
    """Tile the image on a stride-patch_size grid, keeping patches whose
    foreground fraction reaches fg_min. Edge cells are clipped to the image."""
    if patch_size < 2:
        raise FeatureError("patch_size must be >= 2", code="bad_patch_size")
    if not 0.0 <= fg_min <= 1.0:
        raise FeatureError("fg_min must lie in [0, 1]", code="bad_fg_min")
    rows, cols = img.shape
    patches = []
    for gi, r0 in enumerate(range(0, rows, patch_size)):
        r1 = min(r0 + patch_size, rows)
        for gj, c0 in enumerate(range(0, cols, patch_size)):
            c1 = min(c0 + patch_size, cols)
            cell = img.mask[r0:r1, c0:c1]
            frac = float(cell.mean())
            if frac >= fg_min:
                patches.append(Patch(
                    center=((r0 + r1 - 1) / 2.0, (c0 + c1 - 1) / 2.0),
                    foreground_fraction=frac,
                    bounds=(r0, r1, c0, c1),
                    grid_pos=(gi, gj)))
    if not patches:
        raise FeatureError("no patches reach the foreground threshold",
                           code="no_patches")
    return PatchGrid(patch_size=patch_size, patches=tuple(patches),
                     source_dims=(rows, cols))


def banding_features(img, grid, bins=DEFAULT_BINS):
    """Per-patch banding profile: bins-bin histogram over foreground pixels,
    then mean/255, std/255, foreground fraction. D = bins + 3."""
    vectors = np.zeros((len(grid.patches), bins + 3), dtype=np.float64)
    for i, patch in enumerate(grid.patches):
        r0, r1, c0, c1 = patch.bounds
        cell = img.pixels[r0:r1, c0:c1]
        fg = img.mask[r0:r1, c0:c1]
        values = cell[fg] if fg.any() else cell.reshape(-1)
        values = values.astype(np.float64)
        idx = np.minimum((values * bins / 256.0).astype(int), bins - 1)
        hist = np.bincount(idx, minlength=bins).astype(np.float64)
        hist /= hist.sum()
        vectors[i, :bins] = hist
        vectors[i, bins] = values.mean() / 255.0
        vectors[i, bins + 1] = values.std() / 255.0
        vectors[i, bins + 2] = patch.foreground_fraction
    return FeatureMatrix(vectors=vectors, patch_refs=tuple(range(len(grid.patches))),
                         dim=bins + 3)


def export_embeddings(features, path):
    """Write a FeatureMatrix in the KSEMB v1 text format (lossless floats)."""
    lines = [f"KSEMB v1 {features.vectors.shape[0]} {features.dim}"]
    for row in features.vectors:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def import_embeddings(path, grid):
    """Load per-patch embeddings: header "KSEMB v1 N D", then N rows of D reals.

    N must equal the retained patch count of grid.
    """
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise FeatureError(f"{path}: empty embedding file", code="bad_header")
    head = text[0].split()
    if len(head) != 4 or head[0] != "KSEMB" or head[1] != "v1":
        raise FeatureError(f"{path}: malformed KSEMB header", code="bad_header")
    try:
        n, d = int(head[2]), int(head[3])
    except ValueError as exc:
        raise FeatureError(f"{path}: malformed KSEMB header", code="bad_header") from exc
    if len(text) - 1 != n:
        raise FeatureError(f"{path}: header claims {n} rows, file has {len(text) - 1}",
                           code="row_count_mismatch")
    if n != len(grid.patches):
        raise FeatureError(
            f"{path}: {n} embedding rows for {len(grid.patches)} patches",
            code="row_count_mismatch")
    try:
        vectors = np.array([[float(v) for v in line.split()] for line in text[1:]],
                           dtype=np.float64)
    except ValueError as exc:
        raise FeatureError(f"{path}: non-numeric embedding row", code="bad_row") from exc
    if vectors.size and vectors.shape[1] != d:
        raise FeatureError(f"{path}: row width disagrees with header", code="bad_row")
    return FeatureMatrix(vectors=vectors, patch_refs=tuple(range(n)), dim=d)


def stack_features(mats):
    """Pool several FeatureMatrix objects into one (N_total, D) array."""
    if not mats:
        raise FeatureError("nothing to stack", code="empty_stack")
    dims = {m.dim for m in mats}
    if len(dims) != 1:
        raise FeatureError(f"mixed feature dims {sorted(dims)}", code="dim_mismatch")
    return np.vstack([m.vectors for m in mats])
