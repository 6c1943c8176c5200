"""Domain types, raster I/O, and dataset bookkeeping for chromosome crops.

Images are single-chromosome crops: an 8-bit grayscale raster plus a binary
foreground mask. Masks may be supplied as companion files (nonzero =
foreground) or derived by thresholding, where intensity 255 is background
(karyogram crops sit on a uniform white background).
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

BACKGROUND = 255
N_CLASSES = 24  # 22 autosome classes, X = 22, Y = 23


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChromosomeImage:
    """One chromosome instance: raster, mask, and label metadata."""

    pixels: np.ndarray          # uint8, rows x cols
    mask: np.ndarray            # bool, same shape
    class_label: int | None = None
    case_id: str = ""
    instance_id: str = ""

    def __post_init__(self):
        pixels = _freeze(np.asarray(self.pixels, dtype=np.uint8))
        mask = _freeze(np.asarray(self.mask, dtype=bool))
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise DataError("pixels must be a 2-D grid of at least 1x1",
                            code="bad_dimensions")
        if mask.shape != pixels.shape:
            raise DataError(
                f"mask shape {mask.shape} does not match pixels {pixels.shape}",
                code="dimension_mismatch")
        if self.class_label is not None and not 0 <= self.class_label < N_CLASSES:
            raise DataError(f"class_label {self.class_label} outside 0..23",
                            code="bad_label")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class CaseRecord:
    """All chromosomes imaged for one case."""

    case_id: str
    sex: str  # "male" or "female"
    chromosomes: tuple = ()
    expected_count: int = 46

    def __post_init__(self):
        if self.sex not in ("male", "female"):
            raise DataError(f"unknown sex {self.sex!r}", code="bad_sex")


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: frozenset
    test_ids: frozenset
    ratio: tuple

    def __post_init__(self):
        if self.train_ids & self.test_ids:
            raise DataError("train/test overlap", code="split_overlap")


def _read_raster(path):
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(
                    f"{path}: unsupported mode {im.mode}, need 8-bit grayscale",
                    code="unsupported_format")
            return np.asarray(im, dtype=np.uint8)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read raster {path}: {exc}",
                        code="unreadable") from exc


def load_chromosome(path, label=None, mask_path=None, case_id="",
                    instance_id=None):
    """Load a grayscale PNG/PGM crop plus its mask.

    When no mask file is given the mask is derived by thresholding:
    every pixel at intensity 255 is background, everything else foreground.
    """
    path = Path(path)
    pixels = _read_raster(path)
    if mask_path is not None:
        mask = _read_raster(mask_path) != 0
        if mask.shape != pixels.shape:
            raise DataError(
                f"mask {mask_path} shape {mask.shape} does not match "
                f"raster {pixels.shape}", code="dimension_mismatch")
    else:
        mask = pixels != BACKGROUND
    if not mask.any():
        raise DataError(f"{path}: empty foreground", code="empty_foreground")
    if instance_id is None:
        instance_id = path.stem
    return ChromosomeImage(pixels=pixels, mask=mask, class_label=label,
                           case_id=case_id, instance_id=instance_id)


def save_chromosome(img, path, mask_path=None):
    """Write the raster (and optionally the mask) as PNG or PGM by extension."""
    path = Path(path)
    Image.fromarray(img.pixels, mode="L").save(path)
    if mask_path is not None:
        Image.fromarray((img.mask.astype(np.uint8) * 255), mode="L").save(mask_path)


def load_manifest(path):
    """Load a dataset manifest: JSON array of
    {image_path, mask_path?, class_label?, case_id}.

    Relative paths resolve against the manifest's directory. Instance ids
    derive from the image filename stem.
    """
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except Exception as exc:
        raise DataError(f"cannot parse manifest {path}: {exc}",
                        code="bad_manifest") from exc
    if not isinstance(entries, list):
        raise DataError("manifest must be a JSON array", code="bad_manifest")
    base = path.parent
    images = []
    for entry in entries:
        image_path = base / entry["image_path"]
        mask_path = base / entry["mask_path"] if entry.get("mask_path") else None
        images.append(load_chromosome(
            image_path,
            label=entry.get("class_label"),
            mask_path=mask_path,
            case_id=entry.get("case_id", "")))
    return images


def stratified_split(dataset, ratio, seed):
    """Split per class at the given (train, test) ratio, within one instance.

    Deterministic in (content, ratio, seed): instances are ordered by
    instance_id before the seeded shuffle, so input order never matters.
    """
    r_train, r_test = ratio
    if r_train <= 0 or r_test <= 0:
        raise DataError("ratio components must be positive", code="bad_ratio")
    by_class = {}
    for img in dataset:
        if img.class_label is None:
            raise DataError(f"{img.instance_id}: missing class_label",
                            code="missing_label")
        by_class.setdefault(img.class_label, []).append(img.instance_id)
    train_ids, test_ids = set(), set()
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        if len(ids) < 2:
            raise DataError(f"class {label} has fewer than 2 instances",
                            code="cannot_stratify")
        rng = np.random.default_rng((seed, label))
        perm = rng.permutation(len(ids))
        n_test = int(len(ids) * r_test / (r_train + r_test) + 0.5)
        picked = {ids[i] for i in perm[:n_test]}
        test_ids |= picked
        train_ids |= set(ids) - picked
    return DatasetSplit(train_ids=frozenset(train_ids),
                        test_ids=frozenset(test_ids),
                        ratio=(r_train, r_test))


def save_split(split, path, extra=None):
    obj = {"version": 1,
           "ratio": list(split.ratio),
           "train_ids": sorted(split.train_ids),
           "test_ids": sorted(split.test_ids)}
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_split(path):
    obj = json.loads(Path(path).read_text())
    return DatasetSplit(train_ids=frozenset(obj["train_ids"]),
                        test_ids=frozenset(obj["test_ids"]),
                        ratio=tuple(obj["ratio"]))
