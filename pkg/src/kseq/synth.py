"""Deterministic synthetic chromosome generator with ground truth.

Each class renders as an elongated bar (optionally bent) carrying a banding
program: an ordered list of intensity bands laid along the bar's length.
Band intensities come from a four-level palette centered on distinct
histogram bins of the feature extractor, so the band-to-cluster
correspondence survives moderate intensity noise. The 24 class programs
are constructed with pairwise edit distance >= 3 between band sequences
and pairwise distinct length-weighted level compositions.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import ClusterModel
from .config import TOOL_VERSION, stage_seed
from .data import ChromosomeImage
from .errors import SynthError
from .features import DEFAULT_BINS

# Palette values sit at the centers of histogram bins 1, 3, 5, 7 (of 8).
BAND_PALETTE = (48, 112, 176, 240)

# (band level sequence, relative band weights, base length in px) per class.
# Verified properties (asserted in tests): no adjacent level repeats,
# pairwise Levenshtein >= 2, pairwise composition L1 distance >= 0.25.
_CLASS_TABLE = (
    ((2, 0, 1, 2), (2, 2, 2, 2), 96),
    ((1, 0, 3, 1, 0), (2, 2, 2, 2, 2), 124),
    ((3, 2, 0, 1, 2, 0, 3), (4, 2, 2, 2, 2, 2, 4), 176),
    ((1, 2, 3, 0, 2), (4, 2, 3, 2, 2), 132),
    ((0, 3, 1, 2, 0, 3), (4, 2, 2, 2, 4, 2), 160),
    ((2, 0, 3, 1, 0, 1, 0), (4, 2, 2, 2, 2, 3, 4), 188),
    ((2, 3, 0, 1, 3, 0), (2, 2, 2, 4, 3, 2), 168),
    ((3, 1, 3, 0, 3, 0, 3), (3, 2, 4, 2, 4, 2, 4), 196),
    ((1, 2, 3, 0, 1, 0, 3), (4, 2, 2, 2, 4, 2, 2), 168),
    ((3, 0, 1, 3, 0, 2, 3), (2, 3, 2, 2, 4, 2, 4), 172),
    ((0, 1, 2, 0, 2, 3, 1), (2, 2, 3, 3, 4, 3, 2), 176),
    ((0, 1, 3, 1, 2, 1, 0), (2, 2, 2, 2, 4, 2, 2), 180),
    ((3, 0, 3, 0, 1, 2), (2, 2, 2, 3, 2, 4), 160),
    ((3, 1, 0, 1, 0, 3, 1), (4, 2, 2, 2, 2, 4, 3), 188),
    ((2, 3, 1, 0, 1, 2, 1), (2, 2, 4, 2, 4, 2, 4), 192),
    ((0, 1, 0, 2, 1, 0, 3), (4, 2, 4, 2, 2, 4, 2), 196),
    ((0, 3, 0, 3, 2, 0), (3, 3, 3, 4, 4, 3), 144),
    ((2, 1, 2, 0, 3, 2), (2, 2, 4, 2, 2, 4), 148),
    ((1, 3, 2, 3, 2, 3, 0), (2, 2, 4, 2, 4, 2, 2), 176),
    ((0, 2, 1, 2, 3, 1, 3), (2, 2, 2, 2, 4, 4, 4), 180),
    ((3, 1, 3, 2, 1, 0, 1), (2, 2, 3, 4, 2, 2, 4), 184),
    ((1, 2, 1, 2, 1, 2, 3), (2, 2, 2, 3, 4, 4, 2), 188),
    ((3, 1, 3, 1, 3, 2, 0), (4, 2, 4, 2, 4, 2, 2), 192),
    ((2, 0, 2, 3, 2, 0, 2), (2, 4, 2, 2, 2, 4, 3), 196),
)

DEFAULT_WIDTH = 12
CANVAS_ALIGN = 8  # canvas dims padded to this multiple (patch-grid symmetry)


@dataclass(frozen=True)
class Band:
    intensity: int      # 0..255
    fraction: float     # of the chromosome length

    def __post_init__(self):
        if not 0 <= self.intensity <= 255:
            raise SynthError("band intensity outside 0..255", code="bad_band")
        if self.fraction <= 0:
            raise SynthError("band fraction must be positive", code="bad_band")


@dataclass(frozen=True)
class BandProgram:
    class_label: int
    bands: tuple
    base_width: int = DEFAULT_WIDTH
    base_length: int = 120
    curvature: float = 0.0   # intrinsic bend angle in radians, 0 = straight

    def __post_init__(self):
        if len(self.bands) < 2:
            raise SynthError("a program needs at least 2 bands", code="too_few_bands")
        total = sum(b.fraction for b in self.bands)
        if abs(total - 1.0) > 1e-9:
            raise SynthError(f"band fractions sum to {total}, not 1",
                             code="bad_fractions")
        object.__setattr__(self, "bands", tuple(self.bands))

    @property
    def levels(self):
        return tuple(palette_level(b.intensity) for b in self.bands)


@dataclass(frozen=True)
class Mutation:
    kind: str                  # band_insertion | band_deletion | band_inversion
    site: int
    payload: Band | None = None
    extent: int = 1            # inversion range length

    def to_json(self):
        obj = {"kind": self.kind, "site": self.site, "extent": self.extent}
        if self.payload is not None:
            obj["payload"] = {"intensity": self.payload.intensity,
                              "fraction": self.payload.fraction}
        return obj


@dataclass(frozen=True)
class NoiseSpec:
    intensity_sigma: float = 0.0
    length_jitter: float = 0.0
    bend_prob: float = 0.0


@dataclass(frozen=True)
class GroundTruth:
    band_levels: tuple
    tips: tuple                # ((row, col), (row, col)) float spine endpoints
    mutation: Mutation | None = None


def palette_level(intensity):
    return int(np.argmin([abs(intensity - p) for p in BAND_PALETTE]))


def _program_from_row(label, row):
    levels, weights, length = row
    total = float(sum(weights))
    bands = tuple(Band(BAND_PALETTE[lvl], w / total)
                  for lvl, w in zip(levels, weights))
    return BandProgram(class_label=label, bands=bands, base_length=length)


CLASS_PROGRAMS = tuple(_program_from_row(i, row)
                       for i, row in enumerate(_CLASS_TABLE))


def palette_cluster_model(bins=DEFAULT_BINS):
    """ClusterModel whose centroid i is the ideal pure-band feature vector of
    palette level i, making the band-to-token correspondence the identity."""
    centroids = np.zeros((len(BAND_PALETTE), bins + 3))
    for lvl, value in enumerate(BAND_PALETTE):
        centroids[lvl, min(value * bins // 256, bins - 1)] = 1.0
        centroids[lvl, bins] = value / 255.0
        centroids[lvl, bins + 2] = 1.0
    return ClusterModel(centroids=centroids, K=len(BAND_PALETTE), seed=0)


def mutate(program, mutation):
    """Apply one structural mutation, renormalizing band fractions."""
    bands = list(program.bands)
    n = len(bands)
    if mutation.kind == "band_insertion":
        if mutation.payload is None:
            raise SynthError("insertion requires a payload band", code="bad_mutation")
        if not 0 <= mutation.site <= n:
            raise SynthError("insertion site out of range", code="bad_site")
        bands.insert(mutation.site, mutation.payload)
    elif mutation.kind == "band_deletion":
        if not 0 <= mutation.site < n:
            raise SynthError("deletion site out of range", code="bad_site")
        if n - 1 < 2:
            raise SynthError("deletion would leave fewer than 2 bands",
                             code="too_few_bands")
        del bands[mutation.site]
    elif mutation.kind == "band_inversion":
        if not 0 <= mutation.site < n:
            raise SynthError("inversion site out of range", code="bad_site")
        end = mutation.site + max(1, mutation.extent)
        if end > n:
            raise SynthError("inversion range out of bounds", code="bad_site")
        bands[mutation.site:end] = reversed(bands[mutation.site:end])
    else:
        raise SynthError(f"unknown mutation kind {mutation.kind!r}",
                         code="bad_mutation")
    total = sum(b.fraction for b in bands)
    bands = [Band(b.intensity, b.fraction / total) for b in bands]
    return BandProgram(class_label=program.class_label, bands=tuple(bands),
                       base_width=program.base_width,
                       base_length=program.base_length,
                       curvature=program.curvature)


def random_mutation(program, rng):
    """Draw one valid structural mutation: the result must keep >= 2 bands,
    introduce no adjacent equal levels, and change the level sequence."""
    levels = program.levels
    n = len(levels)
    for _ in range(32):
        kind = ("band_insertion", "band_deletion", "band_inversion")[int(rng.integers(3))]
        if kind == "band_insertion":
            site = int(rng.integers(n + 1))
            lvl = int(rng.integers(len(BAND_PALETTE)))
            payload = Band(BAND_PALETTE[lvl], 1.0 / n)
            mut = Mutation(kind, site, payload=payload)
        elif kind == "band_deletion":
            if n <= 2:
                continue
            mut = Mutation(kind, int(rng.integers(n)))
        else:
            if n < 2:
                continue
            site = int(rng.integers(n - 1))
            extent = int(rng.integers(2, min(4, n - site + 1)))
            mut = Mutation(kind, site, extent=extent)
        try:
            new_levels = mutate(program, mut).levels
        except SynthError:
            continue
        ok = new_levels != levels and all(
            a != b for a, b in zip(new_levels, new_levels[1:]))
        if ok:
            return mut
    # guaranteed fallback: insert a level distinct from both middle neighbors
    site = n // 2
    nbrs = {levels[site - 1] if site > 0 else None,
            levels[site] if site < n else None}
    lvl = next(l for l in range(len(BAND_PALETTE)) if l not in nbrs)
    return Mutation("band_insertion", site, payload=Band(BAND_PALETTE[lvl], 1.0 / n))


def _spine(total_len, bend):
    """Spine segments [(a, b), ...] in (row, col) float coords plus arclength
    offsets; straight chromosomes run down the rows."""
    span = float(total_len - 1)
    if bend is None:
        return [((0.0, 0.0), (span, 0.0))], [0.0], span
    frac, angle = bend
    l1 = span * frac
    l2 = span - l1
    joint = (l1, 0.0)
    end = (l1 + l2 * math.cos(angle), l2 * math.sin(angle))
    return [((0.0, 0.0), joint), (joint, end)], [0.0, l1], span


def _unit(a, b):
    d = (b[0] - a[0], b[1] - a[1])
    n = math.hypot(*d)
    return (d[0] / n, d[1] / n)


def generate_chromosome(program, seed, noise=NoiseSpec()):
    """Render one chromosome from its band program.

    Deterministic per (program, seed, noise). Returns the image (on a white
    background, canvas padded to multiples of 8) and the ground truth with
    the intended band levels and the two spine tip coordinates.
    """
    width = program.base_width
    total_len = program.base_length
    if total_len < 2 * width:
        raise SynthError("degenerate geometry: length must be >= 2*width",
                         code="degenerate")
    rng = np.random.default_rng(seed)
    bend_u = rng.random()
    angle_u = rng.random()
    sign_u = rng.random()
    pos_u = rng.random()
    jitter = rng.uniform(-noise.length_jitter, noise.length_jitter,
                         size=len(program.bands))

    bend = None
    if program.curvature > 0 or bend_u < noise.bend_prob:
        magnitude = program.curvature if program.curvature > 0 \
            else math.radians(20.0 + 25.0 * angle_u)
        angle = magnitude if sign_u < 0.5 else -magnitude
        bend = (0.35 + 0.3 * pos_u, angle)

    fractions = np.array([b.fraction for b in program.bands]) * (1.0 + jitter)
    fractions /= fractions.sum()

    segments, offsets, span = _spine(total_len, bend)
    half = width / 2.0
    if width % 2 == 0:
        # even widths need a half-pixel column phase to rasterize w columns
        segments = [((a[0], a[1] + 0.5), (b[0], b[1] + 0.5))
                    for a, b in segments]

    pts = [p for seg in segments for p in seg]
    # integer translation keeps the spine's sub-pixel phase (odd widths
    # rasterize symmetrically around an integer centerline)
    rmin = math.floor(min(p[0] for p in pts) - half - 1)
    cmin = math.floor(min(p[1] for p in pts) - half - 1)
    segments = [((a[0] - rmin, a[1] - cmin), (b[0] - rmin, b[1] - cmin))
                for a, b in segments]
    rmax = max(p[0] for seg in segments for p in seg) + half + 1
    cmax = max(p[1] for seg in segments for p in seg) + half + 1
    rows = int(math.ceil(rmax / CANVAS_ALIGN)) * CANVAS_ALIGN
    cols = int(math.ceil(cmax / CANVAS_ALIGN)) * CANVAS_ALIGN

    # each arm is a capsule: round caps avoid corner spurs in the skeleton
    rr, cc = np.mgrid[0:rows, 0:cols].astype(np.float64)
    mask = np.zeros((rows, cols), dtype=bool)
    arc = np.full((rows, cols), np.nan)
    best_d2 = np.full((rows, cols), np.inf)
    for (a, b), off in zip(segments, offsets):
        d = (b[0] - a[0], b[1] - a[1])
        seg_len = math.hypot(*d)
        t = ((rr - a[0]) * d[0] + (cc - a[1]) * d[1]) / (seg_len ** 2)
        t = np.clip(t, 0.0, 1.0)
        d2 = (rr - (a[0] + t * d[0])) ** 2 + (cc - (a[1] + t * d[1])) ** 2
        inside = d2 < half ** 2
        mask |= inside
        better = inside & (d2 < best_d2)
        arc[better] = off + t[better] * seg_len
        best_d2[better] = d2[better]

    boundaries = np.cumsum(fractions)[:-1] * span
    intensities = np.array([b.intensity for b in program.bands], dtype=np.float64)
    band_idx = np.searchsorted(boundaries, arc[mask], side="right")
    values = intensities[band_idx]
    if noise.intensity_sigma > 0:
        values = values + rng.normal(0.0, noise.intensity_sigma, size=values.shape)
    pixels = np.full((rows, cols), 255, dtype=np.uint8)
    pixels[mask] = np.clip(np.rint(values), 0, 254).astype(np.uint8)

    # ground-truth tips are the cap apexes, the extreme points of each arm
    u_start = _unit(segments[0][1], segments[0][0])
    u_end = _unit(segments[-1][0], segments[-1][1])
    a0 = segments[0][0]
    b1 = segments[-1][1]
    tips = ((a0[0] + half * u_start[0], a0[1] + half * u_start[1]),
            (b1[0] + half * u_end[0], b1[1] + half * u_end[1]))
    img = ChromosomeImage(pixels=pixels, mask=mask,
                          class_label=program.class_label)
    return img, GroundTruth(band_levels=program.levels, tips=tips)


@dataclass(frozen=True)
class DatasetSpec:
    cases_male: int
    cases_female: int
    seed: int
    noise: NoiseSpec = NoiseSpec()
    abnormal_fraction: float = 0.0


def _case_labels(sex):
    labels = [cls for cls in range(22) for _ in range(2)]
    labels += [22, 23] if sex == "male" else [22, 22]
    return labels


def dataset_instances(spec):
    """Yield (ChromosomeImage, GroundTruth) for every chromosome of every
    case, deterministically: male cases first, 46 chromosomes per case.

    Exactly round(abnormal_fraction * total) instances receive one random
    mutation; the selection is drawn up front so per-case generation stays
    independent of scheduling.
    """
    if spec.cases_male < 0 or spec.cases_female < 0 \
            or spec.cases_male + spec.cases_female == 0:
        raise SynthError("need a positive number of cases", code="bad_spec")
    cases = [(f"case{m:04d}M", "male") for m in range(spec.cases_male)]
    cases += [(f"case{f:04d}F", "female") for f in range(spec.cases_female)]
    total = 46 * len(cases)
    n_abnormal = int(round(spec.abnormal_fraction * total))
    sel_rng = np.random.default_rng(stage_seed(spec.seed, "abnormal-selection"))
    abnormal = set(sel_rng.permutation(total)[:n_abnormal].tolist())

    index = 0
    for case_id, sex in cases:
        for k, label in enumerate(_case_labels(sex)):
            program = CLASS_PROGRAMS[label]
            mutation = None
            if index in abnormal:
                mut_rng = np.random.default_rng(
                    stage_seed(spec.seed, f"mutation:{case_id}:{k}"))
                mutation = random_mutation(program, mut_rng)
                program = mutate(program, mutation)
            inst_seed = stage_seed(spec.seed, f"instance:{case_id}:{k}")
            img, gt = generate_chromosome(program, inst_seed, spec.noise)
            instance_id = f"{case_id}_k{k:02d}_c{label:02d}"
            img = ChromosomeImage(pixels=img.pixels, mask=img.mask,
                                  class_label=label, case_id=case_id,
                                  instance_id=instance_id)
            yield img, GroundTruth(band_levels=gt.band_levels, tips=gt.tips,
                                   mutation=mutation)
            index += 1


def generate_dataset(spec, out_dir, config_hash=""):
    """Write images/, masks/, manifest.json, and ground_truth.json."""
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    manifest = []
    truth = {}
    for img, gt in dataset_instances(spec):
        image_path = f"images/{img.instance_id}.png"
        mask_path = f"masks/{img.instance_id}.png"
        Image.fromarray(img.pixels, mode="L").save(out / image_path)
        Image.fromarray(img.mask.astype(np.uint8) * 255, mode="L").save(out / mask_path)
        manifest.append({"image_path": image_path, "mask_path": mask_path,
                         "class_label": img.class_label, "case_id": img.case_id})
        truth[img.instance_id] = {
            "bands": list(gt.band_levels),
            "mutation": gt.mutation.to_json() if gt.mutation else None,
            "tips": [list(gt.tips[0]), list(gt.tips[1])],
            "class_label": img.class_label,
            "case_id": img.case_id,
        }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    (out / "ground_truth.json").write_text(json.dumps({
        "version": 1, "tool_version": TOOL_VERSION,
        "config_hash": config_hash, "seed": spec.seed,
        "instances": truth}, sort_keys=True) + "\n")
    return manifest_path
