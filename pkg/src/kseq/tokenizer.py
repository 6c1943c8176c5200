"""Token sequences: order smoothed patch labels along the longitudinal axis,
collapse runs into sub-chromosome tokens, frame with start/end markers, and
attach sinusoidal positional encodings."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import morphology
from .clustering import assign, smooth_labels
from .errors import TokenizeError
from .features import banding_features, extract_patches, import_embeddings

SOC = -1
EOC = -2
PE_SCALE = 100.0  # maps normalized [0,1] positions onto a usable phase range


@dataclass(frozen=True)
class TokenizerParams:
    patch_size: int = 8
    fg_min: float = 0.3
    smooth_lambda: float = 0.1
    min_run: int = 1
    bins: int = 8
    embeddings_path: str | None = None


@dataclass(frozen=True)
class TokenSequence:
    """SOC + interior token ids + EOC, with per-token axis geometry.

    positions are normalized span midpoints in [0, 1]; spans are
    (start, end) arclengths in pixels, ordered and non-overlapping.
    """

    tokens: tuple
    positions: tuple
    spans: tuple
    source: str = ""

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        positions = tuple(float(p) for p in self.positions)
        spans = tuple((float(a), float(b)) for a, b in self.spans)
        if len(tokens) < 3 or tokens[0] != SOC or tokens[-1] != EOC:
            raise TokenizeError("sequence must be SOC, interior, EOC",
                                code="bad_framing")
        interior = tokens[1:-1]
        if SOC in interior or EOC in interior:
            raise TokenizeError("interior repeats a framing token",
                                code="bad_framing")
        if any(a == b for a, b in zip(interior, interior[1:])):
            raise TokenizeError("adjacent interior tokens must differ",
                                code="not_collapsed")
        if len(positions) != len(interior) or len(spans) != len(interior):
            raise TokenizeError("positions/spans must match interior length",
                                code="length_mismatch")
        if any(q <= p for p, q in zip(positions, positions[1:])):
            raise TokenizeError("positions must strictly increase",
                                code="bad_positions")
        for i, (a, b) in enumerate(spans):
            if b < a:
                raise TokenizeError("span end before start", code="bad_spans")
            if i and a < spans[i - 1][1]:
                raise TokenizeError("spans overlap", code="bad_spans")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "spans", spans)

    @property
    def interior(self):
        return self.tokens[1:-1]


@dataclass(frozen=True)
class EncodedSequence:
    base: TokenSequence
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        if vectors.shape[0] != len(self.base.interior):
            raise TokenizeError("one vector per interior token required",
                                code="length_mismatch")
        if not np.isfinite(vectors).all():
            raise TokenizeError("encoded vectors contain non-finite values",
                                code="non_finite")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)


def canonical_orientation(axis, interior_tokens):
    """Pick the reading direction: "forward" if the interior sequence is
    lexicographically no larger than its reverse, else "reversed".

    The axis argument is accepted for callers that extracted it alongside the
    tokens; the rule itself is label-driven, so palindromes stay forward.
    """
    tokens = list(interior_tokens)
    if not tokens:
        raise TokenizeError("empty token list", code="empty_sequence")
    return "forward" if tokens <= tokens[::-1] else "reversed"


def positional_encoding(pos, d_pe):
    """Sinusoidal encoding of a normalized position in [0, 1]."""
    if d_pe < 2 or d_pe % 2 != 0:
        raise TokenizeError("encoding dimension must be even and >= 2",
                            code="bad_dim")
    i = np.arange(d_pe // 2, dtype=np.float64)
    angle = pos * PE_SCALE / np.power(10000.0, 2.0 * i / d_pe)
    out = np.empty(d_pe, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def _majority(labels, counts=None):
    values, n = np.unique(labels, return_counts=True)
    best = n.max()
    return int(values[n == best].min())


def _window_majority(arcs, labels, width):
    """Majority label among patches within +-width/2 arclength of each patch;
    ties keep the patch's own label when it participates, else lowest id."""
    out = np.empty_like(labels)
    half = width / 2.0
    for i, s in enumerate(arcs):
        sel = np.abs(arcs - s) <= half
        values, n = np.unique(labels[sel], return_counts=True)
        top = values[n == n.max()]
        out[i] = labels[i] if labels[i] in top else int(top.min())
    return out


def tokenize(img, model, params=TokenizerParams()):
    """Run the full image -> token-sequence pipeline for one chromosome.

    Patch labels are ordered by their projections onto the longitudinal
    axis, majority-voted in sliding arclength windows, collapsed into runs
    (dropping runs shorter than min_run patches), canonically oriented, and
    framed with SOC/EOC.
    """
    grid = extract_patches(img, params.patch_size, params.fg_min)
    if params.embeddings_path is not None:
        feats = import_embeddings(params.embeddings_path, grid)
    else:
        feats = banding_features(img, grid, bins=params.bins)
    field = assign(model, feats)
    field = smooth_labels(field, grid, model, params.smooth_lambda)
    axis = morphology.longitudinal_axis(img.mask)

    arcs = np.array([morphology.project_to_axis(p.center, axis)
                     for p in grid.patches])
    order = np.lexsort((np.arange(len(arcs)), arcs))
    arcs = arcs[order]
    labels = _window_majority(arcs, field.labels[order], params.patch_size)

    # group patches that project to the same axis point into one site
    sites = []  # (arclength, label, patch count)
    i = 0
    while i < len(arcs):
        j = i
        while j < len(arcs) and arcs[j] == arcs[i]:
            j += 1
        sites.append((float(arcs[i]), _majority(labels[i:j]), j - i))
        i = j

    # collapse equal-label runs; drop runs shorter than min_run patches
    runs = []  # (label, first site arc, last site arc, patch count)
    for s, lab, n in sites:
        if runs and runs[-1][0] == lab:
            prev = runs[-1]
            runs[-1] = (lab, prev[1], s, prev[3] + n)
        else:
            runs.append((lab, s, s, n))
    if params.min_run > 1:
        kept = [r for r in runs if r[3] >= params.min_run]
        merged = []
        for r in kept:
            if merged and merged[-1][0] == r[0]:
                prev = merged[-1]
                merged[-1] = (r[0], prev[1], r[2], prev[3] + r[3])
            else:
                merged.append(r)
        runs = merged
    if not runs:
        raise TokenizeError("no interior tokens survive run filtering",
                            code="empty_sequence")

    total = axis.length
    if total <= 0:
        raise TokenizeError("axis has zero length", code="degenerate_axis")
    bounds = [runs[0][1]]
    for prev, cur in zip(runs, runs[1:]):
        bounds.append((prev[2] + cur[1]) / 2.0)
    bounds.append(runs[-1][2])
    interior = [r[0] for r in runs]
    spans = list(zip(bounds[:-1], bounds[1:]))

    if canonical_orientation(axis, interior) == "reversed":
        interior.reverse()
        spans = [(total - b, total - a) for a, b in reversed(spans)]
    positions = [(a + b) / 2.0 / total for a, b in spans]

    return TokenSequence(tokens=(SOC, *interior, EOC),
                         positions=tuple(positions),
                         spans=tuple(spans),
                         source=img.instance_id)


def encode(seq, model, d_pe=8):
    """Per interior token: final centroid of its cluster concatenated with the
    positional encoding of its normalized position."""
    interior = seq.interior
    for t in interior:
        if not 0 <= t < model.K:
            raise TokenizeError(f"token id {t} out of range for K={model.K}",
                                code="bad_token")
    vectors = np.vstack([
        np.concatenate([model.final_centroids[t], positional_encoding(p, d_pe)])
        for t, p in zip(interior, seq.positions)])
    return EncodedSequence(base=seq, vectors=vectors)


def dump_tokens(seqs, path, stamp=None):
    """Token dump, one line per instance:
    instance_id<TAB>S t1 .. tn E<TAB>p1,p2,..,pn"""
    lines = []
    if stamp:
        lines.append(f"# kseq tool_version={stamp['tool_version']} "
                     f"config_hash={stamp['config_hash']} seed={stamp['seed']}")
    for seq in seqs:
        ids = " ".join(["S", *[str(t) for t in seq.interior], "E"])
        pos = ",".join(repr(p) for p in seq.positions)
        lines.append(f"{seq.source}\t{ids}\t{pos}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_tokens(path):
    """Parse a token dump into (instance_id, interior tuple, positions tuple)."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        try:
            instance_id, ids, pos = line.split("\t")
            parts = ids.split()
            if parts[0] != "S" or parts[-1] != "E":
                raise ValueError("missing S/E framing")
            interior = tuple(int(t) for t in parts[1:-1])
            positions = tuple(float(p) for p in pos.split(",")) if pos else ()
        except ValueError as exc:
            raise TokenizeError(f"malformed token line: {line!r}",
                                code="bad_dump") from exc
        out.append((instance_id, interior, positions))
    return out
