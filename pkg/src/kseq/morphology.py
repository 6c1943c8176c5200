"""Binary morphology and erosion-based longitudinal-axis extraction.

The axis of a chromosome is found by (1) thinning the mask to a one-pixel
skeleton with a two-subiteration, connectivity-preserving scheme whose
border candidates are selected by erosion masks, (2) pruning short side
branches until exactly two endpoints remain, (3) tracing the path between
the endpoints, and (4) extending both ends along their local direction to
the mask boundary so the axis reaches the chromosome tips.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MorphologyError


@dataclass(frozen=True)
class StructuringElement:
    """Set of (dy, dx) offsets, origin included."""

    offsets: tuple

    def __post_init__(self):
        offs = tuple(sorted((int(dy), int(dx)) for dy, dx in self.offsets))
        if not offs:
            raise MorphologyError("structuring element is empty", code="empty_se")
        if (0, 0) not in offs:
            raise MorphologyError("structuring element must contain the origin",
                                  code="missing_origin")
        object.__setattr__(self, "offsets", offs)


BOX8 = StructuringElement(tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)))

# Neighbor order used for LUT bit indices: clockwise from north.
_N8 = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _shifted(mask, dy, dx):
    """mask translated by (-dy, -dx): out[p] = mask[p + (dy, dx)], False outside."""
    rows, cols = mask.shape
    out = np.zeros_like(mask)
    rs = slice(max(0, -dy), min(rows, rows - dy))
    cs = slice(max(0, -dx), min(cols, cols - dx))
    rs_src = slice(max(0, dy), min(rows, rows + dy))
    cs_src = slice(max(0, dx), min(cols, cols + dx))
    out[rs, cs] = mask[rs_src, cs_src]
    return out


def erode(mask, se=BOX8):
    """Morphological erosion; pixels outside the grid count as background."""
    mask = np.asarray(mask, dtype=bool)
    out = np.ones_like(mask)
    for dy, dx in se.offsets:
        out &= _shifted(mask, dy, dx)
    return out


def count_components(mask):
    """Number of 8-connected foreground components."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    count = 0
    rows, cols = mask.shape
    for r0, c0 in np.argwhere(mask & ~seen):
        if seen[r0, c0]:
            continue
        count += 1
        stack = [(r0, c0)]
        seen[r0, c0] = True
        while stack:
            r, c = stack.pop()
            for dy, dx in _N8:
                rr, cc = r + dy, c + dx
                if 0 <= rr < rows and 0 <= cc < cols and mask[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    stack.append((rr, cc))
    return count


def _build_luts():
    """Per 8-neighborhood bitmask: is the center pixel (8,4)-simple?

    Simple means deleting it preserves topology: exactly one 8-connected
    foreground component in the ring, and exactly one 4-connected background
    component in the ring that touches a 4-neighbor of the center.
    """
    coords = _N8
    adj8 = [[max(abs(a[0] - b[0]), abs(a[1] - b[1])) <= 1 and a != b
             for b in coords] for a in coords]
    adj4 = [[abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
             for b in coords] for a in coords]
    four_nbr = [i for i, (dy, dx) in enumerate(coords) if abs(dy) + abs(dx) == 1]

    def components(cells, adj):
        comps = []
        left = set(cells)
        while left:
            seed = left.pop()
            comp = {seed}
            frontier = [seed]
            while frontier:
                i = frontier.pop()
                for j in list(left):
                    if adj[i][j]:
                        left.discard(j)
                        comp.add(j)
                        frontier.append(j)
            comps.append(comp)
        return comps

    simple = np.zeros(256, dtype=bool)
    for bits in range(256):
        fg = [i for i in range(8) if bits >> i & 1]
        bg = [i for i in range(8) if not bits >> i & 1]
        if not fg:
            continue
        if len(components(fg, adj8)) != 1:
            continue
        bg_comps = components(bg, adj4)
        touching = sum(1 for comp in bg_comps if any(i in comp for i in four_nbr))
        simple[bits] = touching == 1
    degree = np.array([bin(b).count("1") for b in range(256)], dtype=np.uint8)
    return simple, degree


_SIMPLE_LUT, _DEGREE_LUT = _build_luts()

# Border-candidate erosion masks for the two subiterations: a pixel is a
# candidate when its north-or-east (resp. south-or-west) neighbor is missing.
_SE_SUB1 = StructuringElement(((0, 0), (-1, 0), (0, 1)))
_SE_SUB2 = StructuringElement(((0, 0), (1, 0), (0, -1)))


def _neighbor_bits(mask, r, c):
    rows, cols = mask.shape
    bits = 0
    for i, (dy, dx) in enumerate(_N8):
        rr, cc = r + dy, c + dx
        if 0 <= rr < rows and 0 <= cc < cols and mask[rr, cc]:
            bits |= 1 << i
    return bits


def skeletonize(mask):
    """Thin to a one-pixel-wide skeleton, preserving 8-connectivity.

    Two subiterations per pass (north/east border, then south/west border);
    candidates come from erosion masks and are deleted sequentially in
    row-major order when they are simple points and not line endpoints.
    """
    skel = np.array(mask, dtype=bool)
    while True:
        changed = False
        for se in (_SE_SUB1, _SE_SUB2):
            border = skel & ~erode(skel, se)
            for r, c in np.argwhere(border):
                if not skel[r, c]:
                    continue
                bits = _neighbor_bits(skel, r, c)
                if _DEGREE_LUT[bits] >= 2 and _SIMPLE_LUT[bits]:
                    skel[r, c] = False
                    changed = True
        if not changed:
            return skel


@dataclass(frozen=True)
class AxisPolyline:
    """Ordered pixel path along the chromosome length, with arclengths."""

    points: tuple       # ((row, col), ...)
    arclengths: tuple   # cumulative Euclidean distance, starts at 0

    def __post_init__(self):
        pts = tuple((int(r), int(c)) for r, c in self.points)
        arcs = tuple(float(a) for a in self.arclengths)
        if len(pts) != len(arcs) or not pts:
            raise MorphologyError("points/arclengths length mismatch",
                                  code="bad_polyline")
        if len(set(pts)) != len(pts):
            raise MorphologyError("axis path repeats a point", code="bad_polyline")
        if arcs[0] != 0.0 or any(b <= a for a, b in zip(arcs, arcs[1:])):
            raise MorphologyError("arclengths must strictly increase from 0",
                                  code="bad_polyline")
        for (r0, c0), (r1, c1) in zip(pts, pts[1:]):
            if max(abs(r0 - r1), abs(c0 - c1)) != 1:
                raise MorphologyError("consecutive axis points not 8-adjacent",
                                      code="bad_polyline")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "arclengths", arcs)

    @property
    def length(self):
        return self.arclengths[-1]

    def reversed(self):
        total = self.arclengths[-1]
        pts = tuple(reversed(self.points))
        arcs = tuple(total - a for a in reversed(self.arclengths))
        return AxisPolyline(points=pts, arclengths=arcs)


def _skeleton_neighbors(pixels, r, c):
    return [(r + dy, c + dx) for dy, dx in _N8 if (r + dy, c + dx) in pixels]


def _endpoints(pixels):
    return [p for p in sorted(pixels) if len(_skeleton_neighbors(pixels, *p)) == 1]


def _walk_branch(pixels, endpoint):
    """Follow the skeleton from an endpoint until a junction or another end.

    Returns (branch pixels excluding the junction, reached_junction).
    """
    branch = [endpoint]
    prev = None
    cur = endpoint
    while True:
        nbrs = [p for p in _skeleton_neighbors(pixels, *cur) if p != prev]
        if prev is not None:
            # drop neighbors that are also adjacent to prev (diagonal shortcuts)
            nbrs = [p for p in nbrs
                    if max(abs(p[0] - prev[0]), abs(p[1] - prev[1])) > 1]
        if not nbrs:
            return branch, False
        if len(_skeleton_neighbors(pixels, *nbrs[0])) >= 3 or len(nbrs) > 1:
            return branch, True
        prev, cur = cur, nbrs[0]
        branch.append(cur)


def _prune(pixels, prune_len, max_iters):
    """Remove side branches shorter than prune_len until two endpoints remain."""
    for _ in range(max_iters):
        ends = _endpoints(pixels)
        if len(ends) <= 2:
            return pixels
        branches = []
        for e in ends:
            branch, at_junction = _walk_branch(pixels, e)
            if at_junction and len(branch) < prune_len:
                branches.append((len(branch), branch))
        if not branches:
            break
        branches.sort(key=lambda b: (b[0], b[1][0]))
        for _, branch in branches:
            if len(_endpoints(pixels)) <= 2:
                break
            if all(p in pixels for p in branch):
                pixels -= set(branch)
    if len(_endpoints(pixels)) != 2:
        raise MorphologyError(
            f"pruning left {len(_endpoints(pixels))} endpoints, expected 2",
            code="unprunable")
    return pixels


def _trace(pixels, start, goal):
    """Shortest 8-connected path across the skeleton (BFS, deterministic)."""
    parent = {start: None}
    queue = [start]
    while queue:
        nxt = []
        for cur in queue:
            if cur == goal:
                queue = []
                break
            for p in _skeleton_neighbors(pixels, *cur):
                if p not in parent:
                    parent[p] = cur
                    nxt.append(p)
        else:
            queue = nxt
    if goal not in parent:
        raise MorphologyError("skeleton endpoints are disconnected",
                              code="disconnected_skeleton")
    path = []
    cur = goal
    while cur is not None:
        path.append(cur)
        cur = parent[cur]
    path.reverse()
    return path


def _march(start, step, mask, blocked):
    """Step pixel-by-pixel from start along the unit vector while the mask
    continues; unit steps guarantee 8-adjacency of successive pixels."""
    rows, cols = mask.shape
    added = []
    pos = np.array(start, dtype=float)
    cur = tuple(start)
    for _ in range(rows + cols):
        pos += step
        cand = (int(np.floor(pos[0] + 0.5)), int(np.floor(pos[1] + 0.5)))
        if cand == cur:
            continue
        if not (0 <= cand[0] < rows and 0 <= cand[1] < cols):
            break
        if not mask[cand] or cand in blocked:
            break
        added.append(cand)
        blocked.add(cand)
        cur = cand
    return added


def _retip(path, mask):
    """Extend the tail of the path to the mask boundary along the arm
    direction.

    Thinning curls away from the centerline inside rounded tips, so the last
    few skeleton pixels are untrustworthy: trim them, estimate the direction
    over a window ending at the trimmed anchor, and re-march a straight ray
    through the tip. The original tail is kept when it reaches farther.
    """
    trim = min(8, (len(path) - 1) // 3)
    anchor = len(path) - 1 - trim
    k = min(8, anchor)
    if k == 0:
        return path
    a = np.array(path[anchor], dtype=float)
    window = np.array(path[anchor - k:anchor + 1], dtype=float)
    centered = window - window.mean(axis=0)
    # least-squares direction: two-point differences quantize the angle
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    vec = vt[0]
    if np.dot(vec, a - window[0]) < 0:
        vec = -vec
    norm = float(np.hypot(*vec))
    if norm == 0.0:
        return path
    step = vec / norm
    blocked = set(path[:anchor + 1])
    ray = _march(path[anchor], step, mask, blocked)
    old_tail = path[anchor + 1:]

    def reach(tail):
        if not tail:
            return -np.inf
        return float(np.dot(np.array(tail[-1], dtype=float) - a, step))

    tail = ray if reach(ray) >= reach(old_tail) else old_tail
    return path[:anchor + 1] + tail


def _polyline_from_points(points):
    arcs = [0.0]
    for (r0, c0), (r1, c1) in zip(points, points[1:]):
        arcs.append(arcs[-1] + float(np.hypot(r1 - r0, c1 - c0)))
    return AxisPolyline(points=tuple(points), arclengths=tuple(arcs))


def longitudinal_axis(mask, prune_len=5, max_prune_iters=16):
    """Extract the longitudinal axis polyline of a single-component mask.

    Orientation is provisional (endpoint with the smaller (row, col) first);
    tokenization re-orients sequences canonically afterwards.
    """
    mask = np.asarray(mask, dtype=bool)
    n_fg = int(mask.sum())
    if n_fg < 3:
        raise MorphologyError("mask too small to thin (needs >= 3 pixels)",
                              code="too_small")
    if count_components(mask) != 1:
        raise MorphologyError("mask must have exactly one 8-connected component",
                              code="multiple_components")
    skel = skeletonize(mask)
    pixels = {tuple(p) for p in np.argwhere(skel)}
    if len(pixels) < 2:
        raise MorphologyError("skeleton degenerated to a point", code="too_small")
    pixels = _prune(pixels, prune_len, max_prune_iters)
    ends = _endpoints(pixels)
    path = _trace(pixels, ends[0], ends[1])

    points = _retip(path, mask)
    points = _retip(list(reversed(points)), mask)
    if points[-1] < points[0]:
        points.reverse()
    return _polyline_from_points(points)


def project_to_axis(point, axis):
    """Arclength of the axis point nearest the query; ties go to the
    smaller arclength."""
    pts = np.asarray(axis.points, dtype=float)
    q = np.asarray(point, dtype=float)
    d2 = ((pts - q) ** 2).sum(axis=1)
    return axis.arclengths[int(np.argmin(d2))]
