import numpy as np
import pytest

from kseq.errors import MorphologyError
from kseq.morphology import (AxisPolyline, BOX8, StructuringElement,
                             count_components, erode, longitudinal_axis,
                             project_to_axis, skeletonize)


def test_erode_empty_mask():
    assert not erode(np.zeros((4, 4), bool), BOX8).any()


def test_erode_box_enumeration_oracle():
    mask = np.ones((5, 5), bool)
    out = erode(mask, BOX8)
    # oracle: direct enumeration of the erosion definition
    expect = np.zeros((5, 5), bool)
    for r in range(5):
        for c in range(5):
            expect[r, c] = all(
                0 <= r + dy < 5 and 0 <= c + dx < 5 and mask[r + dy, c + dx]
                for dy, dx in BOX8.offsets)
    assert np.array_equal(out, expect)
    assert out.sum() == 9 and out[1:4, 1:4].all()


def test_erode_identity_element():
    mask = np.zeros((3, 3), bool)
    mask[1, 1] = True
    assert np.array_equal(erode(mask, StructuringElement(((0, 0),))), mask)


def test_structuring_element_validation():
    with pytest.raises(MorphologyError):
        StructuringElement(())
    with pytest.raises(MorphologyError):
        StructuringElement(((1, 0),))


def test_erosion_anti_extensive_and_monotone():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = rng.random((9, 11)) < 0.6
        b = a | (rng.random((9, 11)) < 0.2)
        ea, eb = erode(a), erode(b)
        assert not (ea & ~a).any()          # output subset of input
        assert not (ea & ~eb).any()         # a subset of b implies erode(a) subset of erode(b)


def test_skeleton_preserves_component_count():
    rng = np.random.default_rng(3)
    for _ in range(50):
        mask = rng.random((14, 14)) < 0.45
        if not mask.any():
            continue
        assert count_components(skeletonize(mask)) == count_components(mask)


def test_axis_horizontal_bar_exact_centerline():
    mask = np.ones((5, 21), bool)
    axis = longitudinal_axis(mask)
    assert axis.points == tuple((2, c) for c in range(21))
    assert axis.arclengths[0] == 0.0
    assert axis.length == 20.0


def test_axis_bar_arclength_invariant():
    # straight bar of odd width w, length L: arclength in [L-w-1, L-1]
    for w, l in ((3, 15), (5, 30), (7, 40), (9, 60)):
        mask = np.ones((w, l), bool)
        axis = longitudinal_axis(mask)
        assert l - w - 1 <= axis.length <= l - 1


def test_axis_l_shape_endpoints_near_tips():
    mask = np.zeros((40, 40), bool)
    mask[0:30, 0:11] = True     # vertical arm, tip near (0, 5)
    mask[19:30, 0:30] = True    # horizontal arm, tip near (24.5, 29)
    axis = longitudinal_axis(mask)
    ends = [np.array(axis.points[0], float), np.array(axis.points[-1], float)]
    tips = [np.array([0.0, 5.0]), np.array([24.5, 29.0])]
    for tip in tips:
        assert min(np.linalg.norm(e - tip) for e in ends) <= 2.0


def test_axis_rejects_two_components():
    mask = np.zeros((10, 10), bool)
    mask[1:4, 1:4] = True
    mask[6:9, 6:9] = True
    with pytest.raises(MorphologyError) as err:
        longitudinal_axis(mask)
    assert err.value.code == "multiple_components"


def test_axis_rejects_tiny_mask():
    mask = np.zeros((4, 4), bool)
    mask[1, 1] = True
    with pytest.raises(MorphologyError) as err:
        longitudinal_axis(mask)
    assert err.value.code == "too_small"


def test_axis_translation_invariance():
    base = np.zeros((30, 40), bool)
    base[5:14, 3:33] = True
    axis = longitudinal_axis(base)
    shifted = np.zeros((40, 50), bool)
    shifted[11:20, 10:40] = True
    axis2 = longitudinal_axis(shifted)
    moved = {(r + 6, c + 7) for r, c in axis.points}
    assert moved == set(axis2.points)


def test_project_to_axis_endpoints_and_tie():
    axis = AxisPolyline(points=((0, 0), (0, 1), (0, 2), (0, 3)),
                        arclengths=(0.0, 1.0, 2.0, 3.0))
    assert project_to_axis((0, 0), axis) == 0.0
    assert project_to_axis((5, 3), axis) == 3.0
    # query equidistant from arclengths 1.0 and 2.0 resolves to 1.0
    assert project_to_axis((4.0, 1.5), axis) == 1.0


def test_project_to_axis_surjective_over_mask():
    mask = np.ones((5, 15), bool)
    axis = longitudinal_axis(mask)
    hits = {project_to_axis((r, c), axis)
            for r in range(5) for c in range(15)}
    assert hits == set(axis.arclengths)


def test_polyline_validation():
    with pytest.raises(MorphologyError):
        AxisPolyline(points=((0, 0), (0, 2)), arclengths=(0.0, 2.0))
    with pytest.raises(MorphologyError):
        AxisPolyline(points=((0, 0), (0, 1), (0, 0)),
                     arclengths=(0.0, 1.0, 2.0))
    with pytest.raises(MorphologyError):
        AxisPolyline(points=((0, 0), (0, 1)), arclengths=(0.0, 0.0))
