import itertools
import json

import numpy as np
import pytest

from kseq.analysis import edit_distance
from kseq.data import load_manifest
from kseq.errors import SynthError
from kseq.synth import (BAND_PALETTE, Band, BandProgram, CLASS_PROGRAMS,
                        DatasetSpec, Mutation, NoiseSpec, dataset_instances,
                        generate_chromosome, generate_dataset, mutate,
                        palette_cluster_model, random_mutation)
from kseq.tokenizer import tokenize


def test_same_seed_bit_identical():
    noise = NoiseSpec(8.0, 0.1, 0.5)
    a, gta = generate_chromosome(CLASS_PROGRAMS[4], seed=77, noise=noise)
    b, gtb = generate_chromosome(CLASS_PROGRAMS[4], seed=77, noise=noise)
    assert np.array_equal(a.pixels, b.pixels)
    assert np.array_equal(a.mask, b.mask)
    assert gta == gtb
    c, _ = generate_chromosome(CLASS_PROGRAMS[4], seed=78, noise=noise)
    assert not np.array_equal(a.pixels, c.pixels)


def test_programs_cover_24_well_separated_classes():
    assert len(CLASS_PROGRAMS) == 24
    for prog in CLASS_PROGRAMS:
        assert abs(sum(b.fraction for b in prog.bands) - 1.0) < 1e-9
        levels = prog.levels
        assert all(a != b for a, b in zip(levels, levels[1:]))
        assert len(levels) >= 2
    for a, b in itertools.combinations(CLASS_PROGRAMS, 2):
        assert edit_distance(a.levels, b.levels)[0] >= 2


def test_programs_have_distinct_compositions():
    # length-weighted level histograms separate the classes for the
    # pooled-feature classifier
    comps = []
    for prog in CLASS_PROGRAMS:
        w = np.zeros(len(BAND_PALETTE))
        for band, lvl in zip(prog.bands, prog.levels):
            w[lvl] += band.fraction
        comps.append(w)
    for a, b in itertools.combinations(comps, 2):
        assert np.abs(a - b).sum() >= 0.2


def test_palette_correspondence_is_identity():
    model = palette_cluster_model()
    img, gt = generate_chromosome(CLASS_PROGRAMS[0], seed=1)
    assert gt.band_levels == (2, 0, 1, 2)
    assert tokenize(img, model).interior == (2, 0, 1, 2)


def test_even_width_renders_full_width():
    img, _ = generate_chromosome(CLASS_PROGRAMS[0], seed=2)
    widths = img.mask.sum(axis=1)
    assert widths.max() == CLASS_PROGRAMS[0].base_width


def test_mutation_insertion_matches_abnormal_pattern():
    mut = Mutation("band_insertion", 3, payload=Band(BAND_PALETTE[0], 0.2))
    mutated = mutate(CLASS_PROGRAMS[0], mut)
    assert mutated.levels == (2, 0, 1, 0, 2)
    assert abs(sum(b.fraction for b in mutated.bands) - 1.0) < 1e-9
    img, gt = generate_chromosome(mutated, seed=1)
    assert tokenize(img, palette_cluster_model()).interior == (2, 0, 1, 0, 2)


def test_unit_inversion_is_identity():
    prog = CLASS_PROGRAMS[5]
    out = mutate(prog, Mutation("band_inversion", 2, extent=1))
    assert out.levels == prog.levels
    assert [b.fraction for b in out.bands] == \
        pytest.approx([b.fraction for b in prog.bands])


def test_inversion_reverses_range():
    prog = CLASS_PROGRAMS[0]  # (2, 0, 1, 2)
    out = mutate(prog, Mutation("band_inversion", 1, extent=2))
    assert out.levels == (2, 1, 0, 2)


def test_delete_then_insert_roundtrip():
    prog = CLASS_PROGRAMS[0]
    site = 1
    f = prog.bands[site].fraction
    deleted = mutate(prog, Mutation("band_deletion", site))
    payload = Band(prog.bands[site].intensity, f / (1.0 - f))
    restored = mutate(deleted, Mutation("band_insertion", site, payload=payload))
    assert restored.levels == prog.levels
    for a, b in zip(restored.bands, prog.bands):
        assert a.fraction == pytest.approx(b.fraction, abs=1e-9)


def test_deletion_keeps_two_bands():
    prog = BandProgram(class_label=0, base_length=96, bands=(
        Band(BAND_PALETTE[0], 0.5), Band(BAND_PALETTE[1], 0.5)))
    with pytest.raises(SynthError):
        mutate(prog, Mutation("band_deletion", 0))


def test_mutation_site_validation():
    prog = CLASS_PROGRAMS[0]
    with pytest.raises(SynthError):
        mutate(prog, Mutation("band_deletion", 9))
    with pytest.raises(SynthError):
        mutate(prog, Mutation("band_inversion", 3, extent=4))
    with pytest.raises(SynthError):
        mutate(prog, Mutation("band_insertion", 2))  # payload missing


def test_random_mutation_always_valid():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        prog = CLASS_PROGRAMS[seed % 24]
        mut = random_mutation(prog, rng)
        out = mutate(prog, mut)
        assert out.levels != prog.levels
        assert all(a != b for a, b in zip(out.levels, out.levels[1:]))


def test_degenerate_geometry_rejected():
    prog = BandProgram(class_label=0, base_length=20, base_width=12, bands=(
        Band(BAND_PALETTE[0], 0.5), Band(BAND_PALETTE[1], 0.5)))
    with pytest.raises(SynthError) as err:
        generate_chromosome(prog, seed=0)
    assert err.value.code == "degenerate"


def _center_col_levels(img):
    cols = np.where(img.mask.any(axis=0))[0]
    center = int(round(cols.mean()))
    values = img.pixels[img.mask[:, center], center]
    palette = np.array(BAND_PALETTE)
    return [int(np.argmin(np.abs(palette - v))) for v in values]


def test_band_lengths_track_fractions_within_jitter():
    jitter = 0.1
    span = CLASS_PROGRAMS[0].base_length - 1
    for seed in range(5):
        img, gt = generate_chromosome(CLASS_PROGRAMS[0], seed=seed,
                                      noise=NoiseSpec(0.0, jitter, 0.0))
        levels = _center_col_levels(img)
        runs = [(k, len(list(g))) for k, g in itertools.groupby(levels)]
        assert [k for k, _ in runs] == list(gt.band_levels)
        lo = (1 - jitter) / (1 + jitter)
        hi = (1 + jitter) / (1 - jitter)
        for i, (_, length) in enumerate(runs):
            want = CLASS_PROGRAMS[0].bands[i].fraction * span
            slack = 2 if 0 < i < len(runs) - 1 else 2 + 6  # caps extend the ends
            assert want * lo - slack <= length <= want * hi + slack


def test_single_male_case_composition():
    spec = DatasetSpec(cases_male=1, cases_female=0, seed=3)
    instances = list(dataset_instances(spec))
    assert len(instances) == 46
    labels = [img.class_label for img, _ in instances]
    assert labels.count(23) == 1 and labels.count(22) == 1
    for cls in range(22):
        assert labels.count(cls) == 2


def test_dataset_identities_small():
    spec = DatasetSpec(cases_male=2, cases_female=3, seed=4)
    labels = [img.class_label for img, _ in dataset_instances(spec)]
    assert len(labels) == 46 * 5
    assert labels.count(22) == 2 * 3 + 2   # X = 2*female + male
    assert labels.count(23) == 2           # Y = male


def test_abnormal_fraction_exact_and_recorded():
    spec = DatasetSpec(cases_male=1, cases_female=1, seed=5,
                       abnormal_fraction=0.5)
    instances = list(dataset_instances(spec))
    mutated = [(img, gt) for img, gt in instances if gt.mutation is not None]
    assert len(mutated) == 46  # round(0.5 * 92)
    for img, gt in mutated:
        base = CLASS_PROGRAMS[img.class_label]
        assert gt.band_levels == mutate(base, gt.mutation).levels
        assert gt.band_levels != base.levels


def test_ground_truth_band_sequence_never_repeats_adjacent():
    spec = DatasetSpec(cases_male=1, cases_female=1, seed=6,
                       abnormal_fraction=0.3)
    for _, gt in dataset_instances(spec):
        assert all(a != b for a, b in zip(gt.band_levels, gt.band_levels[1:]))


def test_dataset_instances_deterministic_order():
    spec = DatasetSpec(cases_male=1, cases_female=1, seed=7,
                       noise=NoiseSpec(5.0, 0.05, 0.2))
    a = [(img.instance_id, gt.band_levels) for img, gt in dataset_instances(spec)]
    b = [(img.instance_id, gt.band_levels) for img, gt in dataset_instances(spec)]
    assert a == b


def test_generate_dataset_writes_loadable_manifest(tmp_path):
    spec = DatasetSpec(cases_male=1, cases_female=0, seed=8,
                       noise=NoiseSpec(8.0, 0.1, 0.25), abnormal_fraction=0.25)
    manifest_path = generate_dataset(spec, tmp_path)
    images = load_manifest(manifest_path)
    assert len(images) == 46
    assert all(img.mask.any() for img in images)
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    assert truth["seed"] == 8
    assert set(truth["instances"]) == {img.instance_id for img in images}
    n_mut = sum(1 for v in truth["instances"].values() if v["mutation"])
    assert n_mut == round(0.25 * 46)
    for v in truth["instances"].values():
        assert len(v["tips"]) == 2
