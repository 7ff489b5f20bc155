import numpy as np
import pytest

from lpdr.detection import Rect, count_peaks, iou, make_candidate, statistical_filter
from lpdr.errors import DataError, SpecError
from lpdr.imaging import binarize_otsu, column_pixel_vector, text_foreground
from lpdr.segmentation import segment_plate
from lpdr.synth.corpus import (char_corpus, check_spec_dict, document_corpus, load_char_corpus,
                               read_manifest, scene_corpus, scene_specs, split_indices,
                               write_char_corpus, write_scene_corpus)
from lpdr.synth.fonts import ALPHABET
from lpdr.synth.plates import PlateSpec, render_plate
from lpdr.synth.scenes import SCENE_SHAPE, draw_distractor, render_scene


def row_iou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]) + 1)
    return inter / ((a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter)


def blocks(vec):
    """Maximal runs of non-zero columns."""
    on = np.r_[0, (np.asarray(vec) > 0).astype(int), 0]
    return int((np.diff(on) == 1).sum())


def test_clean_plate_projection_has_one_block_per_character():
    img, truth = render_plate(PlateSpec("7F6709", border="none"), 0)
    b = text_foreground(binarize_otsu(img))
    assert blocks(column_pixel_vector(b)) == 6
    assert len(truth.char_spans) == 6
    assert all(l1 > r0 for (_, r0), (l1, _) in zip(truth.char_spans, truth.char_spans[1:]))


def test_renders_are_deterministic():
    spec = PlateSpec("AB12CD", rotation=3.0, noise=6.0, blur=0.7, border="fake")
    a, _ = render_plate(spec, 5)
    b, _ = render_plate(spec, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, render_plate(spec, 6)[0])
    s1, s2 = render_scene(spec, 2, seed=9), render_scene(spec, 2, seed=9)
    assert np.array_equal(s1.image, s2.image) and s1.rect == s2.rect


@pytest.mark.parametrize("frac", [0.08, 0.14, 0.2])
def test_fake_borders_are_trimmed_to_the_glyph_rows(frac):
    img, truth = render_plate(PlateSpec("K4M7PX", border="fake", fake_border_frac=frac), 0)
    assert row_iou(segment_plate(img).band, truth.glyph_rows) >= 0.9


def test_spec_validation():
    for bad in (dict(text="AB"), dict(text="ABCDEFGHI"), dict(text="ab12"), dict(text="AB1!"),
                dict(text="ABCD", font=99), dict(text="ABCD", border="dotted"),
                dict(text="ABCD", fake_border_frac=0.5), dict(text="ABCD", rotation=45)):
        with pytest.raises(SpecError):
            PlateSpec(**bad)
    with pytest.raises(SpecError):
        check_spec_dict({"text": "ABCD", "colour": 3})
    assert check_spec_dict(PlateSpec("ABCD").to_dict()) == PlateSpec("ABCD")


def test_oversized_plate_is_rejected():
    with pytest.raises(SpecError):
        render_scene(PlateSpec("ABCDEFGH", scale=4.0), 0, 0)
    with pytest.raises(SpecError):
        render_scene(PlateSpec("ABCD"), background=7)


def test_scene_truth_is_consistent():
    for sc in scene_corpus(12, seed=4):
        h, w = sc.image.shape
        assert (h, w) == SCENE_SHAPE
        assert 0 <= sc.rect.left and sc.rect.right < w and 0 <= sc.rect.top and sc.rect.bottom < h
        assert iou(sc.rect, sc.rect) == 1.0
        assert 5 <= len(sc.text) <= 8


def test_distractors_are_filtered_out():
    rng = np.random.default_rng(0)
    img = np.full(SCENE_SHAPE, 120.0)
    rects = [Rect(20, 20, 159, 59), Rect(200, 150, 379, 199), Rect(400, 300, 519, 339)]
    for r in rects:
        draw_distractor(img, rng, r)
    img = img.astype(np.uint8)
    cands = [make_candidate(img, r) for r in rects]
    assert all(count_peaks(c.pixel_vector) < 3 for c in cands)
    assert statistical_filter(cands, 3.0, 6) == []


def test_character_corpus_is_balanced():
    cs = char_corpus(360, seed=1)
    counts = cs.class_counts()
    assert len(cs) == 360 and counts.sum() == 360
    assert np.abs(counts - counts.mean()).max() <= 0.1 * counts.mean()
    assert cs.images.shape == (360, 32, 32) and cs.images.dtype == np.uint8


def test_document_corpus_is_balanced():
    docs = document_corpus(per_class=5, seed=2)
    assert (docs.class_counts() == 5).all()


def test_split_proportions_and_disjointness():
    labels = np.repeat(np.arange(36), 21)
    tr, va, te = split_indices(labels, seed=0)
    assert (len(tr), len(va), len(te)) == (36 * 15, 36 * 3, 36 * 3)
    assert len(set(tr) | set(va) | set(te)) == len(labels)
    assert np.array_equal(split_indices(labels, 0)[0], tr)


def test_scene_manifest_round_trip(tmp_path):
    specs = scene_specs(3, seed=1)
    scenes = [render_scene(s, bg, seed) for s, bg, seed in specs]
    man = write_scene_corpus(tmp_path, scenes, [s.to_dict() for s, _, _ in specs])
    recs = read_manifest(man)
    from lpdr.imagefile import read_image
    for rec, sc, (spec, _, _) in zip(recs, scenes, specs):
        assert rec["text"] == sc.text and rec["rect"] == sc.rect.as_dict()
        assert check_spec_dict(rec["spec"]) == spec
        assert np.array_equal(read_image(tmp_path / rec["path"]), sc.image)


def test_char_manifest_round_trip(tmp_path):
    cs = char_corpus(40, seed=3)
    split = split_indices(cs.labels, 0)
    back, parts = load_char_corpus(write_char_corpus(tmp_path, cs, split))
    assert np.array_equal(back.images, cs.images) and np.array_equal(back.labels, cs.labels)
    for name, idx in zip(("train", "val", "test"), split):
        assert np.array_equal(np.sort(parts.get(name, np.array([], int))), idx)


def test_bad_manifest_lines(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"path": "a.pgm"}\n')
    with pytest.raises(DataError):
        read_manifest(p)
    p.write_text("not json\n")
    with pytest.raises(DataError):
        read_manifest(p)


def test_alphabet_order():
    assert ALPHABET == "0123456789" + "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
