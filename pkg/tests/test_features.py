import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter1d

from lpdr.errors import InsufficientData, ModelError
from lpdr.features import sift
from lpdr.features.bow import (Codebook, assign, bow_matrix, bow_vector, build_codebook, kmeans)


def blob_image(size=65, cx=32.0, cy=32.0, sigma=4.0):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))


def shapes_image():
    img = np.zeros((65, 65))
    img[20:45, 15:30] = 1.0
    img[30:50, 35:55] = 0.6
    img[8:14, 40:58] = 0.8
    return sift.blur(img, 1.0)


# --- scale space -----------------------------------------------------------

@pytest.mark.parametrize("sigma", [0.6, 1.6, 3.1, 9.0])
def test_blur_matches_scipy_mirror_filter(rng, sigma):
    a = rng.random((2, 21, 13))
    ref = gaussian_filter1d(gaussian_filter1d(a, sigma, axis=-1, mode="mirror"), sigma, axis=-2,
                            mode="mirror")
    np.testing.assert_allclose(sift.blur(a, sigma), ref, atol=1e-12)


def test_polar_gradients_match_central_differences(rng):
    a = rng.random((9, 11))
    mag, ang = sift.polar_gradients(a)
    dx = a[1:-1, 2:] - a[1:-1, :-2]
    dy = a[2:, 1:-1] - a[:-2, 1:-1]
    np.testing.assert_allclose(mag[1:-1, 1:-1], np.hypot(dx, dy), atol=1e-12)
    np.testing.assert_allclose(ang[1:-1, 1:-1], np.degrees(np.arctan2(dy, dx)) % 360, atol=1e-9)
    assert not mag[0].any() and not mag[:, -1].any()


def test_pyramid_octaves_halve():
    pyr = sift.gaussian_pyramid(np.zeros((1, 64, 48)))
    assert [p.shape for p in pyr] == [(1, 6, 64, 48), (1, 6, 32, 24), (1, 6, 16, 12)]


# --- keypoints and descriptors ---------------------------------------------

def test_constant_image_has_no_keypoints():
    assert sift.sift_descriptors(np.full((64, 64), 0.5)) == []


def test_tiny_image_gives_nothing():
    assert sift.sift_descriptors(np.ones((15, 40))) == []


@pytest.mark.parametrize("cx,cy", [(32.0, 32.0), (28.0, 35.0)])
def test_blob_keypoint_at_centre(cx, cy):
    kps = [k for k, _ in sift.sift_descriptors(blob_image(cx=cx, cy=cy))]
    assert kps
    assert min(np.hypot(k.x - cx, k.y - cy) for k in kps) <= 2.0


def test_descriptors_are_unit_length():
    pairs = sift.sift_descriptors(shapes_image())
    assert pairs
    for _, d in pairs:
        assert d.shape == (128,) and (d >= 0).all()
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_normalize_clip_matches_numpy(seed, clip):
    v = np.random.default_rng(seed).exponential(size=128) ** 3
    u = v / np.linalg.norm(v)
    u = np.minimum(u, clip)
    want = u / np.linalg.norm(u)
    np.testing.assert_allclose(sift._normalize_clip(v.copy(), clip), want, rtol=1e-12, atol=1e-15)


def test_normalize_clip_zero_vector():
    assert not sift._normalize_clip(np.zeros(128), 0.2).any()


def test_quarter_turn_permutes_keypoints_and_preserves_descriptors():
    img = shapes_image()
    a = sift.sift_descriptors(img)
    b = sift.sift_descriptors(np.rot90(img).copy())
    assert len(a) == len(b) > 0
    n = img.shape[1] - 1
    for ka, da in a:
        # np.rot90 sends (x, y) to (y, n - x)
        dists = [np.hypot(kb.x - ka.y, kb.y - (n - ka.x)) + np.linalg.norm(db - da) for kb, db in b]
        j = int(np.argmin(dists))
        kb, db = b[j]
        assert np.hypot(kb.x - ka.y, kb.y - (n - ka.x)) < 1e-6
        assert np.linalg.norm(db - da) < 0.15


def test_batch_equals_single_image_calls():
    imgs = np.stack([shapes_image(), blob_image(), np.rot90(shapes_image())])
    batch = sift.sift_batch(imgs)
    for img, (kps, d) in zip(imgs, batch):
        single = sift.sift_descriptors(img)
        assert kps == [k for k, _ in single]
        np.testing.assert_array_equal(d, np.array([v for _, v in single]).reshape(-1, 128))


def test_dense_fallback_when_keypoints_are_scarce():
    img = np.zeros((32, 32), np.uint8)
    img[8:24, 14:18] = 255
    n_kp = len(sift.sift_descriptors(img))
    d = sift.char_descriptors(img)
    if n_kp < sift.DENSE_MIN_KEYPOINTS:
        assert d.shape == (16, 128)
        np.testing.assert_array_equal(d, sift.dense_descriptors(img))
    else:
        assert d.shape == (n_kp, 128)


def test_dense_descriptors_have_fixed_layout():
    d = sift.dense_descriptors(np.zeros((32, 32), np.uint8))
    assert d.shape == (16, 128) and not d.any()
    assert sift.dense_centers((32, 32)).tolist()[:2] == [[4, 4], [12, 4]]


# --- codebook --------------------------------------------------------------

def test_kmeans_recovers_separated_blobs(rng):
    k = 6
    means = rng.random((k, 128)) * 4
    x = np.concatenate([m + rng.normal(0, 0.01, (60, 128)) for m in means])
    cb = build_codebook(x, k=k, seed=3)
    for m in means:
        assert np.abs(cb.centers - m).max(axis=1).min() < 0.05


def test_duplicated_points_become_the_centres(rng):
    pts = rng.random((5, 128))
    x = np.repeat(pts, 4, axis=0)
    cb = build_codebook(x, k=5, seed=0)
    got = sorted(map(tuple, cb.centers.astype(np.float32)))
    want = sorted(map(tuple, pts.astype(np.float32)))
    np.testing.assert_array_equal(np.array(got), np.array(want))


def test_codebook_is_deterministic(rng):
    x = rng.random((300, 128))
    a, b = build_codebook(x, 16, seed=5), build_codebook(x, 16, seed=5)
    assert a.centers.tobytes() == b.centers.tobytes()
    assert build_codebook(x, 16, seed=6).centers.tobytes() != a.centers.tobytes()


def test_too_few_descriptors():
    with pytest.raises(InsufficientData):
        build_codebook(np.zeros((10, 128)), k=256)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_kmeans_objective_never_increases(seed, k):
    x = np.random.default_rng(seed).normal(size=(80, 8))
    _, _, hist = kmeans(x, k, seed)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))


def test_empty_cluster_is_reseeded():
    # two far groups and k=3 seeded so that one centre ends up with no points
    x = np.array([[0.0], [0.0], [0.0], [10.0], [10.0], [10.5]])
    c, labels, _ = kmeans(x, 3, seed=0)
    assert len(set(labels.tolist())) == 3
    assert not np.isnan(c).any()


def test_codebook_round_trip(rng):
    cb = build_codebook(rng.random((40, 128)), 8, seed=9)
    back = Codebook.from_bytes(cb.to_bytes())
    assert back.seed == 9 and back.centers.tobytes() == cb.centers.tobytes()
    with pytest.raises(ModelError):
        Codebook.from_bytes(b"XXXX" + cb.to_bytes()[4:])
    with pytest.raises(ModelError):
        Codebook.from_bytes(cb.to_bytes()[:-4])


# --- bag of words ----------------------------------------------------------

@pytest.fixture
def codebook(rng):
    return Codebook(rng.random((256, 128)).astype(np.float32), 0)


def test_bow_empty_is_zero(codebook):
    v = bow_vector(np.zeros((0, 128)), codebook)
    assert v.shape == (256,) and not v.any()


def test_bow_identical_descriptors_one_hot(codebook):
    v = bow_vector(np.repeat(codebook.centers[17:18].astype(float), 7, axis=0), codebook)
    assert v[17] == 1.0 and v.sum() == 1.0


def test_bow_matches_exhaustive_assignment(rng, codebook):
    d = rng.random((50, 128))
    hist = np.zeros(256)
    for row in d:
        dists = [float(((row - c.astype(float)) ** 2).sum()) for c in codebook.centers]
        hist[int(np.argmin(dists))] += 1
    np.testing.assert_allclose(bow_vector(d, codebook), hist / np.linalg.norm(hist), atol=1e-12)


def test_ties_go_to_lowest_index():
    cb = Codebook(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], np.float32), 0)
    assert assign(np.array([[0.5, 0.5], [2.0, 0.0]]), cb.centers).tolist() == [0, 0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_bow_norm_and_permutation_invariance(seed, n):
    r = np.random.default_rng(seed)
    cb = Codebook(r.random((256, 128)).astype(np.float32), 0)
    d = r.random((n, 128))
    v = bow_vector(d, cb)
    assert abs(np.linalg.norm(v) - 1) < 1e-6 and (v >= 0).all()
    np.testing.assert_array_equal(v, bow_vector(d[r.permutation(n)], cb))


def test_bow_matrix_matches_per_set(rng, codebook):
    sets = [rng.random((k, 128)) for k in (3, 0, 11)]
    m = bow_matrix(sets, codebook)
    for row, s in zip(m, sets):
        np.testing.assert_allclose(row, bow_vector(s, codebook), atol=1e-12)
