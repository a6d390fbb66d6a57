import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from letnet.data import (
    LabelMap, Palette, SyntheticSpec, colorize, decode_pgm, decode_ppm, decolorize, encode_pgm, encode_ppm,
    load_camvid_dir, read_image, read_labels, synth_dataset, write_dataset_dir, write_image, write_labels,
)
from letnet.errors import ConfigError, DataError


def test_single_white_pixel(tmp_path):
    path = tmp_path / "w.ppm"
    path.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
    np.testing.assert_array_equal(read_image(path), np.ones((3, 1, 1), dtype=np.float32))


def test_hand_constructed_2x2_image():
    raw = b"P6 2 2 255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153])
    img = decode_ppm(raw)
    assert img.shape == (3, 2, 2) and img.dtype == np.float32
    np.testing.assert_array_equal(img[:, 0, 0], [1, 0, 0])
    np.testing.assert_array_equal(img[:, 0, 1], [0, 1, 0])
    np.testing.assert_array_equal(img[:, 1, 0], [0, 0, 1])
    np.testing.assert_allclose(img[:, 1, 1], [0.2, 0.4, 0.6], rtol=1e-7)


def test_header_comments_are_skipped():
    raw = b"P6\n# made by hand\n1 # width\n1\n255\n\x00\x80\xff"
    np.testing.assert_allclose(decode_ppm(raw)[:, 0, 0], [0, 128 / 255, 1])


@st.composite
def ppm_files(draw):
    h, w = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    return f"P6\n{w} {h}\n255\n".encode() + draw(st.binary(min_size=3 * h * w, max_size=3 * h * w))


@given(ppm_files())
def test_ppm_write_read_is_byte_exact(raw):
    assert encode_ppm(decode_ppm(raw)) == raw


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_pgm_write_read_is_byte_exact(h, w, data):
    raw = f"P5\n{w} {h}\n255\n".encode() + data.draw(st.binary(min_size=h * w, max_size=h * w))
    assert encode_pgm(decode_pgm(raw)) == raw


@pytest.mark.parametrize("raw,match", [
    (b"P3\n1 1\n255\n000", "bad magic"),
    (b"P6\n2 2\n255\n\x00\x00", "truncated payload"),
    (b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", "maxval 65535"),
    (b"P6\n1 x\n255\n", "integer header field at byte 5"),
    (b"P6\n0 1\n255\n", "non-positive"),
    (b"", "bad magic"),
])
def test_ppm_errors_are_positional(raw, match):
    with pytest.raises(DataError, match=match):
        decode_ppm(raw)


@settings(max_examples=300)
@given(st.binary(max_size=64))
def test_readers_never_crash_on_arbitrary_bytes(raw):
    for decoder in (decode_ppm, decode_pgm):
        try:
            decoder(raw)
        except DataError:
            pass


@settings(max_examples=200)
@given(st.binary(max_size=24))
def test_readers_never_crash_on_mangled_headers(tail):
    for prefix in (b"P6", b"P6\n", b"P6 3", b"P5\n2 2\n"):
        try:
            decode_ppm(prefix + tail)
            decode_pgm(prefix + tail)
        except DataError:
            pass


def test_labels_round_trip_and_all_ignore(tmp_path):
    labels = np.array([[0, 1, 2], [255, 2, 0]])
    write_labels(labels, tmp_path / "l.pgm")
    loaded = read_labels(tmp_path / "l.pgm", 3)
    np.testing.assert_array_equal(loaded.labels, labels)
    write_labels(np.full((2, 2), 255), tmp_path / "ign.pgm")
    assert (read_labels(tmp_path / "ign.pgm", 3).labels == 255).all()


def test_hand_constructed_label_file(tmp_path):
    (tmp_path / "h.pgm").write_bytes(b"P5\n3 1\n255\n\x00\x0a\xff")
    np.testing.assert_array_equal(read_labels(tmp_path / "h.pgm", 11).labels, [[0, 10, 255]])
    with pytest.raises(DataError, match=r"label 10 at \(y=0, x=1\)"):
        read_labels(tmp_path / "h.pgm", 10)


def test_label_map_invariants():
    assert LabelMap(np.zeros((2, 2)), 1).shape == (2, 2)
    with pytest.raises(DataError):
        LabelMap(np.zeros(4), 2)


def make_fixture(root, stems, drop_label=None):
    samples = synth_dataset(SyntheticSpec(seed=4, size=(8, 8)), len(stems))
    for s, stem in zip(samples, stems):
        s.stem = stem
    write_dataset_dir(root, {"train": samples})
    if drop_label:
        (root / "labels" / f"{drop_label}.pgm").unlink()
    return samples


def test_camvid_dir_in_list_order(tmp_path):
    samples = make_fixture(tmp_path, ["c", "a", "b"])
    ds = load_camvid_dir(tmp_path, num_classes=3)
    assert ds.counts() == {"train": 3}
    assert [s.stem for s in ds.splits["train"]] == ["c", "a", "b"]
    for got, want in zip(ds.splits["train"], samples):
        np.testing.assert_array_equal(got.labels, want.labels)
        np.testing.assert_allclose(got.image, want.image, atol=0.5 / 255)


def test_camvid_missing_label_names_stem(tmp_path):
    make_fixture(tmp_path, ["x1", "x2", "x3"], drop_label="x2")
    with pytest.raises(DataError, match="'x2'"):
        load_camvid_dir(tmp_path, num_classes=3)


def test_camvid_empty_dir_warns(tmp_path):
    with pytest.warns(RuntimeWarning, match="no samples"):
        ds = load_camvid_dir(tmp_path)
    assert len(ds) == 0


def test_camvid_malformed_split_and_missing_root(tmp_path):
    (tmp_path / "train.txt").write_text("ok\nbad stem\n")
    with pytest.raises(DataError, match="train.txt:2"):
        load_camvid_dir(tmp_path)
    with pytest.raises(ConfigError):
        load_camvid_dir(tmp_path / "nope")


def test_camvid_normalisation(tmp_path):
    make_fixture(tmp_path, ["a"])
    plain = load_camvid_dir(tmp_path, 3).splits["train"][0].image
    normed = load_camvid_dir(tmp_path, 3, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25)).splits["train"][0].image
    np.testing.assert_allclose(normed, (plain - 0.5) / 0.25, rtol=1e-6)


# -- synthetic data ---------------------------------------------------------------------


def test_density_zero_is_background():
    for s in synth_dataset(SyntheticSpec(seed=1, density=0.0), 5):
        assert not s.labels.any() and s.shapes == []


def test_synthetic_is_bit_deterministic():
    a, b = (synth_dataset(SyntheticSpec(seed=7), 4) for _ in range(2))
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes() and x.labels.tobytes() == y.labels.tobytes()
    c = synth_dataset(SyntheticSpec(seed=8), 1)[0]
    assert c.image.tobytes() != a[0].image.tobytes()


def paint_from_geometry(shapes, h, w):
    out = np.zeros((h, w), dtype=np.int64)
    for shape in shapes:
        for y in range(h):
            for x in range(w):
                if shape[0] == "rect":
                    _, cls, top, left, bottom, right = shape
                    inside = top <= y < bottom and left <= x < right
                else:
                    _, cls, cy, cx, r = shape
                    inside = (y - cy) ** 2 + (x - cx) ** 2 <= r * r
                if inside:
                    out[y, x] = cls
    return out


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_class_histogram_matches_geometry_recount(seed, k):
    spec = SyntheticSpec(seed=seed, size=(24, 20), num_classes=k, density=4.0)
    for s in synth_dataset(spec, 2):
        recount = paint_from_geometry(s.shapes, 24, 20)
        np.testing.assert_array_equal(np.bincount(s.labels.ravel(), minlength=k),
                                      np.bincount(recount.ravel(), minlength=k))
        np.testing.assert_array_equal(s.labels, recount)
        assert s.image.min() >= 0 and s.image.max() <= 1


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(num_classes=0)
    with pytest.raises(ConfigError):
        SyntheticSpec(density=-1)


# -- palettes -----------------------------------------------------------------------------


def test_colorize_single_class_and_ignore():
    pal = Palette([(10, 20, 30), (0, 255, 0)], ignore_color=(1, 2, 3))
    solid = colorize(np.ones((2, 3), dtype=int), pal)
    np.testing.assert_allclose(solid[:, 0, 0], [0, 1, 0])
    assert (solid == solid[:, :1, :1]).all()
    ign = colorize(LabelMap(np.full((1, 2), 255), 2), pal)
    np.testing.assert_allclose(ign[:, 0, 1], np.array([1, 2, 3]) / 255, rtol=1e-6)


@given(st.integers(0, 2**31))
def test_colorize_matches_lookup_and_inverts(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 19))
    pal = Palette.default(k)
    labels = rng.integers(0, k, (5, 6))
    labels[rng.random(labels.shape) < 0.1] = 255
    img = colorize(labels, pal)
    for y in range(5):
        for x in range(6):
            want = pal.ignore_color if labels[y, x] == 255 else pal.colors[labels[y, x]]
            np.testing.assert_allclose(img[:, y, x] * 255, want, atol=1e-4)
    np.testing.assert_array_equal(decolorize(img, pal), labels)


def test_palette_errors():
    with pytest.raises(ConfigError, match="unique"):
        Palette([(1, 1, 1), (1, 1, 1)])
    with pytest.raises(ConfigError, match="class 2"):
        colorize(np.array([[2]]), Palette([(0, 0, 9), (9, 0, 0)]))
    assert len(set(Palette.default(40).colors)) == 40


def test_write_image_round_trip(tmp_path):
    img = synth_dataset(SyntheticSpec(seed=2, size=(8, 8)), 1)[0].image
    write_image(img, tmp_path / "a.ppm")
    once = read_image(tmp_path / "a.ppm")
    write_image(once, tmp_path / "b.ppm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
