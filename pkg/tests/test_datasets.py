import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirp import datasets as ds


def _mnist_or_skip(split):
    try:
        return ds.find_mnist(ds.data_dir(), split)
    except FileNotFoundError:
        pytest.skip("canonical MNIST files not available (set MIRP_DATA_DIR)")


def _idx_bytes(array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    head = struct.pack(">I", 0x800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + array.tobytes()


# --- IDX ------------------------------------------------------------------------

def test_canonical_mnist_headers():
    for split, n in (("train", 60000), ("test", 10000)):
        images, labels = _mnist_or_skip(split)
        raw = images.read_bytes()
        magic, count, rows, cols = struct.unpack(">4I", raw[:16])
        assert (magic, count, rows, cols) == (0x803, n, 28, 28)
        assert len(raw) == 16 + n * 784
        magic, count = struct.unpack(">2I", labels.read_bytes()[:8])
        assert (magic, count) == (0x801, n)


def test_canonical_mnist_loads():
    d = ds.load_mnist(*_mnist_or_skip("test"), split="test")
    assert d.x.shape == (10000, 1, 784)
    assert d.classes == 10 and set(np.unique(d.y)) == set(range(10))
    rms = np.sqrt(np.mean(d.x ** 2, axis=2))
    np.testing.assert_allclose(rms[~d.zero_records], 1.0, atol=1e-9)


def test_idx_round_trip_and_constant_image(tmp_path):
    imgs = np.full((3, 28, 28), 7, dtype=np.uint8)
    imgs[1] = 0
    ds.write_idx(tmp_path / "i", imgs)
    ds.write_idx(tmp_path / "l", np.array([1, 2, 3], dtype=np.uint8))
    d = ds.load_mnist(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(d.x[0], 1.0)
    assert d.zero_records.tolist() == [False, True, False]
    assert not d.x[1].any()


def test_idx_errors(tmp_path):
    with pytest.raises(ds.DatasetError, match="magic"):
        ds.parse_idx(_idx_bytes(np.zeros(4)), ds.IDX_IMAGES_MAGIC)
    ds.write_idx(tmp_path / "i", np.zeros((3, 2, 2)))
    ds.write_idx(tmp_path / "l", np.zeros(2))
    with pytest.raises(ds.DatasetError, match="labels"):
        ds.load_mnist(tmp_path / "i", tmp_path / "l")


def test_idx_rejects_every_truncation():
    buf = _idx_bytes(np.arange(2 * 3 * 4).reshape(2, 3, 4))
    for cut in range(len(buf)):
        with pytest.raises(ds.DatasetError):
            ds.parse_idx(buf[:cut], ds.IDX_IMAGES_MAGIC)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_idx_fuzz_never_crashes(blob):
    try:
        ds.parse_idx(blob, ds.IDX_IMAGES_MAGIC)
    except ds.DatasetError:
        pass


# --- HAR ------------------------------------------------------------------------

def _write_har(tmp_path, rows, labels):
    fp, lp = tmp_path / "X.txt", tmp_path / "y.txt"
    fp.write_text("\n".join(" ".join(f"{v:.7e}" for v in r) for r in rows) + "\n")
    lp.write_text("\n".join(str(v) for v in labels) + "\n")
    return fp, lp


def test_har_loader(tmp_path):
    rows = np.random.default_rng(0).uniform(-1, 1, (3, 561))
    rows[1] = 0.25
    d = ds.load_har(*_write_har(tmp_path, rows, [1, 6, 3]))
    assert d.x.shape == (3, 1, 561)
    assert d.y.tolist() == [0, 5, 2]
    np.testing.assert_allclose(d.x[1], 1.0)


def test_har_errors(tmp_path):
    with pytest.raises(ds.DatasetError, match="outside"):
        ds.load_har(*_write_har(tmp_path, np.zeros((1, 561)), [7]))
    with pytest.raises(ds.DatasetError, match="561"):
        ds.load_har(*_write_har(tmp_path, np.zeros((1, 560)), [1]))


def test_synth_har_shape_and_determinism():
    a, b = ds.synth_har(3, 10), ds.synth_har(3, 10)
    assert a.x.shape == (60, 1, 561) and a.classes == 6
    assert a.digest() == b.digest()
    assert ds.synth_har(4, 10).digest() != a.digest()
    np.testing.assert_allclose(np.sqrt(np.mean(a.x ** 2, axis=2)), 1.0, atol=1e-9)


# --- I/Q ------------------------------------------------------------------------

def test_iq_round_trip_bit_exact(tmp_path):
    frames = np.random.default_rng(1).standard_normal((5, 2, 64)).astype("<f4")
    ds.write_iq(tmp_path / "f.iq", frames, [0, 1, 2, 3, 0])
    assert (tmp_path / "f.iq").stat().st_size == 5 * 2 * 64 * 4
    back = ds.read_iq_frames(tmp_path / "f.iq", m=64)
    assert back.tobytes() == frames.tobytes()
    d = ds.load_iq(tmp_path / "f.iq", m=64)
    assert d.x.shape == (5, 2, 64) and d.y.tolist() == [0, 1, 2, 3, 0]


def test_iq_zero_frame_and_bad_length(tmp_path):
    ds.write_iq(tmp_path / "z.iq", np.zeros((1, 2, 32)))
    d = ds.load_iq(tmp_path / "z.iq", m=32)
    assert len(d) == 1 and not d.x.any() and d.zero_records[0]
    (tmp_path / "bad.iq").write_bytes(b"\0" * (2 * 32 * 4 + 4))
    with pytest.raises(ds.DatasetError, match="multiple"):
        ds.read_iq_frames(tmp_path / "bad.iq", m=32)


# --- synthetic RF modulation -------------------------------------------------

def test_synth_rfmod_shape_and_rms():
    d = ds.synth_rfmod(0, 3)
    assert d.x.shape == (12, 2, 2048) and d.classes == 4
    assert np.bincount(d.y).tolist() == [3, 3, 3, 3]
    np.testing.assert_allclose(np.sqrt(np.mean(d.x ** 2, axis=2)), 1.0, atol=1e-9)


def test_synth_rfmod_determinism():
    a, b = ds.synth_rfmod_frames(9, 2), ds.synth_rfmod_frames(9, 2)
    assert a[0].tobytes() == b[0].tobytes()
    assert ds.synth_rfmod(9, 2).digest() == ds.synth_rfmod(9, 2).digest()


def _frames_of(name, n=4, seed=0):
    frames, labels = ds.synth_rfmod_frames(seed, n)
    return frames[labels == ds.RFMOD_CLASSES.index(name)]


def test_usb_and_lsb_sidebands():
    for name, positive in (("usb", True), ("lsb", False)):
        for f in _frames_of(name):
            spec = np.abs(np.fft.fft(f)) ** 2
            freqs = np.fft.fftfreq(len(f))
            side = spec[freqs >= 0] if positive else spec[freqs <= 0]
            assert side.sum() / spec.sum() >= 0.95


def test_morse_envelope_is_two_valued():
    for f in _frames_of("morse"):
        env = np.abs(f)
        lo, hi = np.percentile(env, 10), np.percentile(env, 90)
        assert hi > 4 * lo
        mid = (env > lo + 0.3 * (hi - lo)) & (env < hi - 0.3 * (hi - lo))
        assert mid.mean() < 0.1


# --- splits ----------------------------------------------------------------------

def test_split_and_batch():
    d = ds.Dataset(np.zeros((100, 1, 4)), np.arange(100) % 5, 5)
    train, held, batches = ds.split_and_batch(d, 0.8, 16, seed=3)
    assert len(train) == 80 and len(held) == 20
    again = ds.split_and_batch(d, 0.8, 16, seed=3)[2]
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(batches, again))
    tr, te = ds.split_indices(100, 0.8, 3)
    assert not set(tr) & set(te)
    _, _, single = ds.split_and_batch(d, 0.8, 1000, seed=3)
    assert len(single) == 1 and len(single[0][1]) == 80
    with pytest.raises(ds.DatasetError):
        ds.split_indices(3, 0.1, 0)
    with pytest.raises(ds.DatasetError):
        ds.split_indices(10, 1.0, 0)


def test_stratified_indices():
    labels = np.repeat(np.arange(3), 10)
    first = ds.stratified_indices(labels, 4, seed=1)
    assert np.bincount(labels[first]).tolist() == [4, 4, 4]
    second = ds.stratified_indices(labels, 6, seed=2, exclude=first)
    assert not set(first) & set(second)
    with pytest.raises(ds.DatasetError):
        ds.stratified_indices(labels, 7, seed=2, exclude=first)


def test_dataset_validation():
    with pytest.raises(ds.DatasetError):
        ds.Dataset(np.zeros((2, 1, 3)), np.array([0, 5]), 3)
    with pytest.raises(ds.DatasetError):
        ds.Dataset(np.zeros((2, 3)), np.array([0, 1]), 3)
