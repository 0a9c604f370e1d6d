import threading
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from src.data.dataset import (
    BatchPrefetcher,
    ImagePair,
    PairedDataset,
    PairLoader,
    Split,
    batch_indices,
    batches,
    split_dataset,
)
from src.data.image_io import (
    decode_image,
    denormalize,
    encode_png,
    load_image,
    normalize,
    pad_to_multiple,
    resize_bilinear,
    save_image,
    to_bytes,
)
from src.errors import ConfigError, DatasetError, DecodeError, ShapeError
from tests.factories import random_image, write_pair_dataset


class TestImageIO:
    def test_golden_ppm(self, fixtures_dir):
        img = load_image(fixtures_dir / "golden_4x4.ppm")
        index = np.arange(16).reshape(4, 4)
        expected = np.stack([16 * index, 255 - 16 * index, np.full((4, 4), 85)], axis=-1)
        assert img.shape == (4, 4, 3)
        assert img.dtype == np.float32
        np.testing.assert_array_equal(img, expected.astype(np.float32) / np.float32(255.0))

    @pytest.mark.parametrize("suffix", [".png", ".ppm"])
    def test_lossless_formats_are_exact(self, rng, tmp_path, suffix):
        img = random_image(rng, 7, 9)
        path = save_image(img, tmp_path / f"image{suffix}")
        np.testing.assert_array_equal(load_image(path), img)

    def test_png_bytes(self, rng):
        img = random_image(rng, 5, 6)
        np.testing.assert_array_equal(decode_image(encode_png(img)), img)

    def test_grayscale_png_expands_to_rgb(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.fromarray(np.full((3, 4), 128, dtype=np.uint8), mode="L").save(path)
        img = load_image(path)
        assert img.shape == (3, 4, 3)
        assert np.all(img == np.float32(128) / np.float32(255.0))

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "image.bmp"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path)
        with pytest.raises(DecodeError, match="BMP"):
            load_image(path)

    def test_truncated_file(self, rng, tmp_path):
        blob = encode_png(random_image(rng, 32, 32))
        path = tmp_path / "cut.png"
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(DecodeError) as info:
            load_image(path)
        assert info.value.path == str(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DecodeError, match="not found"):
            load_image(tmp_path / "absent.png")

    def test_garbage_bytes(self):
        with pytest.raises(DecodeError):
            decode_image(b"definitely not an image")

    def test_save_rejects_unknown_suffix(self, rng, tmp_path):
        with pytest.raises(ConfigError):
            save_image(random_image(rng, 2, 2), tmp_path / "image.jpg")

    def test_to_bytes_clamps_and_rounds(self):
        values = np.array([-1.0, 0.0, 0.6 / 255.0, 1.0, 2.0])
        assert to_bytes(values).tolist() == [0, 0, 1, 255, 255]


class TestTransforms:
    def test_resize_keeps_ramp_linear(self):
        ramp = np.repeat((np.arange(512) / 511.0)[:, None, None], 3, axis=2)
        ramp = np.repeat(ramp, 4, axis=1)
        out = resize_bilinear(ramp, 256, 4)
        np.testing.assert_allclose(out[:, 0, 0], np.arange(256) / 255.0, atol=1e-9)

    def test_resize_same_size_is_identity(self, rng):
        img = random_image(rng, 6, 6)
        assert resize_bilinear(img, 6, 6) is img

    def test_resize_keeps_dtype(self, rng):
        assert resize_bilinear(random_image(rng, 8, 8), 4, 4).dtype == np.float32

    def test_normalize_layout_and_range(self):
        img = np.zeros((2, 3, 3))
        img[..., 1] = 1.0
        arr = normalize(img)
        assert arr.shape == (3, 2, 3)
        assert np.all(arr[0] == -1.0) and np.all(arr[1] == 1.0)

    def test_denormalize_inverts_and_clamps(self, rng):
        img = random_image(rng, 4, 5).astype(np.float64)
        np.testing.assert_allclose(denormalize(normalize(img)), img, atol=1e-12)
        assert denormalize(np.full((3, 1, 1), 3.0)).max() == 1.0

    def test_pad_to_multiple_replicates_edges(self, rng):
        img = random_image(rng, 10, 14)
        padded = pad_to_multiple(img, 8)
        assert padded.shape == (16, 16, 3)
        np.testing.assert_array_equal(padded[:10, :14], img)
        np.testing.assert_array_equal(padded[15, :14], img[9])
        np.testing.assert_array_equal(padded[:10, 15], img[:, 13])
        assert pad_to_multiple(img[:8, :8], 8).shape == (8, 8, 3)


def fake_dataset(count: int) -> PairedDataset:
    root = Path("/nonexistent")
    pairs = [ImagePair(f"img_{i:05d}.png", root / "input", root / "gt") for i in range(count)]
    return PairedDataset(root=root, pairs=pairs)


class TestDiscovery:
    def test_pairs_by_filename(self, tmp_path):
        write_pair_dataset(tmp_path, 3, 8)
        (tmp_path / "input" / "notes.txt").write_text("ignored")
        save_image(np.zeros((8, 8, 3)), tmp_path / "input" / "orphan.png")
        ds = PairedDataset.discover(tmp_path)
        assert ds.names == ["pair_000.png", "pair_001.png", "pair_002.png"]
        assert ds.unmatched == ["orphan.png"]

    def test_missing_directory(self, tmp_path):
        (tmp_path / "input").mkdir()
        with pytest.raises(DatasetError, match="gt/"):
            PairedDataset.discover(tmp_path)


class TestSplit:
    def test_ten_pairs(self):
        ds = fake_dataset(10)
        train, test = split_dataset(ds, 0.8, seed=3)
        assert (len(train), len(test)) == (8, 2)
        assert sorted(train.names + test.names) == ds.names

    def test_large_dataset(self):
        train, test = split_dataset(fake_dataset(5000), 0.8, seed=0)
        assert (len(train), len(test)) == (4000, 1000)
        assert not set(train.names) & set(test.names)

    def test_deterministic_and_independent_of_listing_order(self):
        ds = fake_dataset(50)
        reversed_ds = PairedDataset(root=ds.root, pairs=list(reversed(ds.pairs)))
        assert split_dataset(ds, seed=7)[1].names == split_dataset(reversed_ds, seed=7)[1].names

    def test_growing_dataset_keeps_membership_stable(self):
        small_test = set(split_dataset(fake_dataset(100), seed=1)[1].names)
        large_test = set(split_dataset(fake_dataset(101), seed=1)[1].names)
        assert len(small_test ^ large_test) <= 2

    @pytest.mark.parametrize("ratio", [0.0, 1.0, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ConfigError):
            split_dataset(fake_dataset(4), ratio)

    def test_empty(self):
        with pytest.raises(DatasetError):
            split_dataset(fake_dataset(0))


class StubLoader:
    def load(self, pair):
        value = float(pair.name.split("_")[1].split(".")[0])
        return np.full((3, 2, 2), value), np.full((3, 2, 2), -value)


class TestBatching:
    def test_sizes_and_coverage(self):
        groups = batch_indices(10, 4, epoch_seed=5)
        assert [len(g) for g in groups] == [4, 4, 2]
        assert sorted(i for g in groups for i in g) == list(range(10))

    def test_epoch_seed_controls_order(self):
        assert batch_indices(10, 4, 5) == batch_indices(10, 4, 5)
        assert batch_indices(10, 4, 5) != batch_indices(10, 4, 6)

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            batch_indices(4, 0, 0)

    @pytest.mark.parametrize("prefetch_depth", [0, 2])
    def test_batches_from_loader(self, prefetch_depth):
        split = Split("train", fake_dataset(10).pairs)
        out = list(batches(split, 4, 5, StubLoader(), prefetch_depth=prefetch_depth, workers=2))
        assert [len(b) for b in out] == [4, 4, 2]
        first = out[0]
        assert first.inputs.shape == (4, 3, 2, 2)
        assert first.inputs.dtype == np.float32
        for row, name in enumerate(first.ids):
            assert first.inputs.data[row, 0, 0, 0] == float(name[4:9])
            assert first.targets.data[row, 0, 0, 0] == -float(name[4:9])


class TestPrefetcher:
    def test_order_is_preserved(self):
        with BatchPrefetcher(range(20), lambda i: i * i, depth=3, workers=4) as prefetcher:
            assert list(prefetcher) == [i * i for i in range(20)]

    def test_stays_bounded(self):
        started = []
        lock = threading.Lock()

        def build(item):
            with lock:
                started.append(item)
            return item

        with BatchPrefetcher(range(10), build, depth=2, workers=2) as prefetcher:
            stream = iter(prefetcher)
            assert next(stream) == 0
            assert prefetcher.queued <= 2
            with lock:
                assert len(started) <= 3

    def test_build_errors_surface(self):
        def build(item):
            if item == 2:
                raise ValueError("bad item")
            return item

        with BatchPrefetcher(range(4), build, depth=2) as prefetcher:
            with pytest.raises(ValueError, match="bad item"):
                list(prefetcher)

    def test_bad_depth(self):
        with pytest.raises(ConfigError):
            BatchPrefetcher([], lambda x: x, depth=0)


class TestPairLoader:
    def test_resizes_and_caches(self, tmp_path):
        ds = PairedDataset.discover(write_pair_dataset(tmp_path, 1, 16))
        loader = PairLoader(image_size=8, cache=True)
        degraded, target = loader.load(ds.pairs[0])
        assert degraded.shape == target.shape == (3, 8, 8)
        assert degraded.min() >= -1.0 and degraded.max() <= 1.0
        assert loader.load(ds.pairs[0])[0] is degraded

    def test_no_cache_by_default(self, tmp_path):
        ds = PairedDataset.discover(write_pair_dataset(tmp_path, 1, 8))
        loader = PairLoader(image_size=None)
        assert loader.load(ds.pairs[0])[0] is not loader.load(ds.pairs[0])[0]
        assert loader.cached_pairs == 0

    def test_size_mismatch(self, tmp_path):
        save_image(np.zeros((8, 8, 3)), tmp_path / "input" / "a.png")
        save_image(np.zeros((8, 6, 3)), tmp_path / "gt" / "a.png")
        pair = PairedDataset.discover(tmp_path).pairs[0]
        with pytest.raises(ShapeError):
            PairLoader(image_size=None).load(pair)
