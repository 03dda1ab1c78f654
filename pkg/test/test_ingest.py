# -*- coding: utf-8 -*-

import json

import numpy as np
import pytest
import torch

from satsynth.exceptions import (
    ArgumentError,
    InvalidClassIndex,
    InvalidTile,
    ShapeMismatch,
    TileNotFound,
    UnsupportedChannelCount,
)
from satsynth.ingest import (
    ClassMask,
    PatchDataset,
    PatchSpec,
    RasterTile,
    TileReader,
    Window,
    grid_windows,
    load_tile,
    normalize_raw,
    one_hot,
    one_hot_planes,
    quantize,
    sample_patches,
    sample_windows,
    write_tile,
)

from .utils import random_tile, write_tiles


class TestClassMask:

    def test_valid(self):
        mask = ClassMask(np.array([[0, 1], [2, 3]]), 4)
        assert mask.shape == (2, 2)
        assert mask.classes.dtype == np.int64

    def test_out_of_range(self):
        with pytest.raises(InvalidClassIndex) as exc:
            ClassMask(np.array([[0, 4]]), 4)
        assert exc.value.value == 4
        with pytest.raises(InvalidClassIndex):
            ClassMask(np.array([[-1, 0]]), 4)

    def test_not_integer(self):
        with pytest.raises(InvalidTile):
            ClassMask(np.zeros((2, 2), dtype=np.float32), 4)

    def test_one_hot(self):
        mask = ClassMask(np.array([[0, 2], [2, 1]]), 3)
        planes = one_hot(mask)
        assert planes.shape == (3, 2, 2)
        assert planes.dtype == np.float32
        np.testing.assert_array_equal(planes.sum(axis=0), np.ones((2, 2)))
        np.testing.assert_array_equal(planes[2], [[0, 1], [1, 0]])
        assert ClassMask.from_one_hot(planes) == mask

    def test_one_hot_planes(self):
        classes = torch.tensor([[[0, 1], [3, 3]]])
        planes = one_hot_planes(classes, 4)
        assert planes.shape == (1, 4, 2, 2)
        assert planes.dtype == torch.float32
        assert planes[0, 3].tolist() == [[0.0, 0.0], [1.0, 1.0]]
        with pytest.raises(InvalidClassIndex):
            one_hot_planes(classes, 3)


class TestRasterTile:

    def test_defaults(self):
        tile = random_tile('a', channels=4)
        assert tile.channel_names == ['R', 'G', 'B', 'NIR']
        assert (tile.height, tile.width, tile.num_classes) == (16, 16, 4)

    def test_channels(self):
        mask = ClassMask(np.zeros((4, 4), dtype=np.int64), 2)
        with pytest.raises(UnsupportedChannelCount):
            RasterTile('a', np.zeros((2, 4, 4)), mask)

    def test_shape_mismatch(self):
        mask = ClassMask(np.zeros((4, 5), dtype=np.int64), 2)
        with pytest.raises(ShapeMismatch):
            RasterTile('a', np.zeros((3, 4, 4)), mask)

    def test_range(self):
        mask = ClassMask(np.zeros((4, 4), dtype=np.int64), 2)
        with pytest.raises(InvalidTile):
            RasterTile('a', np.full((3, 4, 4), 1.5), mask)

    def test_split(self):
        mask = ClassMask(np.zeros((4, 4), dtype=np.int64), 2)
        with pytest.raises(InvalidTile):
            RasterTile('a', np.zeros((3, 4, 4)), mask, split='holdout')


class TestQuantize:

    @pytest.mark.parametrize("dtype,scale", [('uint8', 255), ('uint16', 65535)])
    def test_endpoints(self, dtype, scale):
        raw = quantize(np.array([-1.0, 0.0, 1.0]), dtype)
        assert raw[0] == 0
        assert raw[-1] == scale
        np.testing.assert_allclose(normalize_raw(raw, dtype), [-1.0, 0.0, 1.0],
                                   atol=2.0 / scale)

    def test_float32_is_identity(self):
        image = np.array([-0.25, 0.5], dtype=np.float32)
        np.testing.assert_array_equal(normalize_raw(quantize(image, 'float32'), 'float32'),
                                      image)


class TestTileContainer:

    def test_round_trip(self, tmp_path):
        tile = random_tile('m_0001', channels=4, seed=3)
        write_tile(tile, tmp_path / 'm_0001')
        loaded = load_tile(tmp_path / 'm_0001')
        assert loaded.tile_id == 'm_0001'
        np.testing.assert_array_equal(loaded.image, tile.image)
        assert loaded.mask == tile.mask
        assert loaded.channel_names == tile.channel_names

    def test_uint8_container(self, tmp_path):
        tile = random_tile('a', seed=4)
        write_tile(tile, tmp_path / 'a', dtype='uint8')
        assert (tmp_path / 'a' / 'image.bin').stat().st_size == 3 * 16 * 16
        loaded = load_tile(tmp_path / 'a')
        np.testing.assert_allclose(loaded.image, tile.image, atol=2.0 / 255)

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(ArgumentError):
            write_tile(random_tile('a'), tmp_path / 'a', dtype='float64')

    def test_missing(self, tmp_path):
        with pytest.raises(TileNotFound):
            load_tile(tmp_path / 'nothing')

    def test_missing_meta(self, tmp_path):
        (tmp_path / 'a').mkdir()
        with pytest.raises(TileNotFound):
            load_tile(tmp_path / 'a')

    def test_truncated_image(self, tmp_path):
        write_tile(random_tile('a'), tmp_path / 'a')
        path = tmp_path / 'a' / 'image.bin'
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(InvalidTile):
            load_tile(tmp_path / 'a')

    def test_bad_class_on_disk(self, tmp_path):
        write_tile(random_tile('a'), tmp_path / 'a')
        meta_path = tmp_path / 'a' / 'meta.json'
        meta = json.loads(meta_path.read_text())
        meta['num_classes'] = 2
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(InvalidClassIndex):
            load_tile(tmp_path / 'a')

    def test_mask_source(self, tmp_path):
        real = random_tile('a', seed=5)
        write_tile(real, tmp_path / 'real' / 'a')
        fake = RasterTile('a', np.zeros((3, 16, 16), dtype=np.float32), real.mask)
        write_tile(fake, tmp_path / 'fake' / 'a', mask_source=tmp_path / 'real' / 'a')
        assert not (tmp_path / 'fake' / 'a' / 'mask.bin').exists()
        meta = json.loads((tmp_path / 'fake' / 'a' / 'meta.json').read_text())
        assert meta['mask_source'] == '../../real/a'
        loaded = load_tile(tmp_path / 'fake' / 'a')
        assert loaded.mask == real.mask
        assert not loaded.image.any()

    def test_reader_windows(self, tmp_path):
        tile = random_tile('a', channels=4, seed=6)
        write_tile(tile, tmp_path / 'a')
        reader = TileReader(tmp_path / 'a')
        image, classes = reader.read_window(Window(2, 3, 8), channels=3)
        np.testing.assert_array_equal(image, tile.image[:3, 2:10, 3:11])
        np.testing.assert_array_equal(classes, tile.mask.classes[2:10, 3:11])
        np.testing.assert_array_equal(reader.read_mask(), tile.mask.classes)
        with pytest.raises(ArgumentError):
            reader.read_window(Window(10, 0, 8))


class TestWindows:

    def test_sample_windows(self):
        spec = PatchSpec(size=8, per_tile_count=50, seed=3)
        windows = sample_windows(20, 12, spec)
        assert len(windows) == 50
        assert windows == sample_windows(20, 12, spec)
        for r, c, s in windows:
            assert s == 8
            assert 0 <= r <= 12 and 0 <= c <= 4

    def test_too_large(self):
        with pytest.raises(ArgumentError):
            sample_windows(8, 8, PatchSpec(size=16))
        with pytest.raises(ArgumentError):
            grid_windows(8, 8, 16)

    def test_grid_windows(self):
        assert grid_windows(10, 8, 4) == [Window(0, 0, 4), Window(0, 4, 4),
                                          Window(4, 0, 4), Window(4, 4, 4)]

    def test_sample_patches(self):
        tile = random_tile('a', seed=1)
        patches = sample_patches(tile, PatchSpec(size=4, per_tile_count=3, seed=0))
        assert len(patches) == 3
        for image, classes in patches:
            assert image.shape == (3, 4, 4)
            assert classes.shape == (4, 4)


class TestPatchDataset:

    def test_items(self, tmp_path):
        manifest = write_tiles(tmp_path, 3, channels=4)
        dataset = PatchDataset(manifest, PatchSpec(size=8, per_tile_count=5), channels=3)
        assert len(dataset) == 15
        assert dataset.num_classes == 4
        item = dataset[7]
        assert item['image'].shape == (3, 8, 8)
        assert item['mask'].shape == (8, 8)
        assert item['mask'].dtype == torch.int64
        assert item['index'] == 7
        assert dataset.describe(7)[0] == 't001'

    def test_grid(self, tmp_path):
        manifest = write_tiles(tmp_path, 2)
        dataset = PatchDataset(manifest, PatchSpec(size=8, per_tile_count=0), grid=True)
        assert len(dataset) == 8

    def test_windows_do_not_depend_on_record_order(self, tmp_path):
        manifest = write_tiles(tmp_path, 3)
        spec = PatchSpec(size=8, per_tile_count=4, seed=9)
        forward = PatchDataset(manifest, spec)
        backward = PatchDataset(manifest.with_records(reversed(manifest.records)), spec)
        assert forward.windows[:4] == [(0, w) for _, w in backward.windows[8:]]

    def test_too_few_channels(self, tmp_path):
        manifest = write_tiles(tmp_path, 1, channels=3)
        with pytest.raises(UnsupportedChannelCount):
            PatchDataset(manifest, PatchSpec(size=8, per_tile_count=1), channels=4)
