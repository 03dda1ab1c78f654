"""
Tile containers, class masks and patch sampling.

A tile container is a directory holding::

    image.bin    channel-major raw raster (C x H x W), little-endian
    mask.bin     per-pixel class indices (H x W), little-endian
    meta.json    dtype, shape, mask_dtype, mask_shape, channel_names,
                 num_classes, class_names, palette, split, tile_id

Synthetic containers omit ``mask.bin`` and point at the container whose mask
they were generated from with ``mask_source`` (a path relative to themselves).

Raw ``uint8``/``uint16`` values are mapped linearly onto [-1, 1] when read;
``float32`` rasters are stored already normalised and read back unchanged.
"""
import json
import logging
import os
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import Dataset

from satsynth.config import ConfigNode
from satsynth.exceptions import (
    ArgumentError,
    InvalidClassIndex,
    InvalidTile,
    ShapeMismatch,
    TileNotFound,
    UnsupportedChannelCount,
)
from satsynth.fields import IntegerField
from satsynth.utils import derive_seed


log = logging.getLogger(__name__)

FORMAT_VERSION = 1

IMAGE_FILE = 'image.bin'
MASK_FILE = 'mask.bin'
META_FILE = 'meta.json'

# on-disk byte layouts; everything is little-endian
IMAGE_DTYPES = {'uint8': '|u1', 'uint16': '<u2', 'float32': '<f4'}
MASK_DTYPES = {'uint8': '|u1', 'uint16': '<u2'}
RAW_SCALE = {'uint8': 255.0, 'uint16': 65535.0}

SPLITS = ('train', 'val', 'test')
SUPPORTED_CHANNELS = (3, 4)
DEFAULT_CHANNEL_NAMES = {3: ['R', 'G', 'B'], 4: ['R', 'G', 'B', 'NIR']}

Window = namedtuple('Window', 'row col size')


class PatchSpec(ConfigNode):
    size = IntegerField('size', default=256, minimum=1,
                        doc='side length of square training patches')
    per_tile_count = IntegerField('per_tile_count', default=200, minimum=0,
                                  doc='patches drawn from every tile')
    seed = IntegerField('seed', default=0)

    class Meta:
        human_readable_name = 'patch'


@dataclass(eq=False)
class ClassMask:
    """Per-pixel class indices in [0, num_classes)."""

    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        classes = np.asarray(self.classes)
        if classes.ndim != 2:
            raise ShapeMismatch('class mask', ('H', 'W'), classes.shape)
        if not np.issubdtype(classes.dtype, np.integer):
            raise InvalidTile('<mask>', 'class indices must be integers, got %s'
                              % classes.dtype)
        if classes.size:
            lo, hi = int(classes.min()), int(classes.max())
            if lo < 0:
                raise InvalidClassIndex(lo, self.num_classes)
            if hi >= self.num_classes:
                raise InvalidClassIndex(hi, self.num_classes)
        self.classes = classes.astype(np.int64, copy=False)

    def __eq__(self, other):
        if not isinstance(other, ClassMask):
            return False
        return (self.num_classes == other.num_classes
                and np.array_equal(self.classes, other.classes))

    @property
    def shape(self):
        return self.classes.shape

    def one_hot(self):
        return one_hot(self)

    @classmethod
    def from_one_hot(cls, planes):
        """Inverse of :func:`one_hot` (argmax over the class axis)."""
        planes = np.asarray(planes)
        return cls(np.argmax(planes, axis=0), planes.shape[0])


@dataclass(eq=False)
class RasterTile:
    """A normalised multi-channel raster and its aligned class mask."""

    tile_id: str
    image: np.ndarray
    mask: ClassMask
    channel_names: List[str] = field(default_factory=list)
    split: str = 'train'
    class_names: Optional[List[str]] = None
    palette: Optional[List[List[int]]] = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 3:
            raise ShapeMismatch('image', ('C', 'H', 'W'), self.image.shape)
        channels = self.image.shape[0]
        if channels not in SUPPORTED_CHANNELS:
            raise UnsupportedChannelCount(channels)
        if not self.channel_names:
            self.channel_names = list(DEFAULT_CHANNEL_NAMES[channels])
        if len(self.channel_names) != channels:
            raise InvalidTile(self.tile_id, '%d channel names for %d channels'
                              % (len(self.channel_names), channels))
        if self.image.shape[1:] != self.mask.shape:
            raise ShapeMismatch('image vs mask of %s' % self.tile_id,
                                self.image.shape[1:], self.mask.shape)
        if self.split not in SPLITS:
            raise InvalidTile(self.tile_id, 'unknown split %r' % self.split)
        if self.image.size and not (np.isfinite(self.image).all()
                                    and np.abs(self.image).max() <= 1.0):
            raise InvalidTile(self.tile_id, 'image values must lie in [-1, 1]')

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]

    @property
    def num_classes(self):
        return self.mask.num_classes


def one_hot(mask):
    """Return float32 planes (num_classes x H x W); plane c is 1 where mask == c."""
    classes = mask.classes
    labels = np.arange(mask.num_classes).reshape(-1, 1, 1)
    return (classes[np.newaxis] == labels).astype(np.float32)


def one_hot_planes(classes, num_classes):
    """Batched torch version of :func:`one_hot`: (N, H, W) -> (N, K, H, W)."""
    classes = classes.long()
    if classes.numel():
        lo, hi = int(classes.min()), int(classes.max())
        if lo < 0 or hi >= num_classes:
            raise InvalidClassIndex(hi if hi >= num_classes else lo, num_classes)
    return F.one_hot(classes, num_classes).permute(0, 3, 1, 2).float()


def normalize_raw(raw, dtype):
    """Map raw channel values onto [-1, 1]."""
    if dtype == 'float32':
        return np.array(raw, dtype=np.float32)
    scale = RAW_SCALE[dtype]
    out = np.asarray(raw, dtype=np.float32) * np.float32(2.0 / scale) - np.float32(1.0)
    return np.clip(out, -1.0, 1.0)


def quantize(image, dtype):
    """Inverse of :func:`normalize_raw` for the integer dtypes."""
    if dtype == 'float32':
        return np.asarray(image, dtype=np.float32)
    scale = RAW_SCALE[dtype]
    raw = np.round((np.asarray(image, dtype=np.float64) + 1.0) * (scale / 2.0))
    return np.clip(raw, 0, scale).astype(np.dtype(IMAGE_DTYPES[dtype]))


def _read_meta(directory):
    path = Path(directory) / META_FILE
    if not path.is_file():
        raise TileNotFound(str(path))
    try:
        with open(path, encoding='utf-8') as f:
            meta = json.load(f)
    except (OSError, ValueError) as e:
        raise InvalidTile(str(directory), 'unreadable %s: %s' % (META_FILE, e))
    for key in ('dtype', 'shape'):
        if key not in meta:
            raise InvalidTile(str(directory), 'meta.json lacks %r' % key)
    return meta


def _check_size(path, shape, dtype, uri):
    if not path.is_file():
        raise TileNotFound(str(path))
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise InvalidTile(uri, '%s holds %d bytes, expected %d for shape %s'
                          % (path.name, actual, expected, list(shape)))


class TileReader(object):
    """
    Memory-mapped access to one tile container.

    Only the windows that are asked for are read, which keeps full-size tiles
    out of memory while patch datasets iterate over them.
    """

    def __init__(self, uri, mask_uri=None):
        self.uri = str(uri)
        directory = Path(uri)
        if not directory.is_dir():
            raise TileNotFound(self.uri)
        self.meta = meta = _read_meta(directory)

        self.dtype = meta['dtype']
        if self.dtype not in IMAGE_DTYPES:
            raise InvalidTile(self.uri, 'unsupported dtype %r' % self.dtype)
        shape = tuple(int(s) for s in meta['shape'])
        if len(shape) != 3:
            raise InvalidTile(self.uri, 'shape must be [C, H, W], got %s' % list(shape))
        if shape[0] not in SUPPORTED_CHANNELS:
            raise UnsupportedChannelCount(shape[0])
        self.shape = shape
        self.channel_names = list(meta.get('channel_names')
                                  or DEFAULT_CHANNEL_NAMES[shape[0]])
        self.image_path = directory / IMAGE_FILE
        _check_size(self.image_path, shape, IMAGE_DTYPES[self.dtype], self.uri)

        if mask_uri is not None:
            mask_dir = Path(mask_uri)
        elif (directory / MASK_FILE).is_file() or 'mask_source' not in meta:
            mask_dir = directory
        else:
            mask_dir = (directory / meta['mask_source'])
        if not mask_dir.is_dir():
            raise TileNotFound(str(mask_dir))
        mask_meta = meta if mask_dir == directory else _read_meta(mask_dir)
        self.mask_dir = mask_dir
        self.mask_dtype = mask_meta.get('mask_dtype', 'uint8')
        if self.mask_dtype not in MASK_DTYPES:
            raise InvalidTile(self.uri, 'unsupported mask dtype %r' % self.mask_dtype)
        self.mask_shape = tuple(int(s) for s in mask_meta.get('mask_shape', shape[1:]))
        self.mask_path = mask_dir / MASK_FILE
        _check_size(self.mask_path, self.mask_shape, MASK_DTYPES[self.mask_dtype],
                    self.uri)
        if self.mask_shape != shape[1:]:
            raise ShapeMismatch('image vs mask of %s' % self.uri, shape[1:],
                                self.mask_shape)
        try:
            self.num_classes = int(mask_meta['num_classes'])
        except (KeyError, TypeError, ValueError):
            raise InvalidTile(self.uri, 'meta.json lacks a valid num_classes')
        self.class_names = mask_meta.get('class_names')
        self.palette = mask_meta.get('palette')
        self.tile_id = str(meta.get('tile_id', directory.name))
        self.split = meta.get('split', 'train')
        self._image = None
        self._mask = None

    @property
    def channels(self):
        return self.shape[0]

    @property
    def height(self):
        return self.shape[1]

    @property
    def width(self):
        return self.shape[2]

    def _maps(self):
        if self._image is None:
            self._image = np.memmap(self.image_path, dtype=IMAGE_DTYPES[self.dtype],
                                    mode='r', shape=self.shape)
            self._mask = np.memmap(self.mask_path, dtype=MASK_DTYPES[self.mask_dtype],
                                   mode='r', shape=self.mask_shape)
        return self._image, self._mask

    def _checked_classes(self, raw):
        classes = np.asarray(raw, dtype=np.int64)
        if classes.size and int(classes.max()) >= self.num_classes:
            raise InvalidClassIndex(int(classes.max()), self.num_classes)
        return classes

    def read_window(self, window, channels=None):
        """Return (image C x s x s in [-1, 1], classes s x s int64) for ``window``."""
        image, mask = self._maps()
        r, c, s = window
        if r < 0 or c < 0 or r + s > self.height or c + s > self.width:
            raise ArgumentError('window %s leaves tile %s (%dx%d)'
                                % (tuple(window), self.tile_id, self.height, self.width))
        raw = image[:channels, r:r + s, c:c + s]
        return (normalize_raw(raw, self.dtype),
                self._checked_classes(mask[r:r + s, c:c + s]))

    def read_mask(self):
        """The whole class mask (H x W int64)."""
        _, mask = self._maps()
        return self._checked_classes(mask)

    def read(self):
        image, mask = self._maps()
        return RasterTile(
            tile_id=self.tile_id,
            image=normalize_raw(np.array(image), self.dtype),
            mask=ClassMask(self._checked_classes(mask), self.num_classes),
            channel_names=self.channel_names,
            split=self.split,
            class_names=self.class_names,
            palette=self.palette,
        )

    def __getstate__(self):
        state = dict(self.__dict__)
        state['_image'] = state['_mask'] = None
        return state


def load_tile(uri, mask_uri=None):
    """
    Load and validate a tile container.

    Raises:
        TileNotFound: the directory or one of its files is missing.
        ShapeMismatch: image and mask spatial sizes differ.
        InvalidClassIndex: a mask pixel is >= num_classes.
        UnsupportedChannelCount: the raster is neither 3- nor 4-channel.
    """
    tile = TileReader(uri, mask_uri=mask_uri).read()
    log.debug('Loaded tile %s (%dx%d, %d channels)', tile.tile_id,
              tile.height, tile.width, tile.image.shape[0])
    return tile


def write_tile(tile, directory, dtype='float32', mask_source=None, extra_meta=None):
    """
    Write ``tile`` as a container under ``directory``.

    With the default ``float32`` dtype a write/load round trip is lossless.
    When ``mask_source`` is given the mask is not written; the container
    points at that directory instead.
    """
    if dtype not in IMAGE_DTYPES:
        raise ArgumentError('unsupported dtype %r' % dtype)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mask_dtype = 'uint8' if tile.num_classes <= 256 else 'uint16'
    meta = {
        'format_version': FORMAT_VERSION,
        'tile_id': tile.tile_id,
        'dtype': dtype,
        'shape': list(tile.image.shape),
        'channel_names': list(tile.channel_names),
        'split': tile.split,
        'num_classes': tile.num_classes,
        'mask_dtype': mask_dtype,
        'mask_shape': list(tile.mask.shape),
    }
    if tile.class_names is not None:
        meta['class_names'] = list(tile.class_names)
    if tile.palette is not None:
        meta['palette'] = [list(map(int, c)) for c in tile.palette]
    if extra_meta:
        meta.update(extra_meta)

    quantize(tile.image, dtype).astype(IMAGE_DTYPES[dtype], copy=False).tofile(
        directory / IMAGE_FILE)
    if mask_source is None:
        tile.mask.classes.astype(MASK_DTYPES[mask_dtype]).tofile(directory / MASK_FILE)
    else:
        meta['mask_source'] = os.path.relpath(mask_source, directory)
    with open(directory / META_FILE, 'w', encoding='utf-8') as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write('\n')
    return directory


def sample_windows(height, width, spec, seed=None):
    """
    Draw ``spec.per_tile_count`` square windows uniformly (with replacement)
    over the valid top-left corners of a height x width tile.
    """
    size = spec.size
    if size > min(height, width):
        raise ArgumentError('patch size %d is larger than the %dx%d tile'
                            % (size, height, width))
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    count = spec.per_tile_count
    rows = rng.integers(0, height - size + 1, size=count)
    cols = rng.integers(0, width - size + 1, size=count)
    return [Window(int(r), int(c), size) for r, c in zip(rows, cols)]


def grid_windows(height, width, size):
    """Non-overlapping windows in row-major order; edge remainders are dropped."""
    if size > min(height, width):
        raise ArgumentError('patch size %d is larger than the %dx%d tile'
                            % (size, height, width))
    return [Window(r, c, size)
            for r in range(0, height - size + 1, size)
            for c in range(0, width - size + 1, size)]


def sample_patches(tile, spec):
    """Return ``spec.per_tile_count`` aligned (image, classes) crops of ``tile``."""
    patches = []
    for r, c, s in sample_windows(tile.height, tile.width, spec):
        patches.append((tile.image[:, r:r + s, c:c + s].copy(),
                        tile.mask.classes[r:r + s, c:c + s].copy()))
    return patches


def record_seed(seed, record):
    """Window seed of one manifest record; independent of record order."""
    return derive_seed(seed, record.tile_id, record.source, record.seed)


class PatchDataset(Dataset):
    """
    Patches drawn from every record of a manifest.

    Args:
        manifest: a DatasetManifest.
        spec: PatchSpec giving window size, count per tile and seed.
        channels: keep only the first ``channels`` image channels
            (3 reads the RGB subset of RGB-NIR imagery).
        grid: use the static non-overlapping window grid instead of
            random windows (validation sets).
    """

    def __init__(self, manifest, spec, channels=None, grid=False):
        super().__init__()
        self.spec = spec
        self.channels = channels
        self.grid = grid
        self.sources = [(manifest.resolve(r.image_uri), manifest.resolve(r.mask_uri))
                        for r in manifest.records]
        self.records = list(manifest.records)
        self._readers = {}
        self.windows = []
        self.num_classes = None
        for i, record in enumerate(self.records):
            reader = self._reader(i)
            if channels is not None and reader.channels < channels:
                raise UnsupportedChannelCount(reader.channels)
            if self.num_classes is None:
                self.num_classes = reader.num_classes
            elif reader.num_classes != self.num_classes:
                raise InvalidTile(reader.uri, 'num_classes %d differs from %d'
                                  % (reader.num_classes, self.num_classes))
            if grid:
                windows = grid_windows(reader.height, reader.width, spec.size)
            else:
                windows = sample_windows(reader.height, reader.width, spec,
                                         seed=record_seed(spec.seed, record))
            self.windows.extend((i, w) for w in windows)
        # memmaps are reopened lazily in every worker process
        self._readers = {}

    def _reader(self, i):
        reader = self._readers.get(i)
        if reader is None:
            image_uri, mask_uri = self.sources[i]
            reader = self._readers[i] = TileReader(image_uri, mask_uri=mask_uri)
        return reader

    def __len__(self):
        return len(self.windows)

    def __getitem__(self, index):
        i, window = self.windows[index]
        image, classes = self._reader(i).read_window(window, channels=self.channels)
        return {
            'image': torch.from_numpy(np.ascontiguousarray(image)),
            'mask': torch.from_numpy(classes),
            'index': index,
        }

    def describe(self, index):
        """(tile_id, window) of a dataset index, for diagnostics."""
        i, window = self.windows[index]
        return self.records[i].tile_id, tuple(window)

    def __getstate__(self):
        state = dict(self.__dict__)
        state['_readers'] = {}
        return state
