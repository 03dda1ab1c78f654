# -*- coding: utf-8 -*-

import numpy as np

from satsynth.ingest import ClassMask, RasterTile, write_tile
from satsynth.manifest import DatasetManifest, ManifestRecord


def random_tile(tile_id, size=16, channels=3, num_classes=4, seed=0, split='train'):
    rng = np.random.default_rng(seed)
    mask = ClassMask(rng.integers(0, num_classes, size=(size, size)), num_classes)
    image = rng.uniform(-1.0, 1.0, size=(channels, size, size)).astype(np.float32)
    return RasterTile(tile_id=tile_id, image=image, mask=mask, split=split)


def write_tiles(directory, count, split='train', **kwargs):
    """Write ``count`` random tiles and return a manifest rooted at ``directory``."""
    records = []
    for i in range(count):
        tile = random_tile('t%03d' % i, seed=i, split=split, **kwargs)
        write_tile(tile, directory / tile.tile_id)
        records.append(ManifestRecord(tile_id=tile.tile_id, image_uri=tile.tile_id,
                                      mask_uri=tile.tile_id))
    return DatasetManifest(records=tuple(records), split=split, root=str(directory))


def record(tile_id, source='real', seed=None, **kwargs):
    if source == 'synthetic':
        kwargs.setdefault('latent_mode', 'prior')
    return ManifestRecord(tile_id=tile_id, image_uri='%s/%s' % (source, tile_id),
                          mask_uri='real/%s' % tile_id, source=source, seed=seed, **kwargs)
