"""
Procedural toy tiles for desk-scale runs.

Masks are the argmax of one smoothed Gaussian random field per class, which
gives blob-shaped regions.  Each class has a fixed colour; images are that
colour plus seeded pixel noise and a smooth texture.  The class of a pixel can
be recovered by picking the nearest class colour (:func:`toy_bayes_segment`).
"""
import logging
from pathlib import Path

import numpy as np
from scipy import ndimage

from satsynth.config import ConfigNode
from satsynth.exceptions import InvalidConfig
from satsynth.fields import FloatField, IntegerField
from satsynth.ingest import ClassMask, RasterTile, write_tile
from satsynth.manifest import DatasetManifest, ManifestRecord
from satsynth.metrics import CLASS_NAMES
from satsynth.utils import count_of, derive_seed


log = logging.getLogger(__name__)

# R, G, B, NIR in [-1, 1]
CLASS_COLORS = np.array([
    [-0.6, -0.4, 0.2, -0.8],
    [-0.5, 0.1, -0.5, 0.6],
    [0.0, 0.5, -0.2, 0.3],
    [0.6, 0.4, 0.2, 0.0],
    [0.3, 0.3, 0.3, -0.3],
    [-0.1, -0.1, -0.1, -0.1],
])


class ToyDatasetSpec(ConfigNode):
    num_tiles = IntegerField('num_tiles', default=20, minimum=1)
    val_tiles = IntegerField('val_tiles', default=5, minimum=0)
    test_tiles = IntegerField('test_tiles', default=5, minimum=0)
    tile_size = IntegerField('tile_size', default=64, minimum=4)
    num_classes = IntegerField('num_classes', default=4, minimum=2)
    channels = IntegerField('channels', default=4, minimum=3)
    smoothness = FloatField('smoothness', default=6.0, minimum=0.0, exclusive_minimum=True,
                            doc='sigma of the fields the class blobs come from')
    noise = FloatField('noise', default=0.06, minimum=0.0)
    texture = FloatField('texture', default=0.04, minimum=0.0)
    seed = IntegerField('seed', default=0)

    class Meta:
        human_readable_name = 'toy'

    def validate(self):
        if self.num_classes > len(CLASS_COLORS):
            raise InvalidConfig(self.hrn, 'num_classes', 'at most %d classes have colours'
                                % len(CLASS_COLORS))
        if self.channels not in (3, 4):
            raise InvalidConfig(self.hrn, 'channels', 'must be 3 or 4')
        return True

    def colors(self):
        return CLASS_COLORS[:self.num_classes, :self.channels]

    def palette(self):
        rgb = (CLASS_COLORS[:self.num_classes, :3] + 1.0) * 127.5
        return np.round(rgb).astype(int).tolist()


def render_mask(spec, rng):
    size = spec.tile_size
    fields = np.stack([
        ndimage.gaussian_filter(rng.standard_normal((size, size)), spec.smoothness,
                                mode='wrap')
        for _ in range(spec.num_classes)])
    return ClassMask(np.argmax(fields, axis=0), spec.num_classes)


def render_image(spec, mask, rng):
    size = spec.tile_size
    image = spec.colors()[mask.classes].transpose(2, 0, 1)
    noise = rng.normal(0.0, spec.noise, size=(spec.channels, size, size))
    texture = ndimage.gaussian_filter(rng.standard_normal((spec.channels, size, size)),
                                      (0, 1.5, 1.5), mode='wrap')
    texture *= spec.texture / max(texture.std(), 1e-12)
    return np.clip(image + noise + texture, -1.0, 1.0).astype(np.float32)


def make_toy_tile(spec, index, split='train'):
    rng = np.random.default_rng(derive_seed(spec.seed, 'toy', index))
    mask = render_mask(spec, rng)
    image = render_image(spec, mask, rng)
    names = list(CLASS_NAMES) if spec.num_classes == len(CLASS_NAMES) else [
        'class %d' % i for i in range(spec.num_classes)]
    return RasterTile(tile_id='toy-%04d' % index, image=image, mask=mask, split=split,
                      class_names=names, palette=spec.palette())


def make_toy_dataset(spec, out_dir, split='train', count=None, start=0):
    """
    Write ``count`` toy tiles (default ``spec.num_tiles``) and their manifest.

    Tiles land in ``out_dir/<split>/`` and the manifest in
    ``out_dir/<split>.jsonl``.  Tile ``i`` depends only on (seed, i), so a
    rerun writes identical bytes.
    """
    out_dir = Path(out_dir)
    count = spec.num_tiles if count is None else count
    records = []
    for index in range(start, start + count):
        tile = make_toy_tile(spec, index, split)
        directory = out_dir / split / tile.tile_id
        write_tile(tile, directory)
        records.append(ManifestRecord(tile_id=tile.tile_id, image_uri=str(directory.resolve()),
                                      mask_uri=str(directory.resolve())))
    manifest = DatasetManifest(records=tuple(records), split=split)
    manifest = manifest.save(out_dir / ('%s.jsonl' % split))
    log.info('Wrote %s to %s', count_of('%s tile' % split, count), out_dir / split)
    return manifest


def make_toy_splits(spec, out_dir):
    """Train, val and test toy manifests with disjoint tile indices."""
    sizes = (('train', spec.num_tiles), ('val', spec.val_tiles), ('test', spec.test_tiles))
    manifests = {}
    start = 0
    for split, count in sizes:
        manifests[split] = make_toy_dataset(spec, out_dir, split, count=count, start=start)
        start += count
    return manifests


def toy_bayes_segment(image, spec):
    """Nearest class colour per pixel: the rule the toy images were drawn from."""
    image = np.asarray(image, dtype=np.float64)
    colors = spec.colors()[:, :image.shape[0]]
    dist = ((image[np.newaxis] - colors[:, :, np.newaxis, np.newaxis]) ** 2).sum(axis=1)
    return np.argmin(dist, axis=0)
