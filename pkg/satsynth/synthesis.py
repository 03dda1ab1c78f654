"""
Synthetic datasets from a trained checkpoint.

A mask larger than the generator resolution is covered by a grid of windows.
Consecutive windows advance by ``resolution - overlap``; the last window on
each axis is aligned to the far edge.  Each window is generated separately and
the results are stitched back together (see :func:`stitch_tile`).
"""
import json
import logging
from collections import namedtuple
from pathlib import Path

import numpy as np
import torch

from satsynth.checkpoint import Checkpoint
from satsynth.config import ConfigNode
from satsynth.exceptions import (
    ArgumentError,
    InvalidConfig,
    MissingReferenceImage,
    ShapeMismatch,
)
from satsynth.fields import ChoiceField, IntegerField, StringField
from satsynth.ingest import (
    ClassMask,
    RasterTile,
    TileReader,
    Window,
    one_hot_planes,
    write_tile,
)
from satsynth.manifest import DatasetManifest, ManifestRecord
from satsynth.networks import reparameterize, sample_prior
from satsynth.utils import count_of, derive_seed


log = logging.getLogger(__name__)

MODES = ('prior', 'encoder')
PROVENANCE_FILE = 'provenance.json'
MANIFEST_FILE = 'manifest.jsonl'

TileGrid = namedtuple('TileGrid', 'height width size overlap windows')


class SynthesisJob(ConfigNode):
    checkpoint = StringField('checkpoint', optional=True)
    masks = StringField('masks', optional=True, doc='manifest whose masks are used')
    mode = ChoiceField('mode', choices=MODES, default='prior')
    copies = IntegerField('copies', default=1, minimum=1)
    overlap = IntegerField('overlap', default=0, minimum=0,
                           doc='pixels shared by neighbouring windows when stitching')
    seed = IntegerField('seed', default=0)

    class Meta:
        human_readable_name = 'synthesis'


def _axis_starts(length, size, step):
    if size > length:
        raise ArgumentError('window %d is larger than the tile side %d' % (size, length))
    starts = list(range(0, length - size, step))
    starts.append(length - size)
    return sorted(set(starts))


def plan_grid(height, width, size, overlap=0):
    """Row-major windows of side ``size`` covering a height x width tile."""
    if overlap >= size:
        raise ArgumentError('overlap %d must be smaller than the window %d' % (overlap, size))
    step = size - overlap
    windows = [Window(r, c, size)
               for r in _axis_starts(height, size, step)
               for c in _axis_starts(width, size, step)]
    return TileGrid(height, width, size, overlap, windows)


def axis_weights(start, size, length, overlap):
    """Blend weights of one window along one axis: linear ramps at inner edges."""
    w = np.ones(size, dtype=np.float64)
    if overlap == 0:
        return w
    ramp = np.arange(1, overlap + 1, dtype=np.float64) / (overlap + 1)
    if start > 0:
        w[:overlap] = np.minimum(w[:overlap], ramp)
    if start + size < length:
        w[-overlap:] = np.minimum(w[-overlap:], ramp[::-1])
    return w


def blend_weights(grid):
    """
    Per-window weight maps, normalised so they sum to 1 at every pixel.

    With overlap 0 the first window covering a pixel takes all of it, so
    the far-edge windows only contribute the pixels nothing else covered.
    """
    total = np.zeros((grid.height, grid.width), dtype=np.float64)
    raw = []
    for r, c, s in grid.windows:
        if grid.overlap == 0:
            w = np.zeros((s, s), dtype=np.float64)
            w[total[r:r + s, c:c + s] == 0] = 1.0
        else:
            w = np.outer(axis_weights(r, s, grid.height, grid.overlap),
                         axis_weights(c, s, grid.width, grid.overlap))
        total[r:r + s, c:c + s] += w
        raw.append(w)
    return [w / total[r:r + s, c:c + s] for (r, c, s), w in zip(grid.windows, raw)]


def stitch_tile(patches, grid, clip=True):
    """
    Assemble window patches (each C x size x size) into a C x H x W raster.

    Blended images are clipped to [-1, 1] unless ``clip`` is False (logits).

    Raises:
        ShapeMismatch: wrong number of patches or a patch of the wrong shape.
    """
    if len(patches) != len(grid.windows):
        raise ShapeMismatch('patch grid', len(grid.windows), len(patches))
    channels = np.asarray(patches[0]).shape[0] if patches else 0
    out = np.zeros((channels, grid.height, grid.width), dtype=np.float64)
    for (r, c, s), patch, w in zip(grid.windows, patches, blend_weights(grid)):
        patch = np.asarray(patch)
        if patch.shape != (channels, s, s):
            raise ShapeMismatch('patch at (%d, %d)' % (r, c), (channels, s, s), patch.shape)
        if grid.overlap == 0:
            keep = w > 0
            out[:, r:r + s, c:c + s][:, keep] = patch[:, keep]
        else:
            out[:, r:r + s, c:c + s] += w * patch
    dtype = np.asarray(patches[0]).dtype if patches else np.float32
    if grid.overlap and clip:
        out = np.clip(out, -1.0, 1.0)
    return out.astype(dtype, copy=False)


def _planes(mask, num_classes):
    if isinstance(mask, ClassMask):
        mask = torch.from_numpy(mask.classes)
    mask = torch.as_tensor(mask)
    if mask.dim() == 2:
        return one_hot_planes(mask.unsqueeze(0), num_classes)
    return mask.float().unsqueeze(0)


@torch.no_grad()
def synthesize_patch(model, mask, mode, seed, ref_image=None, noise=None):
    """
    Generate one patch (C x H x W tensor) for ``mask``.

    ``mask`` is a ClassMask, an (H, W) class tensor or (K, H, W) planes.
    In prior mode z is drawn from N(0, I) seeded by ``seed``; in encoder
    mode z = reparameterize(encode(ref_image), noise) with ``noise``
    defaulting to the same seeded stream.
    """
    config = model.config
    planes = _planes(mask, config.num_classes)
    gen = torch.Generator().manual_seed(int(seed))
    if noise is None:
        noise = sample_prior(1, config.z_dim, gen)
    else:
        noise = torch.as_tensor(noise, dtype=torch.float32).reshape(1, -1)
    if mode == 'prior':
        z = noise
    elif mode == 'encoder':
        if ref_image is None:
            raise MissingReferenceImage('<patch>')
        ref = torch.as_tensor(ref_image, dtype=torch.float32)
        ref = ref[:config.out_channels].unsqueeze(0)
        z = reparameterize(model.encode(ref), noise)
    else:
        raise ArgumentError('unknown latent mode %r' % mode)
    return model.generate(planes, z)[0]


def synthesize_tile(model, mask, mode, seed, ref_image=None, overlap=0):
    """Grid-wise generation and stitching of a whole tile mask (numpy out)."""
    height, width = mask.shape
    grid = plan_grid(height, width, model.config.resolution, overlap)
    patches = []
    for i, (r, c, s) in enumerate(grid.windows):
        ref = None if ref_image is None else ref_image[:, r:r + s, c:c + s]
        sub = ClassMask(mask.classes[r:r + s, c:c + s], mask.num_classes)
        patch = synthesize_patch(model, sub, mode, derive_seed(seed, 'window', i),
                                 ref_image=ref)
        patches.append(patch.numpy())
    return stitch_tile(patches, grid)


def synthesize_dataset(job, out_dir, checkpoint=None, manifest=None):
    """
    Generate ``job.copies`` synthetic tiles per mask of ``manifest``.

    Returns the synthetic manifest (also written to ``out_dir/manifest.jsonl``).
    Output record ``i`` (mask index times copies plus copy) is seeded with
    ``derive_seed(job.seed, 'record', i)`` whatever order the work happens in.
    Masks are referenced, not copied.
    """
    if checkpoint is None:
        if job.checkpoint is None:
            raise InvalidConfig(job.hrn, 'checkpoint', 'no checkpoint given')
        checkpoint = Checkpoint.load(job.checkpoint)
    if manifest is None:
        if job.masks is None:
            raise InvalidConfig(job.hrn, 'masks', 'no mask manifest given')
        manifest = DatasetManifest.load(job.masks)
    model = checkpoint.build_model()
    config = checkpoint.config
    digest = checkpoint.digest() if checkpoint.path else None
    out_dir = Path(out_dir).resolve()

    records = []
    for m, record in enumerate(manifest.records):
        mask_dir = manifest.resolve(record.mask_uri)
        image_dir = manifest.resolve(record.image_uri)
        reader = TileReader(image_dir, mask_uri=mask_dir)
        if reader.num_classes != config.num_classes:
            raise ShapeMismatch('classes of tile %s' % record.tile_id,
                                config.num_classes, reader.num_classes)
        source = reader.read()
        ref_image = None
        if job.mode == 'encoder':
            if source.image.shape[0] < config.out_channels:
                raise MissingReferenceImage(record.tile_id)
            ref_image = source.image
        for copy in range(job.copies):
            index = m * job.copies + copy
            seed = derive_seed(job.seed, 'record', index)
            image = synthesize_tile(model, source.mask, job.mode, seed,
                                    ref_image=ref_image, overlap=job.overlap)
            tile = RasterTile(tile_id=record.tile_id, image=image, mask=source.mask,
                              channel_names=source.channel_names[:config.out_channels],
                              split=manifest.split, class_names=source.class_names,
                              palette=source.palette)
            directory = out_dir / 'tiles' / ('%s-%03d' % (record.tile_id, copy))
            write_tile(tile, directory, mask_source=reader.mask_dir)
            with open(directory / PROVENANCE_FILE, 'w', encoding='utf-8') as f:
                json.dump({'checkpoint_hash': digest,
                           'lambda': checkpoint.generator_lambda,
                           'mode': job.mode, 'seed': seed, 'copy': copy,
                           'tile_id': record.tile_id}, f, indent=2, sort_keys=True)
                f.write('\n')
            records.append(ManifestRecord(
                tile_id=record.tile_id, image_uri=str(directory),
                mask_uri=str(reader.mask_dir), source='synthetic',
                generator_lambda=checkpoint.generator_lambda,
                latent_mode=job.mode, seed=seed))
    synthetic = DatasetManifest(records=tuple(records), split=manifest.split,
                                root=str(out_dir))
    synthetic = synthetic.save(out_dir / MANIFEST_FILE)
    log.info('Synthesized %s from %s (%s mode)', count_of('tile', len(records)),
             count_of('mask', len(manifest)), job.mode)
    return synthetic
