"""
Dataset manifests.

A manifest lists (image, mask) tile containers together with where they came
from.  It is the unit every trainer and evaluator consumes.  On disk it is
JSON-lines, one record per line; every line also carries the split.  URIs
may be relative, in which case they are resolved against the directory the
manifest was loaded from.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from satsynth.config import ConfigNode
from satsynth.exceptions import (
    DuplicateRecord,
    ManifestError,
    MixError,
    SatsynthError,
)
from satsynth.fields import FloatField, IntegerField
from satsynth.ingest import META_FILE, SPLITS, TileReader
from satsynth.logging import ProxyLogger
from satsynth.query import Q
from satsynth.utils import count_of, round_half_up


log = logging.getLogger(__name__)

SOURCES = ('real', 'synthetic')
LATENT_MODES = ('encoder', 'prior')

REAL_RECORDS = Q(source='real')
# encoder-mode copies restyle a real tile and never stand in for one
MIXABLE_SYNTHETIC = Q(source='synthetic') & ~Q(latent_mode='encoder')


class MixSpec(ConfigNode):
    synthetic_fraction = FloatField('p', default=0.0, minimum=0.0, maximum=1.0,
                                    doc='share of tiles replaced by synthetic ones')
    total_tiles = IntegerField('total_tiles', default=100, minimum=0)
    seed = IntegerField('seed', default=0)

    class Meta:
        human_readable_name = 'mix'

    @property
    def synthetic_count(self):
        return round_half_up(self.synthetic_fraction, self.total_tiles)

    @property
    def real_count(self):
        return self.total_tiles - self.synthetic_count


@dataclass(frozen=True)
class ManifestRecord:
    tile_id: str
    image_uri: str
    mask_uri: str
    source: str = 'real'
    generator_lambda: Optional[float] = None
    latent_mode: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ManifestError('record %s: unknown source %r'
                                % (self.tile_id, self.source))
        if self.latent_mode is not None and self.latent_mode not in LATENT_MODES:
            raise ManifestError('record %s: unknown latent_mode %r'
                                % (self.tile_id, self.latent_mode))

    @property
    def key(self):
        return (self.tile_id, self.source, self.seed)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ManifestError('unknown record field(s) %s; expected %s'
                                % (unknown, sorted(names)))
        try:
            record = cls(**data)
        except TypeError as e:
            raise ManifestError('malformed record %r: %s' % (data, e))
        if record.generator_lambda is not None:
            record = replace(record, generator_lambda=float(record.generator_lambda))
        if record.seed is not None:
            record = replace(record, seed=int(record.seed))
        return record


@dataclass(frozen=True)
class DatasetManifest:
    records: Tuple[ManifestRecord, ...] = ()
    split: str = 'train'
    root: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'records', tuple(self.records))
        if self.split not in SPLITS:
            raise ManifestError('unknown split %r' % self.split)
        seen = set()
        for record in self.records:
            if record.key in seen:
                raise DuplicateRecord(record.key)
            seen.add(record.key)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def tile_ids(self):
        return sorted({r.tile_id for r in self.records})

    def resolve(self, uri):
        """Return ``uri`` as a usable path (relative URIs hang off ``root``)."""
        if uri is None or os.path.isabs(uri) or self.root is None:
            return uri
        return os.path.normpath(os.path.join(self.root, uri))

    def with_records(self, records):
        return DatasetManifest(records=tuple(records), split=self.split, root=self.root)

    def filter(self, query):
        """Keep the records matching a :class:`~satsynth.query.Q` expression."""
        predicate = query.compile(ManifestRecord)
        return self.with_records(r for r in self.records if predicate(r))

    def rebased(self, root):
        """
        Return the same manifest with every URI made relative to ``root``.

        Used before writing a manifest somewhere else so the file stays
        portable and byte-stable across output locations.
        """
        root = os.path.abspath(root)

        def rel(uri):
            return os.path.relpath(os.path.abspath(self.resolve(uri)), root)

        records = [replace(r, image_uri=rel(r.image_uri), mask_uri=rel(r.mask_uri))
                   for r in self.records]
        return DatasetManifest(records=tuple(records), split=self.split, root=root)

    def dumps(self):
        lines = []
        for record in self.records:
            data = asdict(record)
            data['split'] = self.split
            lines.append(json.dumps(data, sort_keys=True))
        return ''.join(line + '\n' for line in lines)

    @classmethod
    def loads(cls, text, root=None):
        records = []
        split = None
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except ValueError as e:
                raise ManifestError('line %d is not JSON: %s' % (lineno, e))
            line_split = data.pop('split', 'train')
            if split is None:
                split = line_split
            elif line_split != split:
                raise ManifestError('line %d has split %r, expected %r'
                                    % (lineno, line_split, split))
            records.append(ManifestRecord.from_dict(data))
        return cls(records=tuple(records), split=split or 'train', root=root)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = self.rebased(path.parent)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(manifest.dumps())
        log.debug('Wrote %s to %s', count_of('record', len(self)), path)
        return manifest

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ManifestError('manifest %s does not exist' % path)
        with open(path, encoding='utf-8') as f:
            return cls.loads(f.read(), root=str(path.parent.resolve()))


def validate_manifest(manifest, strict=True, logger=None):
    """
    Check every record of ``manifest`` parses as a tile container.

    Problems are collected on a ProxyLogger (returned) rather than raised one
    at a time.  When ``strict`` is set and any error was found, raise
    ManifestError summarising them.
    """
    logger = logger or ProxyLogger(log)
    for record in manifest.records:
        try:
            TileReader(manifest.resolve(record.image_uri),
                       mask_uri=manifest.resolve(record.mask_uri)).read()
        except SatsynthError as e:
            logger.error('%s (%s): %s', record.tile_id, record.source, e.msg)
            continue
        if record.source == 'synthetic' and record.latent_mode is None:
            logger.warning('%s: synthetic record without latent_mode', record.tile_id)
    if logger.has_errors():
        if strict:
            errors = logger.messages_at('ERROR')
            raise ManifestError('%s failed validation (%s): %s' % (
                count_of('record', len(errors)), logger.summary(),
                '; '.join(errors[:3])))
    else:
        logger.info('%s validated', count_of('record', len(manifest)))
    return logger


def select_tiles(manifest, count, seed):
    """
    Keep ``count`` tile ids drawn at random with ``seed``.

    Record order is preserved.  ``None`` (or a count at least as large as the
    number of tiles) keeps everything.
    """
    ids = manifest.tile_ids()
    if count is None or count >= len(ids):
        return manifest
    rng = np.random.default_rng(seed)
    keep = [ids[i] for i in rng.permutation(len(ids))[:count]]
    return manifest.filter(Q(tile_id=set(keep)))


def _one_per_tile(manifest, prefer_lowest_seed=False):
    chosen = {}
    for record in manifest.records:
        current = chosen.get(record.tile_id)
        if current is None:
            chosen[record.tile_id] = record
        elif prefer_lowest_seed and (record.seed or 0) < (current.seed or 0):
            chosen[record.tile_id] = record
    return chosen


def build_mix_manifest(real, synthetic, mix):
    """
    Replace ``round(p * total)`` randomly chosen tiles by their synthetic versions.

    Exactly ``mix.total_tiles`` tiles are used, each once: either its real
    record or its synthetic one (the lowest-seed copy when several exist).
    Only real records of ``real`` and prior-mode records of ``synthetic`` are
    candidates.  Output follows the order of ``real``.

    Raises:
        MixError: tile id sets differ, or total exceeds the available tiles.
    """
    real = real.filter(REAL_RECORDS)
    synthetic = synthetic.filter(MIXABLE_SYNTHETIC)
    real_ids = real.tile_ids()
    if set(real_ids) != set(synthetic.tile_ids()):
        missing = sorted(set(real_ids) ^ set(synthetic.tile_ids()))
        raise MixError('real and synthetic manifests cover different tiles: %s'
                       % missing[:5])
    if mix.total_tiles > len(real_ids):
        raise MixError('total_tiles %d exceeds the %s available'
                       % (mix.total_tiles, count_of('tile', len(real_ids))))

    rng = np.random.default_rng(mix.seed)
    chosen = [real_ids[i] for i in rng.permutation(len(real_ids))[:mix.total_tiles]]
    n_synthetic = mix.synthetic_count
    synthetic_ids = set(chosen[:n_synthetic])
    real_keep = set(chosen[n_synthetic:])

    real_by_id = _one_per_tile(real)
    synthetic_by_id = _one_per_tile(synthetic, prefer_lowest_seed=True)
    records = []
    for record in real.records:
        tile_id = record.tile_id
        if record is not real_by_id[tile_id]:
            continue
        if tile_id in real_keep:
            records.append(record)
        elif tile_id in synthetic_ids:
            records.append(_rebase_record(synthetic_by_id[tile_id], synthetic, real))
    log.info('Mixed %s with %s (p=%s)', count_of('real tile', mix.real_count),
             count_of('synthetic tile', n_synthetic), mix.synthetic_fraction)
    return real.with_records(records)


def _rebase_record(record, source, target):
    """Express ``record``'s URIs (relative to ``source``) relative to ``target``."""
    if source.root == target.root:
        return record

    def move(uri):
        path = source.resolve(uri)
        if target.root is None or path is None:
            return path
        return os.path.relpath(os.path.abspath(path), target.root)

    return replace(record, image_uri=move(record.image_uri), mask_uri=move(record.mask_uri))


def scan_tiles(directory, split='train'):
    """Build a real-source manifest from every tile container under ``directory``."""
    directory = Path(directory).resolve()
    records = []
    for meta_path in sorted(directory.rglob(META_FILE)):
        tile_dir = meta_path.parent
        reader = TileReader(tile_dir)
        if reader.split != split:
            continue
        rel = os.path.relpath(tile_dir, directory)
        records.append(ManifestRecord(tile_id=reader.tile_id, image_uri=rel, mask_uri=rel))
    log.info('Found %s for split %s under %s', count_of('tile', len(records)),
             split, directory)
    return DatasetManifest(records=tuple(records), split=split, root=str(directory))
