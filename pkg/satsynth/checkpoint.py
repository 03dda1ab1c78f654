"""
Checkpoint archives.

A checkpoint is one zip file::

    config.json              {"format_version": 1, "gan": {...}}
    weights/<name>.npy       one little-endian array per state-dict entry
    training_state.json      optional; optimizer skeletons, step, lambda, tau, history
    state/<n>.npy            arrays referenced from training_state.json

Entries carry a fixed timestamp and are written in sorted order, so saving the
same checkpoint twice produces identical bytes.
"""
import io
import json
import logging
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from satsynth.exceptions import CheckpointError, IncompatibleCheckpoint
from satsynth.networks import GanConfig, SpadeGAN
from satsynth.utils import sha256_file


log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ZIP_DATE = (1980, 1, 1, 0, 0, 0)
ARRAY_KEY = '__array__'
ITEMS_KEY = '__items__'
TUPLE_KEY = '__tuple__'


def _le(array):
    array = np.ascontiguousarray(array)
    if array.dtype.byteorder == '>':
        array = array.astype(array.dtype.newbyteorder('<'))
    return array


def _npy_bytes(array):
    buf = io.BytesIO()
    np.save(buf, _le(array), allow_pickle=False)
    return buf.getvalue()


def _npy_load(data):
    return np.load(io.BytesIO(data), allow_pickle=False)


def flatten_state(obj, arrays):
    """
    Turn a nested optimizer/training state into a JSON skeleton.

    Tensors and arrays are moved into ``arrays`` and replaced by references;
    dicts with non-string keys (optimizer state is keyed by int) are stored
    as item lists.  String-keyed dicts are walked in sorted key order so the
    array numbering survives a JSON round trip.
    """
    if isinstance(obj, torch.Tensor):
        obj = obj.detach().cpu().numpy()
    if isinstance(obj, np.ndarray):
        name = str(len(arrays))
        arrays[name] = obj.copy()
        return {ARRAY_KEY: name}
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            return {k: flatten_state(obj[k], arrays) for k in sorted(obj)}
        return {ITEMS_KEY: [[k, flatten_state(v, arrays)] for k, v in obj.items()]}
    if isinstance(obj, tuple):
        return {TUPLE_KEY: [flatten_state(v, arrays) for v in obj]}
    if isinstance(obj, list):
        return [flatten_state(v, arrays) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def unflatten_state(obj, arrays):
    """Inverse of :func:`flatten_state`; arrays come back as torch tensors."""
    if isinstance(obj, dict):
        if ARRAY_KEY in obj:
            return torch.from_numpy(np.array(arrays[obj[ARRAY_KEY]]))
        if ITEMS_KEY in obj:
            return {k: unflatten_state(v, arrays) for k, v in obj[ITEMS_KEY]}
        if TUPLE_KEY in obj:
            return tuple(unflatten_state(v, arrays) for v in obj[TUPLE_KEY])
        return {k: unflatten_state(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [unflatten_state(v, arrays) for v in obj]
    return obj


@dataclass(eq=False)
class Checkpoint:
    config: GanConfig
    weights: OrderedDict
    training_state: Optional[dict] = None
    format_version: int = FORMAT_VERSION
    path: Optional[str] = field(default=None, compare=False)

    @classmethod
    def from_model(cls, model, training_state=None):
        weights = OrderedDict(
            (name, tensor.detach().cpu().numpy().copy())
            for name, tensor in model.state_dict().items())
        return cls(config=model.config, weights=weights, training_state=training_state)

    def build_model(self):
        """Instantiate a SpadeGAN carrying these weights, in eval mode."""
        model = SpadeGAN(self.config)
        state = OrderedDict((k, torch.from_numpy(np.array(v))) for k, v in self.weights.items())
        try:
            model.load_state_dict(state)
        except RuntimeError as e:
            raise CheckpointError(self.path or '<memory>', 'weights do not fit config: %s' % e)
        return model.eval()

    @property
    def generator_lambda(self):
        return (self.training_state or {}).get('diversity_weight')

    @property
    def step(self):
        return (self.training_state or {}).get('step', 0)

    def digest(self):
        """sha256 of the archive this checkpoint was loaded from or saved to."""
        if self.path is None:
            raise CheckpointError('<memory>', 'checkpoint has not been saved')
        return sha256_file(self.path)

    def save(self, path):
        write_archive(path, {'format_version': self.format_version,
                             'gan': self.config.to_dict()},
                      self.weights, self.training_state)
        self.path = str(path)
        log.debug('Saved checkpoint with %d arrays to %s', len(self.weights), path)
        return Path(path)

    @classmethod
    def load(cls, path):
        header, weights, training_state = read_archive(path)
        try:
            config = GanConfig.from_dict(header['gan'])
        except KeyError:
            raise CheckpointError(str(path), 'config.json has no gan section')
        return cls(config=config, weights=weights, training_state=training_state,
                   format_version=header['format_version'], path=str(path))


def write_archive(path, header, weights, training_state=None):
    """
    Write a checkpoint archive.

    ``header`` becomes config.json and must carry ``format_version``;
    ``weights`` maps names to arrays.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {'config.json': json.dumps(header, sort_keys=True, indent=2).encode('utf-8')}
    for name, array in weights.items():
        entries['weights/%s.npy' % name] = _npy_bytes(array)
    if training_state is not None:
        arrays = {}
        skeleton = flatten_state(training_state, arrays)
        entries['training_state.json'] = json.dumps(skeleton, sort_keys=True).encode('utf-8')
        for name, array in arrays.items():
            entries['state/%s.npy' % name] = _npy_bytes(array)

    tmp = path.with_name(path.name + '.tmp')
    with zipfile.ZipFile(tmp, 'w', compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    tmp.replace(path)
    return path


def read_archive(path):
    """
    Read an archive written by :func:`write_archive`.

    Returns (header, weights, training_state or None).

    Raises:
        CheckpointError: missing or unreadable archive.
        IncompatibleCheckpoint: unknown format_version.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(str(path), 'does not exist')
    try:
        with zipfile.ZipFile(path) as zf:
            names = zf.namelist()
            if 'config.json' not in names:
                raise CheckpointError(str(path), 'config.json is missing')
            header = json.loads(zf.read('config.json').decode('utf-8'))
            version = header.get('format_version')
            if version != FORMAT_VERSION:
                raise IncompatibleCheckpoint(str(path), version)
            weights = OrderedDict()
            for name in names:
                if name.startswith('weights/') and name.endswith('.npy'):
                    weights[name[len('weights/'):-len('.npy')]] = _npy_load(zf.read(name))
            training_state = None
            if 'training_state.json' in names:
                arrays = {name[len('state/'):-len('.npy')]: _npy_load(zf.read(name))
                          for name in names if name.startswith('state/')}
                skeleton = json.loads(zf.read('training_state.json').decode('utf-8'))
                training_state = unflatten_state(skeleton, arrays)
    except (zipfile.BadZipFile, ValueError, KeyError) as e:
        raise CheckpointError(str(path), 'unreadable archive: %s' % e)
    return header, weights, training_state


def load_model(path):
    """Shortcut: load a checkpoint and build its network."""
    ckpt = Checkpoint.load(path)
    return ckpt, ckpt.build_model()
