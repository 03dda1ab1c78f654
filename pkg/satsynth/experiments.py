"""
The three experiments and the report that merges their tables.

Every experiment reads one :class:`ExperimentPlan`.  All seeds are derived from
``plan.seed`` (see :func:`seeded`), and every table cell is written in
fixed-point text, so rerunning a plan writes identical CSV files.  Intermediate
products (generators, synthetic datasets, downstream models) go under named
subdirectories of ``plan.out`` and are reused while the inputs recorded beside
them (``inputs.json``) still match.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List

import yaml

from satsynth.checkpoint import Checkpoint
from satsynth.config import ConfigNode
from satsynth.exceptions import InvalidConfig
from satsynth.fid import compute_fid, get_extractor
from satsynth.fields import (
    BooleanField,
    ChoiceField,
    FloatField,
    IntegerField,
    ListField,
    NestedField,
    StringField,
)
from satsynth.manifest import DatasetManifest, MixSpec, build_mix_manifest
from satsynth.metrics import class_names_for, write_iou_table
from satsynth.segmentation import CHECKPOINT_FILE as SEG_CHECKPOINT_FILE
from satsynth.segmentation import SegCheckpoint, SegConfig, evaluate, train_downstream
from satsynth.synthesis import SynthesisJob, synthesize_dataset
from satsynth.toy import ToyDatasetSpec, make_toy_splits
from satsynth.upstream import (
    CHECKPOINT_FILE,
    UpstreamConfig,
    lambda_dir,
    train_upstream,
)
from satsynth.utils import count_of, derive_seed, format_float, sha256_hex


log = logging.getLogger(__name__)

KINDS = ('lambda_sweep', 'substitution', 'mix_sweep')
LAMBDA_FILE = 'lambda_sweep.csv'
SUBSTITUTION_FILE = 'substitution.csv'
MIX_FILE = 'mix_sweep.csv'
MIX_PLOT = 'mix_sweep.png'
PLAN_FILE = 'plan.yaml'
INPUTS_FILE = 'inputs.json'
TABLES = (('lambda_sweep', LAMBDA_FILE), ('substitution', SUBSTITUTION_FILE),
          ('mix_sweep', MIX_FILE))

DESK_GAN = {'z_dim': 64, 'base_width': 16, 'num_spade_blocks': 5, 'resolution': 64,
            'spade_hidden': 32, 'encoder_width': 16, 'disc_width': 16, 'num_classes': 4}


class DataPaths(ConfigNode):
    train = StringField('train', optional=True)
    val = StringField('val', optional=True)
    test = StringField('test', optional=True)

    class Meta:
        human_readable_name = 'data'

    @property
    def complete(self):
        return None not in (self.train, self.val, self.test)


class ExperimentPlan(ConfigNode):
    kind = ChoiceField('kind', choices=KINDS, default='lambda_sweep')
    scale = ChoiceField('scale', choices=('desk', 'full'), default='desk')
    out = StringField('out', default='runs')
    seed = IntegerField('seed', default=0)
    data = NestedField('data', DataPaths)
    toy = NestedField('toy', ToyDatasetSpec)
    upstream = NestedField('upstream', UpstreamConfig)
    downstream = NestedField('downstream', SegConfig)
    lambdas = ListField('lambdas', FloatField('lambda', minimum=0.0),
                        default=[0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    p_grid = ListField('p_grid', FloatField('p', minimum=0.0, maximum=1.0),
                       default=[i / 10 for i in range(11)])
    copies = ListField('copies', IntegerField('copies', minimum=1), default=[1, 2, 3])
    synthesis_lambda = FloatField('synthesis_lambda', default=6.0, minimum=0.0,
                                  doc='generator used by substitution and mixing')
    mix_total_tiles = IntegerField('mix_total_tiles', minimum=0, optional=True)
    four_channel = BooleanField('four_channel', default=False,
                                doc='add the 4-channel rows to the substitution table')
    four_channel_patches = IntegerField('four_channel_patches', default=20, minimum=1,
                                        doc='patches per tile for the 4-channel runs')
    extractor = ChoiceField('extractor', choices=('random', 'inception'), default='random')
    overlap = IntegerField('overlap', default=0, minimum=0)

    class Meta:
        human_readable_name = 'plan'
        presets = {
            'desk': {
                'scale': 'desk',
                'toy': {'num_tiles': 20, 'val_tiles': 5, 'test_tiles': 5},
                'upstream': {'gan': DESK_GAN, 'patch': {'size': 64, 'per_tile_count': 20},
                             'num_tiles': 20},
                'downstream': {'in_channels': 3, 'num_classes': 4, 'base_width': 16,
                               'patch': {'size': 64, 'per_tile_count': 20},
                               'eval_window': 64, 'max_epochs': 30,
                               'early_stop_patience': 5},
                'four_channel_patches': 2,
            },
            'full': {
                'scale': 'full',
                'data': {'train': 'data/chesapeake/train.jsonl',
                         'val': 'data/chesapeake/val.jsonl',
                         'test': 'data/chesapeake/test.jsonl'},
                'upstream': {'gan': {}, 'patch': {'size': 256, 'per_tile_count': 200}},
                'downstream': {'in_channels': 3, 'num_classes': 6,
                               'patch': {'size': 256, 'per_tile_count': 200}},
                'extractor': 'inception',
                'four_channel': True,
            },
        }

    def validate(self):
        if self.upstream.gan.num_classes != self.downstream.num_classes:
            raise InvalidConfig(self.hrn, 'downstream', 'num_classes %d differs from the '
                                'generator\'s %d' % (self.downstream.num_classes,
                                                     self.upstream.gan.num_classes))
        return True


def seeded(plan):
    """Return ``plan`` with every component seed derived from ``plan.seed``."""
    root = plan.seed
    up, down = plan.upstream, plan.downstream
    return plan.replace(
        toy=plan.toy.replace(seed=derive_seed(root, 'toy')),
        upstream=up.replace(seed=derive_seed(root, 'upstream'),
                            selection_seed=derive_seed(root, 'selection'),
                            patch=up.patch.replace(seed=derive_seed(root, 'upstream-patches'))),
        downstream=down.replace(seed=derive_seed(root, 'downstream'),
                                patch=down.patch.replace(
                                    seed=derive_seed(root, 'downstream-patches'))),
    )


@dataclass
class ExperimentReport:
    kind: str
    rows: List[dict] = field(default_factory=list)
    table: Path = None


def _write_rows(path, columns, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def manifest_hash(manifest):
    """sha256 of a manifest's records with every URI made absolute."""
    def absolute(uri):
        return os.path.abspath(manifest.resolve(uri))

    records = [replace(r, image_uri=absolute(r.image_uri), mask_uri=absolute(r.mask_uri))
               for r in manifest.records]
    return sha256_hex(manifest.with_records(records).dumps())


def read_inputs(out_dir):
    path = Path(out_dir) / INPUTS_FILE
    if not path.is_file():
        return None
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def write_inputs(out_dir, inputs):
    """Record what a product was built from; a mismatch on rerun rebuilds it."""
    with open(Path(out_dir) / INPUTS_FILE, 'w', encoding='utf-8') as f:
        json.dump(inputs, f, sort_keys=True, indent=2)
        f.write('\n')


class Workspace(object):

    """Shared steps of every experiment, rooted at ``plan.out``."""

    def __init__(self, plan):
        self.plan = seeded(plan)
        self.out = Path(plan.out)
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / PLAN_FILE, 'w', encoding='utf-8') as f:
            yaml.safe_dump({'seed': plan.seed, 'config_hash': plan.config_hash(),
                            'plan': plan.to_dict()}, f, sort_keys=True)
        self._data = None

    def data(self):
        """(train, val, test) manifests; toy tiles are generated when no data is given."""
        if self._data is None:
            paths = self.plan.data
            if paths.complete:
                self._data = tuple(DatasetManifest.load(p)
                                   for p in (paths.train, paths.val, paths.test))
            elif self.plan.scale == 'desk':
                splits = make_toy_splits(self.plan.toy, self.out / 'data')
                self._data = (splits['train'], splits['val'], splits['test'])
            else:
                raise InvalidConfig(self.plan.hrn, 'data', 'full scale needs train, '
                                    'val and test manifests')
        return self._data

    def generator(self, weight, channels=None, per_tile_count=None, name=None):
        """Train (or reuse) the upstream model for one lambda."""
        config = self.plan.upstream.replace(diversity_weight=weight)
        if channels is not None:
            config = config.replace(gan=config.gan.replace(out_channels=channels))
        if per_tile_count is not None:
            config = config.replace(patch=config.patch.replace(per_tile_count=per_tile_count))
        out_dir = (self.out / 'upstream' / name) if name else lambda_dir(self.out / 'upstream',
                                                                          weight)
        path = out_dir / CHECKPOINT_FILE
        if path.is_file():
            ckpt = Checkpoint.load(path)
            if (ckpt.training_state or {}).get('config_hash') == config.config_hash():
                log.info('Reusing generator %s', path)
                return ckpt
        return train_upstream(config, out_dir, manifest=self.data()[0]).checkpoint

    def synthetic(self, ckpt, manifest, name, mode='prior', copies=1):
        out_dir = self.out / 'synthetic' / name
        path = out_dir / 'manifest.jsonl'
        job = SynthesisJob(mode=mode, copies=copies, overlap=self.plan.overlap,
                           seed=derive_seed(self.plan.seed, 'synthesis', name))
        inputs = {'checkpoint': ckpt.digest(), 'masks': manifest_hash(manifest),
                  'job': job.config_hash()}
        if path.is_file() and read_inputs(out_dir) == inputs:
            log.info('Reusing synthetic set %s', path)
            return DatasetManifest.load(path)
        synth = synthesize_dataset(job, out_dir, checkpoint=ckpt, manifest=manifest)
        write_inputs(out_dir, inputs)
        return synth

    def downstream(self, manifest, name, channels=None, per_tile_count=None):
        """Train a U-Net on ``manifest`` and return its test SegMetrics."""
        config = self.plan.downstream
        if channels is not None:
            config = config.replace(in_channels=channels)
        if per_tile_count is not None:
            config = config.replace(patch=config.patch.replace(per_tile_count=per_tile_count))
        _, val, test = self.data()
        out_dir = self.out / 'downstream' / name
        path = out_dir / SEG_CHECKPOINT_FILE
        inputs = {'config': config.config_hash(), 'train': manifest_hash(manifest),
                  'val': manifest_hash(val)}
        if path.is_file() and read_inputs(out_dir) == inputs:
            log.info('Reusing segmentation model %s', path)
            ckpt = SegCheckpoint.load(path)
        else:
            ckpt = train_downstream(config, manifest, val, out_dir=out_dir).checkpoint
            write_inputs(out_dir, inputs)
        metrics, _ = evaluate(ckpt, test, config)
        return metrics

    @property
    def channels(self):
        return self.plan.upstream.gan.out_channels


def run_lambda_sweep(plan):
    """lambda, downstream mIoU on 100% synthetic, FID in prior and encoder mode."""
    ws = Workspace(plan)
    train, _, test = ws.data()
    extractor = get_extractor(plan.extractor, seed=derive_seed(plan.seed, 'extractor'))
    rows = []
    for weight in plan.lambdas:
        label = 'lambda-%s' % format_float(weight, 2)
        ckpt = ws.generator(weight)
        synth_train = ws.synthetic(ckpt, train, '%s-train' % label)
        metrics = ws.downstream(synth_train, '%s-synthetic' % label, channels=ws.channels)
        fid = {}
        for mode in ('prior', 'encoder'):
            synth_test = ws.synthetic(ckpt, test, '%s-test-%s' % (label, mode), mode=mode)
            report = compute_fid(test, synth_test, extractor, mode,
                                 patch_size=plan.upstream.gan.resolution,
                                 checkpoint_hash=ckpt.digest())
            report.save(ws.out / 'synthetic' / ('%s-test-%s' % (label, mode)) / 'fid.json')
            fid[mode] = report.value
        rows.append({'lambda': format_float(weight, 2), 'miou': format_float(metrics.miou),
                     'fid_a': format_float(fid['prior']), 'fid_b': format_float(fid['encoder'])})
    table = _write_rows(ws.out / LAMBDA_FILE, ('lambda', 'miou', 'fid_a', 'fid_b'), rows)
    log.info('Lambda sweep over %s written to %s', count_of('value', len(rows)), table)
    return ExperimentReport('lambda_sweep', rows, table)


def run_substitution(plan):
    """Per-class IoU for real, N-times synthetic and (optionally) 4-channel training sets."""
    ws = Workspace(plan)
    train, _, _ = ws.data()
    ckpt = ws.generator(plan.synthesis_lambda)
    runs = [('100% real', ws.downstream(train, 'real', channels=ws.channels))]
    for copies in plan.copies:
        synth = ws.synthetic(ckpt, train, 'substitution-x%d' % copies, copies=copies)
        runs.append(('%d%% synthetic' % (100 * copies),
                     ws.downstream(synth, 'synthetic-x%d' % copies, channels=ws.channels)))
    if plan.four_channel:
        runs.append(('100% real*', ws.downstream(train, 'real-4ch', channels=4)))
        ckpt4 = ws.generator(0.0, channels=4, per_tile_count=plan.four_channel_patches,
                             name='four-channel')
        synth4 = ws.synthetic(ckpt4, train, 'substitution-4ch')
        runs.append(('100% synthetic*', ws.downstream(synth4, 'synthetic-4ch', channels=4,
                                                      per_tile_count=plan.four_channel_patches)))
    names = class_names_for(plan.downstream.num_classes)
    table = write_iou_table(runs, ws.out / SUBSTITUTION_FILE, names)
    rows = [dict(zip(['run'] + names + ['Mean'], [label] + m.row())) for label, m in runs]
    return ExperimentReport('substitution', rows, table)


def plot_mix_sweep(rows, path):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    ps = [float(r['p']) for r in rows]
    mious = [float(r['miou']) if r['miou'] else float('nan') for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ps, mious, marker='o')
    ax.set_xlabel('proportion of synthetic tiles p')
    ax.set_ylabel('test mIoU')
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={'Software': None})
    plt.close(fig)
    return path


def run_mix_sweep(plan):
    """Downstream mIoU as a growing share of real tiles is swapped for synthetic ones."""
    ws = Workspace(plan)
    train, _, _ = ws.data()
    ckpt = ws.generator(plan.synthesis_lambda)
    synth = ws.synthetic(ckpt, train, 'substitution-x1')
    total = plan.mix_total_tiles
    if total is None:
        total = len(train.tile_ids())
    rows = []
    for p in plan.p_grid:
        mix = MixSpec(synthetic_fraction=p, total_tiles=total,
                      seed=derive_seed(plan.seed, 'mix'))
        manifest = build_mix_manifest(train, synth, mix)
        name = 'real' if mix.synthetic_count == 0 and total == len(train.tile_ids()) \
            else 'mix-p%s' % format_float(p, 2)
        metrics = ws.downstream(manifest, name, channels=ws.channels)
        rows.append({'p': format_float(p, 2), 'miou': format_float(metrics.miou)})
    table = _write_rows(ws.out / MIX_FILE, ('p', 'miou'), rows)
    plot_mix_sweep(rows, ws.out / MIX_PLOT)
    return ExperimentReport('mix_sweep', rows, table)


RUNNERS = {
    'lambda_sweep': run_lambda_sweep,
    'substitution': run_substitution,
    'mix_sweep': run_mix_sweep,
}


def run_plan(plan):
    return RUNNERS[plan.kind](plan)


def _markdown_table(rows):
    if not rows:
        return '_empty_\n'
    columns = list(rows[0])
    lines = ['| %s |' % ' | '.join(columns),
             '|%s|' % '|'.join('---' for _ in columns)]
    lines += ['| %s |' % ' | '.join(row[c] for c in columns) for row in rows]
    return '\n'.join(lines) + '\n'


def build_report(out_dir):
    """
    Merge the finished tables under ``out_dir`` into report.json and report.md.

    Returns the report mapping.  Tables that are missing are skipped.
    """
    out_dir = Path(out_dir)
    header = {}
    plan_path = out_dir / PLAN_FILE
    if plan_path.is_file():
        with open(plan_path, encoding='utf-8') as f:
            saved = yaml.safe_load(f) or {}
        header = {'seed': saved.get('seed'), 'config_hash': saved.get('config_hash')}
    tables = {}
    for name, filename in TABLES:
        path = out_dir / filename
        if path.is_file():
            with open(path, newline='', encoding='utf-8') as f:
                tables[name] = list(csv.DictReader(f))
    report = dict(header, tables=tables)
    with open(out_dir / 'report.json', 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write('\n')
    parts = ['# Experiment report\n',
             'seed: %s  \nconfig hash: %s\n' % (header.get('seed'), header.get('config_hash'))]
    for name, rows in tables.items():
        parts.append('\n## %s\n\n%s' % (name.replace('_', ' '), _markdown_table(rows)))
    with open(out_dir / 'report.md', 'w', encoding='utf-8') as f:
        f.write(''.join(parts))
    log.info('Report with %s written to %s', count_of('table', len(tables)), out_dir)
    return report
