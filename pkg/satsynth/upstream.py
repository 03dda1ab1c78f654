"""
Upstream GAN training.

Each batch takes one discriminator step and then one generator step.  All
randomness is keyed by the run seed: the patch windows by (seed, tile), the
batch order by (seed, epoch) and the latent noise by (seed, step).  A run
stopped after any step and resumed from its checkpoint therefore replays the
uninterrupted loss trajectory.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader

from satsynth.checkpoint import Checkpoint
from satsynth.config import ConfigNode
from satsynth.exceptions import (
    ArgumentError,
    CheckpointError,
    InvalidConfig,
    NonFiniteLoss,
)
from satsynth.fields import (
    ChoiceField,
    FloatField,
    IntegerField,
    NestedField,
    StringField,
)
from satsynth.ingest import PatchDataset, PatchSpec, one_hot_planes
from satsynth.logging import ProxyLogger
from satsynth.losses import (
    DiversityConfig,
    LossWeights,
    diversity_term,
    feature_matching,
    generator_objective,
    hinge_d,
    hinge_g,
    kld_term,
)
from satsynth.manifest import DatasetManifest, select_tiles
from satsynth.networks import GanConfig, SpadeGAN, reparameterize, sample_prior
from satsynth.utils import count_of, derive_seed, format_float


log = logging.getLogger(__name__)

HISTORY_COLUMNS = ('step', 'epoch', 'd_loss', 'g_gan', 'g_fm', 'g_kld', 'g_div', 'total')
CHECKPOINT_FILE = 'checkpoint.ckpt'
HISTORY_FILE = 'loss_history.csv'
SELECTION_FILE = 'selection.json'
DIAGNOSTIC_FILE = 'diagnostic.json'


class UpstreamConfig(ConfigNode):
    lr = FloatField('lr', default=0.0002, minimum=0.0, exclusive_minimum=True)
    adam_beta1 = FloatField('adam_beta1', default=0.0, minimum=0.0, maximum=1.0)
    adam_beta2 = FloatField('adam_beta2', default=0.9, minimum=0.0, maximum=1.0)
    batch_size = IntegerField('batch_size', default=10, minimum=1)
    epochs = IntegerField('epochs', default=4, minimum=1)
    init = ChoiceField('init', choices=('xavier',), default='xavier')
    diversity_weight = FloatField('lambda', default=0.0, minimum=0.0,
                                  doc='weight of the diversity term (0 disables it)')
    clamp = FloatField('clamp', default=10.0, minimum=0.0, exclusive_minimum=True)
    patch = NestedField('patch', PatchSpec)
    gan = NestedField('gan', GanConfig)
    weights = NestedField('weights', LossWeights)
    tiles = StringField('tiles', optional=True, doc='path of the training manifest')
    num_tiles = IntegerField('num_tiles', default=50, minimum=1, optional=True,
                             doc='tiles drawn from the manifest (null keeps all)')
    selection_seed = IntegerField('selection_seed', default=0)
    max_steps = IntegerField('max_steps', minimum=1, optional=True)
    checkpoint_every = IntegerField('checkpoint_every', minimum=1, optional=True)
    workers = IntegerField('workers', default=0, minimum=0)
    seed = IntegerField('seed', default=0)

    class Meta:
        human_readable_name = 'upstream'

    def validate(self):
        if self.patch.size != self.gan.resolution:
            raise InvalidConfig(self.hrn, 'patch', 'patch size %d does not match the '
                                'generator resolution %d' % (self.patch.size,
                                                             self.gan.resolution))
        return True

    @property
    def diversity(self):
        return DiversityConfig(weight=self.diversity_weight, clamp=self.clamp)


@dataclass
class UpstreamResult:
    checkpoint: Checkpoint
    history: List[dict] = field(default_factory=list)
    out_dir: Optional[Path] = None

    @property
    def checkpoint_path(self):
        return self.checkpoint.path


def init_weights(net, scheme='xavier', seed=0):
    """
    Xavier-uniform weights and zero biases for every convolution and linear
    layer of ``net``.  The global RNG state is left untouched.
    """
    if scheme != 'xavier':
        raise ArgumentError('unknown init scheme %r' % scheme)
    layer_types = (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        with torch.no_grad():
            for module in net.modules():
                if not isinstance(module, layer_types):
                    continue
                weight = getattr(module, 'weight_orig', None)
                if weight is None:
                    weight = module.weight
                nn.init.xavier_uniform_(weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
    return net


def build_gan(config, seed):
    """A freshly initialised SpadeGAN; construction itself draws from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, 'construct'))
        model = SpadeGAN(config)
    return init_weights(model, 'xavier', derive_seed(seed, 'init'))


def step_noise(seed, step, batch_size, z_dim):
    """(encoder noise, z1, z2) for one step; a pure function of (seed, step)."""
    gen = torch.Generator().manual_seed(derive_seed(seed, 'step', step))
    return tuple(sample_prior(batch_size, z_dim, gen) for _ in range(3))


def epoch_order(seed, epoch, length):
    rng = np.random.default_rng(derive_seed(seed, 'epoch', epoch))
    return rng.permutation(length).tolist()


def write_history(history, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row['step'], row['epoch']]
                            + [format_float(row[c], 8) for c in HISTORY_COLUMNS[2:]])
    return path


class UpstreamTrainer(object):

    """
    Owns the model and both optimizers for one run.

    The trainer is the only writer of the network parameters.
    """

    def __init__(self, config, manifest, out_dir, logger=None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.logger = logger or ProxyLogger(log)
        if len(manifest) == 0:
            raise ArgumentError('the training manifest is empty')
        self.manifest = select_tiles(manifest, config.num_tiles, config.selection_seed)
        self.dataset = PatchDataset(self.manifest, config.patch,
                                    channels=config.gan.out_channels)
        if len(self.dataset) == 0:
            raise ArgumentError('the training manifest yields no patches')
        if self.dataset.num_classes != config.gan.num_classes:
            raise InvalidConfig('gan', 'num_classes', 'tiles have %d classes, config %d'
                                % (self.dataset.num_classes, config.gan.num_classes))
        self.steps_per_epoch = math.ceil(len(self.dataset) / config.batch_size)
        self.total_steps = self.steps_per_epoch * config.epochs
        if config.max_steps is not None:
            self.total_steps = min(self.total_steps, config.max_steps)

        self.model = build_gan(config.gan, config.seed)
        self.model.train()
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_g = torch.optim.Adam(self.model.generator_parameters(), lr=config.lr,
                                      betas=betas)
        self.opt_d = torch.optim.Adam(self.model.discriminator.parameters(), lr=config.lr,
                                      betas=betas)
        self.step = 0
        self.history = []

    def write_selection(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / SELECTION_FILE
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({'selection_seed': self.config.selection_seed,
                       'num_tiles': self.config.num_tiles,
                       'tile_ids': self.manifest.tile_ids()}, f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    def training_state(self):
        return {
            'step': self.step,
            'seed': self.config.seed,
            'diversity_weight': self.config.diversity_weight,
            'clamp': self.config.clamp,
            'config_hash': self.config.config_hash(),
            'optimizer_g': self.opt_g.state_dict(),
            'optimizer_d': self.opt_d.state_dict(),
            'history': list(self.history),
        }

    def checkpoint(self):
        return Checkpoint.from_model(self.model, training_state=self.training_state())

    def restore(self, ckpt):
        state = ckpt.training_state
        if state is None:
            raise CheckpointError(ckpt.path, 'no training state to resume from')
        if state.get('config_hash') != self.config.config_hash():
            raise CheckpointError(ckpt.path, 'was written by a run with a different config')
        self.model.load_state_dict({k: torch.from_numpy(np.array(v))
                                    for k, v in ckpt.weights.items()})
        self.opt_g.load_state_dict(state['optimizer_g'])
        self.opt_d.load_state_dict(state['optimizer_d'])
        self.step = int(state['step'])
        self.history = list(state['history'])
        self.logger.info('Resumed at step %d', self.step)

    def _check_finite(self, values, batch_ids):
        # components before the total they feed
        for name in sorted(values, key=lambda n: n == 'total'):
            value = values[name]
            if not math.isfinite(value):
                snapshot = self.out_dir / DIAGNOSTIC_FILE
                self.out_dir.mkdir(parents=True, exist_ok=True)
                with open(snapshot, 'w', encoding='utf-8') as f:
                    json.dump({'step': self.step, 'component': name,
                               'batch_ids': list(batch_ids),
                               'tiles': [self.dataset.describe(i)[0] for i in batch_ids],
                               'finite': {k: v for k, v in values.items()
                                          if math.isfinite(v)}},
                              f, indent=2, sort_keys=True)
                raise NonFiniteLoss(self.step, name, batch_ids, str(snapshot))

    def train_step(self, batch):
        cfg = self.config
        model = self.model
        real = batch['image']
        planes = one_hot_planes(batch['mask'], cfg.gan.num_classes)
        batch_ids = [int(i) for i in batch['index']]
        eps, z1, z2 = step_noise(cfg.seed, self.step, real.shape[0], cfg.gan.z_dim)

        # discriminator
        with torch.no_grad():
            fake = model.generate(planes, reparameterize(model.encode(real), eps))
        d_fake = model.discriminate(fake, planes)
        d_real = model.discriminate(real, planes)
        d_loss = hinge_d(d_real.logits, d_fake.logits)
        self.opt_d.zero_grad()
        d_loss.backward()
        self.opt_d.step()

        # generator
        stats = model.encode(real)
        fake = model.generate(planes, reparameterize(stats, eps))
        g_fake = model.discriminate(fake, planes)
        with torch.no_grad():
            g_real = model.discriminate(real, planes)
        div = None
        if cfg.diversity_weight > 0:
            div = diversity_term(model.generate(planes, z1), model.generate(planes, z2),
                                 z1, z2, cfg.diversity)
        parts = generator_objective(hinge_g(g_fake.logits),
                                    feature_matching(g_real.features, g_fake.features),
                                    kld_term(stats), div, cfg.weights, cfg.diversity)
        values = parts.as_floats()
        values['d_loss'] = d_loss.item()
        self._check_finite(values, batch_ids)
        self.opt_g.zero_grad()
        parts.total.backward()
        self.opt_g.step()

        row = {'step': self.step, 'epoch': self.step // self.steps_per_epoch,
               'd_loss': values['d_loss'], 'g_gan': values['gan'],
               'g_fm': values['feature_matching'], 'g_kld': values['kld'],
               'g_div': values['diversity'], 'total': values['total']}
        self.history.append(row)
        self.step += 1
        return row

    def batches(self, start_step):
        """Batches from ``start_step`` on, in the seed-determined order."""
        cfg = self.config
        epoch = start_step // self.steps_per_epoch
        skip = (start_step % self.steps_per_epoch) * cfg.batch_size
        while epoch < cfg.epochs:
            order = epoch_order(cfg.seed, epoch, len(self.dataset))[skip:]
            loader = DataLoader(self.dataset, batch_size=cfg.batch_size, sampler=order,
                                num_workers=cfg.workers)
            for batch in loader:
                yield batch
            epoch += 1
            skip = 0

    def run(self, stop_after=None):
        """Train until the configured budget (or ``stop_after`` total steps)."""
        cfg = self.config
        end = self.total_steps if stop_after is None else min(stop_after, self.total_steps)
        if self.step >= end:
            return self.history
        self.logger.info('Training %s (lambda=%s) from step %d to %d',
                         count_of('patch', len(self.dataset)), cfg.diversity_weight,
                         self.step, end)
        for batch in self.batches(self.step):
            if self.step >= end:
                break
            row = self.train_step(batch)
            if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                self.checkpoint().save(self.out_dir / 'checkpoints'
                                       / ('step-%06d.ckpt' % self.step))
            if row['step'] % 100 == 0:
                log.debug('step %d d=%.4f g=%.4f div=%.4f', row['step'], row['d_loss'],
                          row['total'], row['g_div'])
        return self.history


def train_upstream(config, out_dir, manifest=None, resume_from=None, stop_after=None):
    """
    Train one SPADE GAN and persist ``checkpoint.ckpt`` and ``loss_history.csv``.

    ``manifest`` defaults to the one named by ``config.tiles``.  With
    ``resume_from`` (a checkpoint path written by this function) training
    continues from the stored step.
    """
    if manifest is None:
        if config.tiles is None:
            raise InvalidConfig(config.hrn, 'tiles', 'no manifest given')
        manifest = DatasetManifest.load(config.tiles)
    trainer = UpstreamTrainer(config, manifest, out_dir)
    trainer.write_selection()
    if resume_from is not None:
        trainer.restore(Checkpoint.load(resume_from))
    history = trainer.run(stop_after=stop_after)
    ckpt = trainer.checkpoint()
    ckpt.save(trainer.out_dir / CHECKPOINT_FILE)
    write_history(history, trainer.out_dir / HISTORY_FILE)
    log.info('Finished upstream run after %s; checkpoint at %s',
             count_of('step', trainer.step), ckpt.path)
    return UpstreamResult(checkpoint=ckpt, history=history, out_dir=trainer.out_dir)


def lambda_dir(out_dir, weight):
    return Path(out_dir) / ('lambda-%s' % format_float(weight, 2))


def lambda_sweep(base, lambdas, out_dir, manifest=None):
    """One run per lambda; everything else (seeds, tiles, data order) is shared."""
    results = []
    for weight in lambdas:
        config = base.replace(diversity_weight=weight)
        results.append(train_upstream(config, lambda_dir(out_dir, weight), manifest=manifest))
    return results
