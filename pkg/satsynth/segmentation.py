"""
Downstream land-cover segmentation: a U-Net, its trainer and evaluation.

The trainer keeps the weights of the epoch with the best validation mIoU and
stops once ``early_stop_patience`` epochs in a row have not improved on it.
Evaluation runs the model window by window over whole tiles and accumulates a
single confusion matrix over every test pixel.
"""
import copy
import csv
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader

from satsynth.checkpoint import FORMAT_VERSION, read_archive, write_archive
from satsynth.config import ConfigNode
from satsynth.exceptions import (
    ArgumentError,
    CheckpointError,
    InvalidConfig,
    NonFiniteLoss,
)
from satsynth.fields import BooleanField, IntegerField, FloatField, NestedField
from satsynth.ingest import PatchDataset, PatchSpec, TileReader
from satsynth.logging import ProxyLogger
from satsynth.metrics import ConfusionMatrix, iou_from_cm
from satsynth.synthesis import plan_grid, stitch_tile
from satsynth.upstream import epoch_order, init_weights
from satsynth.utils import count_of, derive_seed, format_float


log = logging.getLogger(__name__)

HISTORY_COLUMNS = ('epoch', 'train_loss', 'val_miou')
CHECKPOINT_FILE = 'segmentation.ckpt'
HISTORY_FILE = 'metric_history.csv'


class SegConfig(ConfigNode):
    in_channels = IntegerField('in_channels', default=4, minimum=1)
    num_classes = IntegerField('num_classes', default=6, minimum=1)
    lr = FloatField('lr', default=1e-4, minimum=0.0, exclusive_minimum=True)
    adam_beta1 = FloatField('adam_beta1', default=0.0, minimum=0.0, maximum=1.0)
    adam_beta2 = FloatField('adam_beta2', default=0.9, minimum=0.0, maximum=1.0)
    early_stop_patience = IntegerField('early_stop_patience', default=10, minimum=1)
    batch_size = IntegerField('batch_size', default=10, minimum=1)
    max_epochs = IntegerField('max_epochs', default=100, minimum=1)
    depth = IntegerField('depth', default=4, minimum=1)
    base_width = IntegerField('base_width', default=64, minimum=1)
    patch = NestedField('patch', PatchSpec)
    eval_window = IntegerField('eval_window', default=256, minimum=1)
    eval_stride = IntegerField('eval_stride', minimum=1, optional=True,
                               doc='defaults to eval_window (no overlap)')
    overlap_average = BooleanField('overlap_average', default=False)
    workers = IntegerField('workers', default=0, minimum=0)
    seed = IntegerField('seed', default=0)

    class Meta:
        human_readable_name = 'downstream'

    def validate(self):
        if self.in_channels not in (3, 4):
            raise InvalidConfig(self.hrn, 'in_channels', 'must be 3 or 4')
        factor = 2 ** self.depth
        for key, size in (('patch', self.patch.size), ('eval_window', self.eval_window)):
            if size % factor:
                raise InvalidConfig(self.hrn, key, '%d is not divisible by 2^%d'
                                    % (size, self.depth))
        if self.eval_stride is not None and self.eval_stride > self.eval_window:
            raise InvalidConfig(self.hrn, 'eval_stride', 'must not exceed eval_window')
        return True

    @property
    def stride(self):
        if self.overlap_average and self.eval_stride is not None:
            return self.eval_stride
        return self.eval_window


class DoubleConv(nn.Sequential):

    def __init__(self, fin, fout):
        super().__init__(
            nn.Conv2d(fin, fout, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(fout),
            nn.ReLU(inplace=True),
            nn.Conv2d(fout, fout, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(fout),
            nn.ReLU(inplace=True),
        )


class UNet(nn.Module):

    def __init__(self, in_channels, num_classes, depth=4, base_width=64):
        super().__init__()
        self.depth = depth
        widths = [base_width * 2 ** i for i in range(depth + 1)]
        self.inc = DoubleConv(in_channels, widths[0])
        self.downs = nn.ModuleList(DoubleConv(widths[i], widths[i + 1]) for i in range(depth))
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], kernel_size=2, stride=2)
            for i in reversed(range(depth)))
        self.up_convs = nn.ModuleList(
            DoubleConv(widths[i] * 2, widths[i]) for i in reversed(range(depth)))
        self.outc = nn.Conv2d(widths[0], num_classes, kernel_size=1)

    def forward(self, x):
        factor = 2 ** self.depth
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ArgumentError('input %dx%d is not divisible by 2^%d'
                                % (x.shape[2], x.shape[3], self.depth))
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(F.max_pool2d(skips[-1], 2)))
        x = skips.pop()
        for up, conv in zip(self.ups, self.up_convs):
            x = conv(torch.cat([skips.pop(), up(x)], dim=1))
        return self.outc(x)


def build_unet(config):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(config.seed, 'construct-unet'))
        net = UNet(config.in_channels, config.num_classes, config.depth, config.base_width)
    return init_weights(net, 'xavier', derive_seed(config.seed, 'init-unet'))


def unet_forward(model, image):
    """Logits for one image (C x H x W) or a batch (N x C x H x W)."""
    single = image.dim() == 3
    if single:
        image = image.unsqueeze(0)
    logits = model(image)
    return logits[0] if single else logits


class EarlyStopping(object):

    """Tracks the best value; ``should_stop`` after ``patience`` epochs without improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = None
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, value, epoch):
        """Record one epoch; return True when it is a new best."""
        if self.best is None or value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


@dataclass(eq=False)
class SegCheckpoint:
    config: SegConfig
    weights: OrderedDict
    epoch: int = 0
    val_miou: Optional[float] = None
    path: Optional[str] = None

    @classmethod
    def from_model(cls, config, model, epoch, val_miou):
        weights = OrderedDict((k, v.detach().cpu().numpy().copy())
                              for k, v in model.state_dict().items())
        return cls(config=config, weights=weights, epoch=epoch, val_miou=val_miou)

    def build_model(self):
        model = UNet(self.config.in_channels, self.config.num_classes, self.config.depth,
                     self.config.base_width)
        try:
            model.load_state_dict({k: torch.from_numpy(np.array(v))
                                   for k, v in self.weights.items()})
        except RuntimeError as e:
            raise CheckpointError(self.path or '<memory>', 'weights do not fit config: %s' % e)
        return model.eval()

    def save(self, path):
        write_archive(path, {'format_version': FORMAT_VERSION,
                             'segmentation': self.config.to_dict(),
                             'epoch': self.epoch, 'val_miou': self.val_miou},
                      self.weights)
        self.path = str(path)
        return Path(path)

    @classmethod
    def load(cls, path):
        header, weights, _ = read_archive(path)
        if 'segmentation' not in header:
            raise CheckpointError(str(path), 'not a segmentation checkpoint')
        return cls(config=SegConfig.from_dict(header['segmentation']), weights=weights,
                   epoch=header.get('epoch', 0), val_miou=header.get('val_miou'),
                   path=str(path))


@dataclass
class SegResult:
    checkpoint: SegCheckpoint
    model: nn.Module
    history: List[dict] = field(default_factory=list)
    stopped_early: bool = False


def write_metric_history(history, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row['epoch'], format_float(row['train_loss'], 8),
                             format_float(row['val_miou'], 8)])
    return path


@torch.no_grad()
def patch_miou(model, dataset, config):
    """mIoU of ``model`` over a patch dataset (0.0 when nothing is scored)."""
    model.eval()
    cm = ConfusionMatrix(config.num_classes)
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=False)
    for batch in loader:
        pred = model(batch['image']).argmax(dim=1)
        cm.update(pred.numpy(), batch['mask'].numpy())
    miou = iou_from_cm(cm).miou
    return 0.0 if miou is None else miou


def train_downstream(config, manifest, val_manifest, out_dir=None, logger=None):
    """
    Train a U-Net with early stopping on validation mIoU.

    Returns a :class:`SegResult` whose model carries the best-validation
    weights.  With ``out_dir`` the best checkpoint and ``metric_history.csv``
    are written there.
    """
    logger = logger or ProxyLogger(log)
    if len(manifest) == 0 or len(val_manifest) == 0:
        raise ArgumentError('training and validation manifests must not be empty')
    train_set = PatchDataset(manifest, config.patch, channels=config.in_channels)
    val_set = PatchDataset(val_manifest, PatchSpec(size=config.patch.size, per_tile_count=0),
                           channels=config.in_channels, grid=True)
    for name, dataset in (('training', train_set), ('validation', val_set)):
        if dataset.num_classes != config.num_classes:
            raise InvalidConfig(config.hrn, 'num_classes', '%s tiles have %d classes'
                                % (name, dataset.num_classes))
    out_dir = Path(out_dir) if out_dir is not None else None
    seed = derive_seed(config.seed, 'downstream')

    model = build_unet(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr,
                                 betas=(config.adam_beta1, config.adam_beta2))
    stopper = EarlyStopping(config.early_stop_patience)
    best_state = None
    history = []
    step = 0
    logger.info('Training U-Net on %s, validating on %s',
                count_of('patch', len(train_set)), count_of('patch', len(val_set)))
    for epoch in range(config.max_epochs):
        model.train()
        loader = DataLoader(train_set, batch_size=config.batch_size,
                            sampler=epoch_order(seed, epoch, len(train_set)),
                            num_workers=config.workers)
        total, batches = 0.0, 0
        for batch in loader:
            loss = F.cross_entropy(model(batch['image']), batch['mask'])
            value = loss.item()
            if not math.isfinite(value):
                ids = [int(i) for i in batch['index']]
                snapshot = None
                if out_dir is not None:
                    out_dir.mkdir(parents=True, exist_ok=True)
                    snapshot = str(out_dir / 'diagnostic.json')
                    with open(snapshot, 'w', encoding='utf-8') as f:
                        json.dump({'step': step, 'epoch': epoch, 'component': 'cross_entropy',
                                   'batch_ids': ids}, f, indent=2, sort_keys=True)
                raise NonFiniteLoss(step, 'cross_entropy', ids, snapshot)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += value
            batches += 1
            step += 1
        val_miou = patch_miou(model, val_set, config)
        history.append({'epoch': epoch, 'train_loss': total / max(batches, 1),
                        'val_miou': val_miou})
        if stopper.update(val_miou, epoch):
            best_state = copy.deepcopy(model.state_dict())
        log.debug('epoch %d loss=%.4f val_miou=%.4f', epoch, history[-1]['train_loss'],
                  val_miou)
        if stopper.should_stop:
            logger.info('Early stop after epoch %d (best %d, mIoU %.4f)', epoch,
                        stopper.best_epoch, stopper.best)
            break

    model.load_state_dict(best_state)
    model.eval()
    ckpt = SegCheckpoint.from_model(config, model, stopper.best_epoch, stopper.best)
    if out_dir is not None:
        ckpt.save(out_dir / CHECKPOINT_FILE)
        write_metric_history(history, out_dir / HISTORY_FILE)
    return SegResult(checkpoint=ckpt, model=model, history=history,
                     stopped_early=stopper.should_stop)


def model_predictor(model):
    """Wrap a network as a batch -> logits callable in inference mode."""
    model.eval()

    def predict(images):
        with torch.no_grad():
            return model(images)

    return predict


def evaluate_predictor(predict, manifest, num_classes, channels=None, window=256,
                       stride=None):
    """
    Sliding-window evaluation of any ``predict(images) -> logits`` callable.

    With ``stride`` below ``window`` overlapping logits are cross-faded with
    the stitcher's blend weights before the argmax.
    """
    stride = window if stride is None else stride
    cm = ConfusionMatrix(num_classes)
    for record in manifest.records:
        reader = TileReader(manifest.resolve(record.image_uri),
                            mask_uri=manifest.resolve(record.mask_uri))
        grid = plan_grid(reader.height, reader.width, window, overlap=window - stride)
        logits = []
        for win in grid.windows:
            image, _ = reader.read_window(win, channels=channels)
            out = predict(torch.from_numpy(np.ascontiguousarray(image)).unsqueeze(0))
            logits.append(torch.as_tensor(out)[0].double().numpy())
        full = stitch_tile(logits, grid, clip=False)
        cm.update(full.argmax(axis=0), reader.read_mask())
    return iou_from_cm(cm), cm


def evaluate(seg_ckpt, test_manifest, config=None):
    """
    Test-set metrics for a trained model.

    ``seg_ckpt`` is a SegCheckpoint (or a path to one).  Returns the
    SegMetrics (class columns in index order) and the confusion matrix.
    """
    if not isinstance(seg_ckpt, SegCheckpoint):
        seg_ckpt = SegCheckpoint.load(seg_ckpt)
    config = config or seg_ckpt.config
    metrics, cm = evaluate_predictor(model_predictor(seg_ckpt.build_model()), test_manifest,
                                     config.num_classes, channels=config.in_channels,
                                     window=config.eval_window, stride=config.stride)
    log.info('Test mIoU %s over %s', format_float(metrics.miou, 4),
             count_of('pixel', cm.total))
    return metrics, cm
