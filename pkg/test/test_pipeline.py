# -*- coding: utf-8 -*-
"""Desk-scale runs of the whole pipeline; minutes each, so marked slow."""

import csv
import itertools
import math

import numpy as np
import pytest
import torch
import yaml

from satsynth import cli
from satsynth.ingest import ClassMask, PatchSpec
from satsynth.networks import GanConfig
from satsynth.synthesis import synthesize_patch
from satsynth.toy import ToyDatasetSpec, make_toy_dataset, make_toy_tile
from satsynth.upstream import UpstreamConfig, train_upstream


pytestmark = pytest.mark.slow


def sample_spread(model, mask, samples=16):
    """Mean pairwise mean-absolute distance among ``samples`` prior draws for one mask."""
    images = [synthesize_patch(model, mask, 'prior', seed=s) for s in range(samples)]
    return float(np.mean([(a - b).abs().mean().item()
                          for a, b in itertools.combinations(images, 2)]))


def test_diversity_weight_spreads_samples(tmp_path):
    spec = ToyDatasetSpec(num_tiles=8, tile_size=48, seed=0)
    manifest = make_toy_dataset(spec, tmp_path / 'toy')
    gan = GanConfig(z_dim=16, base_width=4, num_spade_blocks=4, resolution=32,
                    num_classes=4, spade_hidden=8, encoder_width=4, disc_width=4,
                    disc_layers=3, disc_scales=2)
    base = UpstreamConfig(gan=gan, patch=PatchSpec(size=32, per_tile_count=4), batch_size=4,
                          epochs=50, max_steps=400, num_tiles=None, seed=11)
    models = {}
    for weight in (0.0, 8.0):
        result = train_upstream(base.replace(diversity_weight=weight),
                                tmp_path / ('lambda-%g' % weight), manifest=manifest)
        assert all(math.isfinite(row['total']) for row in result.history)
        models[weight] = result.checkpoint.build_model()

    masks = []
    for index in range(100, 104):
        tile = make_toy_tile(spec, index)
        masks.append(ClassMask(tile.mask.classes[:32, :32], 4))
    with torch.no_grad():
        spread = {w: np.mean([sample_spread(m, mask) for mask in masks])
                  for w, m in models.items()}
    assert spread[8.0] > spread[0.0]


def finite_columns(path, skip):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return rows, all(math.isfinite(float(v)) for row in rows for k, v in row.items()
                     if k not in skip)


def test_command_line_study(tmp_path, capsys):
    config = tmp_path / 'plan.yaml'
    with open(config, 'w') as f:
        yaml.safe_dump({'scale': 'desk', 'seed': 0, 'upstream': {'epochs': 30}}, f)
    data, gen, synth, seg = (tmp_path / d for d in ('data', 'gen', 'synth', 'seg'))

    def run(*argv):
        assert cli.main(list(argv) + ['--config', str(config), '-q']) == 0

    run('make-toy', '--out', str(data))
    run('train-upstream', '--out', str(gen), '--tiles', str(data / 'train.jsonl'),
        '--lambda', '4', '--stop-after', '1200')
    rows, finite = finite_columns(gen / 'loss_history.csv', ('step', 'epoch'))
    assert len(rows) == 1200
    assert finite

    run('synthesize', '--out', str(synth), '--checkpoint', str(gen / 'checkpoint.ckpt'),
        '--masks', str(data / 'train.jsonl'), '--copies', '1', '--mode', 'prior')
    run('train-downstream', '--out', str(seg), '--train', str(synth / 'manifest.jsonl'),
        '--val', str(data / 'val.jsonl'))
    _, finite = finite_columns(seg / 'metric_history.csv', ('epoch',))
    assert finite

    capsys.readouterr()
    run('eval-seg', '--out', str(seg), '--checkpoint', str(seg / 'segmentation.ckpt'),
        '--test', str(data / 'test.jsonl'), '--label', 'synthetic')
    assert float(capsys.readouterr().out) >= 0.6
