# -*- coding: utf-8 -*-

import json

import numpy as np
import pytest
import torch

from satsynth.checkpoint import Checkpoint
from satsynth.exceptions import (
    ArgumentError,
    InvalidConfig,
    MissingReferenceImage,
    ShapeMismatch,
)
from satsynth.ingest import ClassMask, load_tile
from satsynth.manifest import validate_manifest
from satsynth.synthesis import (
    MANIFEST_FILE,
    PROVENANCE_FILE,
    SynthesisJob,
    blend_weights,
    plan_grid,
    stitch_tile,
    synthesize_dataset,
    synthesize_patch,
    synthesize_tile,
)
from satsynth.upstream import build_gan


@pytest.fixture
def model(gan_config):
    return build_gan(gan_config, 0).eval()


@pytest.fixture
def ckpt(model, tmp_path):
    checkpoint = Checkpoint.from_model(model, training_state={'diversity_weight': 6.0})
    checkpoint.save(tmp_path / 'gen.ckpt')
    return checkpoint


def mask(size=16, seed=0):
    rng = np.random.default_rng(seed)
    return ClassMask(rng.integers(0, 4, size=(size, size)), 4)


class TestGrid:

    def test_exact_fit(self):
        grid = plan_grid(32, 32, 16)
        assert [(r, c) for r, c, _ in grid.windows] == [(0, 0), (0, 16), (16, 0), (16, 16)]

    def test_last_window_is_edge_aligned(self):
        grid = plan_grid(40, 20, 16)
        rows = sorted({w.row for w in grid.windows})
        cols = sorted({w.col for w in grid.windows})
        assert rows == [0, 16, 24]
        assert cols == [0, 4]

    def test_overlap(self):
        grid = plan_grid(40, 40, 16, overlap=4)
        assert sorted({w.row for w in grid.windows}) == [0, 12, 24]

    def test_errors(self):
        with pytest.raises(ArgumentError):
            plan_grid(32, 32, 16, overlap=16)
        with pytest.raises(ArgumentError):
            plan_grid(8, 32, 16)

    @pytest.mark.parametrize("overlap", [0, 3, 6])
    def test_weights_sum_to_one(self, overlap):
        grid = plan_grid(40, 37, 16, overlap)
        total = np.zeros((40, 37))
        for (r, c, s), w in zip(grid.windows, blend_weights(grid)):
            assert (w >= 0).all()
            total[r:r + s, c:c + s] += w
        assert np.allclose(total, 1.0)

    def test_no_overlap_has_one_owner(self):
        grid = plan_grid(40, 40, 16)
        for w in blend_weights(grid):
            assert set(np.unique(w)) <= {0.0, 1.0}


class TestStitch:

    def test_first_window_wins(self):
        grid = plan_grid(40, 40, 16)
        patches = [np.full((1, 16, 16), i, dtype=np.float32)
                   for i in range(len(grid.windows))]
        out = stitch_tile(patches, grid)
        assert out.shape == (1, 40, 40)
        assert out.dtype == np.float32
        assert out[0, 0, 0] == 0
        assert out[0, 20, 20] == 4
        assert out[0, 39, 39] == 8

    def test_blend_keeps_constant(self):
        grid = plan_grid(40, 40, 16, overlap=5)
        patches = [np.full((3, 16, 16), 0.5) for _ in grid.windows]
        assert np.allclose(stitch_tile(patches, grid), 0.5)

    def test_identity_on_one_window(self):
        grid = plan_grid(16, 16, 16)
        patch = np.random.default_rng(0).uniform(-1, 1, (3, 16, 16)).astype(np.float32)
        assert np.array_equal(stitch_tile([patch], grid), patch)

    def test_patch_count(self):
        with pytest.raises(ShapeMismatch):
            stitch_tile([np.zeros((1, 16, 16))], plan_grid(32, 32, 16))

    def test_patch_shape(self):
        with pytest.raises(ShapeMismatch):
            stitch_tile([np.zeros((1, 16, 16)), np.zeros((1, 8, 8))], plan_grid(16, 32, 16))


class TestSynthesizePatch:

    def test_seeded(self, model):
        a = synthesize_patch(model, mask(), 'prior', seed=7)
        b = synthesize_patch(model, mask(), 'prior', seed=7)
        c = synthesize_patch(model, mask(), 'prior', seed=8)
        assert a.shape == (3, 16, 16)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_explicit_noise(self, model):
        a = synthesize_patch(model, mask(), 'prior', seed=0, noise=np.zeros(8))
        b = synthesize_patch(model, mask(), 'prior', seed=1, noise=np.zeros(8))
        assert torch.equal(a, b)

    def test_encoder_mode(self, model):
        ref = np.zeros((4, 16, 16), dtype=np.float32)
        out = synthesize_patch(model, mask(), 'encoder', seed=0, ref_image=ref)
        assert out.shape == (3, 16, 16)

    def test_encoder_needs_reference(self, model):
        with pytest.raises(MissingReferenceImage):
            synthesize_patch(model, mask(), 'encoder', seed=0)

    def test_unknown_mode(self, model):
        with pytest.raises(ArgumentError):
            synthesize_patch(model, mask(), 'posterior', seed=0)

    def test_tile(self, model):
        image = synthesize_tile(model, mask(size=40), 'prior', seed=3)
        assert image.shape == (3, 40, 40)
        assert np.abs(image).max() <= 1.0
        assert np.array_equal(image, synthesize_tile(model, mask(size=40), 'prior', seed=3))


class TestSynthesizeDataset:

    def test_copies(self, ckpt, toy_data, tmp_path):
        job = SynthesisJob(copies=3, seed=5)
        synthetic = synthesize_dataset(job, tmp_path / 'synth', checkpoint=ckpt,
                                       manifest=toy_data['test'])
        assert len(synthetic) == 6
        assert synthetic.split == 'test'
        for tile_id in toy_data['test'].tile_ids():
            copies = [r for r in synthetic if r.tile_id == tile_id]
            assert len(copies) == 3
            assert len({r.seed for r in copies}) == 3
        assert all(r.source == 'synthetic' and r.latent_mode == 'prior'
                   and r.generator_lambda == 6.0 for r in synthetic)
        assert (tmp_path / 'synth' / MANIFEST_FILE).is_file()
        assert not validate_manifest(synthetic).has_errors()

    def test_masks_are_referenced(self, ckpt, toy_data, tmp_path):
        synthetic = synthesize_dataset(SynthesisJob(), tmp_path / 'synth', checkpoint=ckpt,
                                       manifest=toy_data['test'])
        record = synthetic.records[0]
        tile = load_tile(synthetic.resolve(record.image_uri),
                         mask_uri=synthetic.resolve(record.mask_uri))
        real = load_tile(toy_data['test'].resolve(toy_data['test'].records[0].image_uri))
        assert tile.mask == real.mask
        assert tile.image.shape == (3, 32, 32)
        tile_dir = synthetic.resolve(record.image_uri)
        assert not (tmp_path / 'synth' / 'tiles' / 'toy-0006-000' / 'mask.bin').exists()
        with open('%s/%s' % (tile_dir, PROVENANCE_FILE)) as f:
            provenance = json.load(f)
        assert provenance['checkpoint_hash'] == ckpt.digest()
        assert provenance['seed'] == record.seed

    def test_reproducible(self, ckpt, toy_data, tmp_path):
        job = SynthesisJob(mode='encoder', seed=2)
        a = synthesize_dataset(job, tmp_path / 'a', checkpoint=ckpt, manifest=toy_data['val'])
        b = synthesize_dataset(job, tmp_path / 'b', checkpoint=ckpt, manifest=toy_data['val'])
        assert a == b
        for ra in a:
            assert ((tmp_path / 'a' / ra.image_uri / 'image.bin').read_bytes()
                    == (tmp_path / 'b' / ra.image_uri / 'image.bin').read_bytes())

    def test_class_count_must_match(self, gan_config, toy_data, tmp_path):
        other = Checkpoint.from_model(build_gan(gan_config.replace(num_classes=5), 0))
        with pytest.raises(ShapeMismatch):
            synthesize_dataset(SynthesisJob(), tmp_path, checkpoint=other,
                               manifest=toy_data['test'])

    def test_needs_checkpoint(self, tmp_path):
        with pytest.raises(InvalidConfig):
            synthesize_dataset(SynthesisJob(), tmp_path)
