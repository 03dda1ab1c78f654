# -*- coding: utf-8 -*-

import json

import numpy as np
import pytest
import scipy.linalg

from satsynth.exceptions import (
    ExtractorFailure,
    InsufficientSamples,
    NumericalError,
    ShapeMismatch,
)
from satsynth.fid import (
    FeatureAccumulator,
    GaussianStats,
    RandomProjectionExtractor,
    compute_fid,
    frechet_distance,
    gaussian_stats,
    get_extractor,
    psd_sqrt,
)
from satsynth.ingest import PatchDataset, PatchSpec
from satsynth.manifest import DatasetManifest

from .utils import write_tiles


def features(n, d, seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    mixing = rng.standard_normal((d, d))
    return rng.standard_normal((n, d)) @ mixing + shift


class TestGaussianStats:

    def test_moments(self):
        x = features(200, 3)
        stats = gaussian_stats(x)
        assert stats.n == 200
        assert np.allclose(stats.mu, x.mean(axis=0))
        assert np.allclose(stats.sigma, np.cov(x, rowvar=False))

    def test_too_few(self):
        with pytest.raises(InsufficientSamples):
            gaussian_stats(np.zeros((1, 3)))

    def test_not_a_matrix(self):
        with pytest.raises(ShapeMismatch):
            gaussian_stats(np.zeros(5))

    def test_asymmetric(self):
        with pytest.raises(NumericalError):
            GaussianStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 10)

    def test_covariance_shape(self):
        with pytest.raises(ShapeMismatch):
            GaussianStats(np.zeros(2), np.eye(3), 10)


class TestAccumulator:

    def test_matches_batch_stats(self):
        x = features(100, 4, seed=1)
        acc = FeatureAccumulator(4)
        for chunk in np.array_split(x, 7):
            acc.update(chunk)
        stats, expected = acc.stats(), gaussian_stats(x)
        assert stats.n == 100
        assert np.allclose(stats.mu, expected.mu)
        assert np.allclose(stats.sigma, expected.sigma)

    def test_merge(self):
        x = features(60, 3, seed=2)
        a = FeatureAccumulator(3).update(x[:25])
        b = FeatureAccumulator(3).update(x[25:])
        assert np.allclose(a.merge(b).stats().sigma, gaussian_stats(x).sigma)

    def test_wrong_dim(self):
        with pytest.raises(ShapeMismatch):
            FeatureAccumulator(3).update(np.zeros((2, 4)))
        with pytest.raises(ShapeMismatch):
            FeatureAccumulator(3).merge(FeatureAccumulator(2))

    def test_empty(self):
        with pytest.raises(InsufficientSamples):
            FeatureAccumulator(2).stats()


class TestFrechetDistance:

    def test_one_dimensional(self):
        a = GaussianStats([0.0], [[4.0]], 10)
        b = GaussianStats([3.0], [[1.0]], 10)
        # 3^2 + 4 + 1 - 2 * sqrt(4 * 1)
        assert frechet_distance(a, b) == pytest.approx(10.0, abs=1e-10)

    def test_identity(self):
        a = gaussian_stats(features(80, 5))
        assert abs(frechet_distance(a, a)) < 1e-8

    def test_symmetry(self):
        a = gaussian_stats(features(80, 5, seed=1))
        b = gaussian_stats(features(80, 5, seed=2, shift=0.5))
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8
        assert frechet_distance(a, b) > 0

    def test_diagonal(self):
        mu_a, mu_b = np.array([1.0, 0.0, -2.0]), np.array([0.0, 0.5, 1.0])
        var_a, var_b = np.array([1.0, 2.0, 0.5]), np.array([3.0, 0.25, 0.5])
        expected = (((mu_a - mu_b) ** 2).sum()
                    + (var_a + var_b - 2 * np.sqrt(var_a * var_b)).sum())
        value = frechet_distance(GaussianStats(mu_a, np.diag(var_a), 5),
                                 GaussianStats(mu_b, np.diag(var_b), 5))
        assert value == pytest.approx(expected, abs=1e-10)

    def test_matches_sqrtm(self):
        a = gaussian_stats(features(50, 4, seed=3))
        b = gaussian_stats(features(50, 4, seed=4))
        covmean = scipy.linalg.sqrtm(a.sigma @ b.sigma).real
        expected = (((a.mu - b.mu) ** 2).sum() + np.trace(a.sigma) + np.trace(b.sigma)
                    - 2 * np.trace(covmean))
        assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-6)

    def test_shared_shift(self):
        a, b = features(80, 5, seed=6), features(80, 5, seed=7, shift=0.3)
        shift = np.array([3.0, -1.0, 0.5, 2.0, -4.0])
        plain = frechet_distance(gaussian_stats(a), gaussian_stats(b))
        moved = frechet_distance(gaussian_stats(a + shift), gaussian_stats(b + shift))
        assert abs(moved - plain) < 1e-8

    def test_rank_deficient(self):
        a = gaussian_stats(features(3, 6, seed=5))
        assert abs(frechet_distance(a, a)) < 1e-6

    def test_dimension(self):
        with pytest.raises(ShapeMismatch):
            frechet_distance(GaussianStats([0.0], [[1.0]], 2),
                             GaussianStats([0.0, 0.0], np.eye(2), 2))


class TestPsdSqrt:

    def test_square(self):
        m = np.cov(features(30, 4), rowvar=False)
        root = psd_sqrt(m)
        assert np.allclose(root, root.T)
        assert np.allclose(root @ root, m)

    def test_negative_eigenvalues_clip(self):
        m = np.diag([4.0, -1e-12, 0.0])
        assert np.allclose(psd_sqrt(m), np.diag([2.0, 0.0, 0.0]))


class TestExtractors:

    def test_random_projection(self):
        extractor = RandomProjectionExtractor(feature_dim=16, pool=4, seed=1)
        images = np.random.default_rng(0).uniform(-1, 1, (5, 3, 16, 16))
        out = extractor(images)
        assert out.shape == (5, 16)
        assert out.dtype == np.float64
        assert np.array_equal(out, RandomProjectionExtractor(16, 4, seed=1)(images))
        assert not np.allclose(out, RandomProjectionExtractor(16, 4, seed=2)(images))

    def test_nir_is_dropped(self):
        extractor = RandomProjectionExtractor(feature_dim=8, pool=4)
        rgbn = np.random.default_rng(0).uniform(-1, 1, (2, 4, 16, 16))
        assert np.allclose(extractor(rgbn), extractor(rgbn[:, :3]))

    def test_too_few_channels(self):
        with pytest.raises(ShapeMismatch):
            RandomProjectionExtractor()(np.zeros((1, 2, 16, 16)))

    def test_failure_is_wrapped(self, monkeypatch):
        extractor = RandomProjectionExtractor(feature_dim=8, pool=4)

        def boom(images):
            raise RuntimeError('out of memory')
        monkeypatch.setattr(extractor, 'features', boom)
        with pytest.raises(ExtractorFailure) as exc:
            extractor(np.zeros((1, 3, 16, 16)))
        assert 'out of memory' in exc.value.msg

    def test_wrong_output_shape(self, monkeypatch):
        extractor = RandomProjectionExtractor(feature_dim=8, pool=4)
        monkeypatch.setattr(extractor, 'features', lambda images: np.zeros((1, 3)))
        with pytest.raises(ExtractorFailure):
            extractor(np.zeros((1, 3, 16, 16)))

    def test_get_extractor(self):
        assert get_extractor('random', seed=3).name == 'random-projection-3'
        assert get_extractor('inception').feature_dim == 2048
        with pytest.raises(ExtractorFailure):
            get_extractor('vgg')


class TestComputeFid:

    @pytest.fixture
    def extractor(self):
        return RandomProjectionExtractor(feature_dim=4, pool=2, seed=0)

    def test_same_set(self, toy_data, extractor):
        report = compute_fid(toy_data['val'], toy_data['val'], extractor, 'prior',
                             patch_size=16)
        assert report.value < 1e-6
        # two 32x32 tiles on a 16 pixel grid
        assert report.n_real == report.n_synth == 8

    def test_different_sets(self, toy_data, tmp_path, extractor):
        noise = write_tiles(tmp_path, 4, size=32)
        report = compute_fid(toy_data['train'], noise, extractor, 'encoder',
                             patch_size=16, checkpoint_hash='abc')
        assert report.value > 0
        report.save(tmp_path / 'fid.json')
        with open(tmp_path / 'fid.json') as f:
            saved = json.load(f)
        assert saved['mode'] == 'encoder'
        assert saved['extractor'] == 'random-projection-0'
        assert saved['checkpoint_hash'] == 'abc'
        assert saved['n_real'] == 16

    def test_matches_hand_extracted_features(self, toy_data, tmp_path, extractor):
        synthetic = write_tiles(tmp_path, 3, size=32)

        def by_hand(manifest):
            dataset = PatchDataset(manifest, PatchSpec(size=16, per_tile_count=0), grid=True)
            return np.concatenate([extractor(dataset[i]['image'][None])
                                   for i in range(len(dataset))])
        expected = frechet_distance(gaussian_stats(by_hand(toy_data['test'])),
                                    gaussian_stats(by_hand(synthetic)))
        report = compute_fid(toy_data['test'], synthetic, extractor, 'prior', patch_size=16)
        assert report.value == pytest.approx(expected, abs=1e-10)

    def test_too_few_patches(self, tmp_path, extractor):
        one = write_tiles(tmp_path, 1, size=16)
        with pytest.raises(InsufficientSamples):
            compute_fid(one, one, extractor, 'prior', patch_size=16)

    def test_empty(self, extractor):
        with pytest.raises(InsufficientSamples):
            compute_fid(DatasetManifest(), DatasetManifest(), extractor, 'prior',
                        patch_size=16)
