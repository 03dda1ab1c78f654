"""
Frechet distance between the feature distributions of two image sets.

Features come from a pluggable :class:`FeatureExtractor`.  Production runs use
:class:`InceptionExtractor` (pretrained weights via the optional
``torchvision`` dependency); tests use :class:`RandomProjectionExtractor`,
which needs no external weights.  4-channel imagery is always reduced to its
RGB channels before extraction.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

from satsynth.exceptions import (
    ExtractorFailure,
    InsufficientSamples,
    NumericalError,
    SatsynthError,
    ShapeMismatch,
)
from satsynth.ingest import PatchDataset, PatchSpec
from satsynth.utils import count_of


log = logging.getLogger(__name__)

EIG_TOLERANCE = 1e-10
RESIDUAL_TOLERANCE = 1e-6
RGB = (0, 1, 2)


@dataclass(eq=False)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ShapeMismatch('covariance', (d, d), self.sigma.shape)
        if self.n < 2:
            raise InsufficientSamples(self.n)
        if not np.allclose(self.sigma, self.sigma.T, rtol=1e-10, atol=1e-12):
            raise NumericalError('covariance matrix is not symmetric')

    @property
    def dim(self):
        return self.mu.shape[0]


def gaussian_stats(features):
    """Sample mean and unbiased (N - 1) covariance of an N x d feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatch('features', ('N', 'd'), features.shape)
    n = features.shape[0]
    if n < 2:
        raise InsufficientSamples(n)
    mu = features.mean(axis=0)
    centered = features - mu
    sigma = centered.T @ centered / (n - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2.0, n)


class FeatureAccumulator(object):

    """
    Streaming mean and covariance.

    Keeps the count, the feature sum and the sum of outer products in
    float64; partial accumulators merge exactly in any order up to rounding.
    """

    def __init__(self, dim):
        self.dim = dim
        self.n = 0
        self.total = np.zeros(dim, dtype=np.float64)
        self.outer = np.zeros((dim, dim), dtype=np.float64)

    def update(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ShapeMismatch('features', ('N', self.dim), features.shape)
        self.n += features.shape[0]
        self.total += features.sum(axis=0)
        self.outer += features.T @ features
        return self

    def merge(self, other):
        if other.dim != self.dim:
            raise ShapeMismatch('accumulator', self.dim, other.dim)
        self.n += other.n
        self.total += other.total
        self.outer += other.outer
        return self

    def stats(self):
        if self.n < 2:
            raise InsufficientSamples(self.n)
        mu = self.total / self.n
        sigma = (self.outer - self.n * np.outer(mu, mu)) / (self.n - 1)
        return GaussianStats(mu, (sigma + sigma.T) / 2.0, self.n)


def psd_sqrt(matrix, tolerance=EIG_TOLERANCE):
    """
    Square root of a symmetric positive semi-definite matrix.

    The matrix is symmetrised and decomposed with ``scipy.linalg.eigh``;
    eigenvalues below ``tolerance`` times the largest one (negative ones
    included) are set to zero.
    """
    sym = (matrix + matrix.T) / 2.0
    values, vectors = scipy.linalg.eigh(sym)
    top = values.max() if values.size else 0.0
    cutoff = tolerance * top if top > 0 else 0.0
    values = np.where(values > cutoff, values, 0.0)
    return (vectors * np.sqrt(values)) @ vectors.T


def frechet_distance(a, b):
    """
    |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))

    The trace of (S_a S_b)^(1/2) is taken as the trace of
    (S_a^(1/2) S_b S_a^(1/2))^(1/2), which is symmetric.

    Raises:
        ShapeMismatch: the two stats differ in dimension.
        NumericalError: the square root fails its residual check.
    """
    if a.dim != b.dim:
        raise ShapeMismatch('feature dimension', a.dim, b.dim)
    root_a = psd_sqrt(a.sigma)
    product = root_a @ b.sigma @ root_a
    product = (product + product.T) / 2.0
    root = psd_sqrt(product)
    residual = np.linalg.norm(root @ root - product)
    scale = max(1.0, np.linalg.norm(product))
    if not np.isfinite(residual) or residual > RESIDUAL_TOLERANCE * scale:
        raise NumericalError('matrix square root residual %.3g exceeds tolerance'
                             % residual)
    diff = a.mu - b.mu
    return float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma)
                 - 2.0 * np.trace(root))


class FeatureExtractor(object):

    """
    Image batch (N x C x H x W in [-1, 1]) to an N x d float64 matrix.

    Subclasses implement :meth:`features` on preprocessed RGB batches.
    """

    name = 'base'
    feature_dim = 0
    resize = None
    channels = RGB

    def preprocess(self, images):
        images = torch.as_tensor(images, dtype=torch.float32)
        if images.shape[1] < len(self.channels):
            raise ShapeMismatch('extractor input channels', len(self.channels),
                                images.shape[1])
        images = images[:, list(self.channels)]
        if self.resize is not None and tuple(images.shape[2:]) != (self.resize, self.resize):
            images = F.interpolate(images, size=(self.resize, self.resize),
                                   mode='bilinear', align_corners=False)
        return images

    def features(self, images):
        raise NotImplementedError

    def __call__(self, images):
        try:
            with torch.no_grad():
                out = self.features(self.preprocess(images))
        except SatsynthError:
            raise
        except Exception as e:
            raise ExtractorFailure(self.name, e)
        out = np.asarray(out, dtype=np.float64)
        if out.ndim != 2 or out.shape[1] != self.feature_dim:
            raise ExtractorFailure(self.name, 'returned shape %s' % (out.shape,))
        return out

    def describe(self):
        return {'name': self.name, 'feature_dim': self.feature_dim,
                'resize': self.resize, 'channels': list(self.channels)}


class RandomProjectionExtractor(FeatureExtractor):

    """Average-pool to ``pool`` x ``pool`` and project with a seeded Gaussian matrix."""

    def __init__(self, feature_dim=64, pool=8, seed=0):
        self.feature_dim = feature_dim
        self.pool = pool
        self.seed = seed
        self.name = 'random-projection-%d' % seed
        rng = np.random.default_rng(seed)
        inputs = len(self.channels) * pool * pool
        self.projection = rng.standard_normal((inputs, feature_dim)) / np.sqrt(inputs)

    def features(self, images):
        pooled = F.adaptive_avg_pool2d(images, self.pool).flatten(1)
        return pooled.double().numpy() @ self.projection


class InceptionExtractor(FeatureExtractor):

    """Penultimate pooled features (2048) of a pretrained Inception-v3."""

    name = 'inception-v3'
    feature_dim = 2048
    resize = 299
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self):
        self._net = None

    def network(self):
        if self._net is None:
            try:
                from torchvision.models import Inception_V3_Weights, inception_v3
            except ImportError as e:
                raise ExtractorFailure(self.name, 'torchvision is not installed '
                                       '(pip install satsynth[inception]): %s' % e)
            net = inception_v3(weights=Inception_V3_Weights.DEFAULT, aux_logits=True)
            net.fc = torch.nn.Identity()
            self._net = net.eval()
        return self._net

    def features(self, images):
        mean = torch.tensor(self.MEAN).view(1, 3, 1, 1)
        std = torch.tensor(self.STD).view(1, 3, 1, 1)
        images = ((images + 1.0) / 2.0 - mean) / std
        return self.network()(images).double().numpy()


def get_extractor(name, seed=0):
    if name == 'inception':
        return InceptionExtractor()
    if name == 'random':
        return RandomProjectionExtractor(seed=seed)
    raise ExtractorFailure(name, 'unknown extractor')


@dataclass
class FidReport:
    value: float
    mode: Optional[str]
    extractor: str
    n_real: int
    n_synth: int
    checkpoint_hash: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return Path(path)


def extract_features(manifest, extractor, patch_size, batch_size=32):
    """Features of every patch on the non-overlapping grid of each tile."""
    dataset = PatchDataset(manifest, PatchSpec(size=patch_size, per_tile_count=0),
                           grid=True)
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    chunks = [extractor(batch['image']) for batch in loader]
    if not chunks:
        return np.zeros((0, extractor.feature_dim))
    return np.concatenate(chunks, axis=0)


def compute_fid(real_manifest, synth_manifest, extractor, mode_tag, patch_size=256,
                batch_size=32, checkpoint_hash=None):
    """
    FID between two manifests.

    Raises:
        InsufficientSamples: fewer than two patches on either side.
        ExtractorFailure: the extractor raised.
    """
    real = extract_features(real_manifest, extractor, patch_size, batch_size)
    synth = extract_features(synth_manifest, extractor, patch_size, batch_size)
    value = frechet_distance(gaussian_stats(real), gaussian_stats(synth))
    log.info('FID (%s, %s): %.4f over %s and %s', mode_tag, extractor.name, value,
             count_of('real patch', len(real)), count_of('synthetic patch', len(synth)))
    return FidReport(value=max(0.0, value), mode=mode_tag, extractor=extractor.name,
                     n_real=len(real), n_synth=len(synth),
                     checkpoint_hash=checkpoint_hash)
