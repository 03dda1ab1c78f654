"""
Training objectives.

Discriminator outputs are accepted either as a single logit tensor or as a
list with one tensor per scale; per-scale losses are averaged.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import torch

from satsynth.config import ConfigNode
from satsynth.exceptions import DegenerateLatentPair, ShapeMismatch
from satsynth.fields import FloatField


log = logging.getLogger(__name__)

COMPONENTS = ('gan', 'feature_matching', 'kld', 'diversity')


class DiversityConfig(ConfigNode):
    weight = FloatField('lambda', default=0.0, minimum=0.0,
                        doc='weight of the diversity term (0 disables it)')
    clamp = FloatField('clamp', default=10.0, minimum=0.0, exclusive_minimum=True,
                       doc='upper bound of the diversity ratio')

    class Meta:
        human_readable_name = 'diversity'


class LossWeights(ConfigNode):
    gan = FloatField('gan', default=1.0, minimum=0.0)
    feature_matching = FloatField('feature_matching', default=10.0, minimum=0.0)
    kld = FloatField('kld', default=0.05, minimum=0.0)

    class Meta:
        human_readable_name = 'loss weights'


@dataclass
class LossBreakdown:
    total: torch.Tensor
    gan: torch.Tensor
    feature_matching: torch.Tensor
    kld: torch.Tensor
    diversity: Optional[torch.Tensor] = None

    def as_floats(self):
        out = {'total': _scalar(self.total)}
        for name in COMPONENTS:
            value = getattr(self, name)
            out[name] = 0.0 if value is None else _scalar(value)
        return out


def _scalar(value):
    if isinstance(value, torch.Tensor):
        return value.detach().item()
    return float(value)


def _per_scale(logits):
    if isinstance(logits, torch.Tensor):
        return [logits]
    return list(logits)


def _batched(tensor, dims):
    return tensor.unsqueeze(0) if tensor.dim() == dims else tensor


def diversity_term(img1, img2, z1, z2, cfg):
    """
    min(mean|img1 - img2| / mean|z1 - z2|, tau), averaged over the batch.

    Both norms are means of absolute differences, per sample.  Past the
    clamp the value is the constant tau and carries no gradient.  Callers
    multiply by lambda and subtract the result from the generator loss.

    Raises:
        ShapeMismatch: the two images differ in shape.
        DegenerateLatentPair: some z1 equals its z2.
    """
    if img1.shape != img2.shape:
        raise ShapeMismatch('diversity images', tuple(img1.shape), tuple(img2.shape))
    img1, img2 = _batched(img1, 3), _batched(img2, 3)
    z1, z2 = _batched(z1, 1), _batched(z2, 1)
    latent = (z1 - z2).abs().flatten(1).mean(dim=1)
    degenerate = (latent == 0).nonzero()
    if degenerate.numel():
        raise DegenerateLatentPair(int(degenerate[0, 0]))
    image = (img1 - img2).abs().flatten(1).mean(dim=1)
    ratio = image / latent
    tau = torch.full_like(ratio, cfg.clamp)
    return torch.where(ratio < tau, ratio, tau).mean()


def kld_term(stats):
    """0.5 * sum(exp(logvar) + mu^2 - 1 - logvar), averaged over the batch."""
    mu, logvar = stats.mu, stats.logvar
    per_dim = torch.exp(logvar) + mu.pow(2) - 1 - logvar
    if per_dim.dim() == 1:
        return 0.5 * per_dim.sum()
    return 0.5 * per_dim.flatten(1).sum(dim=1).mean()


def hinge_d(real_logits, fake_logits):
    real, fake = _per_scale(real_logits), _per_scale(fake_logits)
    if len(real) != len(fake):
        raise ShapeMismatch('discriminator scales', len(real), len(fake))
    losses = [torch.relu(1 - r).mean() + torch.relu(1 + f).mean()
              for r, f in zip(real, fake)]
    return torch.stack(losses).mean()


def hinge_g(fake_logits):
    return torch.stack([-f.mean() for f in _per_scale(fake_logits)]).mean()


def feature_matching(real_feats, fake_feats):
    """Mean over scales and layers of the mean absolute feature difference."""
    if len(real_feats) != len(fake_feats):
        raise ShapeMismatch('feature scales', len(real_feats), len(fake_feats))
    terms = []
    for real_scale, fake_scale in zip(real_feats, fake_feats):
        if len(real_scale) != len(fake_scale):
            raise ShapeMismatch('feature layers', len(real_scale), len(fake_scale))
        for real, fake in zip(real_scale, fake_scale):
            if real.shape != fake.shape:
                raise ShapeMismatch('feature map', tuple(real.shape), tuple(fake.shape))
            terms.append((real - fake).abs().mean())
    return torch.stack(terms).mean()


def generator_objective(gan, fm, kld, diversity, weights, div_cfg):
    """
    Combine generator components into a :class:`LossBreakdown`.

    total = gan_w * gan + fm_w * fm + kld_w * kld - lambda * diversity.
    ``diversity`` may be None; with lambda == 0 it never enters the total.
    """
    total = weights.gan * gan + weights.feature_matching * fm + weights.kld * kld
    if div_cfg.weight > 0 and diversity is not None:
        total = total - div_cfg.weight * diversity
    return LossBreakdown(total=total, gan=gan, feature_matching=fm, kld=kld,
                         diversity=diversity)
