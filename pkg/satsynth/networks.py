"""
The upstream network family.

* :class:`Encoder` maps a real image to the mean and log-variance of a latent.
* :class:`SpadeGenerator` turns a latent and one-hot mask planes into an image.
  The latent is projected to a 4x4 seed map which every SPADE residual block
  modulates with the mask and then upsamples by two, so ``n`` blocks produce
  ``4 * 2 ** (n - 1)`` pixels on a side.
* :class:`MultiscaleDiscriminator` is a conditional PatchGAN run on the image
  at several scales; it also exposes its intermediate activations for the
  feature-matching loss.

:class:`SpadeGAN` bundles the three and checks shapes at its boundary.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm

from satsynth.config import ConfigNode
from satsynth.exceptions import (
    InvalidConfig,
    InvalidLatent,
    ResolutionMismatch,
    ShapeMismatch,
)
from satsynth.fields import BooleanField, IntegerField


log = logging.getLogger(__name__)

NORM_EPS = 1e-5

DiscriminatorOutput = namedtuple('DiscriminatorOutput', 'logits features')


class GanConfig(ConfigNode):
    z_dim = IntegerField('z_dim', default=256, minimum=1)
    base_width = IntegerField('base_width', default=64, minimum=1,
                              doc='generator channel multiplier')
    num_spade_blocks = IntegerField('num_spade_blocks', default=7, minimum=1)
    resolution = IntegerField('resolution', default=256, minimum=4)
    out_channels = IntegerField('out_channels', default=3, minimum=1)
    num_classes = IntegerField('num_classes', default=6, minimum=1)
    spade_hidden = IntegerField('spade_hidden', default=128, minimum=1)
    encoder_width = IntegerField('encoder_width', default=64, minimum=1)
    disc_scales = IntegerField('disc_scales', default=2, minimum=1)
    disc_layers = IntegerField('disc_layers', default=4, minimum=1)
    disc_width = IntegerField('disc_width', default=64, minimum=1)
    spectral_norm = BooleanField('spectral_norm', default=True)

    class Meta:
        human_readable_name = 'gan'
        presets = {
            'full': {},
            'desk': {'z_dim': 64, 'base_width': 16, 'num_spade_blocks': 5,
                     'resolution': 64, 'spade_hidden': 32, 'encoder_width': 16,
                     'disc_width': 16, 'num_classes': 4},
        }

    def validate(self):
        implied = 4 * 2 ** (self.num_spade_blocks - 1)
        if implied != self.resolution:
            raise InvalidConfig(self.hrn, 'resolution',
                                '%d spade blocks generate %dx%d, not %dx%d' % (
                                    self.num_spade_blocks, implied, implied,
                                    self.resolution, self.resolution))
        if self.out_channels not in (3, 4):
            raise InvalidConfig(self.hrn, 'out_channels', 'must be 3 or 4')
        # the last normalised discriminator map at the coarsest scale must
        # keep more than one pixel
        if self.resolution < 2 ** (self.disc_layers + self.disc_scales):
            raise InvalidConfig(self.hrn, 'disc_layers',
                                '%d layers over %d scales need at least %d pixels' % (
                                    self.disc_layers, self.disc_scales,
                                    2 ** (self.disc_layers + self.disc_scales)))
        return True

    def generator_widths(self):
        """Channel count entering each block, plus the width of the output."""
        n = self.num_spade_blocks
        return [self.base_width * min(16, 1 << max(0, n - 1 - i)) for i in range(n + 1)]

    def logit_size(self, scale):
        """Spatial side of the logit map at discriminator scale ``scale``."""
        size = self.resolution
        for _ in range(scale):
            size = (size + 1) // 2
        return size // 2 ** self.disc_layers


@dataclass
class LatentStats:
    """Encoder output: mean and log-variance, each (N, z_dim) or (z_dim,)."""

    mu: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise InvalidLatent('mu %s and logvar %s differ in shape'
                                % (tuple(self.mu.shape), tuple(self.logvar.shape)))


def reparameterize(stats, noise):
    """z = mu + exp(logvar / 2) * noise"""
    if noise.shape != stats.mu.shape:
        raise InvalidLatent('noise has shape %s, latent stats %s'
                            % (tuple(noise.shape), tuple(stats.mu.shape)))
    return stats.mu + torch.exp(0.5 * stats.logvar) * noise


def sample_prior(batch_size, z_dim, generator=None):
    """Standard-normal latents drawn from ``generator`` (a torch.Generator)."""
    return torch.randn(batch_size, z_dim, generator=generator)


def param_free_norm(x, eps=NORM_EPS):
    """Per-sample, per-channel normalisation over the spatial dims."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def spade_modulate(features, mask_planes, spade):
    """
    normalized(features) * (1 + gamma(mask)) + beta(mask)

    ``mask_planes`` must already be at the feature resolution.
    """
    if features.shape[2:] != mask_planes.shape[2:]:
        raise ResolutionMismatch(features.shape[2:], mask_planes.shape[2:])
    normalized = param_free_norm(features, spade.eps)
    actv = spade.mlp_shared(mask_planes)
    gamma = spade.mlp_gamma(actv)
    beta = spade.mlp_beta(actv)
    return normalized * (1 + gamma) + beta


class SPADE(nn.Module):

    def __init__(self, norm_nc, label_nc, hidden=128, eps=NORM_EPS):
        super().__init__()
        self.eps = eps
        self.mlp_shared = nn.Sequential(
            nn.Conv2d(label_nc, hidden, kernel_size=3, padding=1),
            nn.ReLU(),
        )
        self.mlp_gamma = nn.Conv2d(hidden, norm_nc, kernel_size=3, padding=1)
        self.mlp_beta = nn.Conv2d(hidden, norm_nc, kernel_size=3, padding=1)

    def forward(self, x, mask_planes):
        mask_planes = F.interpolate(mask_planes, size=x.shape[2:], mode='nearest')
        return spade_modulate(x, mask_planes, self)


class SpadeResBlock(nn.Module):

    def __init__(self, fin, fout, label_nc, hidden=128):
        super().__init__()
        fmiddle = min(fin, fout)
        self.learned_shortcut = fin != fout
        self.conv_0 = nn.Conv2d(fin, fmiddle, kernel_size=3, padding=1)
        self.conv_1 = nn.Conv2d(fmiddle, fout, kernel_size=3, padding=1)
        self.norm_0 = SPADE(fin, label_nc, hidden)
        self.norm_1 = SPADE(fmiddle, label_nc, hidden)
        if self.learned_shortcut:
            self.conv_s = nn.Conv2d(fin, fout, kernel_size=1, bias=False)
            self.norm_s = SPADE(fin, label_nc, hidden)

    def shortcut(self, x, seg):
        if self.learned_shortcut:
            return self.conv_s(self.norm_s(x, seg))
        return x

    def forward(self, x, seg):
        dx = self.conv_0(actvn(self.norm_0(x, seg)))
        dx = self.conv_1(actvn(self.norm_1(dx, seg)))
        return self.shortcut(x, seg) + dx


def actvn(x):
    return F.leaky_relu(x, 2e-1)


class SpadeGenerator(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.config = config
        widths = config.generator_widths()
        self.seed_width = widths[0]
        self.fc = nn.Linear(config.z_dim, widths[0] * 4 * 4)
        self.blocks = nn.ModuleList(
            SpadeResBlock(widths[i], widths[i + 1], config.num_classes, config.spade_hidden)
            for i in range(config.num_spade_blocks))
        self.conv_img = nn.Conv2d(widths[-1], config.out_channels, kernel_size=3, padding=1)

    def spade_layers(self):
        return [m for m in self.modules() if isinstance(m, SPADE)]

    def forward(self, mask_planes, z):
        x = self.fc(z).view(z.shape[0], self.seed_width, 4, 4)
        last = len(self.blocks) - 1
        for i, block in enumerate(self.blocks):
            x = block(x, mask_planes)
            if i < last:
                x = F.interpolate(x, scale_factor=2, mode='nearest')
        return torch.tanh(self.conv_img(actvn(x)))


class Encoder(nn.Module):

    """Stride-2 convolutions down to 4x4, then linear heads for mu and logvar."""

    def __init__(self, config):
        super().__init__()
        ndf = config.encoder_width
        layers = [nn.Conv2d(config.out_channels, ndf, kernel_size=3, padding=1),
                  nn.LeakyReLU(0.2)]
        width = ndf
        for i in range(config.num_spade_blocks - 1):
            nxt = ndf * min(8, 2 ** (i + 1))
            layers += [nn.Conv2d(width, nxt, kernel_size=3, stride=2, padding=1),
                       nn.InstanceNorm2d(nxt),
                       nn.LeakyReLU(0.2)]
            width = nxt
        self.features = nn.Sequential(*layers)
        self.fc_mu = nn.Linear(width * 4 * 4, config.z_dim)
        self.fc_logvar = nn.Linear(width * 4 * 4, config.z_dim)

    def forward(self, image):
        x = self.features(image).flatten(1)
        return self.fc_mu(x), self.fc_logvar(x)


class NLayerDiscriminator(nn.Module):

    def __init__(self, in_channels, width, num_layers, use_spectral_norm=True):
        super().__init__()
        wrap = spectral_norm if use_spectral_norm else (lambda m: m)
        blocks = []
        nf = in_channels
        for i in range(num_layers):
            nxt = width * min(8, 2 ** i)
            block = [wrap(nn.Conv2d(nf, nxt, kernel_size=4, stride=2, padding=1))]
            if i > 0:
                block.append(nn.InstanceNorm2d(nxt))
            block.append(nn.LeakyReLU(0.2))
            blocks.append(nn.Sequential(*block))
            nf = nxt
        blocks.append(nn.Sequential(nn.Conv2d(nf, 1, kernel_size=3, padding=1)))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return features[-1], features[:-1]


class MultiscaleDiscriminator(nn.Module):

    def __init__(self, config):
        super().__init__()
        in_channels = config.out_channels + config.num_classes
        self.scales = nn.ModuleList(
            NLayerDiscriminator(in_channels, config.disc_width, config.disc_layers,
                                config.spectral_norm)
            for _ in range(config.disc_scales))

    @staticmethod
    def downsample(x):
        return F.avg_pool2d(x, kernel_size=3, stride=2, padding=1, count_include_pad=False)

    def forward(self, x):
        logits, features = [], []
        for i, disc in enumerate(self.scales):
            if i > 0:
                x = self.downsample(x)
            out, feats = disc(x)
            logits.append(out)
            features.append(feats)
        return DiscriminatorOutput(logits, features)


class SpadeGAN(nn.Module):

    """
    Encoder, generator and discriminator built from one :class:`GanConfig`.

    Inputs are batched tensors: images (N, C, H, W) in [-1, 1], mask planes
    (N, num_classes, H, W) as produced by
    :func:`satsynth.ingest.one_hot_planes`, latents (N, z_dim).
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.generator = SpadeGenerator(config)
        self.discriminator = MultiscaleDiscriminator(config)

    def generator_parameters(self):
        return list(self.encoder.parameters()) + list(self.generator.parameters())

    def _check_spatial(self, tensor):
        expected = (self.config.resolution, self.config.resolution)
        if tuple(tensor.shape[2:]) != expected:
            raise ResolutionMismatch(expected, tensor.shape[2:])

    def _check_channels(self, what, tensor, expected):
        if tensor.dim() != 4 or tensor.shape[1] != expected:
            raise ShapeMismatch(what, ('N', expected, 'H', 'W'), tuple(tensor.shape))

    def encode(self, image):
        self._check_channels('image', image, self.config.out_channels)
        self._check_spatial(image)
        mu, logvar = self.encoder(image)
        return LatentStats(mu, logvar)

    def generate(self, mask_planes, z):
        self._check_channels('mask planes', mask_planes, self.config.num_classes)
        self._check_spatial(mask_planes)
        if z.dim() != 2 or z.shape[1] != self.config.z_dim:
            raise InvalidLatent('expected latents of shape (N, %d), got %s'
                                % (self.config.z_dim, tuple(z.shape)))
        if z.shape[0] != mask_planes.shape[0]:
            raise InvalidLatent('%d latents for %d masks' % (z.shape[0], mask_planes.shape[0]))
        if not torch.isfinite(z).all():
            raise InvalidLatent('latent has non-finite entries')
        return self.generator(mask_planes, z)

    def discriminate(self, image, mask_planes):
        self._check_channels('image', image, self.config.out_channels)
        self._check_channels('mask planes', mask_planes, self.config.num_classes)
        if image.shape[2:] != mask_planes.shape[2:]:
            raise ResolutionMismatch(image.shape[2:], mask_planes.shape[2:])
        return self.discriminator(torch.cat([image, mask_planes], dim=1))
