import pytest

from satsynth.ingest import PatchSpec
from satsynth.networks import GanConfig
from satsynth.segmentation import SegConfig
from satsynth.toy import ToyDatasetSpec, make_toy_splits
from satsynth.upstream import UpstreamConfig


@pytest.fixture
def gan_config():
    return GanConfig(z_dim=8, base_width=4, num_spade_blocks=3, resolution=16,
                     num_classes=4, spade_hidden=8, encoder_width=4,
                     disc_layers=2, disc_scales=2, disc_width=4)


@pytest.fixture
def toy_spec():
    return ToyDatasetSpec(num_tiles=4, val_tiles=2, test_tiles=2, tile_size=32,
                          num_classes=4, channels=4, seed=1)


@pytest.fixture
def toy_data(toy_spec, tmp_path):
    """Train, val and test manifests of small toy tiles."""
    return make_toy_splits(toy_spec, tmp_path / 'toy')


@pytest.fixture
def upstream_config(gan_config):
    return UpstreamConfig(gan=gan_config, patch=PatchSpec(size=16, per_tile_count=2),
                          batch_size=2, epochs=1, num_tiles=None, diversity_weight=1.0)


@pytest.fixture
def seg_config():
    return SegConfig(in_channels=3, num_classes=4, depth=2, base_width=4,
                     patch=PatchSpec(size=16, per_tile_count=2), eval_window=16,
                     max_epochs=2, early_stop_patience=1, batch_size=2)


@pytest.fixture
def plan_doc(gan_config, tmp_path):
    """A partial plan document shrinking the desk preset to seconds of work."""
    return {
        'out': str(tmp_path / 'run'),
        'toy': {'num_tiles': 4, 'val_tiles': 2, 'test_tiles': 2, 'tile_size': 32},
        'upstream': {'gan': gan_config.to_dict(),
                     'patch': {'size': 16, 'per_tile_count': 2},
                     'batch_size': 2, 'epochs': 1, 'num_tiles': None},
        'downstream': {'depth': 2, 'base_width': 4,
                       'patch': {'size': 16, 'per_tile_count': 2},
                       'eval_window': 16, 'max_epochs': 2, 'early_stop_patience': 1,
                       'batch_size': 2},
        'lambdas': [1.0],
        'p_grid': [0.0, 0.5, 1.0],
        'copies': [1, 2],
        'four_channel_patches': 1,
    }
