# -*- coding: utf-8 -*-

import pytest

from satsynth.config import ConfigNode
from satsynth.exceptions import InvalidConfig
from satsynth.fields import FloatField, IntegerField, NestedField, StringField
from satsynth.ingest import PatchSpec
from satsynth.networks import GanConfig
from satsynth.upstream import UpstreamConfig


class Run(ConfigNode):
    name = StringField('name')
    weight = FloatField('lambda', default=0.0, minimum=0.0)
    patch = NestedField('patch', PatchSpec)

    class Meta:
        human_readable_name = 'run'
        presets = {'small': {'name': 'small', 'patch': {'size': 16}}}


class Derived(Run):
    steps = IntegerField('steps', default=10)


class TestConfigNode:

    def test_defaults(self):
        run = Run(name='a')
        assert run.weight == 0.0
        assert run.patch == PatchSpec()

    def test_required(self):
        with pytest.raises(InvalidConfig) as exc:
            Run()
        assert exc.value.key == 'name'

    def test_unknown_kwarg(self):
        with pytest.raises(TypeError):
            Run(name='a', lamda=1.0)

    def test_bad_value(self):
        with pytest.raises(InvalidConfig) as exc:
            Run(name='a', weight=-1)
        assert exc.value.msg == 'run.lambda: lambda must be >= 0.0: got -1.0'

    def test_immutable(self):
        run = Run(name='a')
        with pytest.raises(AttributeError):
            run.weight = 3.0

    def test_replace(self):
        run = Run(name='a')
        other = run.replace(weight=2.0)
        assert other.weight == 2.0
        assert run.weight == 0.0
        assert other.name == 'a'

    def test_inherited_fields(self):
        derived = Derived(name='b')
        assert derived.steps == 10
        assert set(derived.to_dict()) == {'name', 'lambda', 'patch', 'steps'}

    def test_duplicate_keys(self):
        with pytest.raises(ValueError):
            class Broken(ConfigNode):
                a = IntegerField('x', default=1)
                b = IntegerField('x', default=2)

    def test_to_dict_uses_document_keys(self):
        doc = Run(name='a', weight=1.5).to_dict()
        assert doc['lambda'] == 1.5
        assert doc['patch'] == {'size': 256, 'per_tile_count': 200, 'seed': 0}

    def test_from_dict(self):
        run = Run.from_dict({'name': 'a', 'lambda': 3, 'patch': {'size': 32}})
        assert run.weight == 3.0
        assert run.patch.size == 32

    def test_from_dict_unknown_key(self):
        with pytest.raises(InvalidConfig) as exc:
            Run.from_dict({'name': 'a', 'lamda': 3})
        assert exc.value.key == 'lamda'
        assert 'lambda' in exc.value.msg

    def test_from_dict_not_a_mapping(self):
        with pytest.raises(InvalidConfig):
            Run.from_dict(['name'])

    def test_preset(self):
        run = Run.preset('small')
        assert run.name == 'small'
        assert run.patch.size == 16
        assert Run.preset('small', weight=2.0).weight == 2.0
        with pytest.raises(InvalidConfig):
            Run.preset('huge')

    def test_merged(self):
        run = Run.preset('small').merged({'patch': {'seed': 5}})
        assert run.patch.size == 16
        assert run.patch.seed == 5

    def test_yaml(self, tmp_path):
        run = Run(name='a', weight=0.5, patch=PatchSpec(size=8))
        path = tmp_path / 'run.yaml'
        run.save(path)
        assert Run.load(path) == run
        assert Run.loads(run.dumps()) == run

    def test_config_hash(self):
        a = Run(name='a')
        assert a.config_hash() == Run(name='a').config_hash()
        assert a.config_hash() != a.replace(weight=1.0).config_hash()
        assert len(a.config_hash()) == 64

    def test_equality(self):
        assert Run(name='a') == Run(name='a')
        assert Run(name='a') != Run(name='b')
        assert Run(name='a') != Derived(name='a')
        assert Run(name='a') != None  # noqa: E711

    def test_documented_keys(self):
        class Documented(ConfigNode):
            name = StringField('name', default='x', doc='run name')
            seed = IntegerField('seed', default=0)
            patch = NestedField('patch', PatchSpec)

        assert list(Documented.documented_keys()) == [
            ('name', 'run name'),
            ('patch.size', 'side length of square training patches'),
            ('patch.per_tile_count', 'patches drawn from every tile'),
        ]


class TestValidation:

    def test_gan_resolution_must_match_blocks(self):
        with pytest.raises(InvalidConfig) as exc:
            GanConfig(num_spade_blocks=6, resolution=256)
        assert exc.value.key == 'resolution'

    def test_upstream_patch_must_match_resolution(self, gan_config):
        with pytest.raises(InvalidConfig) as exc:
            UpstreamConfig(gan=gan_config, patch=PatchSpec(size=32))
        assert exc.value.key == 'patch'

    def test_lambda_key(self):
        config = UpstreamConfig.from_dict({'lambda': 6, 'gan': {}, 'patch': {'size': 256}})
        assert config.diversity_weight == 6.0
        assert config.diversity.weight == 6.0
        assert config.diversity.clamp == 10.0
