"""
Declarative config nodes.

A config node is a class whose attributes are :class:`~satsynth.fields.Field`
descriptors.  The metaclass collects them (including those inherited from
parent nodes), so a node can be built from keyword arguments, from a parsed
YAML mapping, or from another node via :meth:`ConfigNode.replace`::

    class PatchSpec(ConfigNode):
        size = IntegerField('size', default=256, minimum=1)
        per_tile_count = IntegerField('per_tile_count', default=200, minimum=0)
        seed = IntegerField('seed', default=0)

        class Meta:
            human_readable_name = 'patch spec'
"""
import copy
import logging

import yaml

from satsynth.exceptions import InvalidConfig
from satsynth.fields import Field, NestedField
from satsynth.utils import canonical_json, sha256_hex


log = logging.getLogger(__name__)

DEFAULT_OPTIONS = ('human_readable_name', 'presets')


class Options:

    def __init__(self, meta, cls_name):
        self.meta = meta
        self.human_readable_name = cls_name
        self.presets = {}

        if meta:
            for attr_name in DEFAULT_OPTIONS:
                if hasattr(self.meta, attr_name):
                    setattr(self, attr_name, getattr(self.meta, attr_name))


class ConfigNodeBase(type):

    def __new__(cls, name, bases, attrs):
        new_cls = super(ConfigNodeBase, cls).__new__(cls, name, bases, attrs)

        attr_meta = attrs.pop('Meta', None)
        meta = attr_meta or getattr(new_cls, 'meta', None)

        new_cls._meta = Options(meta, cls_name=name)

        fields = {}

        parents = [b for b in bases if isinstance(b, ConfigNodeBase)]

        # attrs only contains the attributes defined explicity on this
        # class.  We need to layer in the base classes' fields.
        for parent in parents:
            fields.update(parent._fields)

        for attr_name, attr in attrs.items():
            if isinstance(attr, Field):
                fields[attr_name] = attr

        keys = [f.key for f in fields.values()]
        if len(set(keys)) != len(keys):
            dups = sorted(set(k for k in keys if keys.count(k) > 1))
            raise ValueError("%s maps several fields to key(s) %s" % (name, dups))

        new_cls._fields = fields
        new_cls._by_key = {f.key: n for n, f in fields.items()}
        return new_cls


class ConfigNode(object, metaclass=ConfigNodeBase):

    def __init__(self, **kwargs):
        """
        Construct a new config node.

        Fields that are not passed take their default.  Mandatory fields with
        no default must be passed.

        Raises:
            TypeError: Raised if unrecognized kwargs are passed in.
            InvalidConfig: Raised if a value cannot be coerced or the node
                fails :meth:`validate`.
        """
        for name in kwargs:
            if name not in self._fields:
                msg = "'%s' is an invalid keyword argument for %s" % (
                    name, self.__class__.__name__)
                raise TypeError(msg)

        for name, field in self._fields.items():
            if name in kwargs:
                raw = kwargs[name]
            elif field.required:
                raise InvalidConfig(self.hrn, field.key, 'is required')
            else:
                raw = field.default_value()
            try:
                value = field.coerce_for_python(raw)
            except ValueError as e:
                raise InvalidConfig(self.hrn, field.key, str(e))
            object.__setattr__(self, name, value)

        self.validate()

    def __setattr__(self, name, value):
        if name in self._fields:
            raise AttributeError(
                "%s is immutable; use replace(%s=...)" % (self.hrn, name))
        object.__setattr__(self, name, value)

    def __repr__(self):
        inner = ', '.join('%s=%r' % (n, getattr(self, n)) for n in self._fields)
        return '%s(%s)' % (self.__class__.__name__, inner)

    def __eq__(self, other):
        if not other:
            return False
        if self.__class__ != other.__class__:
            return False
        for attr in self._fields.keys():
            if getattr(self, attr) != getattr(other, attr):
                return False
        return True

    def __hash__(self):
        return hash(self.config_hash())

    @property
    def hrn(self):
        """Return human-readable name."""
        return self._meta.human_readable_name

    def validate(self):
        """
        Validate the current node.

        This function accepts no arguments and returns True, since no
        cross-field criteria are known at this level.  Subclasses override
        it and raise InvalidConfig for their invariants.
        """
        return True

    def replace(self, **changes):
        """Return a copy of this node with ``changes`` applied."""
        kwargs = {n: copy.deepcopy(getattr(self, n)) for n in self._fields}
        kwargs.update(changes)
        return self.__class__(**kwargs)

    def to_dict(self):
        """Convert the node into a plain mapping keyed by document keys."""
        return {f.key: f.sanitize_for_yaml(getattr(self, n))
                for n, f in self._fields.items()}

    @classmethod
    def documented_keys(cls, prefix=''):
        """Yield ``(dotted key, doc)`` for every field carrying a doc line."""
        for field in cls._fields.values():
            key = prefix + field.key
            if isinstance(field, NestedField):
                yield from field.node_class.documented_keys(key + '.')
            elif field.doc:
                yield key, field.doc

    @classmethod
    def from_dict(cls, data):
        """Build a node from a mapping keyed by document keys."""
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise InvalidConfig(cls._meta.human_readable_name, None,
                                'expected a mapping, got %r' % (data,))
        unknown = [k for k in data if k not in cls._by_key]
        if unknown:
            raise InvalidConfig(
                cls._meta.human_readable_name, unknown[0],
                'unknown key; expected one of %s' % sorted(cls._by_key))
        return cls(**{cls._by_key[k]: v for k, v in data.items()})

    @classmethod
    def preset(cls, name, **overrides):
        """
        Return the named preset (e.g. ``desk`` or ``full``) from ``Meta.presets``.

        Presets are partial documents; missing keys take field defaults.
        """
        try:
            base = copy.deepcopy(cls._meta.presets[name])
        except KeyError:
            raise InvalidConfig(cls._meta.human_readable_name, None,
                                'no preset named %r' % name)
        node = cls.from_dict(base)
        return node.replace(**overrides) if overrides else node

    def merged(self, data):
        """Return a copy with a partial document layered on top (deeply)."""
        return self.__class__.from_dict(_deep_merge(self.to_dict(), data or {}))

    def config_hash(self):
        return sha256_hex(canonical_json(self.to_dict()))

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True,
                              default_flow_style=False)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path):
        log.debug('Loading %s from %s', cls._meta.human_readable_name, path)
        with open(path, encoding='utf-8') as f:
            return cls.loads(f.read())

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.dumps())


def _deep_merge(base, overlay):
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out
