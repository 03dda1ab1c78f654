import math

from satsynth.utils import to_list


class Field(object):

    """
    A representation of one key of a config document.

    A ``Field`` knows how to take a value from a YAML document (or a keyword
    argument) and convert it to a Python object.  It knows how to go the other
    way, too: taking a Python value and converting it to something
    ``yaml.safe_dump`` will write back.
    """

    def __init__(self, key, default=None, optional=False, doc=None):
        """
        Initialize a Field.

        Arguments:
            key - the name of the key in the config document
            default - value used when the key is absent.  A ``None`` default
                      on a non-optional field makes the key mandatory.
            optional - ``None`` is an acceptable value for this field.
            doc - one line describing the key, listed by ``satsynth --help``
        """
        self.key = key
        self._default = default
        self.optional = optional
        self.doc = doc

    @property
    def required(self):
        return self._default is None and not self.optional

    def default_value(self):
        """The value used for the field if none is provided."""
        return self._default

    def coerce_for_python(self, value):
        """
        Returns a transformed value for the ``value`` provided.

        This will get invoked both when loading a value for this Field out
        of a config file or when constructing a node directly.

        The default implementation returns the value unchanged.
        """
        return value

    def sanitize_for_yaml(self, value):
        return value


class IntegerField(Field):

    def __init__(self, key, default=None, minimum=None, **kwargs):
        super().__init__(key, default=default, **kwargs)
        self.minimum = minimum

    def coerce_for_python(self, value):
        if value is None and self.optional:
            return None
        if isinstance(value, bool):
            raise ValueError("%s must be an int: got %s" % (self.key, value))
        try:
            result = int(value)
        except ValueError:
            msg = "%s must be an int: got %s" % (self.key, value)
            raise ValueError(msg)
        except TypeError:
            msg = "value for %s cannot be converted to an integer" % self.key
            raise ValueError(msg)
        if isinstance(value, float) and result != value:
            raise ValueError("%s must be an int: got %s" % (self.key, value))
        if self.minimum is not None and result < self.minimum:
            raise ValueError("%s must be >= %s: got %s" % (
                self.key, self.minimum, result))
        return result


class FloatField(Field):

    def __init__(self, key, default=None, minimum=None, maximum=None,
                 exclusive_minimum=False, **kwargs):
        super().__init__(key, default=default, **kwargs)
        self.minimum = minimum
        self.maximum = maximum
        self.exclusive_minimum = exclusive_minimum

    def coerce_for_python(self, value):
        if value is None and self.optional:
            return None
        try:
            result = float(value)
        except (TypeError, ValueError):
            raise ValueError("%s must be a number: got %s" % (self.key, value))
        if not math.isfinite(result):
            raise ValueError("%s must be finite: got %s" % (self.key, value))
        if self.minimum is not None:
            if self.exclusive_minimum and result <= self.minimum:
                raise ValueError("%s must be > %s: got %s" % (
                    self.key, self.minimum, result))
            if result < self.minimum:
                raise ValueError("%s must be >= %s: got %s" % (
                    self.key, self.minimum, result))
        if self.maximum is not None and result > self.maximum:
            raise ValueError("%s must be <= %s: got %s" % (
                self.key, self.maximum, result))
        return result


class BooleanField(Field):

    TRUE = ('true', 'yes', 'on', '1')
    FALSE = ('false', 'no', 'off', '0')

    def coerce_for_python(self, value):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in self.TRUE:
            return True
        if text in self.FALSE:
            return False
        raise ValueError("%s must be a boolean: got %s" % (self.key, value))


class StringField(Field):

    def coerce_for_python(self, value):
        if value is None:
            return None
        return str(value)


class ChoiceField(StringField):

    """A string restricted to a fixed set of choices."""

    def __init__(self, key, choices, default=None, **kwargs):
        super().__init__(key, default=default, **kwargs)
        self.choices = tuple(choices)

    def coerce_for_python(self, value):
        value = super().coerce_for_python(value)
        if value is None and self.optional:
            return None
        if value not in self.choices:
            raise ValueError("%s must be one of %s: got %s" % (
                self.key, list(self.choices), value))
        return value


class ListField(Field):

    """
    A list whose items are all coerced by ``item``, another Field.

    A scalar value is treated as a one-element list.
    """

    def __init__(self, key, item, default=None, **kwargs):
        super().__init__(key, default=default, **kwargs)
        self.item = item

    def default_value(self):
        return list(self._default) if self._default is not None else []

    @property
    def required(self):
        return False

    def coerce_for_python(self, value):
        return [self.item.coerce_for_python(v) for v in to_list(value)]

    def sanitize_for_yaml(self, value):
        return [self.item.sanitize_for_yaml(v) for v in value]


class NestedField(Field):

    """
    A sub-document holding another config node.

    Dicts are turned into instances of ``node_class``; instances pass through.
    """

    def __init__(self, key, node_class, **kwargs):
        super().__init__(key, **kwargs)
        self.node_class = node_class

    @property
    def required(self):
        return False

    def default_value(self):
        return self.node_class()

    def coerce_for_python(self, value):
        if value is None:
            return None if self.optional else self.node_class()
        if isinstance(value, self.node_class):
            return value
        if isinstance(value, dict):
            return self.node_class.from_dict(value)
        raise ValueError("%s must be a mapping: got %r" % (self.key, value))

    def sanitize_for_yaml(self, value):
        if value is None:
            return None
        return value.to_dict()
