import hashlib
import json
from decimal import Decimal, ROUND_HALF_UP

from inflection import singularize, pluralize


SEED_MODULUS = 2 ** 31 - 1


def inflect_given_cardinality(word, num_items):
    """
    Return the singular form of the word if `num_items` is 1.  Otherwise,
    return the plural form of the word.
    """
    if num_items == 1:
        return singularize(word)
    else:
        return pluralize(word)


def count_of(word, num_items):
    """'1 tile', '3 tiles'"""
    return '%d %s' % (num_items, inflect_given_cardinality(word, num_items))


def to_list(possible_lst):
    """
    Coerce argument to a list by all means.

    Lists and tuples come back as lists, strings return a list with a single
    element, None returns an empty list, and any other scalar is wrapped.
    """
    if isinstance(possible_lst, (list, tuple)):
        return list(possible_lst)
    elif possible_lst is None:
        return []
    else:
        return [possible_lst]


def canonical_json(obj):
    """Serialise ``obj`` with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def sha256_hex(data):
    if isinstance(data, str):
        data = data.encode('utf-8')
    return hashlib.sha256(data).hexdigest()


def sha256_file(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(root, *parts):
    """
    Return a child seed that depends only on ``root`` and ``parts``.

    Every random stream in the package is keyed this way so that results
    never depend on execution order or on how many workers are used.
    """
    key = canonical_json([int(root)] + [str(p) for p in parts])
    return int(sha256_hex(key)[:16], 16) % SEED_MODULUS


def round_half_up(value, multiplier=1):
    """
    Round ``value * multiplier`` to the nearest integer; exact halves go up.

    The product is taken in decimal arithmetic on the shortest repr of
    ``value``, so round_half_up(0.125, 100) is 13 and not 12.
    """
    product = Decimal(repr(value)) * Decimal(multiplier)
    return int(product.to_integral_value(rounding=ROUND_HALF_UP))


def format_float(value, digits=6):
    """Fixed-point text for table cells; identical on every platform."""
    if value is None:
        return ''
    return '%.*f' % (digits, value)
