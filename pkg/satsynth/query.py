import dataclasses


class Q(object):
    """
    Query class used to build arbitrarily complex manifest record filters.

    Q objects are strung together and then compiled once we are told what the
    concrete record class is going to be.  Compiling yields a predicate that
    takes a record and returns a bool::

        Q(source='synthetic', latent_mode='prior') | Q(tile_id='m_0007')

    The key to the Q class is that it appends conditions when of the same type
    without creating another level of hierarchy, and it spawns child levels
    only when the operations (And, Or) switches.

    A condition value that is a list, tuple or set matches any of its members.
    """

    def __init__(self, **conditions):
        self.conditions = list(conditions.items())

    def compile(self, cls):
        names = [f.name for f in dataclasses.fields(cls)]
        for cond_k, _ in self.conditions:
            if cond_k not in names:
                raise AttributeError(
                    f'{cond_k} is not a valid field on {cls.__name__}: '
                    f'Expected: {names}')
        conditions = list(self.conditions)

        def predicate(record):
            for cond_k, cond_v in conditions:
                value = getattr(record, cond_k)
                if isinstance(cond_v, (list, tuple, set, frozenset)):
                    if value not in cond_v:
                        return False
                elif value != cond_v:
                    return False
            return True

        return predicate

    def check_type_compat(self, other):
        if not isinstance(other, Q):
            raise TypeError(f'not of type Q: {other}')

    def __or__(self, other):
        self.check_type_compat(other)
        if isinstance(other, Or):
            return Or([self] + other.ops)
        else:
            return Or([self, other])

    def __and__(self, other):
        self.check_type_compat(other)
        if isinstance(other, And):
            return And([self] + other.ops)
        else:
            return And([self, other])

    def __invert__(self):
        return Not(self)


class And(Q):

    def __init__(self, ops):
        self.ops = list(ops)

    def compile(self, cls):
        predicates = [op.compile(cls) for op in self.ops]
        return lambda record: all(p(record) for p in predicates)

    def __and__(self, other):
        if type(other) is Q:  # And(...) & Q(...)
            # we repack Q(...) objects into one Q() object for each condition
            # so the tree stays one level deep.
            return And(self.ops + [Q(**{k: v}) for k, v in other.conditions])
        elif type(other) is And:  # And(...) & And(...)
            return And(self.ops + other.ops)
        else:  # And(...) & Or(...)
            return super().__and__(other)


class Or(Q):

    def __init__(self, ops):
        self.ops = list(ops)

    def compile(self, cls):
        predicates = [op.compile(cls) for op in self.ops]
        return lambda record: any(p(record) for p in predicates)

    def __or__(self, other):
        if type(other) is Q:
            return Or(self.ops + [other])
        elif type(other) is Or:
            return Or(self.ops + other.ops)
        else:
            return super().__or__(other)


class Not(Q):

    def __init__(self, op):
        self.op = op

    def compile(self, cls):
        predicate = self.op.compile(cls)
        return lambda record: not predicate(record)
