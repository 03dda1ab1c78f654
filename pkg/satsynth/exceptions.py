class SatsynthError(Exception):

    """Base class for exceptions in this package.

        A msg MUST be provided.
    """

    def __str__(self):
        return '(%s) %s' % (self.__class__.__name__, self.msg)


class ArgumentError(SatsynthError):

    """Exception raised when the arguments to a function are invalid

    Attributes:
        msg -- explanation of the error
    """

    def __init__(self, msg):
        self.msg = msg


class InvalidConfig(SatsynthError):

    """A config node was given a value that breaks one of its invariants.

    Attributes:
        node -- name of the config node
        key -- the offending key (may be None for cross-field checks)
        msg -- explanation of the error
    """

    def __init__(self, node, key, reason):
        self.node = node
        self.key = key
        if key:
            self.msg = '%s.%s: %s' % (node, key, reason)
        else:
            self.msg = '%s: %s' % (node, reason)


class TileNotFound(SatsynthError):

    """Exception raised when a tile container or one of its files is missing.

    Attributes:
        uri -- the path that does not exist
    """

    def __init__(self, uri):
        self.uri = uri
        self.msg = 'Tile %s does not exist.' % uri


class InvalidTile(SatsynthError):

    """A tile container exists but cannot be parsed as one.

    Attributes:
        uri -- path of the container
        reason -- what is wrong with it
    """

    def __init__(self, uri, reason):
        self.uri = uri
        self.reason = reason
        self.msg = 'Tile %s is invalid: %s' % (uri, reason)


def _shape(value):
    if isinstance(value, int):
        return (value,)
    return tuple(value)


class ShapeMismatch(SatsynthError):

    """Two arrays that must line up do not.

    Attributes:
        what -- the pair that was compared
        expected -- the shape that was required
        got -- the shape that was found
    """

    def __init__(self, what, expected, got):
        self.what = what
        self.expected = _shape(expected)
        self.got = _shape(got)
        self.msg = '%s: expected shape %s, got %s' % (
            what, self.expected, self.got)


class InvalidClassIndex(SatsynthError):

    """A class mask holds an index outside [0, num_classes).

    Attributes:
        value -- the offending class index
        num_classes -- how many classes the mask is declared to have
    """

    def __init__(self, value, num_classes):
        self.value = value
        self.num_classes = num_classes
        self.msg = 'class index %s is outside [0, %d)' % (value, num_classes)


class UnsupportedChannelCount(SatsynthError):

    """Imagery must have 3 (RGB) or 4 (RGB-NIR) channels.

    Attributes:
        count -- the channel count that was found
    """

    def __init__(self, count):
        self.count = count
        self.msg = 'unsupported channel count %d (expected 3 or 4)' % count


class ManifestError(SatsynthError):

    """Exception raised when a manifest cannot be parsed or fails validation.

    Attributes:
        msg -- explanation of the error
    """

    def __init__(self, msg):
        self.msg = msg


class DuplicateRecord(SatsynthError):

    """Tried to put a duplicate record into a manifest

    Attributes:
       key -- the (tile_id, source, seed) triple that appears twice
    """

    def __init__(self, key):
        self.key = tuple(key)
        self.msg = 'Record %s appears more than once' % (self.key,)


class MixError(SatsynthError):

    """A real/synthetic mix cannot be built from the given manifests.

    Attributes:
        msg -- explanation of the error
    """

    def __init__(self, msg):
        self.msg = msg


class ResolutionMismatch(SatsynthError):

    """Network input does not have the configured spatial resolution.

    Attributes:
        expected -- (H, W) the network was built for
        got -- (H, W) that was passed in
    """

    def __init__(self, expected, got):
        self.expected = tuple(expected)
        self.got = tuple(got)
        self.msg = 'expected spatial size %s, got %s' % (self.expected, self.got)


class InvalidLatent(SatsynthError):

    """A latent vector is the wrong length or holds non-finite entries.

    Attributes:
        msg -- explanation of the error
    """

    def __init__(self, msg):
        self.msg = msg


class DegenerateLatentPair(SatsynthError):

    """The diversity ratio is undefined because z1 == z2.

    Attributes:
        index -- batch position of the first degenerate pair
    """

    def __init__(self, index):
        self.index = index
        self.msg = 'latent pair %d is identical; diversity ratio undefined' % index


class NonFiniteLoss(SatsynthError):

    """A training loss became NaN or infinite.

    Attributes:
        step -- global step at which it happened
        component -- name of the loss component
        batch_ids -- dataset indices of the offending batch
        snapshot -- path of the diagnostic snapshot, if one was written
    """

    def __init__(self, step, component, batch_ids, snapshot=None):
        self.step = step
        self.component = component
        self.batch_ids = list(batch_ids)
        self.snapshot = snapshot
        self.msg = 'loss %s is not finite at step %d (batch %s)' % (
            component, step, self.batch_ids)


class MissingReferenceImage(SatsynthError):

    """Encoder-mode synthesis needs the real image paired with a mask.

    Attributes:
        tile_id -- the record lacking an image
    """

    def __init__(self, tile_id):
        self.tile_id = tile_id
        self.msg = 'encoder mode needs a reference image for tile %s' % tile_id


class CheckpointError(SatsynthError):

    """Exception raised when a checkpoint archive cannot be read or written.

    Attributes:
        path -- the archive
        msg -- explanation of the error
    """

    def __init__(self, path, reason):
        self.path = path
        self.msg = 'checkpoint %s: %s' % (path, reason)


class IncompatibleCheckpoint(CheckpointError):

    """The archive was written with a format_version this code does not read.

    Attributes:
        path -- the archive
        version -- the format_version found in it
    """

    def __init__(self, path, version):
        self.version = version
        super().__init__(path, 'unsupported format_version %s' % version)


class NumericalError(SatsynthError):

    """A numerical routine failed its own accuracy check.

    Attributes:
        msg -- explanation of the error
    """

    def __init__(self, msg):
        self.msg = msg


class InsufficientSamples(SatsynthError):

    """Covariance estimation needs at least two samples.

    Attributes:
        n -- the number of samples that was given
    """

    def __init__(self, n):
        self.n = n
        self.msg = 'need at least 2 samples, got %d' % n


class ExtractorFailure(SatsynthError):

    """The feature extractor raised while processing a batch.

    Attributes:
        name -- extractor name
        cause -- the original exception
    """

    def __init__(self, name, cause):
        self.name = name
        self.cause = cause
        self.msg = 'feature extractor %s failed: %s' % (name, cause)
