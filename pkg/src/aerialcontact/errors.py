"""Exception hierarchy shared across the package."""


class ContactError(Exception):
    """Base class for all package errors."""


class CloudParseError(ContactError):
    """A point-cloud or pose file could not be parsed."""


class EmptyCloudError(ContactError):
    pass


class DegenerateNeighborhoodError(ContactError):
    """The k-NN neighborhood does not span a surface (covariance rank < 2)."""


class FitFailureError(ContactError):
    """The local quadric system is too ill-conditioned to solve."""


class NoContactError(ContactError):
    """No cloud point lies within the contact radius of a link."""


class EmptyInputError(ContactError):
    pass


class DownsampleOverflowError(ContactError):
    pass


class SchemaError(ContactError):
    """A model bundle is missing a section or carries malformed data."""


class SchemaVersionError(SchemaError):
    pass


class NoFeaturesError(ContactError):
    """A query cloud yields no usable surface features."""


class AllZeroWeightsError(ContactError):
    """No query kernel matches the contact model: model and payload disagree."""


class DimensionMismatchError(ContactError):
    pass
