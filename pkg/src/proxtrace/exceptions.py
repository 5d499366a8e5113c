"""Exception types raised by proxtrace."""


class ProxtraceError(Exception):
    """Base class for all library errors."""


class SelfBeaconError(ProxtraceError, ValueError):
    """A beacon pair names the same device twice."""


class ChunkFormatError(ProxtraceError, ValueError):
    """A chunk container could not be decoded at all."""


class EmptyInputError(ProxtraceError, ValueError):
    pass


class InvalidQueryError(ProxtraceError, ValueError):
    pass


class InvalidConfigError(ProxtraceError, ValueError):
    pass


class OracleValidityError(ProxtraceError, ValueError):
    """Ground-truth oracle requested on a scenario with noise or drops."""
