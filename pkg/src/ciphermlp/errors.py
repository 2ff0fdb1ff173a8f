"""Exception hierarchy shared by every backend and layer of the package."""


class HeError(Exception):
    """Base class for all homomorphic-pipeline errors."""


class InvalidParameters(HeError):
    """Scheme parameters violate a structural invariant."""


class SecurityError(InvalidParameters):
    """Parameter set claims a security level its sizes cannot support."""


class IncompatibleOperands(HeError):
    """Two values cannot be combined (backend, keyset, shape or format mismatch)."""


class LevelExhausted(HeError):
    """An operation would drive the remaining level below zero."""


class MissingRotationKey(HeError):
    """Rotation requested for an index the custodian holds no key for."""


class SnapshotDisabled(HeError):
    """Inspection hook used outside of test mode."""


class CapacityError(HeError):
    """Architecture does not fit the available ciphertext slots."""


class EncodingOverflow(HeError):
    """Scaled values exceed the headroom of the current coefficient modulus."""


class SerializationError(HeError):
    """Malformed container or state file."""
