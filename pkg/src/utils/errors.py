"""Exception types raised by the solver library.

All of them derive from ValueError so callers that only guard against bad input keep working.
"""


class SizeCapError(ValueError):
    """A dense representation would exceed the configured entry cap."""


class DimensionMismatchError(ValueError):
    """Mode sizes or Kronecker factor shapes do not fit together."""


class MeshError(ValueError):
    """The mesh size is incompatible with the domain geometry."""


class ConfigurationError(ValueError):
    """An experiment configuration is invalid or physically inadmissible."""


class SingularOperatorError(ValueError):
    """A sparse factorization failed because the operator is singular."""
