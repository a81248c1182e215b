"""Errors and warnings raised by dmimo_sim."""

from numpy.linalg import LinAlgError


class ConfigError(ValueError):
    """A scene, deployment or scenario description is invalid."""


class OverlapError(ConfigError):
    """An obstacle or a position conflicts with the scene geometry."""


class FormatError(ValueError):
    """A channel database file is malformed or truncated."""


class DigestMismatch(ValueError):
    """A channel database was generated from a different scene."""


class MissingEntry(KeyError):
    """A requested (AP, UE) link is not in the channel database."""


class EmptyInput(ValueError):
    """An aggregation or export received no values."""


class DegenerateChannel(ValueError):
    """A link carries no energy at all."""


class ConvergenceError(LinAlgError):
    """The singular value decomposition did not converge."""


class SingularChannel(LinAlgError):
    """The channel cannot support the requested number of ZF layers."""


class SingularGram(LinAlgError):
    """The Gram matrix of the channel is not invertible."""


class ScenarioError(RuntimeError):
    """A module error raised while evaluating one UE of a scenario."""


class RankDeficiencyWarning(UserWarning):
    """A pseudo-inverse was computed for a rank-deficient matrix."""
