"""Exception hierarchy for the nadv toolkit.

Every error raised on purpose by this package derives from NadvError so the
CLI can map "our" failures to exit code 2 and let genuine bugs surface.
"""


class NadvError(Exception):
    """Base class for all nadv errors."""


class DimensionError(NadvError):
    """Tensor/layer shape mismatch; message names the offending piece."""


class ConsistencyError(NadvError):
    """Stale or mismatched forward activations passed to backward."""


class DivergenceError(NadvError):
    """Training produced non-finite losses or gradients."""


class IntervalError(NadvError):
    """Bad sampling interval (lower bound >= upper bound, or negative)."""


class ExhaustionError(NadvError):
    """A search ran out of budget without finding an adversary."""

    def __init__(self, message, radius_reached=None, generator_evals=0,
                 classifier_queries=0):
        super().__init__(message)
        self.radius_reached = radius_reached
        self.generator_evals = generator_evals
        self.classifier_queries = classifier_queries


class UnsupportedTargetError(NadvError):
    """Attack requested against a target kind that cannot support it."""


class TransportError(NadvError):
    """External classifier process failed (death, timeout, bad frame)."""


class HandshakeError(TransportError):
    """External classifier handshake failed or declared mismatched dims."""


class EmptyClassError(NadvError):
    """Labeled training data is missing one of the declared classes."""


class AlignmentError(NadvError):
    """Per-classifier result lists do not cover the same instance set."""


class PairingError(NadvError):
    """Inverter checkpoint does not match the generator it is used with."""


class CheckpointError(NadvError):
    """Base class for checkpoint/dataset file problems."""


class FormatError(CheckpointError):
    """Malformed container (bad magic, bogus section table, bad payload)."""


class TruncatedError(CheckpointError):
    """File ends before its declared payloads/hash; message names offsets."""


class VersionError(CheckpointError):
    """File version is not supported; message names both versions."""


class HashMismatchError(CheckpointError):
    """Stored content hash does not match the bytes on disk."""


class CountMismatchError(CheckpointError):
    """Image and label files declare different record counts."""
