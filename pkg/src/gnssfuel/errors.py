"""Exception hierarchy shared by every gnssfuel module."""

from __future__ import annotations


class GnssFuelError(ValueError):
    """Base class. ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 2


class InputError(GnssFuelError):
    """Malformed or inconsistent input (CLI exit code 2)."""


class DataInsufficiency(GnssFuelError):
    """Valid input that does not carry enough information (CLI exit code 3)."""

    exit_code = 3


# signal pipeline
class SeriesTooShort(InputError):
    pass


class InvalidCutoff(InputError):
    pass


class NoOverlap(InputError):
    pass


# estimators
class NumericOverflow(GnssFuelError):
    pass


class ModelFormatError(InputError):
    pass


# fitting
class InsufficientData(DataInsufficiency):
    pass


class RankDeficient(DataInsufficiency):
    pass


class NonFiniteLoss(DataInsufficiency):
    pass


# metrics
class LengthMismatch(InputError):
    pass


class NonMonotonicTime(InputError):
    pass


class ZeroTruthIntegral(DataInsufficiency):
    pass


class InsufficientFuel(DataInsufficiency):
    pass


# engine classifier
class SegmentTooShort(InputError):
    pass


class EmptyInput(InputError):
    pass


class NoPositives(DataInsufficiency):
    """TPR undefined: no segment carries an ``on`` label."""


class NoPredictedPositives(DataInsufficiency):
    """PPV undefined: the classifier never answered ``on``."""
