"""Exception types shared across the package.

Plain argument validation raises ValueError; everything that involves
external state (files, trained models, datasets) gets a named class so
the CLI can map failures to exit codes and useful messages.
"""


class BoostpropError(Exception):
    """Base class for all package-specific errors."""


class FormatError(BoostpropError):
    """A binary or text artifact file is malformed.

    ``offset`` is the byte offset (or line number for line-oriented
    formats) where the problem was detected, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParseError(BoostpropError):
    """An annotation document failed to parse.

    Carries the element path and source line of the offending node.
    """

    def __init__(self, message, element_path=None, line=None):
        detail = message
        if element_path is not None:
            detail += f" [element {element_path}]"
        if line is not None:
            detail += f" [line {line}]"
        super().__init__(detail)
        self.element_path = element_path
        self.line = line


class ConfigurationError(BoostpropError):
    """Mismatched artifacts (e.g. model trained against a different filter bank)."""


class TrainingError(BoostpropError):
    """Numeric failure during boosting; carries the round index."""

    def __init__(self, message, round_index=None):
        if round_index is not None:
            message = f"{message} (round {round_index})"
        super().__init__(message)
        self.round_index = round_index


class SamplingError(BoostpropError):
    """Negative sampling could not satisfy its constraints."""


class EvaluationError(BoostpropError):
    """Evaluation asked for something degenerate (e.g. zero ground truths)."""
