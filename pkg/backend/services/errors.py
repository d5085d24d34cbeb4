"""
Exception hierarchy for PatchGraph.

Every domain failure raises a subclass of PatchGraphError. The CLI maps the
root class to exit status 1; streaming stages catch the per-record ones,
count them and move on.
"""


class PatchGraphError(Exception):
    """Root of all domain errors."""


# ---- parsing ----

class ParseError(PatchGraphError):
    """Source text could not be turned into a function Ast."""


class UnterminatedLiteral(ParseError):
    pass


class NotAFunction(ParseError):
    pass


class UnbalancedBraces(ParseError):
    pass


# ---- slicing / augmentation ----

class UnknownStatement(PatchGraphError):
    pass


class EmptyChange(PatchGraphError):
    pass


class NoCandidates(PatchGraphError):
    """A mutation operator found nothing it is allowed to touch."""


# ---- dataset ----

class DatasetError(PatchGraphError):
    pass


class MalformedDiff(DatasetError):
    pass


class ParseFailure(DatasetError, ParseError):
    """One side of a commit's function pair did not parse."""


class TooFewPairs(DatasetError):
    pass


# ---- model ----

class ModelError(PatchGraphError):
    pass


class ShapeMismatch(ModelError):
    pass


class Unreachable(ModelError):
    pass


class Diverged(ModelError):
    pass


class CheckpointFormatError(ModelError):
    pass


class MissingCheckpoint(ModelError):
    pass


# ---- ensemble / evaluation ----

class WrongArity(PatchGraphError):
    pass


class SizeExceeded(PatchGraphError):
    pass


class LengthMismatch(PatchGraphError):
    pass
