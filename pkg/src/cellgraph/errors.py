"""Exception types shared across the pipeline."""


class CellGraphError(Exception):
    """Base class for all pipeline errors."""


class MalformedInput(CellGraphError):
    """An input file violates its declared schema. Carries the offending record id when known."""

    def __init__(self, message, record_id=None):
        super().__init__(message if record_id is None else f"record {record_id}: {message}")
        self.record_id = record_id


class EmptyMask(CellGraphError):
    pass


class MultipleComponents(CellGraphError):
    pass


class ShapeMismatch(CellGraphError):
    pass


class LengthMismatch(CellGraphError):
    pass


class NoAnchors(CellGraphError):
    pass


class InvalidK(CellGraphError):
    pass


class UnsupportedKernel(CellGraphError):
    pass


class EmptyTrainingSet(CellGraphError):
    pass


class EmptyEpithelialSet(CellGraphError):
    pass


class SingleClassLabels(CellGraphError):
    pass


class TooFewUnits(CellGraphError):
    pass


class MissingPatientIds(CellGraphError):
    pass


class InfeasibleDensity(CellGraphError):
    pass
