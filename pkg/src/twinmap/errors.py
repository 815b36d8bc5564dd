"""
Exception hierarchy for twinmap.

Input and precondition problems subclass ValueError so callers that only
care about "bad input" can keep catching that.
"""

from typing import Dict, List, Optional


class TwinmapError(Exception):
    """Base class for all twinmap errors."""

    def __reduce__(self):
        # pickled by the worker pools: rebuild from constructor arguments
        init_args = getattr(self, "_init_args", None)
        if init_args is None:
            return super().__reduce__()
        return (self.__class__, init_args)


class InputFormatError(TwinmapError, ValueError):
    """Malformed input text. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self._init_args = (message, line)
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OsmParseError(InputFormatError):
    pass


class DanglingReferenceError(InputFormatError):
    def __init__(self, way_id: int, node_id: int, line: Optional[int] = None):
        super().__init__(f"way {way_id} references missing node {node_id}", line)
        self._init_args = (way_id, node_id, line)
        self.way_id = way_id
        self.node_id = node_id


class DemFormatError(InputFormatError):
    pass


class XyzFormatError(InputFormatError):
    pass


class ConfigError(InputFormatError):
    pass


class PreconditionError(TwinmapError, ValueError):
    """An operation was called on input it does not accept."""


class DegenerateInputError(PreconditionError):
    pass


class DomainError(TwinmapError, ValueError):
    """Parameter outside the domain of an evaluator (e.g. s beyond road length)."""


class OutOfBoundsError(TwinmapError, ValueError):
    pass


class NodataError(TwinmapError, ValueError):
    pass


class LaneLookupError(TwinmapError, LookupError):
    pass


class MissingProfileError(TwinmapError):
    pass


class UnsupportedRecordError(TwinmapError):
    def __init__(self, record: str, detail: str = ""):
        self._init_args = (record, detail)
        self.record = record
        message = f"unsupported OpenDRIVE record: {record}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class UnmappedClassError(TwinmapError):
    def __init__(self, highway_class: str):
        self._init_args = (highway_class,)
        self.highway_class = highway_class
        super().__init__(f"no lane rule for highway class '{highway_class}'")


class MissingTerrainError(TwinmapError):
    pass


class NoOverlapError(TwinmapError):
    """ICP lost its correspondences."""


class ConversionError(TwinmapError):
    """One or more edges failed to convert."""

    def __init__(self, failures: Dict[str, Exception]):
        self._init_args = (failures,)
        self.failures = dict(sorted(failures.items()))
        lines = [f"  {edge_id}: {exc}" for edge_id, exc in self.failures.items()]
        super().__init__(
            f"{len(self.failures)} edge(s) failed to convert:\n" + "\n".join(lines)
        )


class EmptyMeshError(TwinmapError):
    pass


class RoadValidationError(TwinmapError):
    def __init__(self, road_id: str, issues: List):
        self._init_args = (road_id, issues)
        self.road_id = road_id
        self.issues = list(issues)
        details = "; ".join(f"{i.code}: {i.message}" for i in self.issues)
        super().__init__(f"road {road_id} failed validation: {details}")
