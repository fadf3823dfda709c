"""Exception hierarchy.

Every numerical failure carries the offending point (when there is one) so
the CLI can serialize it.
"""

import numpy as np


class HKTLError(Exception):
    """Base class for all library errors."""

    def __init__(self, message, point=None, **details):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)
        self.details = details

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        if self.point is not None:
            out["point"] = [float(v) for v in self.point]
        for key, value in self.details.items():
            out[key] = value
        return out


class ChartIncompatibilityError(HKTLError):
    pass


class EvaluationError(HKTLError):
    pass


class SpanViolationError(HKTLError):
    pass


class DegenerateMetricError(HKTLError):
    pass


class SingularityError(HKTLError):
    pass


class GaugeStringError(HKTLError):
    pass


class CapabilityError(HKTLError):
    pass


class QuadratureHazardError(HKTLError):
    pass


class DivergenceRiskError(HKTLError):
    pass


class PositivityError(HKTLError):
    pass


class GaugeError(HKTLError):
    pass


class ExclusionError(HKTLError):
    pass


class SamplingError(HKTLError):
    pass


class HarmonicityError(HKTLError):
    pass


class ZeroLocusError(HKTLError):
    pass


class FixedPointError(HKTLError):
    pass


class DegeneracyError(HKTLError):
    pass


class ConsistencyError(HKTLError):
    pass


class ConfigError(HKTLError):
    pass


class IllConditionedRankWarning(UserWarning):
    pass
