"""
Exception types raised by the offload library
"""

from typing import Optional


class OffloadError(Exception):
    """Base class for every library error"""


class ScenarioError(OffloadError, ValueError):
    """Scenario, task list and channel trace do not fit together"""


class EnergyModelError(OffloadError, ValueError):
    """Energy requested for bits over a channel with zero gain"""


class EnergyOverflowError(OffloadError, OverflowError):
    """Bits per slot so large that 2^(l/(B*width)) leaves the modelled range"""

    def __init__(self, exponent: float, limit: float):
        super().__init__(f"rate exponent {exponent:.3g} exceeds the limit of {limit:g}")
        self.exponent = exponent
        self.limit = limit


class InfeasibleAllocation(OffloadError):
    """The scheduled frames cannot carry the requested number of bits"""

    def __init__(self, vehicle: int, requested: float, carriable: float):
        super().__init__(
            f"vehicle {vehicle}: requested {requested:.6g} bits but the schedule "
            f"carries at most {carriable:.6g}"
        )
        self.vehicle = vehicle
        self.requested = requested
        self.carriable = carriable


class InfeasiblePlanError(OffloadError):
    """A plan fails the feasibility predicate"""

    def __init__(self, family: str, violation: float, vehicle: Optional[int] = None):
        where = f" (vehicle {vehicle})" if vehicle is not None else ""
        super().__init__(f"constraint family '{family}' violated by {violation:.3g}{where}")
        self.family = family
        self.violation = violation
        self.vehicle = vehicle


class ExperimentError(OffloadError):
    """Bad sweep definition or result file failure"""
