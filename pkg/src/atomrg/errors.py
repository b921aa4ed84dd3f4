"""Exception classes shared across the pipeline.

Every error that the CLI surfaces as a machine-readable record derives from
AtomRGError; the `payload` dict carries the offending numbers.
"""

from __future__ import annotations


class AtomRGError(Exception):
    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = dict(payload)

    def record(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), **self.payload}


# model
class InvalidModel(AtomRGError):
    pass


class DegenerateGroundState(InvalidModel):
    pass


class InvalidCutoff(InvalidModel):
    pass


# fock
class CapacityExceeded(AtomRGError):
    pass


# kernels
class InternalInvariantViolation(AtomRGError):
    pass


class NotInRange(AtomRGError):
    pass


# feshbach
class FeshbachPairInvalid(AtomRGError):
    pass


class PartitionOfUnityViolated(FeshbachPairInvalid):
    pass


class TNotInvertibleOnRange(FeshbachPairInvalid):
    pass


class NeumannConditionFailed(FeshbachPairInvalid):
    pass


class HChiBarSingular(AtomRGError):
    pass


# wick
class MissingKernelComponent(AtomRGError):
    pass


# initial / rg
class SeriesDivergence(AtomRGError):
    pass


class NoConvergence(AtomRGError):
    pass


class OutOfDomain(AtomRGError):
    pass


class ContractionLost(AtomRGError):
    pass


class MaxIterations(AtomRGError):
    pass


class ResidualTooLarge(AtomRGError):
    pass


class DenominatorTooSmall(AtomRGError):
    pass


# perturb / oracle
class ContourHitsSpectrum(AtomRGError):
    pass


class RankNotOne(AtomRGError):
    pass


class NonHermitian(AtomRGError):
    pass
