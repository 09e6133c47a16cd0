"""Exception types raised by the lab."""
from __future__ import annotations


class RiccatiLabError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RiccatiLabError, ValueError):
    """A chart point lies outside the model's chart domain."""


class UnsupportedModel(RiccatiLabError, TypeError):
    """The operation needs a chart, but the model is frame-based."""


class DegenerateInput(RiccatiLabError, ValueError):
    pass


class FrameDrift(RiccatiLabError):
    """The parallel frame lost orthonormality beyond tolerance."""


class DomainExit(RiccatiLabError):
    """The integrated orbit left the chart domain."""

    def __init__(self, t: float, message: str = "") -> None:
        self.t = float(t)
        super().__init__(message or f"orbit left the chart domain at t={self.t:.6g}")


class NoConvergence(RiccatiLabError):
    """The doubling construction of a limit Riccati solution did not settle.

    ``decay_exponent`` is the fitted power ``p`` in ``residual ~ T**-p`` over the
    last doublings (``inf`` for exponential convergence, ``nan`` if unknown).
    ``U_last`` is the last finite-horizon value and ``U_extrapolated`` the
    Richardson extrapolation using the fitted rate.
    """

    def __init__(self, T_max, residual, decay_exponent, U_last, U_extrapolated, history=()):
        self.T_max = float(T_max)
        self.residual = float(residual)
        self.decay_exponent = float(decay_exponent)
        self.U_last = U_last
        self.U_extrapolated = U_extrapolated
        self.history = tuple(history)
        super().__init__(
            f"limit Riccati solution not converged by T_max={self.T_max:g} "
            f"(residual {self.residual:.3e}, fitted decay exponent {self.decay_exponent:.3g})"
        )

    @property
    def polynomial_rate(self) -> bool:
        """True when the residuals decay like a power of T (the flat regime)."""
        p = self.decay_exponent
        return bool(0.5 < p < 3.0)


class ConjugatePointError(RiccatiLabError):
    """A Riccati solution blew up where a limit solution was required."""

    def __init__(self, detection) -> None:
        self.detection = detection
        super().__init__(f"conjugate point detected near t={detection.t_star:.6g}")


class PeriodMapDivergence(RiccatiLabError):
    pass


class InsufficientSamples(RiccatiLabError, ValueError):
    pass


class NotUnstable(RiccatiLabError, ValueError):
    """A tangent vector is not in the unstable Green subspace."""


class Undetermined(RiccatiLabError):
    """Level-set membership cannot be decided from a non-converged estimate."""


class SamplerMismatch(RiccatiLabError, ValueError):
    pass


class ConfigError(RiccatiLabError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")
