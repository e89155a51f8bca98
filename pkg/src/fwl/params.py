"""Model parameterisation: the drift/boundary criticality coupling.

A drift ``beta`` in (0, 1) determines the killing boundary ``L`` through

    L(beta) = (arctan(-sqrt(1-beta^2)/beta) + pi) / sqrt(1-beta^2),

the unique boundary at which the branching system (branch rate 1/2,
reflection at 0, killing at L) is critical.  The map is an increasing
bijection from [0, 1) onto [pi/2, inf), so either side can be primary.
Population-scaled instances couple the boundary to a scale N through
L = c*log(N) + loglog_coeff*log(log(N)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParamsError

PI_HALF = math.pi / 2.0

# L and the coupling identities are enforced to this absolute tolerance.
COUPLING_TOL = 1e-10


def length_for_drift(beta: float) -> float:
    """Critical killing boundary L(beta) for a drift in [0, 1)."""
    if not 0.0 <= beta < 1.0:
        raise ParamsError(f"drift must lie in [0, 1), got {beta}")
    if beta == 0.0:
        return PI_HALF
    gamma = math.sqrt((1.0 - beta) * (1.0 + beta))
    return (math.atan(-gamma / beta) + math.pi) / gamma


def drift_for_length(L: float) -> float:
    """Inverse of :func:`length_for_drift` on (pi/2, inf), by bisection.

    The bracket [0, 1) always contains the root because the map is an
    increasing bijection; bisection runs to ~1e-15 interval width so the
    round trip |L(beta(L)) - L| stays below 1e-10.
    """
    if L == PI_HALF:
        return 0.0
    if L < PI_HALF:
        raise ParamsError(f"boundary must exceed pi/2 = {PI_HALF:.6f}, got {L}")
    lo, hi = 0.0, 1.0 - 1e-16
    if length_for_drift(hi) < L:
        raise ParamsError(f"boundary {L} too large to invert in float precision")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if length_for_drift(mid) < L:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    # dL/dbeta ~ L^3/pi^2, so the fp-achievable residual grows with L
    tol = max(COUPLING_TOL, L ** 3 * 4.0e-16)
    if abs(length_for_drift(beta) - L) > tol:
        raise ParamsError(f"bisection failed to invert boundary {L}")
    return beta


def population_length(N: int, c: float, loglog_coeff: float = 6.0) -> float:
    """Boundary c*log(N) + loglog_coeff*log(log(N)) for a population scale N."""
    lnN = math.log(N)
    return c * lnN + loglog_coeff * math.log(lnN)


def population_threshold(c: float, loglog_coeff: float = 6.0) -> int:
    """Smallest integer N0 >= 2 with population_length(N0) > pi/2."""
    if population_length(2, c, loglog_coeff) > PI_HALF:
        return 2
    # The map is increasing in N; bisect on ln N then adjust to the integer.
    lo, hi = math.log(2.0), 2.0
    while c * hi + loglog_coeff * math.log(hi) <= PI_HALF:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if c * mid + loglog_coeff * math.log(mid) <= PI_HALF:
            lo = mid
        else:
            hi = mid
    n0 = max(2, math.floor(math.exp(lo)))
    while population_length(n0, c, loglog_coeff) <= PI_HALF:
        n0 += 1
    while n0 > 2 and population_length(n0 - 1, c, loglog_coeff) > PI_HALF:
        n0 -= 1
    return n0


@dataclass(frozen=True)
class ModelParams:
    """Drift/boundary pair, optionally tied to a population scale.

    ``beta`` and ``L`` always satisfy the criticality coupling; when ``N``
    and ``c`` are present, ``L`` additionally equals the population length.
    ``beta = 0`` (L = pi/2) is accepted for spectral work only; the
    simulator requires beta in (0, 1).
    """

    beta: float
    L: float
    c: float | None = None
    N: int | None = None
    loglog_coeff: float = 6.0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ParamsError(f"drift must lie in [0, 1), got {self.beta}")
        if abs(self.L - length_for_drift(self.beta)) > COUPLING_TOL:
            raise ParamsError(
                f"boundary {self.L!r} does not match critical L({self.beta!r}) "
                f"= {length_for_drift(self.beta)!r}"
            )
        if (self.N is None) != (self.c is None):
            raise ParamsError("N and c must be given together")
        if self.N is not None:
            expected = population_length(self.N, self.c, self.loglog_coeff)
            if abs(self.L - expected) > COUPLING_TOL:
                raise ParamsError(
                    f"boundary {self.L!r} does not match population length {expected!r}"
                )

    @property
    def gamma(self) -> float:
        """Leading mode frequency sqrt(1 - beta^2)."""
        return math.sqrt((1.0 - self.beta) * (1.0 + self.beta))


def params_for_drift(beta: float) -> ModelParams:
    return ModelParams(beta=beta, L=length_for_drift(beta))


def params_for_length(L: float) -> ModelParams:
    beta = drift_for_length(L)
    return ModelParams(beta=beta, L=length_for_drift(beta))


def params_for_population(N: int, c: float, loglog_coeff: float = 6.0) -> ModelParams:
    """Parameters for population scale N and width exponent c in (0, 1)."""
    if not 0.0 < c < 1.0:
        raise ParamsError(f"width exponent must lie in (0, 1), got {c}")
    if N < 2:
        raise ParamsError(f"population scale must be an integer >= 2, got {N}")
    n0 = population_threshold(c, loglog_coeff)
    if N < n0:
        raise ParamsError(
            f"N={N} below threshold N0={n0} for c={c}, loglog_coeff={loglog_coeff} "
            f"(need c*log(N) + {loglog_coeff}*loglog(N) > pi/2)"
        )
    L = population_length(N, c, loglog_coeff)
    beta = drift_for_length(L)
    return ModelParams(beta=beta, L=length_for_drift(beta), c=c, N=N,
                       loglog_coeff=loglog_coeff)
