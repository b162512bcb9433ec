"""Shared numeric substrate: convergence detection, complex differentiation,
deterministic sampling.

Every limit or liminf appearing downstream is realized through
:func:`detect_limit` / :func:`monotone_liminf` with an explicit window and
tolerance, so reports can always show the evidence behind a number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BoundaryProximityError,
    MonotonicityViolationError,
    NotEnoughDataError,
    PreconditionError,
)

# Defaults used across the package (see module design notes in README).
DEFAULT_WINDOW = 8
DEFAULT_TOL = 1e-6
DEFAULT_STEP = 1e-6
BOUNDARY_GUARD = 1e-12


def as_cpoint(z, dim: Optional[int] = None) -> np.ndarray:
    """Coerce to a complex vector in C^q and reject non-finite entries."""
    arr = np.asarray(z, dtype=complex).reshape(-1)
    if not np.all(np.isfinite(arr.view(float))):
        raise PreconditionError(f"non-finite coordinates: {arr!r}")
    if dim is not None and arr.size != dim:
        raise PreconditionError(f"expected a point of C^{dim}, got {arr.size} coordinates")
    return arr


def require_finite(values) -> np.ndarray:
    vals = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise PreconditionError("sequence contains non-finite entries")
    return vals


@dataclass(frozen=True)
class ConvergenceReport:
    """Finite-procedure stand-in for a limit.

    ``converged`` means the last ``window`` values spread by at most ``tol``;
    ``limit`` is their mean and is absent otherwise.
    """

    values: tuple
    converged: bool
    window: int
    tol: float
    limit: Optional[float] = None

    def tail(self) -> np.ndarray:
        return np.asarray(self.values[-self.window:], dtype=float)


def detect_limit(values: Sequence[float], window: int = DEFAULT_WINDOW,
                 tol: float = DEFAULT_TOL) -> ConvergenceReport:
    """Declare convergence when the trailing ``window`` values spread <= tol."""
    if window < 2:
        raise PreconditionError(f"window must be >= 2, got {window}")
    if not tol > 0:
        raise PreconditionError(f"tol must be positive, got {tol}")
    vals = require_finite(values)
    if vals.size < window:
        raise NotEnoughDataError(
            f"need at least {window} values, got {vals.size}")
    tail = vals[-window:]
    spread = float(tail.max() - tail.min())
    converged = spread <= tol
    limit = float(tail.mean()) if converged else None
    return ConvergenceReport(values=tuple(float(v) for v in vals),
                             converged=converged, window=window, tol=tol,
                             limit=limit)


def monotone_liminf(values: Sequence[float], direction: str,
                    tol: float = 1e-9) -> float:
    """Finite liminf surrogate.

    ``liminf-tail`` returns the min over the trailing half of the sequence;
    ``monotone-limit`` checks the sequence is monotone (either sense, slack
    ``tol``) and returns the final value.
    """
    vals = require_finite(values)
    if vals.size == 0:
        raise NotEnoughDataError("empty sequence")
    if direction == "liminf-tail":
        tail = vals[vals.size // 2:]
        return float(tail.min())
    if direction == "monotone-limit":
        diffs = np.diff(vals)
        if diffs.size:
            inc_bad = np.nonzero(diffs < -tol)[0]
            dec_bad = np.nonzero(diffs > tol)[0]
            if inc_bad.size and dec_bad.size:
                first = int(min(inc_bad[0], dec_bad[0])) + 1
                raise MonotonicityViolationError(
                    f"sequence is not monotone at index {first}", index=first)
        return float(vals[-1])
    raise PreconditionError(f"unknown direction {direction!r}")


def numerical_jacobian(f, z, h: float = DEFAULT_STEP) -> np.ndarray:
    """q x q complex Jacobian of a holomorphic map by central differences.

    An exact Jacobian supplied by the map (``f.jacobian``) is returned
    verbatim.  The point must sit further than ``h`` from the boundary of
    the map's domain when the map knows its domain.
    """
    z = as_cpoint(z)
    jac = getattr(f, "jacobian", None)
    if jac is not None:
        return np.asarray(jac(z), dtype=complex)
    domain = getattr(f, "domain", None)
    if domain is not None:
        dist = domain.boundary_distance(z)
        if dist <= h:
            raise BoundaryProximityError(
                f"boundary distance {dist:.3e} <= step {h:.3e}")
    evaluate = f.evaluator if hasattr(f, "evaluator") else f
    q = z.size
    cols = []
    for j in range(q):
        e = np.zeros(q, dtype=complex)
        e[j] = h
        cols.append((as_cpoint(evaluate(z + e)) - as_cpoint(evaluate(z - e))) / (2 * h))
    return np.stack(cols, axis=1)


class SeededSampler:
    """Deterministic sample source: one seed, one reproducible stream.

    All randomness in the package flows through instances of this class, so
    identical seeds and request sequences give bit-identical runs.
    """

    def __init__(self, seed: int, dimension: int):
        self.seed = int(seed)
        self.dimension = int(dimension)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def reals(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._rng.uniform(low, high, size=n)

    def complex_gaussian(self, n: int) -> np.ndarray:
        shape = (n, self.dimension)
        return self._rng.standard_normal(shape) + 1j * self._rng.standard_normal(shape)

    def complex_sphere(self, n: int) -> np.ndarray:
        """n unit vectors of C^dimension, uniform on the sphere."""
        g = self.complex_gaussian(n)
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def complex_ball(self, n: int, radius: float = 1.0,
                     boundary_bias: Optional[float] = None) -> np.ndarray:
        """n points of the complex ball of given radius, uniform in volume.

        ``boundary_bias`` in (0,1) switches the radial law to a Beta(b,1)-tail
        pushed toward the boundary, used to stress inclusion claims.
        """
        dirs = self.complex_sphere(n)
        u = self._rng.uniform(size=(n, 1))
        if boundary_bias is None:
            radial = u ** (1.0 / (2 * self.dimension))
        else:
            radial = 1.0 - (1.0 - boundary_bias) * u ** 2
        return radius * radial * dirs

    def spawn(self, offset: int, dimension: Optional[int] = None) -> "SeededSampler":
        """Child sampler with a deterministic derived seed."""
        dim = self.dimension if dimension is None else dimension
        return SeededSampler(self.seed * 1_000_003 + offset, dim)
