"""Automorphism calculus of the Siegel half-space H^q.

Forward and backward rescaling both push orbit points exponentially close to
the boundary; in ball coordinates 1-|z| underflows long before the dynamics
has converged.  The Heisenberg group (translations, dilations, rotations)
plus the inversion swapping 0 and infinity normalize any interior point to
the base point (i, 0, ..., 0) with multiplicative arithmetic only, so heights
as small as 1e-300 stay meaningful.

Horosphere values at a finite boundary center zeta admit the closed form
    h_{zeta,p}(z) = [rho(p)/rho(z)] |S(z,zeta)|^2 / |S(p,zeta)|^2,
with S the Siegel pairing; for zeta = infinity, h = rho(p)/rho(z).
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .ball import _herm, _siegel_pairing, siegel_height
from .errors import OutOfDomainError, PreconditionError
from .numerics import as_cpoint


class SiegelMap:
    """Composition of Siegel automorphism primitives with exact inverses.

    Primitives: ('translate', a, b) the Heisenberg translation
    z -> (z1 + a + 2i<z',b>, z' + b) for a boundary point (a,b);
    ('dilate', r) -> (r z1, sqrt(r) z'); ('rotate', U) on z';
    ('invert',) -> (-1/z1, i z'/z1) swapping 0 and infinity.
    """

    def __init__(self, steps: Optional[List[tuple]] = None):
        self.steps = list(steps) if steps else []

    # -- constructors --------------------------------------------------------
    @staticmethod
    def translation(a: complex, b) -> "SiegelMap":
        b = np.asarray(b, dtype=complex).reshape(-1)
        if abs(a.imag - float(np.sum(np.abs(b) ** 2))) > 1e-9 * max(1.0, abs(a)):
            raise PreconditionError("Heisenberg translation needs Im a = |b|^2")
        return SiegelMap([("translate", complex(a), b)])

    @staticmethod
    def dilation(r: float) -> "SiegelMap":
        if not r > 0:
            raise PreconditionError("dilation factor must be positive")
        return SiegelMap([("dilate", float(r))])

    @staticmethod
    def rotation(U: np.ndarray) -> "SiegelMap":
        return SiegelMap([("rotate", np.asarray(U, dtype=complex))])

    @staticmethod
    def inversion() -> "SiegelMap":
        return SiegelMap([("invert",)])

    # -- algebra --------------------------------------------------------------
    def then(self, other: "SiegelMap") -> "SiegelMap":
        """other after self."""
        return SiegelMap(self.steps + other.steps)

    def inverse(self) -> "SiegelMap":
        inv: List[tuple] = []
        for step in reversed(self.steps):
            if step[0] == "translate":
                _, a, b = step
                inv.append(("translate", -a + 2j * float(np.sum(np.abs(b) ** 2)), -b))
            elif step[0] == "dilate":
                inv.append(("dilate", 1.0 / step[1]))
            elif step[0] == "rotate":
                inv.append(("rotate", step[1].conj().T))
            else:
                inv.append(("invert",))
        return SiegelMap(inv)

    def __call__(self, z):
        single = np.asarray(z).ndim == 1
        Z = np.atleast_2d(np.asarray(z, dtype=complex)).copy()
        for step in self.steps:
            if step[0] == "translate":
                _, a, b = step
                Z[:, 0] = Z[:, 0] + a + 2j * (Z[:, 1:] @ np.conj(b))
                Z[:, 1:] = Z[:, 1:] + b[None, :]
            elif step[0] == "dilate":
                r = step[1]
                Z[:, 0] *= r
                Z[:, 1:] *= np.sqrt(r)
            elif step[0] == "rotate":
                Z[:, 1:] = Z[:, 1:] @ step[1].T
            else:
                z1 = Z[:, 0].copy()
                Z[:, 0] = -1.0 / z1
                Z[:, 1:] = 1j * Z[:, 1:] / z1[:, None]
        return Z[0] if single else Z


def normalize_to_base(z) -> SiegelMap:
    """SiegelMap T with T(z) = (i, 0, ..., 0), built from a Heisenberg
    translation and a dilation (no subtractive cancellation in the height)."""
    z = as_cpoint(z)
    zp = z[1:]
    rho = siegel_height(z)
    if rho <= 0:
        raise OutOfDomainError("cannot normalize a point outside H^q")
    a = -z[0].real + 1j * float(np.sum(np.abs(zp) ** 2))
    T = SiegelMap.translation(a, -zp)
    return T.then(SiegelMap.dilation(1.0 / rho))


def ray_toward(p, zeta) -> "SiegelRay":
    """Unit-speed geodesic ray from the interior point p to the boundary
    point zeta (a finite boundary point, or None for infinity)."""
    p = as_cpoint(p)
    if zeta is None:
        transport = normalize_to_base(p).inverse()
        return SiegelRay(transport=transport, toward_infinity=True)
    zeta = as_cpoint(zeta, p.size)
    if abs(siegel_height(zeta)) > 1e-9:
        raise PreconditionError("zeta must lie on the boundary of H^q")
    a = -zeta[0].real + 1j * float(np.sum(np.abs(zeta[1:]) ** 2))
    to_zero = SiegelMap.translation(a, -zeta[1:])
    flip = to_zero.then(SiegelMap.inversion())
    transport = normalize_to_base(flip(p))
    back = flip.then(transport).inverse()
    return SiegelRay(transport=back, toward_infinity=False)


class SiegelRay:
    """gamma(t) = transport((i e^t, 0)); the image ray runs to infinity when
    toward_infinity is set and to the finite boundary point otherwise."""

    def __init__(self, transport: SiegelMap, toward_infinity: bool):
        self.transport = transport
        self.toward_infinity = toward_infinity

    def point_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = _transport_dimension(self.transport)
        pts = np.zeros((t.size, q), dtype=complex)
        pts[:, 0] = 1j * np.exp(t)
        out = self.transport(pts)
        return out[0] if t.size == 1 else out


def _transport_dimension(m: SiegelMap) -> int:
    for step in m.steps:
        if step[0] == "translate":
            return step[2].size + 1
        if step[0] == "rotate":
            return step[1].shape[0] + 1
    raise PreconditionError("cannot infer dimension of a SiegelMap without translation/rotation steps")


def siegel_horo_value(pole, center, z):
    """h_{zeta,p}(z) on H^q; center None means the boundary point infinity."""
    p = as_cpoint(pole)
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    rp = siegel_height(p)
    rz = np.atleast_1d(siegel_height(z))
    if rp <= 0 or np.any(rz <= 0):
        raise OutOfDomainError("horosphere value requires interior points")
    if center is None:
        out = rp / rz
    else:
        zeta = as_cpoint(center, p.size)
        if abs(siegel_height(zeta)) > 1e-9:
            raise PreconditionError("center must lie on the boundary of H^q")
        num = np.abs(_siegel_pairing(z, np.broadcast_to(zeta, z.shape))) ** 2
        den = abs(_siegel_pairing(np.atleast_2d(p), np.atleast_2d(zeta))[0]) ** 2
        out = (rp / rz) * (num / den)
    return float(out[0]) if out.size == 1 else out
