"""Exact Kobayashi geometry of the unit ball B^q and the Siegel half-space H^q.

Normalization (recorded in every report): the distance on the unit disc is
k(0,t) = log((1+t)/(1-t)), i.e. curvature -1.  Under this convention the
Euclidean horosphere formula |1-<z,zeta>|^2/(1-|z|^2) and the Koranyi
formula |1-<z,zeta>|/(1-|z|) are exact sublevel functions, and boundary
dilations match the ratio (1-|f(z)|)/(1-|z|).

H^q = {(z1,z') : Im z1 > |z'|^2} carries the same metric through the Cayley
transform; the closed form used here is
    1 - tanh^2(k/2) = rho(z) rho(w) / |S(z,w)|^2,
with rho(z) = Im z1 - |z'|^2 and S(z,w) = (z1 - conj(w1))/(2i) - <z',w'>,
which stays accurate for points exponentially close to the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import (
    BoundaryProximityError,
    DegenerateGeodesicError,
    InvalidCenterError,
    NotInHorosphereError,
    OutOfDomainError,
    PreconditionError,
    SingularityError,
)
from .numerics import BOUNDARY_GUARD, ConvergenceReport, as_cpoint, detect_limit

NORMALIZATION_BANNER = "k_D(0,t) = log((1+t)/(1-t))  [curvature -1]"


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _herm(z, w):
    """<z,w> = sum z_j conj(w_j), broadcasting over leading axes."""
    return np.sum(z * np.conj(w), axis=-1)


def _k_from_s(s):
    """k = 2 artanh(sqrt(1-s)) evaluated stably for s near 0 and near 1."""
    s = np.asarray(s, dtype=float)
    s = np.clip(s, 0.0, 1.0)
    r = np.sqrt(1.0 - s)
    small = s > 0.5
    with np.errstate(divide="ignore"):
        far = 2.0 * np.log1p(r) - np.log(s)
    near = 2.0 * np.arctanh(np.where(small, r, 0.0))
    return np.where(small, near, far)


def ball_distance(z, w, guard: bool = True):
    """Kobayashi distance on B^q; accepts single points or (N,q) arrays."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    nz2 = np.sum(np.abs(z) ** 2, axis=-1)
    nw2 = np.sum(np.abs(w) ** 2, axis=-1)
    if guard:
        if np.any(1.0 - np.sqrt(nz2) < BOUNDARY_GUARD) or np.any(1.0 - np.sqrt(nw2) < BOUNDARY_GUARD):
            raise BoundaryProximityError("point within 1e-12 of the unit sphere")
    denom = np.abs(1.0 - _herm(z, w)) ** 2
    s = (1.0 - nz2) * (1.0 - nw2) / denom
    out = _k_from_s(s)
    return float(out[0]) if out.size == 1 else out


def ball_distance_matrix(X, Y) -> np.ndarray:
    """Pairwise distances between rows of X (N,q) and Y (M,q)."""
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    nx = 1.0 - np.sum(np.abs(X) ** 2, axis=1)
    ny = 1.0 - np.sum(np.abs(Y) ** 2, axis=1)
    ip = X @ np.conj(Y.T)
    s = np.outer(nx, ny) / np.abs(1.0 - ip) ** 2
    return _k_from_s(s)


def siegel_height(z):
    """rho(z) = Im z1 - |z'|^2, positive inside H^q."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    out = z[..., 0].imag - np.sum(np.abs(z[..., 1:]) ** 2, axis=-1)
    return float(out[0]) if out.size == 1 else out


def _siegel_pairing(z, w):
    return (z[..., 0] - np.conj(w[..., 0])) / 2j - _herm(z[..., 1:], w[..., 1:])


def siegel_distance(z, w, guard: bool = True):
    """Kobayashi distance on H^q, stable arbitrarily close to the boundary."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    rz = z[..., 0].imag - np.sum(np.abs(z[..., 1:]) ** 2, axis=-1)
    rw = w[..., 0].imag - np.sum(np.abs(w[..., 1:]) ** 2, axis=-1)
    if guard and (np.any(rz <= 0) or np.any(rw <= 0)):
        raise OutOfDomainError("point outside H^q")
    s = rz * rw / np.abs(_siegel_pairing(z, w)) ** 2
    out = _k_from_s(s)
    return float(out[0]) if out.size == 1 else out


# ---------------------------------------------------------------------------
# Cayley transform
# ---------------------------------------------------------------------------

def cayley(z):
    """C : B^q -> H^q, z -> (i(1+z1)/(1-z1), z'/(1-z1)); sends e1 to infinity."""
    single = np.asarray(z).ndim == 1
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    one_minus = 1.0 - z[..., 0]
    if np.any(np.abs(one_minus) < 1e-12):
        raise SingularityError("z1 = 1 is the singular hyperplane of the Cayley transform")
    w = np.empty_like(z)
    w[..., 0] = 1j * (1.0 + z[..., 0]) / one_minus
    w[..., 1:] = z[..., 1:] / one_minus[..., None]
    return w[0] if single else w


def cayley_inverse(w):
    """Inverse of :func:`cayley`: z1 = (w1-i)/(w1+i), z' = 2i w'/(w1+i)."""
    single = np.asarray(w).ndim == 1
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    denom = w[..., 0] + 1j
    if np.any(np.abs(denom) < 1e-12):
        raise SingularityError("w1 = -i is the singular hyperplane of the inverse Cayley transform")
    z = np.empty_like(w)
    z[..., 0] = (w[..., 0] - 1j) / denom
    z[..., 1:] = 2j * w[..., 1:] / denom[..., None]
    return z[0] if single else z


def cayley_pair(direction: str, z):
    if direction == "forward":
        return cayley(z)
    if direction == "inverse":
        return cayley_inverse(z)
    raise PreconditionError(f"direction must be 'forward' or 'inverse', got {direction!r}")


# ---------------------------------------------------------------------------
# automorphisms
# ---------------------------------------------------------------------------

class BallAutomorphism:
    """Automorphism of B^q stored as a (q+1)x(q+1) matrix acting projectively.

    z maps to (A z + b) / (<z,c> + d) with block matrix [[A, b], [c^H, d]].
    Matrix products compose automorphisms exactly, so long compositions do
    not accumulate error beyond plain matrix algebra.
    """

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=complex)
        q = self.matrix.shape[0] - 1
        if self.matrix.shape != (q + 1, q + 1):
            raise PreconditionError("automorphism matrix must be square")
        self.q = q

    # -- constructors ------------------------------------------------------
    @staticmethod
    def identity(q: int) -> "BallAutomorphism":
        return BallAutomorphism(np.eye(q + 1, dtype=complex))

    @staticmethod
    def unitary(U: np.ndarray) -> "BallAutomorphism":
        U = np.asarray(U, dtype=complex)
        q = U.shape[0]
        M = np.zeros((q + 1, q + 1), dtype=complex)
        M[:q, :q] = U
        M[q, q] = 1.0
        return BallAutomorphism(M)

    # -- action ------------------------------------------------------------
    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        single = z.ndim == 1
        Z = np.atleast_2d(z)
        A = self.matrix[: self.q, : self.q]
        b = self.matrix[: self.q, self.q]
        c = self.matrix[self.q, : self.q]
        d = self.matrix[self.q, self.q]
        denom = Z @ c + d
        out = (Z @ A.T + b[None, :]) / denom[:, None]
        return out[0] if single else out

    def inverse(self) -> "BallAutomorphism":
        return BallAutomorphism(np.linalg.inv(self.matrix))

    def compose(self, other: "BallAutomorphism") -> "BallAutomorphism":
        """self after other: (self.compose(other))(z) = self(other(z))."""
        return BallAutomorphism(self.matrix @ other.matrix)

    def jacobian(self, z) -> np.ndarray:
        z = as_cpoint(z, self.q)
        A = self.matrix[: self.q, : self.q]
        c = self.matrix[self.q, : self.q]
        d = self.matrix[self.q, self.q]
        denom = z @ c + d
        gz = self(z)
        return (A - np.outer(gz, c)) / denom


def mobius_to_origin(a) -> BallAutomorphism:
    """The Mobius involution sigma with sigma(a) = 0, sigma(0) = a.

    For a = 0 the identity is returned (any unitary would do; the identity is
    the canonical choice).
    """
    a = as_cpoint(a)
    q = a.size
    na2 = float(np.sum(np.abs(a) ** 2))
    if na2 >= 1.0:
        raise OutOfDomainError(f"Mobius center must lie in the open ball, |a| = {np.sqrt(na2):.6f}")
    if na2 < 1e-30:
        return BallAutomorphism.identity(q)
    s = np.sqrt(1.0 - na2)
    P = np.outer(a, np.conj(a)) / na2
    A = -(s * np.eye(q) + (1.0 - s) * P)
    M = np.zeros((q + 1, q + 1), dtype=complex)
    M[:q, :q] = A
    M[:q, q] = a
    M[q, :q] = -np.conj(a)
    M[q, q] = 1.0
    return BallAutomorphism(M)


def unitary_taking(u, v) -> np.ndarray:
    """A unitary matrix U with U u = v for unit vectors u, v (deterministic)."""
    u = as_cpoint(u)
    v = as_cpoint(v, u.size)

    def basis_with_first(x):
        q = x.size
        M = np.concatenate([x[:, None], np.eye(q, dtype=complex)], axis=1)
        Q, _ = np.linalg.qr(M)
        phase = _herm(Q[:, 0], x)
        Q[:, 0] = Q[:, 0] * np.conj(phase) / abs(phase)
        return Q

    Bu = basis_with_first(u / np.linalg.norm(u))
    Bv = basis_with_first(v / np.linalg.norm(v))
    return Bv @ Bu.conj().T


def automorphism_fixing_boundary(a, zeta) -> BallAutomorphism:
    """sigma in Aut(B^q) with sigma(a) = 0 and sigma(zeta) = zeta (|zeta| = 1)."""
    zeta = as_cpoint(zeta)
    phi = mobius_to_origin(a)
    image = phi(zeta)
    U = unitary_taking(image / np.linalg.norm(image), zeta / np.linalg.norm(zeta))
    return BallAutomorphism.unitary(U).compose(phi)


# ---------------------------------------------------------------------------
# horospheres and Koranyi regions
# ---------------------------------------------------------------------------

def _check_center(center) -> np.ndarray:
    zeta = as_cpoint(center)
    if abs(np.linalg.norm(zeta) - 1.0) > 1e-9:
        raise InvalidCenterError(f"horosphere center must lie on the unit sphere, |zeta| = {np.linalg.norm(zeta):.12f}")
    return zeta


def horo_value(pole, center, z):
    """h_{zeta,p}(z) on the ball: |1-<z,zeta>|^2/(1-|z|^2) with pole 0,
    rescaled through the pole-change identity for a general pole."""
    zeta = _check_center(center)
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    nz2 = np.sum(np.abs(z) ** 2, axis=-1)
    if np.any(1.0 - np.sqrt(nz2) < BOUNDARY_GUARD):
        raise BoundaryProximityError("horosphere value at a boundary point")
    h0 = np.abs(1.0 - _herm(z, zeta)) ** 2 / (1.0 - nz2)
    p = as_cpoint(pole, zeta.size)
    if np.linalg.norm(p) > 0:
        h0 = h0 / float(horo_value(np.zeros_like(p), zeta, p))
    return float(h0[0]) if h0.size == 1 else h0


def koranyi_value(pole, center, z):
    """exp((log h + k(p,z))/2); equals |1-<z,zeta>|/(1-|z|) for pole 0."""
    zeta = _check_center(center)
    p = as_cpoint(pole, zeta.size)
    h = horo_value(p, zeta, z)
    k = ball_distance(p, z)
    return np.exp((np.log(h) + k) / 2.0)


def horo_value_intrinsic(pole, center, z, j_coarse: int = 14, levels: int = 2,
                         window: int = 4, tol: float = 1e-8) -> Tuple[float, ConvergenceReport]:
    """h_{zeta,p}(z) from its defining limit lim_{w->zeta} [k(z,w) - k(p,w)].

    The radial sequence w_j = (1 - 2^-j) zeta is Richardson-extrapolated
    (the defect is analytic in 1-t), which buys ~1e-10 accuracy before the
    floating-point floor of 1-|w|^2 is hit.
    """
    zeta = _check_center(center)
    p = as_cpoint(pole, zeta.size)
    z = as_cpoint(z, zeta.size)
    js = np.arange(j_coarse, j_coarse + window + levels + 4)
    t = 1.0 - 2.0 ** (-js.astype(float))
    W = t[:, None] * zeta[None, :]
    d = ball_distance(np.broadcast_to(z, W.shape).copy(), W) - \
        ball_distance(np.broadcast_to(p, W.shape).copy(), W)
    seq = np.asarray(d, dtype=float)
    for level in range(1, levels + 1):
        seq = (2.0 ** level * seq[1:] - seq[:-1]) / (2.0 ** level - 1.0)
    report = detect_limit(seq, window=window, tol=tol)
    value = float(np.exp(report.limit if report.converged else seq[-1]))
    return value, report


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------

@dataclass
class GeodesicRay:
    """Mobius transport of a diameter: gamma(t) = sigma(tanh(t/2) u).

    Unit speed for the ball distance; kind is 'segment' (t in [0, length]),
    'ray' (t >= 0) or 'line' (t in R).
    """

    transport: BallAutomorphism
    direction: np.ndarray
    kind: str
    length: Optional[float] = None
    endpoint: Optional[np.ndarray] = None

    def point_at(self, t):
        t = np.asarray(t, dtype=float)
        radial = np.tanh(t / 2.0)[..., None] * self.direction
        return self.transport(radial)

    def domain_interval(self) -> Tuple[float, float]:
        if self.kind == "segment":
            return 0.0, float(self.length)
        if self.kind == "ray":
            return 0.0, np.inf
        return -np.inf, np.inf


def geodesic(z, w_or_center, kind: str) -> GeodesicRay:
    """Geodesic through the data: 'segment' (two interior points),
    'ray' (interior point to boundary point) or 'line' (same data as ray,
    extended to all real parameters)."""
    z = as_cpoint(z)
    target = as_cpoint(w_or_center, z.size)
    sigma = mobius_to_origin(z)
    if kind == "segment":
        img = sigma(target)
        n = np.linalg.norm(img)
        if n < 1e-14:
            raise DegenerateGeodesicError("coincident endpoints")
        u = img / n
        length = float(ball_distance(z, target))
        return GeodesicRay(transport=sigma, direction=u, kind="segment",
                           length=length, endpoint=target)
    if kind in ("ray", "line"):
        zeta = _check_center(target)
        img = sigma(zeta)
        u = img / np.linalg.norm(img)
        return GeodesicRay(transport=sigma, direction=u, kind=kind, endpoint=zeta)
    raise PreconditionError(f"unknown geodesic kind {kind!r}")


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_min_vec(fun, lo, hi, iters: int = 64):
    """Synchronized golden-section minimization, vectorized over points.

    fun maps a parameter vector t (N,) to values (N,); distance along a
    geodesic to a fixed point is strictly convex, which golden section
    requires.
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    for _ in range(iters):
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1 = fun(x1)
        f2 = fun(x2)
        move_right = f1 > f2
        lo = np.where(move_right, x1, lo)
        hi = np.where(move_right, hi, x2)
    t = (lo + hi) / 2.0
    return t, fun(t)


def distance_to_geodesic(gamma: GeodesicRay, z, return_foot: bool = False):
    """min_t k(gamma(t), z) by golden section (tol ~1e-8 in t).

    Brackets are grown from the transport base point; t -> k(gamma(t), z) is
    convex on a geodesic of a Hadamard space, so the minimum is interior to
    any bracket whose midpoint beats both ends.
    """
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    n = Z.shape[0]

    base = gamma.point_at(np.zeros(1))[0]
    reach = ball_distance(np.broadcast_to(base, Z.shape).copy(), Z)
    reach = np.atleast_1d(reach)
    hi = 2.0 * reach + 10.0
    t_lo, t_hi = gamma.domain_interval()
    lo = np.full(n, t_lo if np.isfinite(t_lo) else 0.0)
    if gamma.kind == "line":
        lo = -hi
    if np.isfinite(t_hi):
        hi = np.minimum(hi, t_hi)

    def fun(t):
        pts = gamma.point_at(t)
        return np.atleast_1d(ball_distance(pts, Z))

    t, val = _golden_min_vec(fun, lo, hi)
    if single:
        t, val = float(t[0]), float(val[0])
    if return_foot:
        return val, t
    return val


# ---------------------------------------------------------------------------
# horosphere internal metric
# ---------------------------------------------------------------------------

def horosphere_metric(R: float, x, y, center=None):
    """Kobayashi distance of the horosphere E(0, zeta, R) itself.

    Conjugates E to H^q by the Siegel translation z -> (z1 - i/R, z') after
    rotating the center to e1 and applying the Cayley transform; the value
    is exact.
    """
    x = as_cpoint(x)
    y = as_cpoint(y, x.size)
    q = x.size
    zeta = as_cpoint(center, q) if center is not None else np.eye(q, dtype=complex)[0]
    zeta = _check_center(zeta)
    pole = np.zeros(q, dtype=complex)
    for pt in (x, y):
        if horo_value(pole, zeta, pt) >= R:
            raise NotInHorosphereError("point outside E(0, zeta, R)")
    e1 = np.eye(q, dtype=complex)[0]
    U = unitary_taking(zeta, e1)
    shift = np.zeros(q, dtype=complex)
    shift[0] = -1j / R
    tx = cayley(U @ x) + shift
    ty = cayley(U @ y) + shift
    return siegel_distance(tx, ty)


# ---------------------------------------------------------------------------
# Gromov-hyperbolicity diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlimnessReport:
    delta: float
    degenerate: bool
    samples_per_side: int


def slimness_delta(a, b, c, samples_per_side: int = 256) -> SlimnessReport:
    """Empirical slimness of the geodesic triangle abc.

    Max over sampled side points of the distance to the sampled union of the
    other two sides; the winning point is refined by golden section against
    each opposite side.  Reported values carry the sampling density.
    """
    pts = [as_cpoint(a), as_cpoint(b), as_cpoint(c)]
    dists = [float(ball_distance(pts[i], pts[(i + 1) % 3])) for i in range(3)]
    perims = sorted(dists)
    degenerate = perims[2] >= perims[0] + perims[1] - 1e-9 or min(dists) < 1e-12

    sides = []
    samples = []
    for i in range(3):
        p, qq = pts[i], pts[(i + 1) % 3]
        if dists[i] < 1e-12:
            sides.append(None)
            samples.append(np.atleast_2d(p))
            continue
        g = geodesic(p, qq, "segment")
        ts = np.linspace(0.0, g.length, samples_per_side)
        sides.append(g)
        samples.append(g.point_at(ts))

    delta = 0.0
    for i in range(3):
        if sides[i] is None:
            continue
        others = np.concatenate([samples[(i + 1) % 3], samples[(i + 2) % 3]], axis=0)
        dmat = ball_distance_matrix(samples[i], others)
        per_point = dmat.min(axis=1)
        j = int(np.argmax(per_point))
        worst = samples[i][j]
        refined = np.inf
        for k in ((i + 1) % 3, (i + 2) % 3):
            if sides[k] is None:
                refined = min(refined, float(ball_distance(worst, samples[k][0])))
            else:
                refined = min(refined, float(distance_to_geodesic(sides[k], worst)))
        delta = max(delta, refined)
    return SlimnessReport(delta=float(delta), degenerate=bool(degenerate),
                          samples_per_side=samples_per_side)


@dataclass(frozen=True)
class FilippoResult:
    holds: bool
    slack: float
    foot_parameter: float
    projected_distance: float


def filippo_check(gamma: GeodesicRay, x0, z, delta: float) -> FilippoResult:
    """Check d(x0,z) >= d(x0,z_g) + d(z_g,z) - 6 delta with z_g the nearest
    point of the geodesic line to z."""
    if delta <= 0:
        raise PreconditionError("delta must be positive")
    x0 = as_cpoint(x0)
    z = as_cpoint(z, x0.size)
    d_on, t0 = distance_to_geodesic(gamma, x0, return_foot=True)
    if d_on > 1e-9:
        raise PreconditionError(f"x0 is not on the geodesic (distance {d_on:.2e})")
    dzg, t_foot = distance_to_geodesic(gamma, z, return_foot=True)
    zg = gamma.point_at(np.array([t_foot]))[0]
    lhs = float(ball_distance(x0, z))
    rhs = float(ball_distance(x0, zg)) + dzg - 6.0 * delta
    slack = lhs - rhs
    return FilippoResult(holds=slack >= -1e-12, slack=float(slack),
                         foot_parameter=float(t_foot), projected_distance=float(dzg))


@dataclass(frozen=True)
class InclusionReport:
    n_samples: int
    violations_first: int
    violations_second: int
    worst_first_margin: float
    worst_second_margin: float

    @property
    def clean(self) -> bool:
        return self.violations_first == 0 and self.violations_second == 0


def region_A_vs_koranyi(pole, center, M: float, delta: float, samples) -> InclusionReport:
    """Classify samples against A(gamma,M) c K(p,zeta,M) c A(gamma,M e^{6 delta}).

    gamma is the geodesic ray from the pole to the center; any sample breaking
    either inclusion is counted with its margin.
    """
    if M <= 1:
        raise PreconditionError("M must exceed 1")
    if delta <= 0:
        raise PreconditionError("delta must be positive")
    pole = as_cpoint(pole)
    zeta = _check_center(center)
    Z = np.atleast_2d(np.asarray(samples, dtype=complex))
    gamma = geodesic(pole, zeta, "ray")
    d_gamma = np.atleast_1d(distance_to_geodesic(gamma, Z))
    logM = np.log(M)
    in_A = d_gamma < logM
    h = horo_value(pole, zeta, Z)
    k = np.atleast_1d(ball_distance(np.broadcast_to(pole, Z.shape).copy(), Z))
    kor = np.log(h) + k
    in_K = kor < 2.0 * logM
    in_A6 = d_gamma < logM + 6.0 * delta

    first_bad = in_A & ~in_K
    second_bad = in_K & ~in_A6
    margin1 = float(np.max(kor - 2.0 * logM, initial=-np.inf, where=in_A)) if in_A.any() else -np.inf
    margin2 = float(np.max(d_gamma - (logM + 6.0 * delta), initial=-np.inf, where=in_K)) if in_K.any() else -np.inf
    return InclusionReport(
        n_samples=int(Z.shape[0]),
        violations_first=int(first_bad.sum()),
        violations_second=int(second_bad.sum()),
        worst_first_margin=margin1,
        worst_second_margin=margin2,
    )
