"""Forward canonical-model extraction by rescaling.

The stage maps are psi_m o f^{m-n}, where psi_m re-centers the m-th orbit
point to 0 in B^q.  On the Siegel half-space psi_m is built from Heisenberg
translations and dilations (stable for orbits escaping to infinity); ball
maps are conjugated to H^q at their Denjoy-Wolff point first, because in
ball coordinates 1-|z_m| underflows long before the stages settle.  On other
convex domains psi_m is a squeezing certificate embedding and the whole path
is labeled experimental with tolerances widened by the certificate deficit.

A gauge unitary (left singular frame of the stage Jacobian at the base,
phases pinned) is composed onto each psi_m so the full stage sequence
converges without subsequence bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from . import siegel as sgl
from .ball import (
    BallAutomorphism,
    ball_distance,
    cayley,
    cayley_inverse,
    mobius_to_origin,
    siegel_distance,
    unitary_taking,
)
from .domains import DomainSpec, squeeze_lower
from .dynamics import HoloMap, classify, divergence_rate, forward_step
from .errors import (
    AmbiguousDimensionError,
    InsufficientSqueezingError,
    NonConvergentModelError,
    PreconditionError,
)
from .numerics import SeededSampler, as_cpoint, detect_limit, numerical_jacobian

_SQUEEZE_FLOOR = 0.5


# ---------------------------------------------------------------------------
# orbit normalizers
# ---------------------------------------------------------------------------

class _Normalizer:
    """Injective holomorphic embedding of the working domain into B^q
    sending a prescribed point to 0, with an inverse on its image."""

    def __init__(self, forward: Callable, inverse: Callable, widening: float = 0.0):
        self.forward = forward
        self.inverse = inverse
        self.widening = widening

    def __call__(self, pts):
        return self.forward(np.atleast_2d(np.asarray(pts, dtype=complex)))


def _normalizer_at(domain: DomainSpec, z: np.ndarray) -> _Normalizer:
    if domain.kind == "ball":
        sigma = mobius_to_origin(z)
        return _Normalizer(forward=sigma, inverse=sigma.inverse())
    if domain.kind == "siegel":
        N = sgl.normalize_to_base(z)
        Ninv = N.inverse()
        return _Normalizer(forward=lambda pts: cayley_inverse(N(pts)),
                           inverse=lambda pts: Ninv(cayley(pts)))
    cert = squeeze_lower(domain, z, n_verify=2048)
    if cert.inner_radius < _SQUEEZE_FLOOR:
        raise InsufficientSqueezingError(
            f"squeezing certificate {cert.inner_radius:.3f} below floor {_SQUEEZE_FLOOR}",
            inner_radius=cert.inner_radius)
    return _Normalizer(forward=cert.embed, inverse=cert.embed_inverse,
                       widening=1.0 - cert.inner_radius)


def _phase_fix_columns(W: np.ndarray) -> np.ndarray:
    W = W.copy()
    for i in range(W.shape[1]):
        j = int(np.argmax(np.abs(W[:, i])))
        p = W[j, i]
        if abs(p) > 0:
            W[:, i] *= np.conj(p) / abs(p)
    return W


# ---------------------------------------------------------------------------
# rescaled stages
# ---------------------------------------------------------------------------

@dataclass
class RescaledStage:
    """psi_m o f^{m-n} with the gauge unitary folded into psi_m."""

    m: int
    n: int
    base: np.ndarray
    map: Callable

    def __call__(self, pts):
        return self.map(pts)


def _stage_factory(f: HoloMap, base: np.ndarray, m: int):
    """(gauge o psi_m, orbit) shared by rescaled_stage and the extractor."""
    z = base
    orbit = [base]
    for _ in range(m):
        z = f(z)
        orbit.append(z)
    norm = _normalizer_at(f.domain, orbit[m])

    def raw_stage(pts):
        out = np.atleast_2d(np.asarray(pts, dtype=complex))
        for _ in range(m):
            out = f(out)
        return norm(out)

    J = numerical_jacobian(raw_stage if m else norm, base, h=1e-6)
    W, _, Vh = np.linalg.svd(J)
    G = (W @ Vh).conj().T

    def gauged_psi(pts):
        return norm(pts) @ G.T

    return gauged_psi, orbit, norm, G


def rescaled_stage(f: HoloMap, base, m: int, n: int) -> RescaledStage:
    """The finite-stage map psi_m o f^{m-n} (gauge fixed from the (m,0) stage)."""
    if not 0 <= n <= m:
        raise PreconditionError("need 0 <= n <= m")
    base = as_cpoint(base, f.domain.dimension)
    gauged_psi, orbit, _, _ = _stage_factory(f, base, m)

    def stage_map(pts):
        out = np.atleast_2d(np.asarray(pts, dtype=complex))
        for _ in range(m - n):
            out = f(out)
        return gauged_psi(out)

    return RescaledStage(m=m, n=n, base=base, map=stage_map)


# ---------------------------------------------------------------------------
# model estimate
# ---------------------------------------------------------------------------

@dataclass
class ModelEstimate:
    k: int
    type: str
    dilation: Optional[float]
    angles: Tuple[float, ...]
    sign: Optional[int]
    intertwiner: Tuple[np.ndarray, np.ndarray]
    residual: float
    metric_agreement: float
    experimental: bool
    tolerance_widening: float
    evidence: dict
    tau: Optional[BallAutomorphism] = None
    h_fun: Optional[Callable] = None
    model_projection: Optional[np.ndarray] = None


def _sample_grid(normalizer: _Normalizer, q: int, seed: int,
                 radii=(0.5, 1.0, 2.0), per_radius: int = 21) -> np.ndarray:
    """64 base-centered samples: the base plus per_radius points on each
    Kobayashi sphere of the given radii, pulled back through the normalizer."""
    sampler = SeededSampler(seed, q)
    pieces = [np.zeros((1, q), dtype=complex)]
    for r in radii:
        dirs = sampler.complex_sphere(per_radius)
        pieces.append(np.tanh(r / 2.0) * dirs)
    ball_pts = np.concatenate(pieces, axis=0)
    return normalizer.inverse(ball_pts)


def _fit_ball_automorphism(X: np.ndarray, Y: np.ndarray, seed: int = 3,
                           n_starts: int = 8) -> Tuple[BallAutomorphism, float]:
    """Least-squares fit of tau = U o phi_a to pairs tau(X) ~ Y on B^k."""
    k = X.shape[1]
    n_h = k * k  # real parameters of a Hermitian generator

    def unpack(theta):
        u = theta[:2 * k:2] + 1j * theta[1:2 * k:2]
        a = u / (1.0 + np.linalg.norm(u))
        H = np.zeros((k, k), dtype=complex)
        idx = 2 * k
        for i in range(k):
            H[i, i] = theta[idx]
            idx += 1
        for i in range(k):
            for j in range(i + 1, k):
                H[i, j] = theta[idx] + 1j * theta[idx + 1]
                H[j, i] = np.conj(H[i, j])
                idx += 2
        from scipy.linalg import expm
        U = expm(1j * H)
        return BallAutomorphism.unitary(U).compose(mobius_to_origin(a).inverse())

    def resid(theta):
        tau = unpack(theta)
        d = tau(X) - Y
        return np.concatenate([d.real.ravel(), d.imag.ravel()])

    rng = SeededSampler(seed, k)
    best = None
    for s in range(n_starts):
        theta0 = np.zeros(2 * k + n_h)
        if s:
            theta0 += 0.3 * rng.reals(theta0.size, -1.0, 1.0)
        try:
            sol = optimize.least_squares(resid, theta0, method="lm",
                                         max_nfev=4000, xtol=1e-15, ftol=1e-15)
        except Exception:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise NonConvergentModelError("automorphism fit failed from every start")
    return unpack(best.x), float(np.sqrt(2.0 * best.cost / X.shape[0]))


# -- Siegel normal form of a fitted ball automorphism ------------------------

def _affine_of(fun: Callable, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """(J, c) with fun(z) = J z + c, extracted exactly for affine maps."""
    p = np.zeros(k, dtype=complex)
    p[0] = 2j
    fp = fun(np.atleast_2d(p))[0]
    cols = []
    for j in range(k):
        e = np.zeros(k, dtype=complex)
        e[j] = 1.0
        cols.append(fun(np.atleast_2d(p + e))[0] - fp)
    J = np.stack(cols, axis=1)
    return J, fp - J @ p


def _boundary_fixed_points(aut: BallAutomorphism) -> List[np.ndarray]:
    vals, vecs = np.linalg.eig(aut.matrix)
    pts = []
    for i in range(vals.size):
        v = vecs[:, i]
        if abs(v[-1]) < 1e-12:
            continue
        z = v[:-1] / v[-1]
        if abs(np.linalg.norm(z) - 1.0) < 1e-7:
            if not any(np.linalg.norm(z - p) < 1e-7 for p in pts):
                pts.append(z)
    return pts


def mobius_to_siegel_normal_form(aut: BallAutomorphism) -> dict:
    """Classify a ball automorphism and return its Siegel affine normal form.

    Hyperbolic: (z1/lam, e^{i t_j} z'_j/sqrt(lam)) with the Denjoy-Wolff
    point at infinity (lam in (0,1) its dilation).  Parabolic: either the
    translation form (z1 +- 1, e^{i t_j} z'_j) or the shear form (reported
    with its raw affine data).
    """
    k = aut.q
    e1 = np.eye(k, dtype=complex)[0]
    fixed = _boundary_fixed_points(aut)
    if not fixed:
        return {"kind": "elliptic", "lam": None, "angles": (), "sign": None}

    def affine_at_infinity(xi):
        U = unitary_taking(xi, e1)

        def tau_tilde(Z):
            zball = cayley_inverse(np.atleast_2d(Z)) @ np.conj(U)  # U^H: e1 -> xi
            img = aut(zball) @ U.T                                  # U: xi -> e1
            return cayley(img)

        return tau_tilde

    # choose the fixed point whose conjugated multiplier exceeds 1 (the
    # normal forms put the attracting-at-infinity behaviour there)
    chosen = None
    for xi in fixed:
        tt = affine_at_infinity(xi)
        J, c = _affine_of(tt, k)
        mult = J[0, 0]
        if abs(mult.imag) > 1e-8 or mult.real <= 0:
            continue
        if chosen is None or mult.real > chosen[1].real:
            chosen = (xi, mult, J, c, tt)
    if chosen is None:
        return {"kind": "elliptic", "lam": None, "angles": (), "sign": None}
    xi, mult, J, c, tt = chosen
    lam_mult = float(mult.real)

    if abs(lam_mult - 1.0) > 1e-6:
        if lam_mult < 1.0:
            return {"kind": "elliptic", "lam": None, "angles": (), "sign": None}
        # hyperbolic: move the finite fixed point to 0, read off rotations
        w_star = np.linalg.solve(J - np.eye(k), -c)
        zprime_block = J[1:, 1:]
        phases = np.angle(np.linalg.eigvals(zprime_block / np.sqrt(lam_mult))) if k > 1 else ()
        return {"kind": "hyperbolic", "lam": 1.0 / lam_mult,
                "angles": tuple(float(t) for t in np.sort(np.atleast_1d(phases))) if k > 1 else (),
                "sign": None, "fixed_point": w_star, "multiplier": lam_mult}

    # parabolic
    Up = J[1:, 1:]
    bprime = c[1:]
    shear = False
    v = np.zeros(k - 1, dtype=complex)
    if k > 1:
        sol, res, *_ = np.linalg.lstsq(Up - np.eye(k - 1), -bprime, rcond=None)
        if np.linalg.norm((Up - np.eye(k - 1)) @ sol + bprime) > 1e-6 * max(1.0, np.linalg.norm(bprime)):
            shear = True
        v = sol
    if shear:
        return {"kind": "parabolic-shear", "lam": 1.0, "angles": (), "sign": None,
                "affine": (J, c)}
    # conjugate by the Heisenberg translation moving v, then rescale beta to +-1
    if k > 1 and np.linalg.norm(v) > 0:
        T = sgl.SiegelMap.translation(1j * float(np.sum(np.abs(v) ** 2)), v)
        Tinv = T.inverse()
        J, c = _affine_of(lambda Z: T(tt(Tinv(np.atleast_2d(Z)))), k)
    beta = complex(c[0])
    if abs(beta) < 1e-9:
        return {"kind": "elliptic", "lam": None, "angles": (), "sign": None}
    sign = +1 if beta.real >= 0 else -1
    phases = np.angle(np.linalg.eigvals(J[1:, 1:])) if k > 1 else ()
    return {"kind": "parabolic-translation", "lam": 1.0,
            "angles": tuple(float(t) for t in np.sort(np.atleast_1d(phases))) if k > 1 else (),
            "sign": sign, "beta": beta}


# ---------------------------------------------------------------------------
# the extractor
# ---------------------------------------------------------------------------

@dataclass
class ForwardModelConfig:
    m_max: int = 120
    window: int = 4
    pointwise_tol: float = 1e-9
    seed: int = 97
    rank_floor: float = 1e-5
    rank_gap: float = 10.0
    n_metric_pairs: int = 24
    skip_classification: bool = False


def extract_forward_model(f: HoloMap, base, config: Optional[ForwardModelConfig] = None) -> ModelEstimate:
    """Canonical semi-model (B^k, h, tau) for a hyperbolic or parabolic
    nonzero-step self-map: h = lim (gauge o psi_m o f^m) on a sample grid,
    k = numerical rank of Dh at the base (with a hard gap test), tau fitted
    over Mobius parameters and converted to its Siegel affine normal form.
    """
    cfg = config or ForwardModelConfig()
    base = as_cpoint(base, f.domain.dimension)
    experimental = f.domain.kind not in ("ball", "siegel")
    widening = 0.0

    cls = None
    if not cfg.skip_classification and not experimental:
        cls = classify(f, base)
        if cls.type not in ("hyperbolic", "parabolic-nonzero-step"):
            raise PreconditionError(
                f"forward models need a hyperbolic or parabolic nonzero-step map, got {cls.type}")

    work = f
    to_work = lambda pts: np.atleast_2d(pts)
    from_work = lambda pts: np.atleast_2d(pts)
    magnitude_cap = 1e280
    if f.domain.kind == "ball":
        from .domains import siegel_domain
        sdom = siegel_domain(f.domain.dimension)
        if getattr(f, "siegel_form", None) is not None:
            # exact unbounded realization supplied by the catalog constructor
            work = f.siegel_form
            U = f.siegel_anchor_unitary
        else:
            # black-box ball map: bounce through the Cayley transform, with a
            # magnitude cap where the double precision of 1-|z| runs out
            anchor = cls.denjoy_wolff if cls is not None and cls.denjoy_wolff is not None else None
            if anchor is None:
                orb = base
                for _ in range(60):
                    orb = f(orb)
                anchor = orb / np.linalg.norm(orb)
            e1 = np.eye(f.domain.dimension, dtype=complex)[0]
            U = unitary_taking(as_cpoint(anchor, f.domain.dimension), e1)

            def work_ev(Z):
                return cayley(f(cayley_inverse(np.atleast_2d(Z)) @ np.conj(U)) @ U.T)

            work = HoloMap(sdom, sdom, evaluator=work_ev, name=f"{f.name}@siegel",
                           verify=False)
            magnitude_cap = 1e9
        to_work = lambda pts: cayley(np.atleast_2d(pts) @ U.T)
        from_work = lambda pts: cayley_inverse(np.atleast_2d(pts)) @ np.conj(U)

    wbase = to_work(base)[0]
    norm0 = _normalizer_at(work.domain, wbase)
    widening = max(widening, norm0.widening)
    X = _sample_grid(norm0, work.domain.dimension, cfg.seed)
    XF = work(X)  # images under one application, for the conjugacy pairs

    # march the stages
    orbit_pt = wbase
    cur = X.copy()
    cur_f = XF.copy()
    prev_vals = None
    diffs: List[float] = []
    values = values_f = None
    m_star = None
    h_norm = h_gauge = h_jac = None
    for m in range(cfg.m_max + 1):
        norm_m = _normalizer_at(work.domain, orbit_pt)
        widening = max(widening, norm_m.widening)
        raw = norm_m(cur)
        raw_f = norm_m(cur_f)
        # gauge: inverse polar unitary of the stage Jacobian at the base.
        # The polar factor soaks up the rotating phases of the dynamics (the
        # paper's subsequence extraction) and is phase-unambiguous wherever
        # the Jacobian is not degenerate, unlike a raw SVD frame.
        Jst = _jacobian_chain(work, wbase, m, norm_m)
        W, _, Vh = np.linalg.svd(Jst)
        G = (W @ Vh).conj().T
        vals = raw @ G.T
        vals_f = raw_f @ G.T
        if prev_vals is not None:
            diffs.append(float(np.max(np.abs(vals - prev_vals))))
            if len(diffs) >= cfg.window:
                tail = diffs[-cfg.window:]
                if max(tail) <= cfg.pointwise_tol + 10.0 * widening:
                    values, values_f, m_star = vals, vals_f, m
                    h_norm, h_gauge, h_jac = norm_m, G, G @ Jst
                    break
        prev_vals = vals
        orbit_pt = work(orbit_pt)
        cur = work(cur)
        cur_f = work(cur_f)
        if work.domain.interior_margin(orbit_pt) < 1e-280 or \
                np.max(np.abs(orbit_pt)) > magnitude_cap:
            break
    if values is None:
        raise NonConvergentModelError(
            f"stage maps not Cauchy within m_max={cfg.m_max} (last diff "
            f"{diffs[-1]:.3e})" if diffs else "stage maps not Cauchy")

    def h_fun(pts, _n=h_norm, _G=h_gauge, _m=m_star):
        out = to_work(pts)
        for _ in range(_m):
            out = work(out)
        return _n(out) @ _G.T

    # dimension: with the polar gauge the stage Jacobian at the base is
    # (numerically) Hermitian PSD; its spectrum plays the singular-value role
    # and its leading eigenvectors span the model slice.
    sym = 0.5 * (h_jac + h_jac.conj().T)
    evals, evecs = np.linalg.eigh(sym)
    order = np.argsort(evals)[::-1]
    svals = np.maximum(evals[order], 0.0)
    frame = evecs[:, order]
    smax = float(svals.max())
    keep = svals > cfg.rank_floor * smax
    k = int(keep.sum())
    if 0 < k < svals.size:
        gap = float(svals[k - 1] / svals[k]) if svals[k] > 0 else np.inf
        if gap < cfg.rank_gap:
            raise AmbiguousDimensionError(
                f"singular value gap {gap:.2f} below {cfg.rank_gap}",
                candidates=(k - 1, k, k + 1))
    Vk = frame[:, :k]
    Y = values @ np.conj(Vk)
    Yf = values_f @ np.conj(Vk)
    discarded = float(np.max(np.abs(values @ np.conj(frame[:, k:])))) if k < svals.size else 0.0

    # guard: model points must sit inside B^k
    if np.any(np.linalg.norm(Y, axis=1) >= 1.0) or np.any(np.linalg.norm(Yf, axis=1) >= 1.0):
        raise NonConvergentModelError("stage limits escaped the model ball")

    tau, fit_rms = _fit_ball_automorphism(Y, Yf, seed=cfg.seed)
    nform = mobius_to_siegel_normal_form(tau)

    # residual in the model metric
    TY = tau(Y)
    res = float(np.max(ball_distance(TY, Yf, guard=False)))

    # pullback-metric agreement at the final stage
    sampler = SeededSampler(cfg.seed + 1, 1)
    idx = (sampler.reals(2 * cfg.n_metric_pairs, 0, len(Y)) // 1).astype(int)
    agree = 0.0
    deep = cur  # f^{m*}(X) in work coordinates
    for t in range(cfg.n_metric_pairs):
        i, j = int(idx[2 * t]), int(idx[2 * t + 1])
        if i == j:
            continue
        dom_d = siegel_distance(deep[i], deep[j]) if work.domain.kind == "siegel" \
            else work.domain.distance_with_gap(deep[i], deep[j])[0]
        mod_d = float(ball_distance(Y[i][None, :], Y[j][None, :], guard=False))
        agree = max(agree, abs(dom_d - mod_d))

    evidence = {"m_star": m_star, "stage_diffs_tail": diffs[-cfg.window:],
                "fit_rms": fit_rms, "singular_values": svals.tolist(),
                "discarded_coordinate_sup": discarded,
                "classification": None if cls is None else cls.type}
    return ModelEstimate(
        k=k, type=nform["kind"], dilation=nform.get("lam"),
        angles=tuple(nform.get("angles", ())), sign=nform.get("sign"),
        intertwiner=(from_work(X), Y), residual=res, metric_agreement=float(agree),
        experimental=experimental, tolerance_widening=widening,
        evidence=evidence, tau=tau, h_fun=lambda pts: h_fun(pts) @ np.conj(Vk),
        model_projection=Vk)


def _jacobian_chain(work: HoloMap, base: np.ndarray, m: int, norm_m) -> np.ndarray:
    """Jacobian of norm_m o work^m at the base by chaining per-step numerical
    Jacobians along the orbit.  Steps are taken relative to the point size:
    orbit points grow geometrically and an absolute step would vanish in
    rounding, silently zeroing the chain."""
    J = np.eye(work.domain.dimension, dtype=complex)
    z = base
    for _ in range(m):
        scale = max(1.0, float(np.max(np.abs(z))))
        J = numerical_jacobian(lambda p: work(p), z, h=1e-7 * scale) @ J
        z = work(z)
    scale = max(1.0, float(np.max(np.abs(z))))
    return numerical_jacobian(lambda p: norm_m(p), z, h=1e-7 * scale) @ J


# ---------------------------------------------------------------------------
# step check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelStepReport:
    c_tau: float
    c_f: float
    c_residual: float
    step_mismatch: float


def model_step_check(f: HoloMap, estimate: ModelEstimate, x=None,
                     m_values: Sequence[int] = (1, 2, 4, 8), m_max: int = 200) -> ModelStepReport:
    """c(tau) = c(f) and s_m(x) = k_{B^k}(h x, tau^m h x) on catalog maps."""
    if estimate.tau is None or estimate.h_fun is None:
        raise PreconditionError("estimate lacks a fitted automorphism")
    x = as_cpoint(x, f.domain.dimension) if x is not None else estimate.intertwiner[0][0]
    c_tau = 0.0 if estimate.type.startswith("parabolic") else float(-np.log(estimate.dilation))
    c_f = divergence_rate(f, x, m_max=m_max).value
    hx = estimate.h_fun(x)[0]
    mismatch = 0.0
    for m in m_values:
        s_report = forward_step(f, x, m)
        s_val = s_report.limit if s_report.converged else float(s_report.tail().mean())
        w = hx
        for _ in range(m):
            w = estimate.tau(w)
        model_val = float(ball_distance(hx[None, :], w[None, :], guard=False))
        mismatch = max(mismatch, abs(s_val - model_val))
    return ModelStepReport(c_tau=c_tau, c_f=c_f, c_residual=abs(c_tau - c_f),
                           step_mismatch=float(mismatch))
