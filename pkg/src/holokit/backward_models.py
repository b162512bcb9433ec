"""Backward orbits at boundary repelling fixed points and pre-model
extraction.

The stopping-time construction: seed points on the geodesic ray toward the
repelling point zeta, inside the unit horosphere E(z_n, zeta, 1); iterate
forward until first exit; the trail of the last V pre-exit iterates is a
finite chunk of an approximate backward orbit.  The seed parameters t_k are
refined so consecutive exit points match (phase locking): the raw paper
schedule only converges along subsequences because exit phases equidistribute
mod log(lambda), and pinning the phase replaces the diagonal-subsequence
argument by monotone refinement.

Backward preimages are never computed by root finding; only forward
iteration is used, and f-compatibility of the returned orbit is checked by
forward application.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import siegel as sgl
from .ball import (
    BallAutomorphism,
    automorphism_fixing_boundary,
    ball_distance,
    cayley,
    cayley_inverse,
    geodesic,
    horo_value,
    koranyi_value,
    mobius_to_origin,
    siegel_distance,
    unitary_taking,
)
from .dynamics import HoloMap, OrbitRecord, dilation
from .errors import (
    InvariantViolationError,
    NonConvergentOrbitError,
    PreconditionError,
    TrappedOrbitError,
)
from .forward_models import (
    ModelEstimate,
    _fit_ball_automorphism,
    mobius_to_siegel_normal_form,
)
from .numerics import ConvergenceReport, SeededSampler, as_cpoint, detect_limit, numerical_jacobian

T0 = (np.e - 1.0) / (np.e + 1.0)  # disc parameter of unit hyperbolic radius


@dataclass
class BackwardConfig:
    zeta: object                      # boundary repelling point (domain coords)
    lam: Optional[float] = None       # dilation estimate (> 1); measured if absent
    R0: float = 0.25                  # initial horosphere radius
    n_scan: int = 4                   # horosphere schedule indices to try
    k_max: int = 40                   # refinement budget per n
    trail_length: int = 18            # V: backward indices kept
    max_iter: int = 20000             # stopping-time cap
    cauchy_tol: float = 1e-7          # trail Cauchy tolerance (3 consecutive k)
    steps_tol: float = 5e-2           # allowed |step - log lam| at the tail
    seed_arclength: float = 2.0       # arc length of the first seed (>= 1 = t0)

    def radii(self, n: int, lam: float) -> Tuple[float, float, float]:
        Rn = self.R0 * 2.0 ** (-n)
        r_tilde = lam * np.e
        return Rn, Rn / r_tilde, 2.0 ** (-n - 2)


class _BackwardLane:
    """Coordinate lane: everything the stopping-time process needs, with the
    repelling point rotated to e1 (ball) or kept at a finite boundary point
    (Siegel, stable for orbits exponentially close to the boundary)."""

    def __init__(self, f: HoloMap, zeta):
        self.f = f
        dom = f.domain
        if dom.kind == "ball":
            q = dom.dimension
            self.kind = "ball"
            self.q = q
            zeta = as_cpoint(zeta, q)
            e1 = np.eye(q, dtype=complex)[0]
            self.U = unitary_taking(zeta, e1)
            self.zeta_work = e1
            self.pole = np.zeros(q, dtype=complex)
        elif dom.kind == "siegel":
            self.kind = "siegel"
            self.q = dom.dimension
            self.U = None
            self.zeta_work = None if zeta is None else as_cpoint(zeta, self.q)
            if self.zeta_work is None:
                raise PreconditionError("backward orbits at infinity are forward orbits; "
                                        "pick the finite repelling point")
            self.pole = dom.center
        else:
            raise PreconditionError(
                "backward_orbit needs an exact-metric domain or a localization chart")

    def to_work(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=complex))
        return pts @ self.U.T if self.U is not None else pts

    def from_work(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=complex))
        return pts @ np.conj(self.U) if self.U is not None else pts

    def apply(self, pts):
        return self.to_work(self.f(self.from_work(pts)))

    def distance(self, z, w):
        return ball_distance(z, w, guard=False) if self.kind == "ball" \
            else siegel_distance(z, w, guard=False)

    def horo(self, pole, z):
        if self.kind == "ball":
            # guard-free: stopping-time seeds legitimately crowd the boundary
            z = np.atleast_2d(np.asarray(z, dtype=complex))
            h0 = np.abs(1.0 - z @ np.conj(self.zeta_work)) ** 2 / \
                (1.0 - np.sum(np.abs(z) ** 2, axis=-1))
            p = np.atleast_2d(np.asarray(pole, dtype=complex))
            hp = np.abs(1.0 - p @ np.conj(self.zeta_work)) ** 2 / \
                (1.0 - np.sum(np.abs(p) ** 2, axis=-1))
            out = h0 / hp
            return float(out[0]) if out.size == 1 else out
        return sgl.siegel_horo_value(pole, self.zeta_work, z)

    def point_with_horo(self, value: float) -> np.ndarray:
        """Point on the canonical ray toward zeta with h_{zeta,pole} = value."""
        if self.kind == "ball":
            # h(t e1) = (1-t)/(1+t)  =>  t = (1-h)/(1+h)
            t = (1.0 - value) / (1.0 + value)
            out = np.zeros(self.q, dtype=complex)
            out[0] = t
            return out
        # siegel, zeta finite: along the ray from the pole; with pole (i,0)
        # and zeta = 0: h((is,0)) = s, monotone in s
        ray = sgl.ray_toward(self.pole, self.zeta_work)

        def h_at(t):
            return float(self.horo(self.pole, np.atleast_2d(ray.point_at(float(t)))))

        lo, hi = -5.0, 60.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if h_at(mid) > value:
                lo = mid
            else:
                hi = mid
        return ray.point_at(0.5 * (lo + hi))

    def ray_from(self, z):
        """Unit-speed geodesic ray from z toward zeta (work coordinates)."""
        if self.kind == "ball":
            g = geodesic(z, self.zeta_work, "ray")
            return lambda t: g.point_at(np.atleast_1d(t))
        ray = sgl.ray_toward(z, self.zeta_work)
        return lambda t: np.atleast_2d(ray.point_at(t))


def _first_exit(lane: _BackwardLane, z_n: np.ndarray, seed: np.ndarray,
                max_iter: int) -> Tuple[int, List[np.ndarray]]:
    """Iterate forward until h_{zeta,z_n} > 1 (1e-12 hysteresis); returns the
    exit time and the full forward trajectory."""
    traj = [seed]
    z = seed
    for m in range(1, max_iter + 1):
        z = lane.apply(z)[0]
        traj.append(z)
        if lane.horo(z_n, z) > 1.0 + 1e-12:
            return m, traj
    raise TrappedOrbitError(
        f"no exit from E(z_n, zeta, 1) within {max_iter} iterations "
        "(zeta may not be repelling, or R0 is too large)")


def backward_orbit(f: HoloMap, config: BackwardConfig) -> OrbitRecord:
    """Stopping-time backward orbit at a boundary repelling fixed point.

    Scans the horosphere schedule n = 0, 1, ... and accepts the first n whose
    trails become Cauchy under phase-locked refinement of the seed parameters.
    The returned orbit satisfies f(z_{m+1}) = z_m within the recorded solver
    tolerance, has non-decreasing steps converging to log(lambda), and carries
    the rescaled pre/post-exit pairs used by the compactness experiment.
    """
    lane = _BackwardLane(f, config.zeta)
    lam = config.lam
    if lam is None:
        lam = dilation(f, config.zeta).lam
    if not lam > 1.0:
        raise PreconditionError(f"dilation {lam:.6f} is not > 1: zeta is not repelling")
    log_lam = float(np.log(lam))

    # Lemma-birba2-style guard: the forward limit set must avoid E(pole, zeta, R0)
    R0 = config.R0
    probe = lane.to_work(f.domain.interior_samples(1, seed=3))[0]
    for _ in range(400):
        nxt = lane.apply(probe)[0]
        margin = 1.0 - np.linalg.norm(nxt) if lane.kind == "ball" else \
            nxt[0].imag - float(np.sum(np.abs(nxt[1:]) ** 2))
        if margin < 1e-9 or np.max(np.abs(nxt)) > 1e9:
            break
        probe = nxt
    h_limit = lane.horo(lane.pole, probe)
    while h_limit <= 2.0 * R0 and R0 > 1e-6:
        R0 = R0 / 2.0

    last_error: Optional[Exception] = None
    for n in range(config.n_scan):
        Rn, rn, eps_n = BackwardConfig.radii(config, n, lam)
        Rn = min(Rn, R0 * 2.0 ** (-n))
        rn = Rn / (lam * np.e)
        z_n = lane.point_with_horo(rn / 2.0)
        ray = lane.ray_from(z_n)
        # sanity: seeds stay in the unit horosphere about z_n
        s = config.seed_arclength
        seed = ray(np.array([s]))[0]
        if lane.horo(z_n, seed) >= 1.0:
            last_error = PreconditionError("seed left E(z_n, zeta, 1)")
            continue
        try:
            m0, traj = _first_exit(lane, z_n, seed, config.max_iter)
        except TrappedOrbitError as exc:
            last_error = exc
            continue

        V = config.trail_length
        if lane.kind == "ball":
            # seeds at arc length s sit ~2 e^{-s} from the sphere; keep the
            # deepest seeds representable with room for the exit test
            v_cap = int((25.5 - config.seed_arclength) / log_lam) - 3
            V = max(4, min(V, v_cap))

        def trail_of(traj_, m_):
            lo = max(m_ - V, 0)
            return np.array(traj_[lo:m_ + 1][::-1])  # index nu: f^{m-nu}(seed)

        trails = [trail_of(traj, m0)]
        ms = [m0]
        ss = [s]
        consecutive = 0
        converged = False
        for k in range(1, config.k_max + 1):
            target = trails[-1][0]
            s_base = ss[-1] + log_lam

            def head_dist(s_val: float) -> float:
                sd = ray(np.array([s_val]))[0]
                if lane.horo(z_n, sd) >= 1.0:
                    return np.inf
                try:
                    m_, tr_ = _first_exit(lane, z_n, sd, config.max_iter)
                except TrappedOrbitError:
                    return np.inf
                return float(np.linalg.norm(tr_[m_] - target))

            cands = s_base + np.linspace(-0.45 * log_lam, 0.45 * log_lam, 13)
            vals = [head_dist(sv) for sv in cands]
            j = int(np.argmin(vals))
            lo = cands[max(j - 1, 0)]
            hi = cands[min(j + 1, len(cands) - 1)]
            for _ in range(30):
                m1 = lo + (hi - lo) * 0.382
                m2 = lo + (hi - lo) * 0.618
                if head_dist(m1) <= head_dist(m2):
                    hi = m2
                else:
                    lo = m1
            s_new = 0.5 * (lo + hi)
            m_new, traj_new = _first_exit(lane, z_n, ray(np.array([s_new]))[0],
                                          config.max_iter)
            trails.append(trail_of(traj_new, m_new))
            ms.append(m_new)
            ss.append(s_new)
            common = min(trails[-1].shape[0], trails[-2].shape[0])
            if common and ms[-1] >= V:
                diff = float(np.max(np.abs(trails[-1][:common] - trails[-2][:common])))
                consecutive = consecutive + 1 if diff <= config.cauchy_tol else 0
                if consecutive >= 3:
                    converged = True
                    break
        if not converged:
            last_error = NonConvergentOrbitError(
                f"trails not Cauchy within k_max={config.k_max} at schedule index {n}")
            continue

        # assemble the orbit in original coordinates
        Zw = trails[-1]
        compat = float(np.max(np.linalg.norm(lane.apply(Zw[1:]) - Zw[:-1], axis=1)))
        pts = lane.from_work(Zw)
        steps = np.array([lane.distance(Zw[i], Zw[i + 1]) for i in range(Zw.shape[0] - 1)])
        dists = np.array([lane.distance(Zw[0], Zw[i]) for i in range(Zw.shape[0])])
        horos = np.array([lane.horo(lane.pole, Zw[i]) for i in range(Zw.shape[0])])
        kor = [float(koranyi_value(np.zeros(lane.q, dtype=complex), lane.zeta_work, z))
               if lane.kind == "ball" else
               float(np.exp((np.log(lane.horo(lane.pole, z)) +
                             lane.distance(np.atleast_2d(lane.pole), np.atleast_2d(z))) / 2.0))
               for z in Zw]
        tail_step = float(np.mean(steps[-4:]))
        if abs(tail_step - log_lam) > max(config.steps_tol, 0.1):
            raise InvariantViolationError(
                f"steps settled at {tail_step:.6f}, expected log(lam) = {log_lam:.6f}",
                witness={"steps": steps.tolist()})

        # instrumentation: rescaled pre/post-exit pairs (ball coordinates)
        pairs = _rescaled_exit_pairs(lane, z_n, trails, ms)
        meta = {
            "lambda": lam, "log_lambda": log_lam, "schedule_index": n,
            "metric": lane.kind,
            "R_n": Rn, "r_n": rn, "eps_n": eps_n,
            "exit_times": ms, "seed_arclengths": ss,
            "f_compat_residual": compat,
            "koranyi_values": kor, "koranyi_bound": float(np.max(kor)),
            "rescaled_pairs": pairs,
            "zeta": np.asarray(config.zeta).tolist() if config.zeta is not None else None,
            "steps_tail": tail_step,
        }
        return OrbitRecord(points=pts, direction="backward",
                           base=pts[0], dist_to_base=dists, steps=steps,
                           horo=horos, exited=False, metadata=meta)
    raise last_error if last_error is not None else NonConvergentOrbitError(
        "backward orbit construction failed on every schedule index")


def _rescaled_exit_pairs(lane: _BackwardLane, z_n, trails, ms):
    """sigma_n-normalized (pre-exit, post-exit) pairs feeding the
    compactness experiment; computed in ball coordinates."""
    if lane.kind == "ball":
        zb = z_n
        zeta_b = lane.zeta_work
        to_ball = lambda pts: np.atleast_2d(pts)
    else:
        zb = cayley_inverse(np.atleast_2d(z_n))[0]

        def to_ball(pts):
            return cayley_inverse(np.atleast_2d(pts))

        zeta_b = cayley_inverse(np.atleast_2d(lane.zeta_work))[0]
        zeta_b = zeta_b / np.linalg.norm(zeta_b)
    sigma = automorphism_fixing_boundary(zb, zeta_b)
    xs, ys = [], []
    for tr, m in zip(trails, ms):
        if tr.shape[0] >= 2:
            xs.append(sigma(to_ball(tr[1])[0]))
            ys.append(sigma(to_ball(tr[0])[0]))
    return {"x": np.array(xs), "y": np.array(ys)}


# ---------------------------------------------------------------------------
# backward step
# ---------------------------------------------------------------------------

def backward_step(orbit: OrbitRecord, m: int, window: int = 6,
                  tol: float = 1e-6) -> ConvergenceReport:
    """s_m(beta) = lim_n k(x_n, x_{n+m}) along a backward orbit; the
    pre-limit sequence must be non-decreasing (up to metric roundoff)."""
    if orbit.direction != "backward":
        raise PreconditionError("backward_step needs a backward orbit")
    n_pts = orbit.points.shape[0]
    if n_pts <= m + window:
        raise PreconditionError("orbit too short for this m and window")
    vals = _orbit_pair_distances(orbit, m)
    noise = _orbit_metric_noise(orbit)
    slack = 1e-8 + 20.0 * (noise[: vals.size - 1] + noise[1: vals.size] +
                           noise[m: vals.size + m - 1] + noise[m + 1: vals.size + m])
    bad = np.nonzero(np.diff(vals) < -slack)[0]
    if bad.size:
        from .errors import MetricInconsistencyError
        raise MetricInconsistencyError(
            f"backward step sequence decreased at index {int(bad[0]) + 1}",
            index=int(bad[0]) + 1)
    tail_noise = float(noise[max(vals.size - window, 0):vals.size + m].max())
    return detect_limit(vals, window=min(window, vals.size),
                        tol=tol + 40.0 * tail_noise)


def _orbit_is_ballish(orbit: OrbitRecord) -> bool:
    metric = orbit.metadata.get("metric")
    if metric is not None:
        return metric == "ball"
    return bool(np.all(np.linalg.norm(orbit.points, axis=1) < 1.0 + 1e-9))


def _orbit_pair_distances(orbit: OrbitRecord, m: int) -> np.ndarray:
    pts = orbit.points
    n = pts.shape[0] - m
    dist = ball_distance if _orbit_is_ballish(orbit) else siegel_distance
    return np.array([float(dist(pts[i], pts[i + m], guard=False)) for i in range(n)])


def _orbit_metric_noise(orbit: OrbitRecord) -> np.ndarray:
    pts = orbit.points
    if _orbit_is_ballish(orbit):
        margin = np.maximum(1.0 - np.linalg.norm(pts, axis=1), 1e-300)
        return 4e-16 / margin
    rho = np.maximum(pts[:, 0].imag - np.sum(np.abs(pts[:, 1:]) ** 2, axis=1), 1e-300)
    scale = np.maximum(np.abs(pts[:, 0]), 1.0)
    return 4e-16 * scale / rho


# ---------------------------------------------------------------------------
# pre-model extraction
# ---------------------------------------------------------------------------

@dataclass
class PreModelEstimate(ModelEstimate):
    orbit: Optional[OrbitRecord] = None
    stable_samples: Optional[np.ndarray] = None
    ell_fun: Optional[Callable] = None
    c_tau: Optional[float] = None
    step_ratio_residual: Optional[float] = None
    klimit: Optional[dict] = None


@dataclass
class PreModelConfig:
    window: int = 2
    pointwise_tol: float = 5e-8
    seed: int = 177
    rank_floor: float = 1e-5
    rank_gap: float = 10.0
    grid_radius: float = 0.8   # Euclidean radius of the B^q sample grid
    n_grid: int = 48


def extract_pre_model(f: HoloMap, orbit: OrbitRecord,
                      config: Optional[PreModelConfig] = None) -> PreModelEstimate:
    """Canonical pre-model (B^k, ell, tau) from a backward orbit.

    Stages alpha_n^{(m)} = f^{m-n} o psi_m^{-1} on a seeded grid of B^q;
    pointwise limits in m give ell (through the slice chart), the input-polar
    gauge pins rotations, and tau is fitted on the model slice from the
    conjugated one-step map.  Residual direction: f o ell = ell o tau.
    """
    cfg = config or PreModelConfig()
    if orbit.direction != "backward":
        raise PreconditionError("extract_pre_model needs a backward orbit")
    lam = orbit.metadata.get("lambda")
    if lam is None or not lam > 1:
        raise PreconditionError("orbit lacks a dilation estimate > 1")

    work, to_work, from_work = _work_lane(f)
    dom = work.domain
    Zw = to_work(orbit.points)
    M = Zw.shape[0] - 1
    q = dom.dimension

    sampler = SeededSampler(cfg.seed, q)
    grid = cfg.grid_radius * sampler.complex_ball(cfg.n_grid)
    grid = np.concatenate([np.zeros((1, q), dtype=complex), grid], axis=0)

    def normalizer(idx: int):
        if dom.kind == "ball":
            sig = mobius_to_origin(Zw[idx])
            return sig, sig.inverse()
        N = sgl.normalize_to_base(Zw[idx])
        Ninv = N.inverse()
        return (lambda pts: cayley_inverse(N(np.atleast_2d(pts)))), \
               (lambda pts: Ninv(cayley(np.atleast_2d(pts))))

    n_keep = 1  # alpha_n for n = n_keep is used for the tau chart
    prev = None
    diffs = []
    values = None
    m_star = None
    gauge = None
    psi_minv_star = None
    for m in range(2, M + 1):
        psi_m, psi_m_inv = normalizer(m)
        pre = psi_m_inv(grid)
        if not np.all(np.atleast_1d(dom.contains(pre))):
            from .errors import StabilityError
            raise StabilityError("grid preimage left the domain at stage "
                                 f"m={m}; shrink grid_radius")
        # input gauge: inverse polar unitary of J(alpha_0^{(m)}) at 0
        J = _alpha_jacobian(work, psi_m_inv, m, 0, q)
        W, _, Vh = np.linalg.svd(J)
        G = (W @ Vh).conj().T  # pre-compose with U_p^{-1}
        cur = psi_m_inv(grid @ G.T)
        for _ in range(m):
            cur = work(cur)
        vals = cur
        if prev is not None:
            diffs.append(float(np.max(np.abs(vals - prev))))
            if len(diffs) >= cfg.window and max(diffs[-cfg.window:]) <= cfg.pointwise_tol:
                values, m_star, gauge = vals, m, G
                psi_minv_star = psi_m_inv
                break
        prev = vals
    if values is None:
        raise NonConvergentOrbitError(
            f"pre-model stages not Cauchy along the orbit (last diff "
            f"{diffs[-1]:.3e})" if diffs else "orbit too short for pre-model stages")

    def alpha(pts, n: int = 0, _psi_inv=psi_minv_star, _G=gauge, _m=m_star):
        out = _psi_inv(np.atleast_2d(np.asarray(pts, dtype=complex)) @ _G.T)
        for _ in range(_m - n):
            out = work(out)
        return out

    # dimension via the gauged input Jacobian (Hermitian PSD by construction)
    J0 = _alpha_jacobian(work, psi_minv_star, m_star, 0, q) @ gauge
    sym = 0.5 * (J0 + J0.conj().T)
    evals, evecs = np.linalg.eigh(sym)
    order = np.argsort(np.abs(evals))[::-1]
    svals = np.abs(evals[order])
    frame = evecs[:, order]
    keep = svals > cfg.rank_floor * float(svals.max())
    k = int(keep.sum())
    if 0 < k < svals.size:
        gap = float(svals[k - 1] / svals[k]) if svals[k] > 0 else np.inf
        if gap < cfg.rank_gap:
            from .errors import AmbiguousDimensionError
            raise AmbiguousDimensionError(
                f"pre-model rank gap {gap:.2f} below {cfg.rank_gap}",
                candidates=(k - 1, k, k + 1))
    Vk = frame[:, :k]

    def ell(w):
        w = np.atleast_2d(np.asarray(w, dtype=complex))
        return from_work(alpha(w @ Vk.T, n=0))

    # tau on the model slice through the psi_{m*}-conjugated one-step map:
    # alpha_n(tau w) = work(alpha_n(w)) holds exactly for
    # tau = G^H o psi_m o work o psi_m^{-1} o G, restricted to the slice.
    psi_m_star, _ = normalizer(m_star)
    k_sampler = SeededSampler(cfg.seed + 5, k)
    Wgrid = 0.6 * k_sampler.complex_ball(cfg.n_grid)

    def tau_chart(w):
        w = np.atleast_2d(np.asarray(w, dtype=complex))
        u = (w @ Vk.T) @ gauge.T                     # G . iota(w)
        v = psi_m_star(work(psi_minv_star(u)))       # conjugated one step
        return (np.atleast_2d(v) @ np.conj(gauge)) @ np.conj(Vk)  # G^H then slice coords

    TW = tau_chart(Wgrid)
    tau, fit_rms = _fit_ball_automorphism(Wgrid, TW, seed=cfg.seed)
    nform = mobius_to_siegel_normal_form(tau)
    lam_fit = 1.0 / nform["lam"] if nform.get("lam") else None

    # residual of f o ell = ell o tau in the domain metric
    Lw = ell(Wgrid)
    f_Lw = f(Lw)
    L_tw = ell(tau(Wgrid))
    if f.domain.has_exact_metric:
        res = float(np.max([f.domain.exact_distance(a, b) for a, b in zip(f_Lw, L_tw)]))
    else:
        res = float(np.max(np.linalg.norm(f_Lw - L_tw, axis=1)))

    # c(tau) vs inf_m s_m(beta)/m
    c_tau = float(np.log(lam_fit)) if lam_fit else 0.0
    ratios = []
    for m in range(1, min(6, orbit.points.shape[0] - 7)):
        rep = backward_step(orbit, m)
        val = rep.limit if rep.converged else float(rep.tail().max())
        ratios.append(val / m)
    step_ratio_res = abs(min(ratios) - c_tau) if ratios else np.nan

    klimit = _klimit_along_model_ray(f, ell, tau, orbit)

    evidence = {"m_star": m_star, "stage_diffs_tail": diffs[-cfg.window:],
                "fit_rms": fit_rms, "singular_values": svals.tolist(),
                "normal_form": {kk: vv for kk, vv in nform.items() if kk != "affine"}}
    return PreModelEstimate(
        k=k, type=nform["kind"], dilation=lam_fit,
        angles=tuple(nform.get("angles", ())), sign=nform.get("sign"),
        intertwiner=(Wgrid, Lw), residual=res, metric_agreement=np.nan,
        experimental=False, tolerance_widening=0.0, evidence=evidence,
        tau=tau, h_fun=None, model_projection=Vk, orbit=orbit,
        stable_samples=Lw, ell_fun=ell, c_tau=c_tau,
        step_ratio_residual=float(step_ratio_res), klimit=klimit)


def _work_lane(f: HoloMap):
    """Prefer the stored Siegel realization of ball maps (stable deep in)."""
    if f.domain.kind == "ball" and getattr(f, "siegel_form", None) is not None:
        U = f.siegel_anchor_unitary
        work = f.siegel_form
        to_work = lambda pts: cayley(np.atleast_2d(pts) @ U.T)
        from_work = lambda pts: cayley_inverse(np.atleast_2d(pts)) @ np.conj(U)
        return work, to_work, from_work
    return f, (lambda pts: np.atleast_2d(pts)), (lambda pts: np.atleast_2d(pts))


def _alpha_jacobian(work: HoloMap, psi_m_inv, m: int, n: int, q: int) -> np.ndarray:
    """Chained Jacobian of f^{m-n} o psi_m^{-1} at 0 with relative steps."""
    J = numerical_jacobian(lambda p: psi_m_inv(p), np.zeros(q, dtype=complex), h=1e-7)
    z = np.asarray(psi_m_inv(np.zeros((1, q), dtype=complex)))[0]
    for _ in range(m - n):
        scale = max(1.0, float(np.max(np.abs(z))))
        J = numerical_jacobian(lambda p: work(p), z, h=1e-7 * scale) @ J
        z = work(z)
    return J


def _klimit_along_model_ray(f: HoloMap, ell, tau: BallAutomorphism,
                            orbit: OrbitRecord, n_points: int = 10) -> dict:
    """ell along tau^{-m}(0): Euclidean convergence to zeta and a bounded
    Koranyi value certify the K-limit behaviour at the model's boundary
    fixed point."""
    zeta = orbit.metadata.get("zeta")
    tau_inv = tau.inverse()
    w = np.zeros(tau.q, dtype=complex)
    pts = []
    for _ in range(n_points):
        pts.append(ell(w)[0])
        w = tau_inv(w)
    pts = np.array(pts)
    out = {"points": pts}
    if zeta is not None:
        zt = np.asarray(zeta, dtype=complex)
        dists = np.linalg.norm(pts - zt[None, :], axis=1)
        out["euclid_to_zeta"] = dists.tolist()
        out["converges"] = bool(dists[-1] < dists[0] and dists[-1] < 0.2)
    if f.domain.kind == "ball":
        kor = [float(koranyi_value(np.zeros(f.domain.dimension, dtype=complex),
                                   np.asarray(zeta, dtype=complex), p)) for p in pts]
        out["koranyi_values"] = kor
        out["koranyi_bound"] = float(np.max(kor))
    return out


# ---------------------------------------------------------------------------
# uniqueness and compactness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniquenessReport:
    distances: np.ndarray
    bounded: bool
    tail_spread: float
    common_range: int
    same_class: bool
    warning: Optional[str] = None


def uniqueness_check(orbit1: OrbitRecord, orbit2: OrbitRecord,
                     tail: int = 6, spread_tol: float = 1e-2) -> UniquenessReport:
    """k(x_m, y_m) along two backward orbits at the same repelling point:
    non-decreasing with a bounded tail means one orbit class."""
    for o in (orbit1, orbit2):
        if o.direction != "backward":
            raise PreconditionError("uniqueness_check needs backward orbits")
    z1 = orbit1.metadata.get("zeta")
    z2 = orbit2.metadata.get("zeta")
    if z1 is None or z2 is None or np.linalg.norm(np.asarray(z1) - np.asarray(z2)) > 1e-6:
        raise PreconditionError("orbits converge to different boundary points")
    n = min(orbit1.points.shape[0], orbit2.points.shape[0])
    warning = None
    if orbit1.points.shape[0] != orbit2.points.shape[0]:
        warning = f"orbit lengths differ; comparing the first {n} indices"
    P, Q = orbit1.points[:n], orbit2.points[:n]
    dist = ball_distance if _orbit_is_ballish(orbit1) else siegel_distance
    vals = np.array([float(dist(P[i], Q[i], guard=False)) for i in range(n)])
    t = vals[-tail:]
    spread = float(t.max() - t.min())
    bounded = spread <= spread_tol
    return UniquenessReport(distances=vals, bounded=bounded, tail_spread=spread,
                            common_range=n, same_class=bounded, warning=warning)


@dataclass(frozen=True)
class CompactnessReport:
    status: str
    max_norm_x: float
    max_norm_y: float
    boundary_drift: bool
    limit_L: Optional[float]
    evidence: dict


def rescaled_compactness_experiment(x_seq, y_seq, zeta, R: float,
                                    window: int = 4, tol: float = 5e-2) -> CompactnessReport:
    """Check the no-escape prediction for normalized pre/post-exit pairs.

    Preconditions verified numerically: x_n in E(0,zeta,R), y_n outside, and
    the two limits k(0,x_n) - k(0,y_n) -> L and k(x_n,y_n) -> L > 0; when a
    precondition fails the status reports it and no claim is made."""
    X = np.atleast_2d(np.asarray(x_seq, dtype=complex))
    Y = np.atleast_2d(np.asarray(y_seq, dtype=complex))
    zeta = as_cpoint(zeta, X.shape[1])
    pole = np.zeros(X.shape[1], dtype=complex)
    hx = np.atleast_1d(horo_value(pole, zeta, X))
    hy = np.atleast_1d(horo_value(pole, zeta, Y))
    ev = {"h_x_max": float(hx.max()), "h_y_min": float(hy.min())}
    if not (np.all(hx < R) and np.all(hy >= R * (1 - 1e-9))):
        return CompactnessReport(status="precondition violated: horosphere separation",
                                 max_norm_x=float(np.linalg.norm(X, axis=1).max()),
                                 max_norm_y=float(np.linalg.norm(Y, axis=1).max()),
                                 boundary_drift=False, limit_L=None, evidence=ev)
    d0x = np.atleast_1d(ball_distance(np.zeros_like(X), X))
    d0y = np.atleast_1d(ball_distance(np.zeros_like(Y), Y))
    dxy = np.atleast_1d(ball_distance(X, Y))
    r1 = detect_limit(d0x - d0y, window=min(window, X.shape[0]), tol=tol)
    r2 = detect_limit(dxy, window=min(window, X.shape[0]), tol=tol)
    ev.update({"diff_limit": r1.limit, "pair_limit": r2.limit})
    if not (r1.converged and r2.converged and r2.limit is not None and r2.limit > 0
            and abs((r1.limit or 0) - r2.limit) <= 2 * tol):
        return CompactnessReport(status="precondition violated: alignment limits",
                                 max_norm_x=float(np.linalg.norm(X, axis=1).max()),
                                 max_norm_y=float(np.linalg.norm(Y, axis=1).max()),
                                 boundary_drift=False, limit_L=None, evidence=ev)
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    drift = bool(max(nx[-window:].max(), ny[-window:].max()) > 1.0 - 1e-3)
    return CompactnessReport(status="ok", max_norm_x=float(nx.max()),
                             max_norm_y=float(ny.max()), boundary_drift=drift,
                             limit_L=float(r2.limit), evidence=ev)
