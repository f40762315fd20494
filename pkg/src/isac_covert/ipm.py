"""Primal-dual interior-point method for linear-objective second-order cone programs.

Solves

    minimize    c^T x
    subject to  G x + s = h,   s in K = R_+^l x Q^{q_1} x ... x Q^{q_p}

through the homogeneous self-dual embedding, with Nesterov-Todd scaling and a
Mehrotra predictor-corrector step. The embedding lets the same iteration
return either an optimal pair or an infeasibility certificate.

Only dense linear algebra is used; the Newton system is reduced to normal
equations G^T W^{-2} G dx = r and factored by Cholesky, with a small diagonal
regularization and iterative refinement when it becomes ill-conditioned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


# cones whose sqrt(det s det z) falls below this fraction of mu are avoided
NEIGHBOURHOOD = 1e-4


class ConicStatus(enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class ConeDims:
    linear: int
    soc: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "soc", tuple(int(q) for q in self.soc))
        if self.linear < 0 or any(q < 1 for q in self.soc):
            raise ValueError("invalid cone dimensions")

    @property
    def size(self) -> int:
        return self.linear + sum(self.soc)

    @property
    def degree(self) -> int:
        return self.linear + len(self.soc)

    def soc_slices(self):
        start = self.linear
        for q in self.soc:
            yield slice(start, start + q)
            start += q


@dataclass
class ConicResult:
    status: ConicStatus
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    pcost: float
    dcost: float
    certificate: np.ndarray | None = None


# -- cone arithmetic ---------------------------------------------------------


class _Cone:
    def __init__(self, dims: ConeDims):
        self.dims = dims
        self.l = dims.linear
        self.socs = list(dims.soc_slices())

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dims.size)
        e[: self.l] = 1.0
        for sl in self.socs:
            e[sl.start] = 1.0
        return e

    def inner(self, u, v) -> float:
        return float(u @ v)

    def product(self, u, v) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty_like(u)
        out[: self.l] = u[: self.l] * v[: self.l]
        for sl in self.socs:
            a, b = u[sl], v[sl]
            out[sl.start] = a @ b
            out[sl.start + 1 : sl.stop] = a[0] * b[1:] + b[0] * a[1:]
        return out

    def divide(self, lam, r) -> np.ndarray:
        """Solve lam o x = r for x."""
        out = np.empty_like(r)
        out[: self.l] = r[: self.l] / lam[: self.l]
        for sl in self.socs:
            a, b = lam[sl], r[sl]
            det = (a[0] - np.linalg.norm(a[1:])) * (a[0] + np.linalg.norm(a[1:]))
            x0 = (a[0] * b[0] - a[1:] @ b[1:]) / det
            out[sl.start] = x0
            out[sl.start + 1 : sl.stop] = (b[1:] - x0 * a[1:]) / a[0]
        return out

    def interior_margin(self, u) -> float:
        """Smallest alpha with u + alpha*e in the cone (negative if interior)."""
        m = -np.inf
        if self.l:
            m = max(m, -float(u[: self.l].min()))
        for sl in self.socs:
            a = u[sl]
            m = max(m, float(np.linalg.norm(a[1:]) - a[0]))
        return m

    def pair_centrality(self, s, z) -> float:
        """min over blocks of sqrt(det s * det z) (s_i z_i for linear entries)."""
        m = np.inf
        if self.l:
            m = float(np.min(s[: self.l] * z[: self.l]))
        for sl in self.socs:
            a, b = s[sl], z[sl]
            na, nb = np.linalg.norm(a[1:]), np.linalg.norm(b[1:])
            det = (a[0] - na) * (a[0] + na) * (b[0] - nb) * (b[0] + nb)
            m = min(m, float(np.sqrt(max(det, 0.0))))
        return m

    def max_step(self, u, du) -> float:
        """Largest alpha with u + alpha*du in the cone (u interior)."""
        alpha = np.inf
        if self.l:
            neg = du[: self.l] < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-u[: self.l][neg] / du[: self.l][neg])))
        for sl in self.socs:
            alpha = min(alpha, _soc_step(u[sl], du[sl]))
        return alpha


def _soc_step(u, d) -> float:
    nu1 = np.linalg.norm(u[1:])
    c = (u[0] - nu1) * (u[0] + nu1)
    a = d[0] ** 2 - d[1:] @ d[1:]
    b = 2.0 * (u[0] * d[0] - u[1:] @ d[1:])
    candidates = []
    if d[0] < 0:
        candidates.append(-u[0] / d[0])
    if abs(a) <= 1e-300:
        if b < 0:
            candidates.append(-c / b)
    else:
        disc = b * b - 4 * a * c
        if disc >= 0:
            sq = np.sqrt(disc)
            qv = -0.5 * (b + np.copysign(sq, b))
            for root in (qv / a, c / qv if qv != 0 else np.inf):
                if root > 0:
                    candidates.append(root)
    return float(min(candidates)) if candidates else np.inf


class _Scaling:
    """Nesterov-Todd scaling W (symmetric, block diagonal) with W z = W^{-1} s."""

    def __init__(self, cone: _Cone, s, z):
        self.cone = cone
        l = cone.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.blocks = []
        for sl in cone.socs:
            sb, zb = s[sl], z[sl]
            s_det = (sb[0] - np.linalg.norm(sb[1:])) * (sb[0] + np.linalg.norm(sb[1:]))
            z_det = (zb[0] - np.linalg.norm(zb[1:])) * (zb[0] + np.linalg.norm(zb[1:]))
            sn = sb / np.sqrt(s_det)
            zn = zb / np.sqrt(z_det)
            gamma = np.sqrt(0.5 * (1.0 + sn @ zn))
            wbar = (sn + zn * np.r_[1.0, -np.ones(len(zn) - 1)]) / (2.0 * gamma)
            eta = (s_det / z_det) ** 0.25
            self.blocks.append((eta, wbar))

    @staticmethod
    def _hyp(wbar, u, sign):
        # W-bar u for sign=+1; J W-bar J u (its inverse) for sign=-1
        w0, w1 = wbar[0], wbar[1:]
        u0, u1 = u[0], u[1:]
        t = w1 @ u1
        out = np.empty_like(u)
        out[0] = w0 * u0 + sign * t
        out[1:] = u1 + (t / (1.0 + w0) + sign * u0) * w1
        return out

    def apply(self, u, inverse=False):
        out = np.empty_like(u)
        l = self.cone.l
        out[:l] = u[:l] / self.d if inverse else u[:l] * self.d
        for sl, (eta, wbar) in zip(self.cone.socs, self.blocks):
            if inverse:
                out[sl] = self._hyp(wbar, u[sl], -1) / eta
            else:
                out[sl] = eta * self._hyp(wbar, u[sl], 1)
        return out

    def apply_matrix(self, M, inverse=False):
        """Apply W (or W^{-1}) to every column of M."""
        out = np.empty_like(M)
        l = self.cone.l
        out[:l] = M[:l] / self.d[:, None] if inverse else M[:l] * self.d[:, None]
        for sl, (eta, wbar) in zip(self.cone.socs, self.blocks):
            blk = M[sl]
            w0, w1 = wbar[0], wbar[1:]
            sign = -1.0 if inverse else 1.0
            t = w1 @ blk[1:]
            res = np.empty_like(blk)
            res[0] = w0 * blk[0] + sign * t
            res[1:] = blk[1:] + np.outer(w1, t / (1.0 + w0) + sign * blk[0])
            out[sl] = res / eta if inverse else eta * res
        return out


# -- main iteration ------------------------------------------------------------


def solve_conic(
    c: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    dims: ConeDims,
    feas_tol: float = 1e-8,
    gap_tol: float = 1e-8,
    max_iters: int = 200,
) -> ConicResult:
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = G.shape
    if dims.size != m or h.shape != (m,) or c.shape != (n,):
        raise ValueError("inconsistent conic problem dimensions")
    cone = _Cone(dims)
    e = cone.identity()
    degree = dims.degree
    h_scale = max(1.0, float(np.linalg.norm(h, np.inf)))
    c_scale = max(1.0, float(np.linalg.norm(c, np.inf)))

    # start: least-squares primal and least-norm dual points, shifted into the cone
    M0 = G.T @ G
    try:
        f0 = cho_factor(M0 + 1e-12 * max(1.0, np.trace(M0) / n) * np.eye(n))
    except LinAlgError:
        return _fail(ConicStatus.NUMERICAL_FAILURE, n, m, 0)
    x = cho_solve(f0, G.T @ h)
    s = h - G @ x
    z = -G @ cho_solve(f0, c)
    for v in (s, z):
        shift = cone.interior_margin(v)
        if shift >= -1e-8:
            v += (1.0 + shift) * e
    tau, kappa = 1.0, 1.0

    best = None
    stall = 0
    for it in range(max_iters + 1):
        rx = G.T @ z + c * tau
        rz = G @ x + s - h * tau
        cx, hz = float(c @ x), float(h @ z)
        rt = kappa + cx + hz
        gap = float(s @ z)
        mu = (gap + tau * kappa) / (degree + 1)

        pres = float(np.linalg.norm(rz, np.inf)) / tau / h_scale
        dres = float(np.linalg.norm(rx, np.inf)) / tau / c_scale
        pcost, dcost = cx / tau, -hz / tau
        rel_gap = gap / tau**2 / max(1.0, abs(pcost))
        snapshot = ConicResult(
            ConicStatus.ITERATION_LIMIT, x / tau, s / tau, z / tau, it, pres, dres, rel_gap,
            pcost, dcost,
        )
        if best is None or max(pres, dres, rel_gap) < max(
            best.primal_residual, best.dual_residual, best.gap
        ):
            best = snapshot

        if pres <= feas_tol and dres <= feas_tol and rel_gap <= gap_tol:
            snapshot.status = ConicStatus.OPTIMAL
            return snapshot
        # infeasibility certificates
        if hz < 0:
            cert_res = float(np.linalg.norm(G.T @ z, np.inf)) / (-hz) * h_scale / c_scale
            if cert_res <= feas_tol and tau < 1e-6 * kappa:
                return ConicResult(
                    ConicStatus.PRIMAL_INFEASIBLE, x, s, z, it, pres, dres, rel_gap,
                    pcost, dcost, certificate=z / (-hz),
                )
        if cx < 0:
            cert_res = float(np.linalg.norm(G @ x + s, np.inf)) / (-cx)
            if cert_res <= feas_tol and tau < 1e-6 * kappa:
                return ConicResult(
                    ConicStatus.DUAL_INFEASIBLE, x, s, z, it, pres, dres, rel_gap,
                    pcost, dcost, certificate=x / (-cx),
                )
        if it == max_iters:
            break

        try:
            W = _Scaling(cone, s, z)
            lam = W.apply(z)
            Ghat = W.apply_matrix(G, inverse=True)
            M = Ghat.T @ Ghat
            # equilibrate, then perturb the unit diagonal; refinement below
            # recovers the accuracy lost to the perturbation
            diag = np.sqrt(np.maximum(np.diag(M), 1e-300))
            Ms = M / np.outer(diag, diag)
            Ms[np.diag_indices(n)] += 1e-13
            factor = cho_factor(Ms)
        except (LinAlgError, FloatingPointError, ValueError):
            break

        def kkt_solve(r1, r2):
            # G^T dz = r1 ; G dx - W^2 dz = r2
            def once(a, b):
                wb = W.apply(b, inverse=True)
                dx = cho_solve(factor, (a + Ghat.T @ wb) / diag) / diag
                dz = W.apply(Ghat @ dx - wb, inverse=True)
                return dx, dz

            dx, dz = once(r1, r2)
            for _ in range(2):
                e1 = r1 - G.T @ dz
                e2 = r2 - (G @ dx - W.apply(W.apply(dz)))
                if max(np.abs(e1).max(initial=0), np.abs(e2).max(initial=0)) < 1e-14 * (
                    1 + np.abs(r1).max(initial=0) + np.abs(r2).max(initial=0)
                ):
                    break
                ddx, ddz = once(e1, e2)
                dx, dz = dx + ddx, dz + ddz
            return dx, dz

        x2, z2 = kkt_solve(-c, h)

        def direction(eta_res, rs, rk):
            # rs: right side of lam o (W dz + W^{-1} ds); rk: of kappa dtau + tau dkappa
            ls = cone.divide(lam, rs)
            r1 = -eta_res * rx
            r2 = -eta_res * rz - W.apply(ls)
            r3 = -eta_res * rt - rk / tau
            x1, z1 = kkt_solve(r1, r2)
            denom = c @ x2 + h @ z2 - kappa / tau
            dtau = (r3 - c @ x1 - h @ z1) / denom
            dx = x1 + dtau * x2
            dz = z1 + dtau * z2
            # from the linearized primal equation: exact primal residual
            # reduction, and no W^2 amplification for inactive cones
            ds = -eta_res * rz - G @ dx + h * dtau
            dkappa = (rk - kappa * dtau) / tau
            return dx, dz, ds, dtau, dkappa

        def step_length(dz, ds, dtau, dkappa):
            a = min(cone.max_step(s, ds), cone.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        rs_aff = -cone.product(lam, lam)
        dx, dz, ds, dtau, dkappa = direction(1.0, rs_aff, -tau * kappa)
        alpha_aff = min(1.0, step_length(dz, ds, dtau, dkappa))
        sigma = min(1.0, max(0.0, (1.0 - alpha_aff) ** 3))

        # corrector
        corr = cone.product(W.apply(ds, inverse=True), W.apply(dz))
        rs = rs_aff + sigma * mu * e - corr
        rk = -tau * kappa + sigma * mu - dtau * dkappa
        dx, dz, ds, dtau, dkappa = direction(1.0 - sigma, rs, rk)
        alpha = min(1.0, 0.99 * step_length(dz, ds, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 1e-12:
            break
        # keep every cone within a wide neighbourhood of the central path
        for _ in range(60):
            s_n, z_n = s + alpha * ds, z + alpha * dz
            t_n, k_n = tau + alpha * dtau, kappa + alpha * dkappa
            mu_n = (float(s_n @ z_n) + t_n * k_n) / (degree + 1)
            if min(cone.pair_centrality(s_n, z_n), t_n * k_n) >= NEIGHBOURHOOD * mu_n:
                break
            alpha *= 0.8
        stall = stall + 1 if alpha < 1e-6 else 0
        if stall >= 5:
            break

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.all(np.isfinite(x)) and tau > 0):
            break

    status = ConicStatus.ITERATION_LIMIT if it == max_iters else ConicStatus.NUMERICAL_FAILURE
    best.status = status
    return best


def _fail(status, n, m, it):
    nan_n, nan_m = np.full(n, np.nan), np.full(m, np.nan)
    return ConicResult(status, nan_n, nan_m, nan_m, it, np.inf, np.inf, np.inf, np.nan, np.nan)
