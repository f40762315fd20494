"""Convex QCQP programs over real-lifted complex variables.

A :class:`ConvexProgram` minimizes ``c^T x`` subject to convex quadratic
inequalities ``x^T P x + 2 q^T x + r <= 0`` and linear inequalities
``a^T x <= b``. :func:`solve` rewrites each quadratic as a second-order cone
through a factor ``P = L L^T`` and hands the result to the interior-point
solver in :mod:`isac_covert.ipm`.
"""

from __future__ import annotations

import enum
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .ipm import ConeDims, ConicStatus, solve_conic

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
GAP_TOL = 1e-8
MAX_ITERS = 200
PSD_FLOOR = 1e-9
HERMITIAN_TOL = 1e-10
PROGRAM_SCHEMA = "isac-convex-program/1"


class PSDWarning(UserWarning):
    pass


def lift_hermitian(M: np.ndarray) -> np.ndarray:
    """Real symmetric form of a Hermitian matrix: x^T M~ x = s^H M s for x = [Re s; Im s]."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    if np.linalg.norm(M - M.conj().T) > HERMITIAN_TOL * max(1.0, np.linalg.norm(M)):
        raise ValueError("matrix is not Hermitian")
    re, im = M.real, M.imag
    return np.block([[re, -im], [im, re]])


def lift_vector(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    return np.concatenate([s.real, s.imag])


def unlift_vector(x: np.ndarray) -> np.ndarray:
    n = len(x) // 2
    return x[:n] + 1j * x[n : 2 * n]


def _psd_factor(P: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(P)
    floor = PSD_FLOOR * max(1.0, float(np.abs(lam).max(initial=0.0)))
    if lam.min(initial=0.0) < -floor:
        raise ValueError(f"quadratic form is not PSD (min eigenvalue {lam.min():.3e})")
    if lam.min(initial=0.0) < 0:
        warnings.warn(
            f"clipping eigenvalue {lam.min():.3e} of quadratic form to 0", PSDWarning, stacklevel=3
        )
    keep = lam > floor
    return V[:, keep] * np.sqrt(lam[keep])


@dataclass(frozen=True)
class QuadConstraint:
    """``x^T P x + 2 q^T x + r <= 0`` with ``P = factor @ factor.T``.

    Give either ``P`` (factored by eigendecomposition, with PSD clipping) or
    a known ``factor`` to skip the decomposition.
    """

    P: np.ndarray | None
    q: np.ndarray
    r: float
    factor: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))
        if self.factor is None:
            if self.P is None:
                raise ValueError("need P or its factor")
            P = np.asarray(self.P, dtype=float)
            if P.shape != (len(q), len(q)):
                raise ValueError("P and q dimensions disagree")
            if np.linalg.norm(P - P.T) > 1e-10 * max(1.0, np.linalg.norm(P)):
                raise ValueError("P must be symmetric")
            P = 0.5 * (P + P.T)
            object.__setattr__(self, "P", P)
            object.__setattr__(self, "factor", _psd_factor(P))
        else:
            L = np.asarray(self.factor, dtype=float).reshape(len(q), -1)
            object.__setattr__(self, "factor", L)
            if self.P is None:
                object.__setattr__(self, "P", L @ L.T)

    def value(self, x) -> float:
        y = self.factor.T @ x
        return float(y @ y + 2 * self.q @ x + self.r)

    def gradient(self, x) -> np.ndarray:
        return 2.0 * (self.factor @ (self.factor.T @ x) + self.q)


@dataclass(frozen=True)
class ConvexProgram:
    objective: np.ndarray
    quad_constraints: tuple[QuadConstraint, ...] = ()
    lin_A: np.ndarray | None = None
    lin_b: np.ndarray | None = None
    lin_labels: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        n = len(c)
        object.__setattr__(self, "objective", c)
        A = np.zeros((0, n)) if self.lin_A is None else np.asarray(self.lin_A, dtype=float)
        b = np.zeros(0) if self.lin_b is None else np.asarray(self.lin_b, dtype=float)
        A = A.reshape(-1, n)
        if A.shape[0] != b.shape[0]:
            raise ValueError("linear constraint data disagree in length")
        labels = tuple(self.lin_labels) or ("",) * len(b)
        if len(labels) != len(b):
            raise ValueError("one label per linear constraint")
        object.__setattr__(self, "lin_A", A)
        object.__setattr__(self, "lin_b", b)
        object.__setattr__(self, "lin_labels", labels)
        object.__setattr__(self, "quad_constraints", tuple(self.quad_constraints))
        for qc in self.quad_constraints:
            if len(qc.q) != n:
                raise ValueError("quadratic constraint dimension mismatch")

    @property
    def dimension(self) -> int:
        return len(self.objective)

    @property
    def lin_constraints(self) -> list[tuple[np.ndarray, float]]:
        return [(a, float(b)) for a, b in zip(self.lin_A, self.lin_b)]

    def constraint_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for lab in (*self.lin_labels, *(qc.label for qc in self.quad_constraints)):
            counts[lab] = counts.get(lab, 0) + 1
        return counts


class ProgramBuilder:
    """Accumulate constraints, then freeze into a :class:`ConvexProgram`."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self._rows: list[np.ndarray] = []
        self._rhs: list[float] = []
        self._labels: list[str] = []
        self._quads: list[QuadConstraint] = []

    def add_linear(self, a, b, label=""):
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[None, :]
        b = np.atleast_1d(np.asarray(b, dtype=float))
        self._rows.append(a)
        self._rhs.extend(b.tolist())
        self._labels.extend([label] * len(b))
        return self

    def add_quadratic(self, q, r, label="", P=None, factor=None):
        self._quads.append(QuadConstraint(P, q, r, factor=factor, label=label))
        return self

    def add_constraint(self, constraint: QuadConstraint):
        self._quads.append(constraint)
        return self

    def build(self, objective) -> ConvexProgram:
        A = np.vstack(self._rows) if self._rows else np.zeros((0, self.dimension))
        return ConvexProgram(
            np.asarray(objective, dtype=float),
            tuple(self._quads),
            A,
            np.asarray(self._rhs),
            tuple(self._labels),
        )


class SolveStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class KKTResiduals:
    primal: float
    dual: float
    stationarity: float
    complementarity: float

    def within(self, feas_tol: float, gap_tol: float) -> bool:
        return (
            self.primal <= feas_tol
            and self.dual <= feas_tol
            and self.stationarity <= feas_tol
            and self.complementarity <= gap_tol
        )


@dataclass
class Solution:
    status: SolveStatus
    point: np.ndarray
    objective: float
    kkt: KKTResiduals | None
    lin_multipliers: np.ndarray | None = None
    quad_multipliers: np.ndarray | None = None
    iterations: int = 0
    certificate: dict[str, float] = field(default_factory=dict)
    message: str = ""
    # dual vector of each quadratic constraint's cone form
    cone_duals: tuple[np.ndarray, ...] | None = None

    @property
    def dominant_family(self) -> str | None:
        """Constraint family carrying most weight in an infeasibility certificate."""
        if not self.certificate:
            return None
        return max(self.certificate, key=self.certificate.get)


# -- conversion to conic form -------------------------------------------------


def _cone_block(qc: QuadConstraint, n: int):
    """``(G, h, form)`` with ``h - G x`` in a second-order cone iff ``qc`` holds."""
    L = qc.factor
    k = L.shape[1]
    if not np.any(qc.q) and qc.r < 0:
        # ||L^T x|| <= sqrt(-r)
        G_blk = np.vstack([np.zeros((1, n)), -L.T])
        h_blk = np.r_[np.sqrt(-qc.r), np.zeros(k)]
        return G_blk, h_blk, "norm"
    # ||(2 L^T x, 1 - t)|| <= 1 + t  with  t = -2 q^T x - r
    G_blk = np.vstack([2 * qc.q[None, :], -2 * L.T, -2 * qc.q[None, :]])
    h_blk = np.r_[1.0 - qc.r, np.zeros(k), 1.0 + qc.r]
    return G_blk, h_blk, "rotated"


def _to_conic(program: ConvexProgram):
    n = program.dimension
    A, b = program.lin_A, program.lin_b
    row_norm = np.linalg.norm(A, axis=1)
    row_norm[row_norm == 0] = 1.0
    G_blocks = [A / row_norm[:, None]]
    h_blocks = [b / row_norm]
    soc = []
    forms = []
    for qc in program.quad_constraints:
        G_blk, h_blk, form = _cone_block(qc, n)
        forms.append(form)
        G_blocks.append(G_blk)
        h_blocks.append(h_blk)
        soc.append(G_blk.shape[0])
    G = np.vstack(G_blocks) if G_blocks else np.zeros((0, n))
    h = np.concatenate(h_blocks) if h_blocks else np.zeros(0)
    return G, h, ConeDims(len(b), tuple(soc)), row_norm, forms


def _recover_multipliers(program, z, row_norm, forms, dims):
    m_lin = len(program.lin_b)
    nu = z[:m_lin] / row_norm
    mu = np.empty(len(program.quad_constraints))
    for j, (sl, qc, form) in enumerate(zip(dims.soc_slices(), program.quad_constraints, forms)):
        blk = z[sl]
        if form == "norm":
            mu[j] = blk[0] / (2.0 * np.sqrt(-qc.r))
        else:
            mu[j] = blk[0] - blk[-1]
    return nu, np.maximum(mu, 0.0)


def _polish_multipliers(program, x, nu, mu, active_tol=1e-5):
    """Refit multipliers by NNLS on the stationarity equation at ``x``.

    Cone duals only match gradient multipliers at exact complementarity; the
    refit removes the O(sqrt(mu)) mismatch left by a finite barrier parameter.
    """
    if not len(nu) and not len(mu):
        return nu, mu
    A, b = program.lin_A, program.lin_b
    lin_val = (A @ x - b) / np.maximum(1.0, np.linalg.norm(A, axis=1))
    grads = [qc.gradient(x) for qc in program.quad_constraints]
    quad_val = np.array(
        [qc.value(x) / max(1.0, np.linalg.norm(g)) for qc, g in zip(program.quad_constraints, grads)]
    )
    big = max(1.0, float(np.max(np.r_[nu, mu], initial=0.0)))
    lin_act = (np.abs(lin_val) <= active_tol) & (nu > 1e-9 * big)
    quad_act = (np.abs(quad_val) <= active_tol) & (mu > 1e-9 * big)
    cols = [A[lin_act]]
    if quad_act.any():
        cols.append(np.array(grads)[quad_act])
    M = np.vstack(cols).T
    if M.shape[1] == 0:
        return np.zeros_like(nu), np.zeros_like(mu)
    coef, _ = nnls(M, -program.objective, maxiter=50 * M.shape[1])
    nu2, mu2 = np.zeros_like(nu), np.zeros_like(mu)
    k = int(lin_act.sum())
    nu2[lin_act] = coef[:k]
    mu2[quad_act] = coef[k:]
    return nu2, mu2


def _certificate_weights(program, y, dims) -> dict[str, float]:
    weights: dict[str, float] = {}
    m_lin = len(program.lin_b)
    for lab, val in zip(program.lin_labels, y[:m_lin]):
        weights[lab] = weights.get(lab, 0.0) + float(max(val, 0.0))
    for sl, qc in zip(dims.soc_slices(), program.quad_constraints):
        weights[qc.label] = weights.get(qc.label, 0.0) + float(max(y[sl][0], 0.0))
    total = sum(weights.values()) or 1.0
    return {k: v / total for k, v in sorted(weights.items())}


def solve(
    program: ConvexProgram,
    feas_tol: float = FEAS_TOL,
    gap_tol: float = GAP_TOL,
    max_iters: int = MAX_ITERS,
) -> Solution:
    """Solve ``program``; an Optimal status is only returned after a KKT self-audit."""
    G, h, dims, row_norm, forms = _to_conic(program)
    res = solve_conic(program.objective, G, h, dims, feas_tol, gap_tol, max_iters)
    n = program.dimension

    if res.status is ConicStatus.PRIMAL_INFEASIBLE:
        cert = _certificate_weights(program, res.certificate, dims)
        return Solution(
            SolveStatus.INFEASIBLE, np.full(n, np.nan), np.nan, None,
            iterations=res.iterations, certificate=cert,
            message="primal infeasible; certificate weight by family: "
            + ", ".join(f"{k}={v:.3f}" for k, v in cert.items()),
        )
    if res.status is ConicStatus.DUAL_INFEASIBLE:
        return Solution(
            SolveStatus.NUMERICAL_FAILURE, np.full(n, np.nan), -np.inf, None,
            iterations=res.iterations, message="objective unbounded below",
        )

    x = res.x
    nu, mu = _recover_multipliers(program, res.z, row_norm, forms, dims)
    mu = _polish_multipliers(program, x, nu, mu)[1]
    duals = tuple(res.z[sl].copy() for sl in dims.soc_slices())
    kkt = kkt_residuals(program, x, nu, cone_duals=duals)
    status = {
        ConicStatus.OPTIMAL: SolveStatus.OPTIMAL,
        ConicStatus.ITERATION_LIMIT: SolveStatus.ITERATION_LIMIT,
    }.get(res.status, SolveStatus.NUMERICAL_FAILURE)
    message = res.status.value
    if status is SolveStatus.OPTIMAL:
        scale_p = max(1.0, float(np.abs(h).max(initial=0.0)))
        if not kkt.within(10 * feas_tol * scale_p, 10 * gap_tol * scale_p):
            status = SolveStatus.NUMERICAL_FAILURE
            message = f"self-audit failed: {kkt}"
            log.warning("solver self-audit failed: %s", kkt)
    return Solution(
        status, x, float(program.objective @ x), kkt, nu, mu, res.iterations,
        message=message, cone_duals=duals,
    )


# -- KKT audit ----------------------------------------------------------------


def kkt_residuals(
    program: ConvexProgram,
    point,
    lin_multipliers=None,
    quad_multipliers=None,
    cone_duals=None,
) -> KKTResiduals:
    """Primal violation, multiplier sign violation, stationarity and complementarity.

    Violations are divided by max(1, ||gradient||) so they approximate the
    distance to each constraint boundary.

    Quadratic constraints enter the Lagrangian either through scalar
    multipliers on their gradients or, when ``cone_duals`` is given, through
    the dual vectors of their cone form (the form the solver works in). The
    cone form certifies an interior-point result to its own tolerances; the
    gradient form only to about the square root of the gap on curved
    constraints. Missing multipliers are estimated by nonnegative least
    squares over the nearly active constraints.
    """
    x = np.asarray(point, dtype=float)
    if x.shape != (program.dimension,):
        raise ValueError("point dimension does not match the program")
    n = len(x)
    c = program.objective
    A, b = program.lin_A, program.lin_b
    lin_val = A @ x - b
    lin_norm = np.maximum(1.0, np.linalg.norm(A, axis=1))
    quad_val = np.array([qc.value(x) for qc in program.quad_constraints])
    quad_grad = (
        np.array([qc.gradient(x) for qc in program.quad_constraints])
        if program.quad_constraints
        else np.zeros((0, n))
    )
    quad_norm = np.maximum(1.0, np.linalg.norm(quad_grad, axis=1))
    primal = max(
        0.0,
        float(np.max(lin_val / lin_norm, initial=0.0)),
        float(np.max(quad_val / quad_norm, initial=0.0)),
    )

    if lin_multipliers is None or (quad_multipliers is None and cone_duals is None):
        lin_multipliers, quad_multipliers = _estimate_multipliers(
            c, A, quad_grad, lin_val / lin_norm, quad_val / quad_norm
        )
        cone_duals = None
    nu = np.asarray(lin_multipliers, dtype=float)
    grad = c + A.T @ nu
    comp = float(np.abs(nu * lin_val).sum())
    signs = [nu]
    if cone_duals is not None:
        if len(cone_duals) != len(program.quad_constraints):
            raise ValueError("one cone dual per quadratic constraint")
        cone_sign = []
        for qc, zj in zip(program.quad_constraints, cone_duals):
            G_blk, h_blk, _ = _cone_block(qc, n)
            zj = np.asarray(zj, dtype=float)
            grad = grad + G_blk.T @ zj
            comp += abs(float(zj @ (h_blk - G_blk @ x)))
            cone_sign.append(zj[0] - np.linalg.norm(zj[1:]))
        signs.append(np.array(cone_sign))
    else:
        mu = np.asarray(quad_multipliers, dtype=float)
        grad = grad + quad_grad.T @ mu
        comp += float(np.abs(mu * quad_val).sum())
        signs.append(mu)
    stationarity = float(np.linalg.norm(grad, np.inf)) / max(1.0, float(np.linalg.norm(c, np.inf)))
    complementarity = comp / max(1.0, abs(float(c @ x)))
    dual = max(0.0, -float(np.min(np.concatenate(signs), initial=0.0)))
    return KKTResiduals(primal, dual, stationarity, complementarity)


def _estimate_multipliers(c, A, quad_grad, lin_scaled, quad_scaled, active_tol=1e-6):
    lin_act = np.abs(lin_scaled) <= active_tol
    quad_act = np.abs(quad_scaled) <= active_tol
    cols = np.vstack([A[lin_act], quad_grad[quad_act]]).T
    nu = np.zeros(A.shape[0])
    mu = np.zeros(quad_grad.shape[0])
    if cols.shape[1]:
        coef, _ = nnls(cols, -c)
        k = int(lin_act.sum())
        nu[lin_act] = coef[:k]
        mu[quad_act] = coef[k:]
    return nu, mu


# -- debug dump -----------------------------------------------------------------


def dump_program(program: ConvexProgram, dest=None) -> str:
    """Write the program in a plain coordinate-format text; returns the text."""
    out = io.StringIO()
    w = out.write
    w(f"# {PROGRAM_SCHEMA}\n")
    w(f"dimension {program.dimension}\n")
    w("objective\n")
    for i, v in enumerate(program.objective):
        if v != 0:
            w(f"{i} {float(v)!r}\n")
    w(f"linear {len(program.lin_b)}\n")
    for k, (a, bk, lab) in enumerate(zip(program.lin_A, program.lin_b, program.lin_labels)):
        w(f"row {k} {lab or '-'} rhs {float(bk)!r}\n")
        for j in np.flatnonzero(a):
            w(f"{j} {float(a[j])!r}\n")
    w(f"quadratic {len(program.quad_constraints)}\n")
    for k, qc in enumerate(program.quad_constraints):
        w(f"quad {k} {qc.label or '-'} r {qc.r!r}\n")
        rows, cols = np.nonzero(qc.P)
        w(f"P {len(rows)}\n")
        for i, j in zip(rows, cols):
            w(f"{i} {j} {float(qc.P[i, j])!r}\n")
        nz = np.flatnonzero(qc.q)
        w(f"q {len(nz)}\n")
        for j in nz:
            w(f"{j} {float(qc.q[j])!r}\n")
    text = out.getvalue()
    if dest is not None:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
