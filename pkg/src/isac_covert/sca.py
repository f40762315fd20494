"""Successive convex approximation of the covert ISAC waveform design.

Each outer iteration fixes the filter bank (and hence the matrices
``Q_f0 = A0^H (Psi + I)^{-1} A0``) at the current waveform, replaces every
nonconvex constraint by an affine minorant, and solves the resulting SOCP over
``x = [Re s; Im s; v; eta]``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import convex
from .convex import ConvexProgram, ProgramBuilder, QuadConstraint, SolveStatus
from .radar import check_waveform, filter_bank, q_matrix, to_db, worst_case_scnr, FilterBank
from .scenario import ArrayGeometry, Scenario

log = logging.getLogger(__name__)

TRACE_SCHEMA = "isac-trace/1"
AUDIT_TOL = 1e-6
# covert-infeasible starts are scaled to this fraction of the budget
COVERT_MARGIN = 0.999
# step fractions tried when a full SCA step lowers the worst-case SCNR
BACKTRACK_STEPS = (0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)


class PhaseMode(enum.Enum):
    WEDGE = "wedge"
    LINE = "line"  # single line Re(d* s) >= sqrt(gamma_low) cos(xi)


@dataclass(frozen=True)
class DesignParams:
    papr_cap: float = 2.0
    amp_floor: float = 0.5
    phase_tol: float = math.pi / 6
    covert_eps: float = 0.1  # math.inf switches the covert constraint off
    penalty: float = 10.0
    stop_tol_db: float = 1e-3
    max_outer: int = 100
    phase_mode: PhaseMode = PhaseMode.WEDGE
    feas_tol: float = convex.FEAS_TOL
    gap_tol: float = convex.GAP_TOL
    max_inner: int = convex.MAX_ITERS

    def __post_init__(self):
        object.__setattr__(self, "phase_mode", PhaseMode(self.phase_mode))
        if not self.papr_cap >= 1.0:
            raise ValueError(f"papr_cap must be >= 1, got {self.papr_cap}")
        if not 0.0 <= self.amp_floor <= 1.0:
            raise ValueError(f"amp_floor must lie in [0, 1], got {self.amp_floor}")
        if not 0.0 < self.phase_tol < math.pi / 2:
            raise ValueError(f"phase_tol must lie in (0, pi/2), got {self.phase_tol}")
        if not self.covert_eps >= 0.0:
            raise ValueError(f"covert_eps must be >= 0, got {self.covert_eps}")
        if not self.penalty > 0.0:
            raise ValueError("penalty must be positive")
        if not self.stop_tol_db > 0.0:
            raise ValueError("stop_tol_db must be positive")
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise ValueError("max_outer must be a positive integer")

    @property
    def covert_enabled(self) -> bool:
        return math.isfinite(self.covert_eps)

    @property
    def covert_budget(self) -> float:
        """2 eps^2, the cap on ||Hs||^2 / sigma_w^2."""
        return 2.0 * self.covert_eps**2


# -- building blocks ----------------------------------------------------------


@dataclass(frozen=True)
class AffineForm:
    """``L(s) = 2 Re(g^H s) + offset``."""

    g: np.ndarray
    offset: float

    def __call__(self, s) -> float:
        return float(2.0 * np.vdot(self.g, s).real + self.offset)

    def lifted(self) -> np.ndarray:
        """Coefficients ``a`` with ``L(s) = a @ [Re s; Im s] + offset``."""
        return 2.0 * np.concatenate([self.g.real, self.g.imag])


def linearize_minorant(M, s_ref) -> AffineForm:
    """Tangent plane of ``s^H M s`` at ``s_ref``; a global minorant when M is PSD."""
    M = np.asarray(M, dtype=complex)
    s_ref = np.asarray(s_ref, dtype=complex)
    lam_min = np.linalg.eigvalsh(0.5 * (M + M.conj().T)).min(initial=0.0)
    if lam_min < -convex.PSD_FLOOR * max(1.0, float(np.linalg.norm(M, 2))):
        raise ValueError(f"matrix is not PSD (min eigenvalue {lam_min:.3e})")
    g = M @ s_ref
    return AffineForm(g, -float(np.vdot(s_ref, g).real))


def phase_wedge_constraints(symbol, xi: float, amp_floor: float, mode=PhaseMode.WEDGE):
    """Linear constraints ``[a_re, a_im] . [Re s, Im s] <= b`` for one element.

    With ``u = conj(symbol) * s`` the wedge is ``|Im u| <= tan(xi) Re u`` and
    ``Re u >= amp_floor cos(xi)``. Returns an array of rows ``(a_re, a_im, b)``.
    """
    mode = PhaseMode(mode)
    if not 0.0 < xi < math.pi / 2:
        raise ValueError("phase tolerance must lie in (0, pi/2) for a convex wedge")
    d = complex(symbol)
    if abs(abs(d) - 1.0) > 1e-9:
        raise ValueError("symbol must have unit modulus")
    # Re u = dr*x + di*y ; Im u = dr*y - di*x
    dr, di = d.real, d.imag
    re_u = np.array([dr, di])
    im_u = np.array([-di, dr])
    if mode is PhaseMode.LINE:
        return np.array([[*(-re_u), -math.sqrt(amp_floor) * math.cos(xi)]])
    t = math.tan(xi)
    return np.array(
        [
            [*(im_u - t * re_u), 0.0],
            [*(-im_u - t * re_u), 0.0],
            [*(-re_u), -amp_floor * math.cos(xi)],
        ]
    )


def covert_factor(h, noise: float, geometry: ArrayGeometry) -> np.ndarray:
    """Real factor ``L`` (2 N_T N x 2 N) with ``||L^T x||^2 = sum_n |h^T s(n)|^2 / noise``."""
    h = np.asarray(h, dtype=complex) / math.sqrt(noise)
    nt, N = geometry.num_tx, geometry.num_slots
    n = nt * N
    L = np.zeros((2 * n, 2 * N))
    for slot in range(N):
        idx = slot * nt + np.arange(nt)
        # Re(h^T s(n)) and Im(h^T s(n)) as functions of [Re s; Im s]
        L[idx, 2 * slot] = h.real
        L[n + idx, 2 * slot] = -h.imag
        L[idx, 2 * slot + 1] = h.imag
        L[n + idx, 2 * slot + 1] = h.real
    return L


def covert_quadratic(h, noise: float, eps: float, geometry: ArrayGeometry, dimension=None):
    """``sum_n |h^T s(n)|^2 / noise <= 2 eps^2`` as a factored quadratic constraint."""
    if not noise > 0:
        raise ValueError("warden noise power must be positive")
    L = covert_factor(h, noise, geometry)
    dim = dimension or L.shape[0]
    L = np.vstack([L, np.zeros((dim - L.shape[0], L.shape[1]))])
    return QuadConstraint(None, np.zeros(dim), -2.0 * eps**2, factor=L, label="covert")


# -- direct constraint evaluation ---------------------------------------------


def covert_value(s, h, noise: float, geometry: ArrayGeometry) -> float:
    S = np.asarray(s, dtype=complex).reshape(geometry.num_slots, geometry.num_tx)
    return float(np.sum(np.abs(S @ np.asarray(h, dtype=complex)) ** 2) / noise)


def antenna_energy(s, geometry: ArrayGeometry) -> np.ndarray:
    S = np.asarray(s, dtype=complex).reshape(geometry.num_slots, geometry.num_tx)
    return np.sum(np.abs(S) ** 2, axis=0)


def wrapped_phase_error(s, d) -> np.ndarray:
    return np.abs(np.angle(np.asarray(s) * np.conj(d)))


@dataclass(frozen=True)
class ConstraintAudit:
    energy_dev: float  # max_t | ||s_t||^2 - N |
    energy_slack: float  # eta - energy_dev
    papr_max: float
    amp_min: float
    phase_max: float
    covert_lhs: float
    covert_budget: float
    eta: float
    params: DesignParams

    @property
    def checks(self) -> dict[str, bool]:
        p = self.params
        tol = AUDIT_TOL
        out = {
            "energy": self.energy_dev <= self.eta + tol * max(1.0, self.eta),
            "papr": self.papr_max <= p.papr_cap * (1 + tol),
            "amplitude": self.amp_min >= p.amp_floor - tol,
            "covert": (not p.covert_enabled)
            or self.covert_lhs <= self.covert_budget * (1 + tol) + 1e-12,
        }
        if p.phase_mode is PhaseMode.WEDGE:
            out["phase"] = self.phase_max <= p.phase_tol + tol
        return out

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def rows(self):
        """(quantity, value, limit, pass) rows of the audit table."""
        p = self.params
        c = self.checks
        budget = self.covert_budget if p.covert_enabled else math.inf
        return [
            ("energy_dev", self.energy_dev, self.eta, c["energy"]),
            ("papr_max", self.papr_max, p.papr_cap, c["papr"]),
            ("amp_min", self.amp_min, p.amp_floor, c["amplitude"]),
            ("phase_max", self.phase_max, p.phase_tol, c.get("phase", True)),
            ("covert_lhs", self.covert_lhs, budget, c["covert"]),
        ]


def audit_waveform(s, d, h, scenario: Scenario, params: DesignParams, eta: float) -> ConstraintAudit:
    g = scenario.geometry
    s = np.asarray(s, dtype=complex)
    power = np.abs(s) ** 2
    dev = float(np.max(np.abs(antenna_energy(s, g) - g.num_slots)))
    covert = covert_value(s, h, scenario.noise.warden_noise, g) if h is not None else 0.0
    return ConstraintAudit(
        energy_dev=dev,
        energy_slack=eta - dev,
        papr_max=float(power.max()),
        amp_min=float(np.sqrt(power.min())),
        phase_max=float(wrapped_phase_error(s, d).max()),
        covert_lhs=covert,
        covert_budget=params.covert_budget,
        eta=eta,
        params=params,
    )


# -- subproblem ---------------------------------------------------------------


def _selection_factor(geometry: ArrayGeometry, antenna: int, dim: int) -> np.ndarray:
    """Factor of R_t with ``s^H R_t s = ||s_t||^2`` in lifted coordinates."""
    nt, N = geometry.num_tx, geometry.num_slots
    n = nt * N
    idx = np.arange(N) * nt + antenna
    L = np.zeros((dim, 2 * N))
    L[idx, np.arange(N)] = 1.0
    L[n + idx, N + np.arange(N)] = 1.0
    return L


def assemble_subproblem(
    s_ref,
    q_mats: dict[float, np.ndarray],
    scenario: Scenario,
    params: DesignParams,
    d,
    h=None,
) -> ConvexProgram:
    """Convex surrogate around ``s_ref`` over ``[Re s; Im s; v; eta]``.

    ``q_mats`` maps each Doppler grid point to ``Q_f0`` evaluated at the
    current filter bank. ``h = None`` or an infinite budget drops the covert
    constraint.
    """
    g = scenario.geometry
    s_ref = check_waveform(s_ref, scenario)
    d = np.asarray(d, dtype=complex)
    n = g.tx_dim
    dim = 2 * n + 2
    iv, ie = 2 * n, 2 * n + 1
    N = g.num_slots
    problems = _reference_violations(s_ref, d, h, scenario, params)
    if problems:
        raise ValueError("reference point violates " + ", ".join(problems))

    b = ProgramBuilder(dim)
    # SCNR cuts: v <= 2 Re(g^H s) - s_ref^H Q s_ref
    for f0 in scenario.doppler_grid:
        form = linearize_minorant(q_mats[f0], s_ref)
        a = np.zeros(dim)
        a[: 2 * n] = -form.lifted()
        a[iv] = 1.0
        b.add_linear(a, form.offset, "scnr")

    # energy band N - eta <= ||s_t||^2 <= N + eta
    for t in range(g.num_tx):
        L = _selection_factor(g, t, dim)
        q = np.zeros(dim)
        q[ie] = -0.5
        b.add_quadratic(q, -float(N), "energy", factor=L)
        sel = np.zeros(n, dtype=complex)
        sel[t::g.num_tx] = s_ref[t::g.num_tx]
        a = np.zeros(dim)
        a[:n], a[n : 2 * n] = -2 * sel.real, -2 * sel.imag
        a[ie] = -1.0
        b.add_linear(a, -N - float(np.vdot(sel, sel).real), "energy")

    # PAPR cap |s_i|^2 <= gamma_up
    for i in range(n):
        L = np.zeros((dim, 2))
        L[i, 0] = L[n + i, 1] = 1.0
        b.add_quadratic(np.zeros(dim), -params.papr_cap, "papr", factor=L)

    # amplitude minorant 2 Re(s_ref_i^* s_i) - |s_ref_i|^2 >= gamma_low^2
    A_amp = np.zeros((n, dim))
    A_amp[np.arange(n), np.arange(n)] = -2 * s_ref.real
    A_amp[np.arange(n), n + np.arange(n)] = -2 * s_ref.imag
    b.add_linear(A_amp, -params.amp_floor**2 - np.abs(s_ref) ** 2, "amplitude")

    # phase region per element
    rows, rhs = [], []
    for i in range(n):
        for a_re, a_im, bb in phase_wedge_constraints(
            d[i], params.phase_tol, params.amp_floor, params.phase_mode
        ):
            a = np.zeros(dim)
            a[i], a[n + i] = a_re, a_im
            rows.append(a)
            rhs.append(bb)
    b.add_linear(np.array(rows), np.array(rhs), "phase")

    if h is not None and params.covert_enabled:
        b.add_constraint(
            covert_quadratic(h, scenario.noise.warden_noise, params.covert_eps, g, dim)
        )

    a = np.zeros(dim)
    a[ie] = -1.0
    b.add_linear(a, 0.0, "eta")

    c = np.zeros(dim)
    c[iv], c[ie] = -1.0, params.penalty
    return b.build(c)


def _reference_violations(s, d, h, scenario, params, tol=AUDIT_TOL) -> list[str]:
    g = scenario.geometry
    bad = []
    power = np.abs(s) ** 2
    if power.max() > params.papr_cap * (1 + tol):
        bad.append("papr")
    if np.sqrt(power.min()) < params.amp_floor - tol:
        bad.append("amplitude")
    u = np.conj(d) * s
    if params.phase_mode is PhaseMode.WEDGE:
        t = math.tan(params.phase_tol)
        if np.any(np.abs(u.imag) > t * u.real + tol) or np.any(
            u.real < params.amp_floor * math.cos(params.phase_tol) - tol
        ):
            bad.append("phase")
    elif np.any(u.real < math.sqrt(params.amp_floor) * math.cos(params.phase_tol) - tol):
        bad.append("phase")
    if h is not None and params.covert_enabled:
        budget = params.covert_budget
        if covert_value(s, h, scenario.noise.warden_noise, g) > budget * (1 + tol) + 1e-12:
            bad.append("covert")
    return bad


# -- outer loop ---------------------------------------------------------------


class DesignStatus(enum.Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


class DesignInfeasible(RuntimeError):
    def __init__(self, iteration: int, family: str | None, message: str = ""):
        self.iteration = iteration
        self.family = family
        super().__init__(
            f"subproblem infeasible at iteration {iteration}"
            + (f" (dominant family: {family})" if family else "")
            + (f": {message}" if message else "")
        )


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    scnr_db: float
    v: float
    eta: float
    status: str
    step: float
    ms: float


@dataclass
class ConvergenceTrace:
    initial_scnr_db: float
    records: list[TraceRecord] = field(default_factory=list)
    status: DesignStatus = DesignStatus.CONVERGED

    def __len__(self):
        return len(self.records)

    @property
    def scnr_db(self) -> np.ndarray:
        return np.array([r.scnr_db for r in self.records])

    @property
    def final_scnr_db(self) -> float:
        return self.records[-1].scnr_db if self.records else self.initial_scnr_db

    @property
    def final_eta(self) -> float:
        return self.records[-1].eta if self.records else 0.0

    def to_csv(self, timing: bool = False) -> str:
        """CSV text; the ``ms`` column stays empty unless ``timing`` is set."""
        out = io.StringIO()
        out.write(f"# {TRACE_SCHEMA}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["iter", "scnr_db", "v", "eta", "status", "ms"])
        for r in self.records:
            w.writerow(
                [
                    r.iteration,
                    repr(float(r.scnr_db)),
                    repr(float(r.v)),
                    repr(float(r.eta)),
                    r.status,
                    f"{r.ms:.3f}" if timing else "",
                ]
            )
        return out.getvalue()


@dataclass
class DesignResult:
    waveform: np.ndarray
    filters: FilterBank
    trace: ConvergenceTrace
    audit: ConstraintAudit

    @property
    def status(self) -> DesignStatus:
        return self.trace.status

    @property
    def scnr_db(self) -> float:
        return self.trace.final_scnr_db

    def __iter__(self):
        # unpacks as (waveform, filter bank, trace)
        return iter((self.waveform, self.filters, self.trace))


def polish_iterate(s, d, params: DesignParams) -> np.ndarray:
    """Pull element magnitudes into ``[amp_floor, sqrt(papr_cap)]`` and, in wedge
    mode, phases to within ``phase_tol`` of the symbols.

    Removes the interior-point solver's O(feas_tol) overshoot of these
    per-element constraints; any point meeting both bounds is inside the wedge.
    """
    s = np.asarray(s, dtype=complex)
    mag = np.clip(np.abs(s), params.amp_floor, math.sqrt(params.papr_cap))
    rel = np.angle(s * np.conj(d))
    if params.phase_mode is PhaseMode.WEDGE:
        rel = np.clip(rel, -params.phase_tol, params.phase_tol)
    return mag * d * np.exp(1j * rel)


def _worst_scnr_db(s, scenario: Scenario) -> tuple[float, FilterBank]:
    bank = filter_bank(s, scenario)
    worst, _ = worst_case_scnr(s, bank, scenario)
    return float(to_db(worst)), bank


def initial_waveform(d, h, scenario: Scenario, params: DesignParams) -> tuple[np.ndarray, float]:
    """Feasible start built from the symbols; returns ``(s, eta)``.

    ``d`` itself when it meets the covert budget; otherwise ``c d`` scaled
    onto the covert boundary, which needs ``c >= amp_floor``.
    """
    g = scenario.geometry
    s = np.asarray(d, dtype=complex).copy()
    if h is not None and params.covert_enabled:
        lhs = covert_value(s, h, scenario.noise.warden_noise, g)
        budget = params.covert_budget
        if lhs > budget:
            c = math.sqrt(COVERT_MARGIN * budget / lhs)
            if c < params.amp_floor:
                raise DesignInfeasible(
                    0,
                    "covert",
                    f"scaling the symbols into the covert budget needs amplitude {c:.4f}"
                    f" < amp_floor {params.amp_floor}",
                )
            s *= c
    eta = float(np.max(np.abs(antenna_energy(s, g) - g.num_slots)))
    return s, eta


def design_waveform(
    scenario: Scenario,
    params: DesignParams,
    d,
    h=None,
    initial=None,
    initial_eta: float | None = None,
) -> DesignResult:
    """Alternate filter-bank updates and convex surrogate solves until the SCNR settles.

    A step that would lower the true worst-case SCNR is shortened along the
    segment to the previous iterate (the feasible set of the surrogate is
    convex, so every point on it stays feasible); if no fraction helps, the
    loop stops.
    """
    g = scenario.geometry
    d = np.asarray(d, dtype=complex)
    if d.shape != (g.tx_dim,):
        raise ValueError(f"symbols must have shape ({g.tx_dim},)")
    if np.max(np.abs(np.abs(d) - 1.0)) > 1e-9:
        raise ValueError("symbols must have unit modulus")

    if initial is None:
        s, eta = initial_waveform(d, h, scenario, params)
    else:
        s = check_waveform(initial, scenario).copy()
        dev = float(np.max(np.abs(antenna_energy(s, g) - g.num_slots)))
        eta = dev if initial_eta is None else max(float(initial_eta), dev)
        bad = _reference_violations(s, d, h, scenario, params)
        if bad:
            raise DesignInfeasible(0, bad[0], "initial waveform violates " + ", ".join(bad))

    scnr_db, bank = _worst_scnr_db(s, scenario)
    trace = ConvergenceTrace(scnr_db)
    trace.status = DesignStatus.ITERATION_LIMIT

    for it in range(1, params.max_outer + 1):
        t0 = time.perf_counter()
        q_mats = {f0: q_matrix(s, f0, scenario) for f0 in scenario.doppler_grid}
        program = assemble_subproblem(s, q_mats, scenario, params, d, h)
        sol = convex.solve(program, params.feas_tol, params.gap_tol, params.max_inner)
        if sol.status is SolveStatus.INFEASIBLE:
            trace.status = DesignStatus.INFEASIBLE
            raise DesignInfeasible(it, sol.dominant_family, sol.message)
        if sol.status is not SolveStatus.OPTIMAL:
            log.warning("iteration %d: subproblem %s (%s)", it, sol.status.value, sol.message)
            trace.status = DesignStatus.NUMERICAL_FAILURE
            break

        n = g.tx_dim
        cand = polish_iterate(sol.point[:n] + 1j * sol.point[n : 2 * n], d, params)
        cand_eta = max(float(sol.point[-1]), 0.0)
        new_db, new_bank = _worst_scnr_db(cand, scenario)
        step = 1.0
        if new_db < scnr_db:
            for lam in BACKTRACK_STEPS:
                trial = s + lam * (cand - s)
                trial_db, trial_bank = _worst_scnr_db(trial, scenario)
                if trial_db >= scnr_db:
                    step, cand, new_db, new_bank = lam, trial, trial_db, trial_bank
                    break
            else:
                step = 0.0
        if step == 0.0:
            trace.records.append(
                TraceRecord(it, scnr_db, float(sol.point[-2]), eta, "Stalled", 0.0,
                            1e3 * (time.perf_counter() - t0))
            )
            trace.status = DesignStatus.CONVERGED
            break
        # the solver's eta is feasible only to feas_tol; never report less than the measured deviation
        eta = max(step * cand_eta + (1 - step) * eta,
                  float(np.max(np.abs(antenna_energy(cand, g) - g.num_slots))))
        gain = new_db - scnr_db
        s, scnr_db, bank = cand, new_db, new_bank
        trace.records.append(
            TraceRecord(it, scnr_db, float(sol.point[-2]), eta, sol.status.value, step,
                        1e3 * (time.perf_counter() - t0))
        )
        log.debug("iteration %d: worst SCNR %.6f dB, eta %.3e, step %g", it, scnr_db, eta, step)
        if abs(gain) <= params.stop_tol_db:
            trace.status = DesignStatus.CONVERGED
            break

    if trace.status is DesignStatus.ITERATION_LIMIT:
        warnings.warn(f"design stopped at the iteration cap {params.max_outer}", RuntimeWarning,
                      stacklevel=2)
    audit = audit_waveform(s, d, h, scenario, params, eta)
    if not audit.ok:
        log.warning("final waveform fails the audit: %s", audit.checks)
    return DesignResult(s, bank, trace, audit)


def with_params(params: DesignParams, **changes) -> DesignParams:
    return replace(params, **changes)
