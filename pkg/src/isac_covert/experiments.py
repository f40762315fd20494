"""Experiment drivers behind the command-line interface.

Each driver returns an exit code and writes schema-headed CSV artifacts with
atomic renames. Results depend only on the configuration and seed.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh

from . import covert, radar, rng as _rng
from .comms import SERResult, SymbolFrame, phase_error, ser_csv, simulate_ser
from .config import ExperimentConfig, format_complex
from .sca import (
    DesignInfeasible,
    DesignParams,
    DesignResult,
    DesignStatus,
    design_waveform,
    linearize_minorant,
)
from .scenario import (
    ArrayGeometry,
    DopplerGrid,
    NoiseModel,
    Scatterer,
    ScattererKind,
    Scenario,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ITERATION_LIMIT = 2
EXIT_INFEASIBLE = 3
EXIT_CHECK_FAILED = 4

WAVEFORM_SCHEMA = "isac-waveform/1"
FILTERBANK_SCHEMA = "isac-filterbank/1"
DESIGN_AUDIT_SCHEMA = "isac-design-audit/1"
SWEEP_SCHEMA = "isac-sweep/1"
DOPPLER_SCHEMA = "isac-doppler/1"
VERIFY_SCHEMA = "isac-verify/1"
# SCNR may dip by this much (dB) along a warm-start chain before it counts as a violation
NESTING_TOL_DB = 1e-6


def write_atomic(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv(schema: str, header: Sequence[str], rows) -> str:
    out = io.StringIO()
    out.write(f"# {schema}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def _num(x) -> str:
    return repr(float(x))


# -- design ---------------------------------------------------------------------


@dataclass
class DesignOutcome:
    exit_code: int
    result: DesignResult | None
    message: str
    files: dict[str, Path]


def _exit_code(result: DesignResult) -> int:
    if not result.audit.ok:
        return EXIT_CHECK_FAILED
    if result.status is DesignStatus.CONVERGED:
        return EXIT_OK
    return EXIT_ITERATION_LIMIT


def _design(cfg: ExperimentConfig, params: DesignParams | None = None, scenario=None,
            initial=None, initial_eta=None):
    scenario = scenario or cfg.scenario
    params = params or cfg.params
    d = cfg.symbols().symbols
    h = cfg.warden().h
    return design_waveform(scenario, params, d, h, initial=initial, initial_eta=initial_eta)


def waveform_text(s) -> str:
    return f"# {WAVEFORM_SCHEMA}\n" + "".join(format_complex(z) + "\n" for z in s)


def filterbank_csv(bank: radar.FilterBank) -> str:
    rows = []
    for f0 in bank.grid:
        for i, z in enumerate(bank[f0]):
            rows.append([_num(f0), i, _num(z.real), _num(z.imag)])
    return _csv(FILTERBANK_SCHEMA, ["f0", "index", "re", "im"], rows)


def design_audit_csv(result: DesignResult) -> str:
    rows = [[q, _num(v), _num(lim), "pass" if ok else "FAIL"] for q, v, lim, ok in result.audit.rows()]
    rows.append(["scnr_db", _num(result.scnr_db), "", "pass"])
    rows.append(["design_status", result.status.value, "",
                 "pass" if result.status is DesignStatus.CONVERGED else "FAIL"])
    return _csv(DESIGN_AUDIT_SCHEMA, ["quantity", "value", "limit", "pass"], rows)


def run_design(cfg: ExperimentConfig, out_dir=None, timing: bool = False) -> DesignOutcome:
    out = Path(out_dir or cfg.out_dir)
    try:
        result = _design(cfg)
    except DesignInfeasible as exc:
        log.error("%s", exc)
        return DesignOutcome(EXIT_INFEASIBLE, None, str(exc), {})
    files = {
        "waveform": write_atomic(out / "waveform.txt", waveform_text(result.waveform)),
        "filterbank": write_atomic(out / "filterbank.csv", filterbank_csv(result.filters)),
        "trace": write_atomic(out / "trace.csv", result.trace.to_csv(timing)),
        "audit": write_atomic(out / "audit.csv", design_audit_csv(result)),
    }
    code = _exit_code(result)
    msg = (f"worst-case SCNR {result.scnr_db:.4f} dB after {len(result.trace)} iterations"
           f" ({result.status.value}); audit {'passed' if result.audit.ok else 'FAILED'}")
    return DesignOutcome(code, result, msg, files)


# -- sweeps ---------------------------------------------------------------------


@dataclass
class SweepPoint:
    xi: float
    eps: float
    scnr_db: float
    iters: int
    status: str
    warm_from: str
    source_scnr_db: float
    waveform: np.ndarray | None
    eta: float
    ser: tuple[SERResult, ...] = ()

    @property
    def nested_ok(self) -> bool:
        return not math.isfinite(self.source_scnr_db) or (
            self.scnr_db >= self.source_scnr_db - NESTING_TOL_DB
        )


def _sweep_job(args):
    cfg, xi, eps, initial, eta, source_db, warm_from = args
    params = replace(cfg.params, phase_tol=xi, covert_eps=eps)
    try:
        res = _design(cfg, params, initial=initial, initial_eta=eta)
    except DesignInfeasible as exc:
        return SweepPoint(xi, eps, math.nan, exc.iteration, "Infeasible", warm_from, source_db,
                          None, math.nan)
    status = res.status.value if res.audit.ok else "AuditFailed"
    return SweepPoint(xi, eps, res.scnr_db, len(res.trace), status, warm_from, source_db,
                      res.waveform, res.trace.final_eta)


def _warm_source(grid, i, j):
    """Adjacent tighter point with the larger SCNR (xi neighbour wins ties)."""
    best, tag = None, "init"
    for ii, jj, name in ((i - 1, j, "xi"), (i, j - 1, "eps")):
        if ii < 0 or jj < 0:
            continue
        p = grid[ii][jj]
        if p is None or p.waveform is None:
            continue
        if best is None or p.scnr_db > best.scnr_db:
            best, tag = p, name
    return best, tag


def sweep_chain(cfg: ExperimentConfig, xis=None, epss=None, jobs: int = 1) -> list[SweepPoint]:
    """Designs over the (xi, eps) grid, warm-started along increasing looseness.

    Points on one anti-diagonal only depend on the previous one, so each
    wavefront runs in parallel when ``jobs > 1``.
    """
    xis = sorted(float(x) for x in (xis or cfg.sweep.xi))
    epss = sorted(float(e) for e in (epss or cfg.sweep.eps))
    grid: list[list[SweepPoint | None]] = [[None] * len(epss) for _ in xis]
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for k in range(len(xis) + len(epss) - 1):
            cells = [(i, k - i) for i in range(len(xis)) if 0 <= k - i < len(epss)]
            tasks = []
            for i, j in cells:
                src, tag = _warm_source(grid, i, j)
                tasks.append((
                    cfg, xis[i], epss[j],
                    None if src is None else src.waveform,
                    None if src is None else src.eta,
                    math.nan if src is None else src.scnr_db,
                    tag,
                ))
            results = list(pool.map(_sweep_job, tasks)) if pool else [_sweep_job(t) for t in tasks]
            for (i, j), point in zip(cells, results):
                grid[i][j] = point
                if not point.nested_ok:
                    log.warning("warm-start nesting violated at xi=%g eps=%g: %.6f < %.6f dB",
                                point.xi, point.eps, point.scnr_db, point.source_scnr_db)
    finally:
        if pool:
            pool.shutdown()
    return [p for row in grid for p in row]


def _ser_for(cfg: ExperimentConfig, point: SweepPoint, snrs) -> tuple[SERResult, ...]:
    if point.waveform is None:
        return ()
    d = cfg.symbols()
    return tuple(
        simulate_ser(point.waveform, d, snr, cfg.sweep.ser_trials, cfg.seed) for snr in snrs
    )


def _snr_label(snr: float) -> str:
    return f"ser@{snr:g}dB"


def run_sweep(cfg: ExperimentConfig, out_dir=None, jobs: int = 1):
    out = Path(out_dir or cfg.out_dir)
    points = sweep_chain(cfg, jobs=jobs)
    snrs = cfg.sweep.snr_db
    header = ["xi", "eps", "scnr_db", "iters", "status", "warm_from", "nested_ok",
              *(_snr_label(s) for s in snrs)]
    rows = []
    for p in points:
        p.ser = _ser_for(cfg, p, snrs)
        sers = [_num(r.ser) for r in p.ser] or [""] * len(snrs)
        rows.append([_num(p.xi), _num(p.eps), _num(p.scnr_db), p.iters, p.status, p.warm_from,
                     str(p.nested_ok).lower(), *sers])
    path = write_atomic(out / "sweep.csv", _csv(SWEEP_SCHEMA, header, rows))
    failed = [p for p in points if p.status not in ("Converged",)]
    nested = all(p.nested_ok for p in points)
    code = EXIT_OK
    if failed:
        code = EXIT_INFEASIBLE if any(p.status == "Infeasible" for p in failed) else EXIT_ITERATION_LIMIT
    if not nested:
        code = EXIT_CHECK_FAILED
    return code, points, path


def run_ser(cfg: ExperimentConfig, out_dir=None, jobs: int = 1):
    out = Path(out_dir or cfg.out_dir)
    points = sweep_chain(cfg, jobs=jobs)
    rows = []
    for p in points:
        p.ser = _ser_for(cfg, p, cfg.sweep.snr_db)
        rows.extend((p.xi, p.eps, snr, r) for snr, r in zip(cfg.sweep.snr_db, p.ser))
    path = write_atomic(out / "ser.csv", ser_csv(rows))
    code = EXIT_OK if all(p.waveform is not None for p in points) else EXIT_INFEASIBLE
    return code, points, path


# -- Doppler robustness ---------------------------------------------------------


def scnr_over_grid(s, scenario: Scenario, grid: DopplerGrid) -> np.ndarray:
    """SCNR (dB) at each f0 of ``grid`` with the matched filter for that f0."""
    return np.array(
        [radar.to_db(radar.scnr(s, radar.optimal_filter(s, f0, scenario), f0, scenario))
         for f0 in grid]
    )


def robust_and_baseline(cfg: ExperimentConfig, scenario: Scenario, grid: DopplerGrid,
                        baseline_grid: DopplerGrid | None):
    """Designs over ``baseline_grid`` and then over ``grid``, the latter warm-started.

    The constraints do not depend on the Doppler set, so the baseline design is a
    feasible start for the robust one and the monotone SCA loop can only improve
    its worst case. Returns ``(robust, baseline)``; ``baseline`` is None when
    no baseline grid is given.
    """
    base = None
    if baseline_grid is not None:
        base = _design(cfg, scenario=scenario.with_grid(baseline_grid))
    robust = _design(
        cfg,
        scenario=scenario.with_grid(grid),
        initial=None if base is None else base.waveform,
        initial_eta=None if base is None else base.trace.final_eta,
    )
    return robust, base


def run_doppler(cfg: ExperimentConfig, out_dir=None):
    out = Path(out_dir or cfg.out_dir)
    eval_grid = cfg.eval_grid or cfg.scenario.doppler_grid
    try:
        robust, base = robust_and_baseline(cfg, cfg.scenario, cfg.scenario.doppler_grid,
                                           cfg.baseline_grid)
    except DesignInfeasible as exc:
        log.error("doppler design: %s", exc)
        return EXIT_INFEASIBLE, {}, {}
    files = {}
    summary = {}
    code = EXIT_OK
    for name, res, fname in (("robust", robust, "doppler.csv"),
                             ("baseline", base, "doppler_baseline.csv")):
        if res is None:
            continue
        code = max(code, _exit_code(res))
        values = scnr_over_grid(res.waveform, cfg.scenario, eval_grid)
        rows = [[_num(f0), _num(v)] for f0, v in zip(eval_grid, values)]
        files[name] = write_atomic(out / fname, _csv(DOPPLER_SCHEMA, ["f0", "scnr_db"], rows))
        summary[name] = (float(values.min()), float(values.max() - values.min()))
        log.info("%s design: worst %.4f dB, spread %.4f dB", name, *summary[name])
    return code, summary, files


# -- oracle suite -----------------------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    check: str
    value: float
    threshold: float
    passed: bool


def random_scenario(gen, geometry: ArrayGeometry, num_clutter: int, grid=(0.0,)) -> Scenario:
    """Random target/clutter layout used by the oracle checks."""
    N = geometry.num_slots

    def draw(kind):
        return Scatterer(
            float(gen.uniform(-np.pi / 2, np.pi / 2)),
            int(gen.integers(-(N - 1), N)) if kind is ScattererKind.CLUTTER else 0,
            float(gen.uniform(0.0, 20.0)),
            kind,
        )

    return Scenario(
        geometry,
        draw(ScattererKind.TARGET),
        tuple(draw(ScattererKind.CLUTTER) for _ in range(num_clutter)),
        DopplerGrid(grid),
        NoiseModel(float(gen.uniform(-10.0, 0.0)), 0.0),
    )


def _random_waveform(gen, n):
    return _rng.complex_normal(gen, n)


def check_filter_optimality(seed, instances=50, fault: str | None = None) -> list[CheckRow]:
    """Closed-form filter vs the dominant generalized eigenvalue, plus distortionlessness."""
    geo = ArrayGeometry(2, 2, 4)
    worst_rel = worst_dist = 0.0
    for k in range(instances):
        gen = _rng.stream(seed, 0xF1, k)
        sc = random_scenario(gen, geo, 2, (float(gen.uniform(-0.5, 0.5)),))
        f0 = sc.doppler_grid.values[0]
        s = _random_waveform(gen, geo.tx_dim)
        w = radar.optimal_filter(s, f0, sc)
        if fault == "negate_filter":
            w = -w
        b = sc.target_matrix(f0) @ s
        R = radar.clutter_covariance(s, f0, sc) + np.eye(geo.rx_dim)
        lam = eigh(sc.target_snr * np.outer(b, b.conj()), R, eigvals_only=True)[-1]
        val = radar.scnr(s, w, f0, sc)
        worst_rel = max(worst_rel, abs(val - lam) / lam)
        worst_dist = max(worst_dist, abs(np.vdot(w, b) - 1.0))
    return [
        CheckRow("filter_optimality_gen_eig", worst_rel, 1e-8, worst_rel <= 1e-8),
        CheckRow("filter_optimality_distortionless", worst_dist, 1e-8, worst_dist <= 1e-8),
    ]


def check_echo(seed, instances=10, draws=100_000, z_max=4.0) -> list[CheckRow]:
    worst = 0.0
    geo = ArrayGeometry(4, 4, 16)
    for k in range(instances):
        gen = _rng.stream(seed, 0xEC, k)
        sc = random_scenario(gen, geo, 3, (float(gen.uniform(-0.5, 0.5)),))
        f0 = sc.doppler_grid.values[0]
        s = _random_waveform(gen, geo.tx_dim)
        w = radar.optimal_filter(s, f0, sc)
        analytic = radar.scnr(s, w, f0, sc)
        est = radar.synthesize_echo(s, f0, sc, draws, int(gen.integers(2**32)), w=w)
        worst = max(worst, abs(est.scnr - analytic) / est.std_error)
    return [CheckRow("echo_mc_z", worst, z_max, worst <= z_max)]


def check_kl(seed, instances=10, samples=20_000, trials=20_000) -> list[CheckRow]:
    """Log-sum bound and Pinsker floor on N_T = 1, N = 2 QPSK codebooks."""
    cb = covert.Codebook.qpsk(2)
    worst_bound = worst_pinsker = -np.inf
    for k in range(instances):
        ch = covert.WardenChannel.rayleigh(1, 0.0, 0.0, seed, key=k)
        kl = covert.kl_exact_mc(cb, ch, samples, seed + k)
        bound = covert.kl_upper_bound(cb, ch)
        worst_bound = max(worst_bound, kl.value - bound - 3 * kl.std_error)
        wil = covert.simulate_willie(cb, ch, trials, seed + k)
        floor = covert.pinsker_floor(max(kl.value, 0.0))
        worst_pinsker = max(worst_pinsker, floor - wil.error - 3 * wil.std_error)
    return [
        CheckRow("kl_logsum_bound_excess", worst_bound, 0.0, worst_bound <= 0.0),
        CheckRow("willie_pinsker_excess", worst_pinsker, 0.0, worst_pinsker <= 0.0),
    ]


def check_minorant(seed, dims=(4, 16), points=1000) -> list[CheckRow]:
    worst = -np.inf
    for k, n in enumerate(dims):
        gen = _rng.stream(seed, 0x41, k)
        B = _rng.complex_normal(gen, (n, n))
        M = B @ B.conj().T
        s_ref = _rng.complex_normal(gen, n)
        form = linearize_minorant(M, s_ref)
        S = _rng.complex_normal(gen, (points, n)) * 3.0
        true = np.einsum("ij,jk,ik->i", S.conj(), M, S).real
        approx = 2.0 * (S @ form.g.conj()).real + form.offset
        scale = np.maximum(1.0, np.abs(true))
        worst = max(worst, float(np.max((approx - true) / scale)))
    return [CheckRow("minorant_excess", worst, 1e-10, worst <= 1e-10)]


def run_verify(cfg: ExperimentConfig | None, seed: int, out_dir, fault: str | None = None):
    spec = cfg.verify if cfg else None
    instances = spec.instances if spec else 10
    rows: list[CheckRow] = []
    rows += check_filter_optimality(seed, 50, fault)
    rows += check_echo(seed, instances, spec.echo_draws if spec else 100_000)
    rows += check_kl(seed, instances, spec.kl_samples if spec else 20_000,
                     spec.willie_trials if spec else 20_000)
    rows += check_minorant(seed)
    text = _csv(VERIFY_SCHEMA, ["check", "value", "threshold", "pass"],
                [[r.check, _num(r.value), _num(r.threshold), "pass" if r.passed else "FAIL"]
                 for r in rows])
    path = write_atomic(Path(out_dir) / "verify.csv", text)
    failed = [r.check for r in rows if not r.passed]
    return (EXIT_CHECK_FAILED if failed else EXIT_OK), rows, path
