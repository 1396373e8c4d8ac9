"""Monte Carlo harness: sample, mesh, solve, estimate, persist.

Results are deterministic functions of the configuration.  Wall-clock
timings are kept on the records but never written to the CSV or the
JSON summary, so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .cheeger import NoCutError, ShapeError, estimate_cheeger, systole
from .kostlan import DomainError, EnsembleSeed, HomogeneousPoly3, degenerate_family, sample_kostlan
from .projective import (
    PathTooCloseError,
    PencilDegenerateError,
    RootFindingError,
    StepSizeUnderflowError,
    make_fiber_system,
    random_pencil,
)
from .spectral import AssemblyError, ConvergenceError, spectrum
from .surface_mesh import (
    LiftInconsistentError,
    SingularCurveError,
    StructuralError,
    curvature,
    euler_genus,
    lift_mesh,
    prepare_base,
    total_area,
)

# failures that reject a sample rather than abort the run
SAMPLE_FAILURES = (
    PencilDegenerateError,
    PathTooCloseError,
    StepSizeUnderflowError,
    RootFindingError,
    StructuralError,
    LiftInconsistentError,
    SingularCurveError,
    AssemblyError,
    ConvergenceError,
    NoCutError,
    ShapeError,
)


# -- normalization --------------------------------------------------------------

class UnitArea:
    """Conversion between mesh units (lines have area pi) and unit-area lines.

    Lengths scale by 1/sqrt(pi) and areas by 1/pi.  This is the only place
    the conversion is defined.
    """

    LENGTH = 1.0 / math.sqrt(math.pi)

    @classmethod
    def factor(cls, kind: str) -> float:
        # exponent of the length scale carried by each quantity
        power = {"length": 1, "area": 2, "h": -1, "lambda": -2, "curvature": -2}[kind]
        return cls.LENGTH**power

    @classmethod
    def to_unit_area(cls, value, kind: str):
        return None if value is None else value * cls.factor(kind)

    @classmethod
    def from_unit_area(cls, value, kind: str):
        return None if value is None else value / cls.factor(kind)


# -- bounds -----------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    d: int
    a_d: float
    C: float
    n: int
    r_d: float
    k_d: float
    w_d: float
    systole_threshold: float
    h_threshold: float
    lambda_threshold: float


def bound_calculator(d: int, a_d: float, C: float = 1.0, n: int = 2) -> BoundReport:
    """Oval radius, curvature scale, ball volume and the probabilistic thresholds."""
    if d < 2:
        raise DomainError("bounds need d >= 2 (log d appears in a denominator)")
    if not (a_d > 0 and C > 0 and n >= 1):
        raise DomainError("a_d and C must be positive, n >= 1")
    lg = math.log(d)
    r = a_d / (C * d ** (3 * (n + 1) / 4) * lg)
    k = (C / a_d) * d ** (3 * (n + 1) / 2) * lg**2
    x = math.sqrt(k) * r
    w = 2 * math.pi * 2 * math.sinh(x / 2) ** 2 / k  # cosh(x) - 1 without cancellation
    sys_t = a_d * d ** (-(3 * n + 1) / 2) / (C * math.sqrt(lg))
    h_t = a_d / (C * d ** ((5 * n - 1) / 2) * math.sqrt(lg))
    lam_t = a_d**2 / (C * d ** (5 * n - 1) * lg)
    return BoundReport(d, a_d, C, n, r, k, w, sys_t, h_t, lam_t)


def a_rule(rule: str, d: int) -> float:
    """``inv_log`` gives 1/log(d+1); anything else is read as a constant."""
    if rule == "inv_log":
        return 1.0 / math.log(d + 1)
    return float(rule)


# -- configuration ----------------------------------------------------------------

def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    degrees: tuple[int, ...] = (2, 3)
    samples: int = 10
    seed: int = 0
    level: int = 2
    sweep_levels: int = 256
    k: int = 6
    C: float = 1.0
    a_rule: str = "inv_log"
    n: int = 2
    compute_systole: bool = True
    systole_sources: int = 0  # 0 means every vertex
    max_attempts: int = 5
    workers: int = 1
    degenerate_d1: int = 1
    degenerate_d2: int = 1
    degenerate_eps: tuple[float, ...] = ()
    degenerate_level: int = 3
    csv_path: str = "results.csv"
    json_path: str = "summary.json"

    def __post_init__(self):
        if not self.degrees and not self.degenerate_eps:
            raise DomainError("nothing to run: no degrees and no epsilon values")
        if self.degrees and min(self.degrees) < 1:
            raise DomainError("degrees must be >= 1")
        if self.samples < 1:
            raise DomainError("samples must be >= 1")
        if any(not e > 0 for e in self.degenerate_eps):
            raise DomainError("epsilon values must be positive")
        if self.k < 2:
            raise DomainError("k must be >= 2")

    @classmethod
    def from_ini(cls, text: str, base: Path | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        kw: dict = {}

        def get(section, key, conv, name=None):
            if cp.has_option(section, key):
                kw[name or key] = conv(cp.get(section, key))

        get("experiment", "degrees", _ints)
        get("experiment", "samples", int)
        get("experiment", "seed", int)
        get("experiment", "max_attempts", int)
        get("experiment", "workers", int)
        get("mesh", "level", int)
        get("spectrum", "k", int)
        get("cheeger", "sweep_levels", int)
        if cp.has_option("cheeger", "systole"):
            kw["compute_systole"] = cp.getboolean("cheeger", "systole")
        get("cheeger", "systole_sources", int)
        get("bounds", "C", float)
        get("bounds", "a_rule", str.strip)
        get("bounds", "n", int)
        get("degenerate", "d1", int, "degenerate_d1")
        get("degenerate", "d2", int, "degenerate_d2")
        get("degenerate", "eps", _floats, "degenerate_eps")
        get("degenerate", "level", int, "degenerate_level")
        for key, name in (("csv", "csv_path"), ("json", "json_path")):
            if cp.has_option("output", key):
                p = Path(cp.get("output", key))
                kw[name] = str(p if p.is_absolute() or base is None else base / p)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_ini(path.read_text(), path.parent)


# -- records ------------------------------------------------------------------------

@dataclass
class SampleRecord:
    kind: str  # "kostlan" or "degenerate"
    degree: int
    index: int
    attempt: int
    seed: int
    stream: int
    eps: float | None = None
    status: str = "accepted"
    reason: str = ""
    genus: int | None = None
    genus_expected: int | None = None
    area: float | None = None
    area_expected: float | None = None
    branch_count: int | None = None
    branch_expected: int | None = None
    gauss_bonnet_error: float | None = None
    lambda1: float | None = None
    lambda1_unitarea: float | None = None
    h_upper: float | None = None
    h_upper_unitarea: float | None = None
    h_lower: float | None = None
    h_lower_unitarea: float | None = None
    cut_length: float | None = None
    eigen_index: int | None = None
    systole: float | None = None
    systole_unitarea: float | None = None
    systole_kind: str = ""
    curvature_min: float | None = None
    curvature_max: float | None = None
    n_vertices: int | None = None
    n_edges: int | None = None
    n_faces: int | None = None
    min_angle: float | None = None
    residual_max: float | None = None
    solver_iterations: int | None = None
    C: float | None = None
    a_d: float | None = None
    times: dict = field(default_factory=dict, compare=False)

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


COLUMNS = tuple(f.name for f in fields(SampleRecord) if f.name != "times")


def _expected_genus(d: int) -> int:
    return (d - 1) * (d - 2) // 2


def measure(P: HomogeneousPoly3, rec: SampleRecord, cfg: ExperimentConfig, level: int, rng: np.random.Generator) -> SampleRecord:
    """Fill ``rec`` by running the full pipeline on ``P``; raises on numerical failure."""
    d = P.degree
    tic = time.perf_counter()
    pencil, pts = random_pencil(P, rng)
    rec.branch_count = len(pts)
    rec.branch_expected = d * (d - 1)
    rec.times["pencil"] = time.perf_counter() - tic

    tic = time.perf_counter()
    mesh = lift_mesh(P, pencil, prepare_base(level, pts, make_fiber_system(P, pencil)), pts)
    chi, genus = euler_genus(mesh)
    rec.times["mesh"] = time.perf_counter() - tic
    K = curvature(mesh)
    rec.genus, rec.genus_expected = genus, _expected_genus(d)
    rec.area, rec.area_expected = total_area(mesh), d * math.pi
    rec.gauss_bonnet_error = abs(K.total() - 2 * math.pi * chi)
    rec.curvature_min, rec.curvature_max = K.inf, K.sup
    rec.n_vertices, rec.n_edges, rec.n_faces = mesh.n_vertices, mesh.n_edges, mesh.n_faces
    rec.min_angle = mesh.min_angle()

    tic = time.perf_counter()
    spec = spectrum(mesh, k=cfg.k, seed=rec.seed)
    rec.times["spectrum"] = time.perf_counter() - tic
    rec.lambda1 = float(spec.eigenvalues[1])
    rec.residual_max = float(spec.residuals.max())
    rec.solver_iterations = spec.iterations

    tic = time.perf_counter()
    est = estimate_cheeger(mesh, spec, K.inf, cfg.sweep_levels)
    rec.h_upper, rec.h_lower = est.h_upper, est.h_lower
    rec.cut_length, rec.eigen_index = est.cut.length, est.eigen_index
    rec.times["cheeger"] = time.perf_counter() - tic

    if cfg.compute_systole and genus > 0:
        tic = time.perf_counter()
        src = None
        if cfg.systole_sources and cfg.systole_sources < mesh.n_vertices:
            src = np.sort(rng.choice(mesh.n_vertices, cfg.systole_sources, replace=False))
        sy = systole(mesh, sources=src)
        rec.systole, rec.systole_kind = sy.length, sy.kind if src is None else sy.kind + "-sampled"
        rec.times["systole"] = time.perf_counter() - tic

    rec.lambda1_unitarea = UnitArea.to_unit_area(rec.lambda1, "lambda")
    rec.h_upper_unitarea = UnitArea.to_unit_area(rec.h_upper, "h")
    rec.h_lower_unitarea = UnitArea.to_unit_area(rec.h_lower, "h")
    rec.systole_unitarea = UnitArea.to_unit_area(rec.systole, "length")

    if rec.genus != rec.genus_expected:
        rec.status, rec.reason = "rejected", f"genus {rec.genus} != {rec.genus_expected}"
    elif rec.branch_count != rec.branch_expected:
        rec.status, rec.reason = "rejected", f"branch count {rec.branch_count} != {rec.branch_expected}"
    elif rec.gauss_bonnet_error > 1e-9:
        rec.status, rec.reason = "rejected", f"Gauss-Bonnet error {rec.gauss_bonnet_error:.3g}"
    return rec


def _kostlan_job(args) -> list[SampleRecord]:
    cfg, d, index = args
    out = []
    root = EnsembleSeed(cfg.seed)
    a = a_rule(cfg.a_rule, d)
    for attempt in range(cfg.max_attempts):
        key = root.child(d, index, attempt)
        rec = SampleRecord("kostlan", d, index, attempt, cfg.seed, key.stream, C=cfg.C, a_d=a)
        rng = key.child(1).generator()
        try:
            measure(sample_kostlan(d, key), rec, cfg, cfg.level, rng)
        except SAMPLE_FAILURES as exc:
            rec.status, rec.reason = "rejected", f"{type(exc).__name__}: {exc}"
        out.append(rec)
        if rec.accepted:
            break
    return out


def degenerate_polynomials(cfg: ExperimentConfig):
    """P1, P2, Q of the perturbed reducible family.

    For d1 = d2 = 1 this is X0 X1 + eps X2^2; otherwise the factors and the
    perturbation are Kostlan draws from the configured seed.
    """
    d1, d2 = cfg.degenerate_d1, cfg.degenerate_d2
    if d1 == 1 and d2 == 1:
        return (
            HomogeneousPoly3.monomial(1, 0, 0),
            HomogeneousPoly3.monomial(0, 1, 0),
            HomogeneousPoly3.monomial(0, 0, 2),
        )
    root = EnsembleSeed(cfg.seed)
    return (
        sample_kostlan(d1, root.child(1 << 20, 1)),
        sample_kostlan(d2, root.child(1 << 20, 2)),
        sample_kostlan(d1 + d2, root.child(1 << 20, 3)),
    )


def _degenerate_job(args) -> list[SampleRecord]:
    cfg, index = args
    eps = cfg.degenerate_eps[index]
    P1, P2, Q = degenerate_polynomials(cfg)
    P = degenerate_family(P1, P2, Q, eps)
    d = P.degree
    # the same pencil stream for every eps keeps the family comparable
    key = EnsembleSeed(cfg.seed).child(1 << 21)
    rec = SampleRecord("degenerate", d, index, 0, cfg.seed, key.stream, eps=eps, C=cfg.C, a_d=a_rule(cfg.a_rule, d) if d > 1 else None)
    try:
        measure(P, rec, cfg, cfg.degenerate_level, key.generator())
    except SAMPLE_FAILURES as exc:
        rec.status, rec.reason = "rejected", f"{type(exc).__name__}: {exc}"
    return [rec]


def run_experiment(cfg: ExperimentConfig) -> list[SampleRecord]:
    """All records, ordered by (kind, degree, index, attempt)."""
    jobs = [(_kostlan_job, (cfg, d, i)) for d in cfg.degrees for i in range(cfg.samples)]
    jobs += [(_degenerate_job, (cfg, i)) for i in range(len(cfg.degenerate_eps))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [pool.submit(fn, a) for fn, a in jobs]
            results = [f.result() for f in futures]
    else:
        results = [fn(a) for fn, a in jobs]
    return [r for batch in results for r in batch]


# -- summary ------------------------------------------------------------------------

def _quantiles(vals) -> dict | None:
    v = np.array([x for x in vals if x is not None], dtype=float)
    if v.size == 0:
        return None
    q = np.quantile(v, [0.0, 0.1, 0.5, 0.9, 1.0])
    return dict(zip(("min", "q10", "median", "q90", "max"), (float(x) for x in q)))


def _frequency(hits: int, n: int) -> dict:
    if n == 0:
        return {"count": 0, "n": 0, "fraction": None, "ci95": None}
    ci = binomtest(hits, n).proportion_ci(0.95)
    return {"count": hits, "n": n, "fraction": hits / n, "ci95": [float(ci.low), float(ci.high)]}


def summarize(records: list[SampleRecord], thresholds: dict[int, BoundReport] | None = None) -> dict:
    """Per-degree frequency table of the Kostlan records; degenerate records listed apart.

    Frequencies use unit-area normalization for lambda1 and h.
    """
    if not records:
        raise DomainError("no records to summarize")
    thresholds = thresholds or {}
    table = {}
    for d in sorted({r.degree for r in records if r.kind == "kostlan"}):
        rs = [r for r in records if r.kind == "kostlan" and r.degree == d]
        acc = [r for r in rs if r.accepted]
        row = {
            "requested": len({r.index for r in rs}),
            "attempts": len(rs),
            "accepted": len(acc),
            "rejected": len(rs) - len(acc),
            "rejection_reasons": sorted({r.reason for r in rs if not r.accepted}),
            "lambda1_ge_d^-10": _frequency(sum(r.lambda1_unitarea >= d**-10.0 for r in acc), len(acc)),
            "h_lower_ge_d^-5": _frequency(sum(r.h_lower_unitarea >= d**-5.0 for r in acc), len(acc)),
            "lambda1_le_6": _frequency(sum(r.lambda1_unitarea <= 6.0 for r in acc), len(acc)),
            "bracket_ok": _frequency(sum(r.h_lower <= r.h_upper for r in acc), len(acc)),
            "h_upper": _quantiles(r.h_upper_unitarea for r in acc),
            "h_lower": _quantiles(r.h_lower_unitarea for r in acc),
            "lambda1": _quantiles(r.lambda1_unitarea for r in acc),
            "systole": _quantiles(r.systole_unitarea for r in acc),
        }
        b = thresholds.get(d)
        if b is not None:
            row["bounds"] = asdict(b)
            row["h_lower_ge_h_threshold"] = _frequency(sum(r.h_lower_unitarea >= b.h_threshold for r in acc), len(acc))
            row["lambda1_ge_lambda_threshold"] = _frequency(sum(r.lambda1_unitarea >= b.lambda_threshold for r in acc), len(acc))
            with_sys = [r for r in acc if r.systole_unitarea is not None]
            row["systole_ge_threshold"] = _frequency(sum(r.systole_unitarea >= b.systole_threshold for r in with_sys), len(with_sys))
        table[str(d)] = row
    degenerate = [
        {
            **{k: getattr(r, k) for k in ("eps", "status", "reason", "h_upper_unitarea", "h_lower_unitarea", "lambda1_unitarea")},
            "cut_length_unitarea": UnitArea.to_unit_area(r.cut_length, "length"),
        }
        for r in records
        if r.kind == "degenerate"
    ]
    return {"units": "unit-area lines", "degrees": table, "degenerate": degenerate}


def thresholds_for(cfg: ExperimentConfig) -> dict[int, BoundReport]:
    return {d: bound_calculator(d, a_rule(cfg.a_rule, d), cfg.C, cfg.n) for d in cfg.degrees if d >= 2}


# -- output -------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def records_csv(records: list[SampleRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def dumps_json(obj, indent: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(dumps_json(v, indent + 1) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        t = f"{x:.17g}"
        return t if any(c in t for c in ".en") else t + ".0"
    return json.dumps(str(obj))


def write_outputs(cfg: ExperimentConfig, records: list[SampleRecord]) -> dict:
    summary = summarize(records, thresholds_for(cfg))
    summary["config"] = asdict(cfg)
    summary["buser_convention"] = "lambda1 <= 2*a*h + 10*h^2"
    Path(cfg.csv_path).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.csv_path).write_text(records_csv(records))
    Path(cfg.json_path).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.json_path).write_text(dumps_json(summary) + "\n")
    return summary
