"""Command line driver: identity checks, single solves, lambda sweeps,
ground states and spectra.

Configuration is a flat TOML file; every key can be overridden by an
environment variable ``ANNULUS_<KEY>`` (value parsed as a TOML literal,
falling back to a plain string).  Exit codes: 0 success, 1 a check or
solve failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import asymptotics, coords, nehari, spectral
from .disc import Field, Grid, LiftedGrid
from .params import ConvergenceError, DegenerateError, ParameterError, ProblemParams

log = logging.getLogger("annulus_reduction")

ENV_PREFIX = "ANNULUS_"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    m: int = 2
    a: float = 1.0
    b: float = 2.0
    p: float = 3.0
    lam: float = 100.0
    n_rho: int = 256
    n_phi: int = 128
    tol: float = 1e-8
    max_iter: int = 50_000
    max_newton: int = 40
    outer_init: bool = False
    kind: str = "positive"
    lams: tuple = (50.0, 100.0, 200.0, 400.0, 800.0)
    k_max: int = 12
    n_eigs: int = 6
    mc_samples: int = 0
    gs_N: int = 0
    verify_coarse: tuple = (65, 33)
    seed: int = 0
    workers: int = 1
    out: str = "runs"

    def __post_init__(self):
        for key in ("tol",):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.max_iter < 1 or self.max_newton < 0 or self.k_max < 1 or self.n_eigs < 1:
            raise ConfigError("iteration caps and counts must be positive")
        if self.kind not in ("positive", "nodal"):
            raise ConfigError(f"kind must be 'positive' or 'nodal', got {self.kind!r}")
        lams = list(self.lams)
        if not lams or any(b <= a for a, b in zip(lams, lams[1:])):
            raise ConfigError("lams must be a non-empty, strictly increasing list")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.params
            for lam in lams:
                self.params.with_lambda(lam)
            Grid.for_params(self.params, self.n_rho, self.n_phi)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.m, self.a, self.b, self.p, self.lam)

    def grid(self, params=None) -> Grid:
        return Grid.for_params(params or self.params, self.n_rho, self.n_phi)

    def solver_options(self) -> nehari.SolverOptions:
        return nehari.SolverOptions(tol=self.tol, max_iter=self.max_iter, max_newton=self.max_newton,
                                    outer_init=self.outer_init)

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d["lams"] = list(self.lams)
        d["verify_coarse"] = list(self.verify_coarse)
        return d

    def fingerprint(self) -> str:
        """Hash of everything that affects numerical results of a sweep row."""
        keys = ("m", "a", "b", "p", "n_rho", "n_phi", "tol", "max_iter", "max_newton", "outer_init", "k_max")
        blob = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key, value):
    kind = type(getattr(RunConfig, key)) if key in _FIELDS else None
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(float(x) if key == "lams" else int(x) for x in value)
    if kind is bool:
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if kind is float:
        return float(value)
    return str(value)


def _parse_env_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    """Read a flat TOML config, then apply ``ANNULUS_*`` variables and CLI overrides.

    ``epsilon`` is accepted in place of ``lam`` and converted to
    ``lam = 1 / epsilon^2``.
    """
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    env = os.environ if env is None else env
    for name, text in env.items():
        if name.startswith(ENV_PREFIX):
            raw[name[len(ENV_PREFIX):].lower()] = _parse_env_value(text)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "epsilon" in raw:
        eps = raw.pop("epsilon")
        if not isinstance(eps, (int, float)) or not eps > 0:
            raise ConfigError("epsilon must be a positive number")
        raw["lam"] = 1.0 / float(eps) ** 2
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        values = {k: _coerce(k, v) for k, v in raw.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(**values)


# ---------------------------------------------------------------- persistence

def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj):
    _atomic_write(Path(path), (json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n").encode())


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if dataclasses.is_dataclass(x):
        return dataclasses.asdict(x)
    raise TypeError(f"cannot serialize {type(x)}")


def _grid_meta(grid):
    if isinstance(grid, LiftedGrid):
        base = grid.base
        return {"kind": "lifted", "R1": base.R1, "R2": base.R2, "N": base.N, "n_rho": base.n_rho,
                "n_phi": base.n_phi, "coords": "r = sqrt(2 rho), theta = phi / 2"}
    return {"kind": "reduced", "R1": grid.R1, "R2": grid.R2, "N": grid.N, "n_rho": grid.n_rho,
            "n_phi": grid.n_phi, "coords": "rho uniform on [R1, R2], phi uniform on [0, pi]"}


def _sibling(stem: Path, suffix: str) -> Path:
    # not with_suffix: stems such as "positive_lam0.5" contain dots
    return stem.parent / (stem.name + suffix)


def write_field(stem: Path, field: Field, extra=None):
    """``stem.bin`` (little-endian float64, row-major, rho index slowest) plus ``stem.json``."""
    stem = Path(stem)
    _atomic_write(_sibling(stem, ".bin"), np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    meta = {"dtype": "<f8", "order": "C", "shape": list(field.values.shape), "grid": _grid_meta(field.grid)}
    meta.update(extra or {})
    write_json(_sibling(stem, ".json"), meta)


def read_field(stem: Path) -> Field:
    stem = Path(stem)
    meta = json.loads(_sibling(stem, ".json").read_text())
    g = meta["grid"]
    grid = Grid(g["R1"], g["R2"], g["N"], g["n_rho"], g["n_phi"])
    if g["kind"] == "lifted":
        grid = LiftedGrid(grid)
    values = np.frombuffer(_sibling(stem, ".bin").read_bytes(), dtype="<f8").reshape(meta["shape"])
    return Field(grid, values.copy())


def _version_tag():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        commit = out.stdout.strip() if out.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        commit = "unknown"
    return {"version": __version__, "commit": commit}


# ------------------------------------------------------- reduction identity

def manufactured_fields():
    """``(name, u(r, theta) as sympy expression, exact_polynomial)`` test cases."""
    import sympy as sym

    r, t = sym.symbols("r theta", positive=True)
    return (r, t), [
        ("r^2", r**2, True),
        ("r^2 cos(2 theta)", r**2 * sym.cos(2 * t), True),
        ("sin(r^2/2) cos(2 theta)", sym.sin(r**2 / 2) * sym.cos(2 * t), False),
        ("exp(r^2 cos(2 theta)/4)", sym.exp(r**2 * sym.cos(2 * t) / 4), False),
        ("cos(r^2/2) cos^2(2 theta)", sym.cos(r**2 / 2) * sym.cos(2 * t) ** 2, False),
    ]


def c4_scale(expr, symbols, grid: Grid, samples=41) -> float:
    """Largest derivative of order <= 4 of ``u(r, theta)`` and of ``v(rho, phi)`` on the annulus."""
    import sympy as sym

    r, t = symbols
    rho, phi = sym.symbols("rho phi", positive=True)
    v = expr.subs({r: sym.sqrt(2 * rho), t: phi / 2})
    rr = np.linspace(math.sqrt(2 * grid.R1), math.sqrt(2 * grid.R2), samples)
    tt = np.linspace(0.0, math.pi / 2, samples)
    big = 1.0
    for e, (x, y), (xs, ys) in ((expr, (r, t), (rr, tt)), (v, (rho, phi), (rr**2 / 2, 2 * tt))):
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        for i in range(5):
            for j in range(5 - i):
                d = sym.diff(e, x, i, y, j)
                vals = np.broadcast_to(sym.lambdify((x, y), d, "numpy")(X, Y), X.shape)
                big = max(big, float(np.abs(vals).max()))
    return big


def _corrupted(theta):
    return theta * 1.01


def identity_suite(fine: Grid, coarse: Grid, corrupt=False):
    """Reduction identity on the manufactured fields at two resolutions.

    With ``corrupt`` the downstairs field is sampled through a deliberately
    wrong angular map (negative control).
    """
    import sympy as sym

    symbols, cases = manufactured_fields()
    results = []
    for name, expr, exact in cases:
        f = sym.lambdify(symbols, expr, "numpy")
        defects = []
        for grid in (coarse, fine):
            lifted = LiftedGrid(grid)
            u = coords.sample_upstairs(f, lifted)
            if corrupt:
                v = coords.sample_reduced(lambda rho, phi: f(np.sqrt(2 * rho), _corrupted(phi / 2)), grid)
            else:
                v = coords.reduce_field(u)
            up = coords.assemble_upstairs_laplacian(lifted).apply(u).values
            down = coords.assemble_axisym_laplacian(grid).apply(v).values
            defects.append(float(np.abs((up - 2 * grid.rho2d * down)[grid.interior]).max()))
        h = fine.h
        scale = c4_scale(expr, symbols, fine)
        # polynomial defects are round-off, so an observed order means nothing there
        if exact:
            order = None
        else:
            order = math.log2(defects[0] / defects[1]) if min(defects) > 0 else float("inf")
        if exact:
            ok = max(defects) <= 1e-10
        else:
            ok = defects[1] <= 10 * h**2 * scale and order >= 1.9
        results.append({"field": name, "defect_coarse": defects[0], "defect_fine": defects[1], "h": h,
                        "c4_scale": scale, "bound": 1e-10 if exact else 10 * h**2 * scale,
                        "order": order, "polynomial": exact, "pass": bool(ok)})
    return results


def round_trip_check(grid: Grid, seed=0):
    rng = np.random.default_rng(seed)
    v = Field(grid, rng.standard_normal(grid.shape))
    back = coords.reduce_field(coords.lift_field(v))
    return bool(np.array_equal(back.values, v.values))


def lifted_residual_check(cfg: RunConfig):
    """Solve the reduced problem, lift, and compare upstairs and downstairs residuals."""
    params, grid = cfg.params, cfg.grid()
    out = nehari.solve_positive(params, grid, opts=cfg.solver_options())
    u = coords.lift_field(out.field)
    down = coords.reduced_residual(out.field, params.lam, params.p)
    up = coords.upstairs_residual(u, params.lam, params.p)
    direct = coords.upstairs_residual(u, params.lam, params.p, transported=False)
    return {"downstairs_residual": down, "upstairs_residual": up, "upstairs_residual_direct_stencil": direct,
            "ratio": up / down, "pass": bool(up <= 5 * down)}


def cmd_verify_reduction(cfg: RunConfig, corrupt=False, solve=True) -> int:
    coarse = Grid.for_params(cfg.params, *cfg.verify_coarse)
    fine = coarse.refined()
    t0 = time.perf_counter()
    report = {"identity": identity_suite(fine, coarse, corrupt=corrupt),
              "round_trip_bitwise": round_trip_check(fine, cfg.seed)}
    if solve:
        report["lifted_solution"] = lifted_residual_check(cfg)
    ok = all(r["pass"] for r in report["identity"]) and report["round_trip_bitwise"]
    ok = ok and (not solve or report["lifted_solution"]["pass"])
    for r in report["identity"]:
        print(f"{'PASS' if r['pass'] else 'FAIL'} identity {r['field']}: defect {r['defect_fine']:.3e} "
              f"(bound {r['bound']:.3e}" + (f", order {r['order']:.2f})" if r["order"] is not None else ")"))
    print(f"{'PASS' if report['round_trip_bitwise'] else 'FAIL'} lift/reduce round trip bitwise")
    if solve:
        s = report["lifted_solution"]
        print(f"{'PASS' if s['pass'] else 'FAIL'} lifted solution residual {s['upstairs_residual']:.3e} "
              f"vs downstairs {s['downstairs_residual']:.3e}")
    report.update(config=cfg.snapshot(), timing_s=time.perf_counter() - t0, passed=ok, **_version_tag())
    write_json(Path(cfg.out) / "verify_reduction.json", report)
    return EXIT_OK if ok else EXIT_FAIL


# ----------------------------------------------------------------- solving

def nodal_summary(v: Field, params: ProblemParams):
    pos = v.with_values(np.maximum(v.values, 0.0))
    neg = v.with_values(np.minimum(v.values, 0.0))
    return {
        "nehari_defect_plus": nehari.nehari_functional(v, params, pos),
        "nehari_defect_minus": nehari.nehari_functional(v, params, neg),
        "nodal_regions": nehari.nodal_regions(v),
        "energy_plus": nehari.energy(pos, params).total,
        "energy_minus": nehari.energy(neg, params).total,
    }


def _peak_dict(pk):
    return dataclasses.asdict(pk)


def cmd_solve(cfg: RunConfig, kind=None) -> int:
    kind = kind or cfg.kind
    params, grid = cfg.params, cfg.grid()
    solver = nehari.solve_positive if kind == "positive" else nehari.solve_nodal
    t0 = time.perf_counter()
    try:
        out = solver(params, grid, opts=cfg.solver_options())
    except ConvergenceError as exc:
        out = exc.outcome
    elapsed = time.perf_counter() - t0
    v = out.field
    u = coords.lift_field(v)
    result = {
        "kind": kind,
        "converged": out.converged,
        "residual_norm": out.residual_norm,
        "iterations": out.iterations,
        "newton_iterations": out.newton_iterations,
        "energy": dataclasses.asdict(out.energy),
        "upstairs_residual": coords.upstairs_residual(u, params.lam, params.p),
        "upstairs_residual_direct_stencil": coords.upstairs_residual(u, params.lam, params.p, transported=False),
    }
    if out.converged:
        mi = spectral.morse_index(v, params)
        result["morse_index"] = mi.index
        result["morse_uncertain"] = mi.uncertain
        peaks = asymptotics.peak_diagnostics(v, params)
        if kind == "nodal":
            if isinstance(peaks, tuple):
                result["peak_plus"], result["peak_minus"] = _peak_dict(peaks[0]), _peak_dict(peaks[1])
                result["lifted_peak_separation"] = asymptotics.lifted_separation(*peaks)
            result.update(nodal_summary(v, params))
        else:
            result["peak"] = _peak_dict(peaks)
    outdir = Path(cfg.out)
    stem = f"{kind}_lam{params.lam:g}"
    write_field(outdir / f"{stem}_reduced", v, {"lam": params.lam})
    write_field(outdir / f"{stem}_lifted", u, {"lam": params.lam})
    result.update(config=cfg.snapshot(), timing_s=elapsed, **_version_tag())
    write_json(outdir / f"{stem}.json", result)
    line = f"{kind} lam={params.lam:g}: J={out.energy.total:.10g} residual={out.residual_norm:.3e}"
    if "morse_index" in result:
        line += f" morse_index={result['morse_index']}"
    print(line)
    return EXIT_OK if out.converged else EXIT_FAIL


# ------------------------------------------------------------------ sweeps

CSV_COLUMNS = [
    ("lam", "linear coefficient lambda (dimensionless)"),
    ("energy", "J_lam(v_lam) (dimensionless)"),
    ("energy_ratio", "J_lam / (lam^(2/(p-1)+1-N/2) (2 R1)^(N/2-1) I(z)) (dimensionless)"),
    ("peak_radius", "|P_lam| (domain units)"),
    ("gap", "|P_lam| - R1 (domain units)"),
    ("scaled_distance", "sqrt(lam) d(P_lam, boundary) (dimensionless)"),
    ("on_axis", "1 if the peak lies on the symmetry axis"),
    ("sup_outside", "max |v_lam| at distance > 0.3 from (R1, phi=0) (dimensionless)"),
    ("mu1", "first doubly-radial eigenvalue of the upstairs linearization (dimensionless)"),
    ("mu1_bound", "(1 - p) lam (dimensionless)"),
    ("phi_negative", "#{k <= k_max : Q(Phi^k) < 0}"),
    ("morse_index", "negative eigenvalues of L_v among axially symmetric functions"),
    ("residual", "weighted L2 residual of the reduced equation (dimensionless)"),
    ("converged", "1 if the solver met its tolerance"),
]


def analyze_point(cfg: RunConfig, lam: float, gs=None):
    """Solve at one lambda and collect every per-row diagnostic."""
    gs = gs or asymptotics.ground_state_shoot(cfg.m + 1, cfg.p)
    params = cfg.params.with_lambda(lam)
    grid = cfg.grid(params)
    t0 = time.perf_counter()
    try:
        out = nehari.solve_positive(params, grid, opts=cfg.solver_options())
    except ConvergenceError as exc:
        out = exc.outcome
    v = out.field
    pk = asymptotics.peak_diagnostics(v, params)
    mu1, g1 = spectral.first_symmetric_eigenpair(v, params)
    reports = [spectral.quadratic_form_phi_k(g1, v, params, k) for k in range(1, cfg.k_max + 1)]
    mi = spectral.morse_index(v, params)
    row = asymptotics.SweepRow(
        lam=float(lam),
        energy=out.energy.total,
        energy_ratio=asymptotics.energy_ratio(out.energy.total, params, gs),
        peak_radius=pk.peak_radius,
        gap=pk.peak_radius - grid.R1,
        scaled_distance=pk.scaled_distance,
        on_axis=pk.on_axis,
        sup_outside=asymptotics.sup_outside(v, grid.R1),
        mu1=mu1,
        mu1_bound=(1 - params.p) * lam,
        phi_negative=spectral.morse_lower_bound_upstairs(reports),
        morse_index=mi.index,
        residual=out.residual_norm,
        converged=out.converged,
    )
    extra = {"Q0": reports[0].Q0, "Q_ang": reports[0].Q_ang, "peak_node": list(pk.peak_node),
             "morse_uncertain": mi.uncertain, "timing_s": time.perf_counter() - t0}
    return row, v, extra


def _row_path(outdir: Path, lam):
    return outdir / "rows" / f"lam_{lam:g}.json"


def _sweep_worker(args):
    cfg, lam = args
    logging.basicConfig(level=logging.WARNING)
    outdir = Path(cfg.out)
    try:
        row, v, extra = analyze_point(cfg, lam)
    except (ConvergenceError, DegenerateError, ParameterError, ValueError, RuntimeError) as exc:
        write_json(_row_path(outdir, lam), {"fingerprint": cfg.fingerprint(), "failed": str(exc), "lam": lam})
        return lam, None
    write_field(outdir / "fields" / f"positive_lam{lam:g}", v, {"lam": lam})
    write_json(_row_path(outdir, lam), {"fingerprint": cfg.fingerprint(), "row": dataclasses.asdict(row),
                                        "extra": extra})
    return lam, row


def _load_row(cfg, lam):
    path = _row_path(Path(cfg.out), lam)
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError:
        return None
    if data.get("fingerprint") != cfg.fingerprint() or "row" not in data:
        return None
    return asymptotics.SweepRow(**data["row"])


def _fmt(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def sweep_csv(rows, cfg: RunConfig) -> str:
    lines = ["# annulus_reduction sweep", f"# m={cfg.m} a={cfg.a:g} b={cfg.b:g} p={cfg.p:g} "
             f"grid={cfg.n_rho}x{cfg.n_phi} k_max={cfg.k_max}"]
    lines += [f"# {name}: {desc}" for name, desc in CSV_COLUMNS]
    lines.append(",".join(name for name, _ in CSV_COLUMNS))
    for row in rows:
        d = dataclasses.asdict(row)
        lines.append(",".join(_fmt(d[name]) for name, _ in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: RunConfig) -> int:
    outdir = Path(cfg.out)
    t0 = time.perf_counter()
    done = {lam: _load_row(cfg, lam) for lam in cfg.lams}
    todo = [lam for lam, row in done.items() if row is None]
    if todo:
        log.info("sweep: %d of %d points to compute (%d reused)", len(todo), len(cfg.lams), len(cfg.lams) - len(todo))
    jobs = [(cfg, lam) for lam in todo]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(job) for job in jobs]
    done.update(dict(results))
    rows = [done[lam] for lam in cfg.lams if done[lam] is not None]
    failed = [lam for lam in cfg.lams if done[lam] is None]
    report = asymptotics.concentration_report(rows)
    _atomic_write(outdir / "sweep.csv", sweep_csv(rows, cfg).encode())
    write_json(outdir / "sweep.json", {"flags": report.flags, "failed_lams": failed, "config": cfg.snapshot(),
                                       "timing_s": time.perf_counter() - t0, **_version_tag()})
    for name, flag in report.flags.items():
        print(f"{flag.upper():4s} {name}")
    ok = not failed and all(f in ("pass", "n/a") for f in report.flags.values())
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------ ground state / spectrum

def cmd_ground_state(cfg: RunConfig) -> int:
    N = cfg.gs_N or cfg.m + 1
    gs = asymptotics.ground_state_shoot(N, cfg.p)
    outdir = Path(cfg.out)
    lines = [f"# ground state N={N} p={cfg.p:g}", "# s: radius", "# z: profile value", "s,z"]
    lines += [f"{s:.12g},{z:.12g}" for s, z in zip(gs.s, gs.profile)]
    _atomic_write(outdir / f"ground_state_N{N}.csv", ("\n".join(lines) + "\n").encode())
    write_json(outdir / f"ground_state_N{N}.json", {"N": N, "p": cfg.p, "z0": gs.z0, "I": gs.I,
                                                   "s_max": float(gs.s[-1]), **_version_tag()})
    print(f"N={N} p={cfg.p:g}: z(0)={gs.z0:.12g} I(z)={gs.I:.12g}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig) -> int:
    params, grid = cfg.params, cfg.grid()
    try:
        out = nehari.solve_positive(params, grid, opts=cfg.solver_options())
    except ConvergenceError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    v = out.field
    spec = spectral.eigs_smallest(spectral.linearized_operator(v, params), cfg.n_eigs)
    mu1, g1 = spectral.first_symmetric_eigenpair(v, params)
    reports = [spectral.quadratic_form_phi_k(g1, v, params, k) for k in range(1, cfg.k_max + 1)]
    result = {
        "lam": params.lam,
        "eigenvalues": [float(x) for x in spec.eigenvalues],
        "residuals": [float(x) for x in spec.residuals],
        "count_negative": spec.count_negative,
        "mu1": mu1,
        "mu1_bound": (1 - params.p) * params.lam,
        "phi_k": [dataclasses.asdict(r) for r in reports],
        "phi_negative": spectral.morse_lower_bound_upstairs(reports),
        "collinearity_defect": spectral.collinearity_defect(reports),
    }
    if cfg.mc_samples > 0 and params.m == 2:
        est, err = spectral.monte_carlo_q(g1, v, params, 1, cfg.mc_samples, seed=cfg.seed)
        result["monte_carlo_Q1"] = {"estimate": est, "std_error": err, "samples": cfg.mc_samples,
                                    "relative_difference": abs(est - reports[0].Q_value) / abs(reports[0].Q_value)}
    outdir = Path(cfg.out)
    write_json(outdir / f"spectrum_lam{params.lam:g}.json", {**result, "config": cfg.snapshot(), **_version_tag()})
    lines = ["# Q(Phi^k) = Q0 + nu_k Q_ang", "k,nu_k,Q,Q0,Q_ang"]
    lines += [f"{r.k},{_fmt(r.nu_k)},{_fmt(r.Q_value)},{_fmt(r.Q0)},{_fmt(r.Q_ang)}" for r in reports]
    _atomic_write(outdir / f"phi_k_lam{params.lam:g}.csv", ("\n".join(lines) + "\n").encode())
    print(f"lam={params.lam:g}: eigenvalues {', '.join(f'{x:.6g}' for x in spec.eigenvalues)}")
    print(f"mu1={mu1:.10g} (bound {(1 - params.p) * params.lam:g}), "
          f"negative Q(Phi^k) for {result['phi_negative']} of k=1..{cfg.k_max}")
    return EXIT_OK


# ----------------------------------------------------------------- main

def build_parser():
    ap = argparse.ArgumentParser(prog="annulus-reduction", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="flat TOML config file")
        p.add_argument("--out", help="output directory (default: runs)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--workers", type=int, help="worker processes for sweeps")
        return p

    vr = common(sub.add_parser("verify-reduction", help="check the Laplacian identity and the lifting"))
    vr.add_argument("--no-solve", action="store_true", help="skip the lifted-solution residual check")
    vr.add_argument("--corrupt-transform", action="store_true", help=argparse.SUPPRESS)
    sv = common(sub.add_parser("solve", help="least-energy positive or nodal solution at one lambda"))
    sv.add_argument("--kind", choices=("positive", "nodal"))
    common(sub.add_parser("sweep", help="positive solutions and diagnostics over a lambda list"))
    common(sub.add_parser("ground-state", help="shoot the ground state of -Lap z + z = z^p"))
    common(sub.add_parser("spectrum", help="low spectrum and Phi^k quadratic forms at one lambda"))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"out": args.out, "seed": args.seed, "workers": args.workers}
    try:
        cfg = load_config(args.config, overrides=overrides)
    except ConfigError as exc:
        print(f"{ap.prog}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "verify-reduction":
        return cmd_verify_reduction(cfg, corrupt=args.corrupt_transform, solve=not args.no_solve)
    if args.command == "solve":
        return cmd_solve(cfg, args.kind)
    if args.command == "sweep":
        return cmd_sweep(cfg)
    if args.command == "ground-state":
        return cmd_ground_state(cfg)
    return cmd_spectrum(cfg)


if __name__ == "__main__":
    sys.exit(main())
