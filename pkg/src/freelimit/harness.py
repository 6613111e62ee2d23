"""Convergence experiments for infinitesimal arrays, and the command line.

For every row ``n`` of an array the runner builds the free and classical
row convolutions, the generator data ``(sigma_n, gamma_n)`` and several
finite-``n`` diagnostics, and compares them to the limit laws of a
generator pair.  One row failing does not stop the others.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import laws
from .arrays import Row, TriangularArray, build_array, centering, condition3, f_nk, lemma31_check
from .classical import classical_convolve_many
from .errors import DegenerateResidual, NumericalError
from .freeconv import free_convolve_many, phi_additivity_check
from .generators import GeneratorPair, load_pair, materialize_classical, materialize_free
from .measure import GridSpec, Measure, distance, levy_distance, load_measure, save_measure, tail_mass
from .transform import cauchy, f_transform, prop23_residual, voiculescu

CSV_COLUMNS = ("n", "free_dist", "classical_dist", "sigma_dist", "gamma_err", "max_a", "max_tail",
               "max_v", "lemma31_viol1", "lemma31_viol2", "lemma32_gap")
DEFAULT_PROBES = (2.0, 5.0, 10.0, 100.0)
LEMMA31_SLACK = 1e-9


def _law(spec) -> Measure:
    """A measure from a JSON value: a measure dict, a ``{"law", "params"}`` dict or a file path."""
    if isinstance(spec, str):
        return load_measure(spec)
    if "law" in spec:
        return laws.named(spec["law"], **spec.get("params", {}))
    return Measure.from_dict(spec)


@dataclass
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    rows: list = field(default_factory=lambda: [4, 16, 64, 256])
    gamma: float = 0.0
    sigma: Measure = field(default_factory=Measure.finite)
    grid: GridSpec | None = None
    metric: str = "levy"
    probes: tuple = DEFAULT_PROBES
    tail_eps: float = 0.1
    reference: dict = field(default_factory=dict)
    out_csv: str | None = None
    phi_additivity: dict | None = None

    def __post_init__(self):
        if not self.rows:
            raise ValueError("row list must be nonempty")
        if self.metric not in ("levy", "kolmogorov"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if not self.probes or min(self.probes) <= 0:
            raise ValueError("probe heights must be positive")

    @property
    def limit(self) -> GeneratorPair:
        return GeneratorPair(self.gamma, self.sigma)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ExperimentConfig":
        arr = data["array"]
        params = dict(arr.get("params", {}))
        if base is not None and "path" in params:
            params["path"] = str(base / params["path"])
        lim = data.get("limit", {})
        sigma = lim.get("sigma", {})
        if isinstance(sigma, str):
            sigma = load_pair(base / sigma if base else sigma).sigma.to_dict()
        grid = data.get("grid")
        return cls(
            kind=arr["kind"],
            params=params,
            rows=[int(n) for n in arr.get("rows", [4, 16, 64, 256])],
            gamma=float(lim.get("gamma", 0.0)),
            sigma=Measure.from_dict(sigma, normalize=False),
            grid=None if grid is None else GridSpec(float(grid["lo"]), float(grid["hi"]), int(grid.get("n_points", 2048))),
            metric=data.get("metric", "levy"),
            probes=tuple(float(y) for y in data.get("probes", DEFAULT_PROBES)),
            tail_eps=float(data.get("tail_eps", 0.1)),
            reference=dict(data.get("reference", {})),
            out_csv=data.get("out_csv"),
            phi_additivity=data.get("phi_additivity"),
        )

    def build(self) -> TriangularArray:
        return build_array(self.kind, self.params, rows=self.rows)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return ExperimentConfig.from_dict(json.loads(path.read_text()), base=path.parent)


@dataclass
class RowReport:
    n: int
    free_dist: float = math.nan
    classical_dist: float = math.nan
    sigma_dist: float = math.nan
    gamma_err: float = math.nan
    max_a: float = math.nan
    max_tail: float = math.nan
    max_v: float = math.nan
    lemma31_viol1: float = math.nan
    lemma31_viol2: float = math.nan
    lemma32_gap: float = math.nan
    errors: list = field(default_factory=list)
    sigma_n: Measure | None = None
    gamma_n: float = math.nan
    # per probe height: residual max, cross-check gap and sum |Im f|
    profile: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    rows: list
    metric: str = "levy"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def errors(self) -> dict:
        return {r.n: r.errors for r in self.rows if r.errors}

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.n] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


class _Limits:
    """Limit laws of an experiment, built once and shared by all rows."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._free = self._classical = None
        self._errors: dict[str, Exception] = {}

    def _get(self, side: str):
        if side in self._errors:
            raise self._errors[side]
        cached = getattr(self, "_" + side)
        if cached is not None:
            return cached
        try:
            if side in self.cfg.reference:
                m = _law(self.cfg.reference[side])
            elif side == "free":
                m = materialize_free(self.cfg.limit, self.cfg.grid)
            else:
                m = materialize_classical(self.cfg.limit, self.cfg.grid)
        except Exception as exc:  # noqa: BLE001 - recorded per row
            self._errors[side] = exc
            raise
        setattr(self, "_" + side, m)
        return m

    @property
    def free(self) -> Measure:
        return self._get("free")

    @property
    def classical(self) -> Measure:
        return self._get("classical")


def _step(rep: RowReport, name: str, fn):
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001 - isolation is the point
        rep.errors.append(f"{name}: {type(exc).__name__}: {exc}")
        return None


def _residual(m: Measure, w: complex) -> float:
    try:
        return abs(prop23_residual(m, w))
    except DegenerateResidual:
        # both sides vanish (point mass at zero): nothing to compare
        return 0.0


def _diagnostics(row: Row, probes, rep: RowReport):
    cent = centering(row)
    terms: dict[bytes, list] = {}
    for m, ak, mb in zip(row.measures, cent.a, cent.centered):
        terms.setdefault(m.key(), [m, ak, mb, 0])[3] += 1
    vmax = 0.0
    for y in probes:
        w = 1j * y
        v = max(_residual(mb, w) for _, _, mb, _ in terms.values())
        phi_sum = sum(k * voiculescu(m, w) for m, _, _, k in terms.values())
        f_sum = sum(k * (ak + f_nk(mb, w)) for _, ak, mb, k in terms.values())
        im_sum = sum(k * abs(f_nk(mb, w).imag) for _, _, mb, k in terms.values())
        rep.profile[y] = {"max_v": v, "gap": abs(phi_sum - f_sum), "im_f": im_sum}
        vmax = max(vmax, v)
    rep.max_v = vmax
    rep.lemma32_gap = max(p["gap"] for p in rep.profile.values())


def _lemma31(row: Row, probes, rep: RowReport):
    v1, v2 = 0.0, 0.0
    for y in probes:
        if y < 1:
            continue
        a, b = lemma31_check(row, y)
        v1 = max(v1, a)
        v2 = math.nan if b is None or math.isnan(v2) else max(v2, b)
    rep.lemma31_viol1, rep.lemma31_viol2 = v1, v2


def run_row(cfg: ExperimentConfig, arr: TriangularArray, row: Row, limits: _Limits) -> RowReport:
    rep = RowReport(row.n)
    metric = cfg.metric

    nu = _step(rep, "free_convolve_many", lambda: free_convolve_many(row.measures, row.c, cfg.grid))
    if nu is not None:
        d = _step(rep, "materialize_free", lambda: distance(nu, limits.free, metric))
        rep.free_dist = math.nan if d is None else d
    mu = _step(rep, "classical_convolve_many", lambda: classical_convolve_many(row.measures, row.c, cfg.grid))
    if mu is not None:
        d = _step(rep, "materialize_classical", lambda: distance(mu, limits.classical, metric))
        rep.classical_dist = math.nan if d is None else d
    data = _step(rep, "condition3", lambda: condition3(arr, row.n))
    if data is not None:
        rep.sigma_n, rep.gamma_n = data.sigma_n, data.gamma_n
        rep.sigma_dist = levy_distance(data.sigma_n, cfg.sigma)
        rep.gamma_err = abs(data.gamma_n - cfg.gamma)
    cent = _step(rep, "centering", lambda: centering(row))
    if cent is not None:
        rep.max_a = max(abs(a) for a in cent.a)
    rep.max_tail = max(tail_mass(m, cfg.tail_eps) for m, _ in row.distinct())
    _step(rep, "prop23_residual", lambda: _diagnostics(row, cfg.probes, rep))
    _step(rep, "lemma31_check", lambda: _lemma31(row, cfg.probes, rep))
    return rep


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    """Run every row of ``cfg``; rows may run concurrently, the report order is fixed."""
    arr = cfg.build()
    limits = _Limits(cfg)
    if threads > 1:
        # build the shared limit laws before fanning out
        for side in ("free", "classical"):
            try:
                limits._get(side)
            except Exception:  # noqa: BLE001 - recorded by each row
                pass
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda r: run_row(cfg, arr, r, limits), arr.rows))
    else:
        reps = [run_row(cfg, arr, r, limits) for r in arr.rows]
    return ConvergenceReport(reps, cfg.metric)


# ---------------------------------------------------------------- checks

def check_lemma31(cfg: ExperimentConfig) -> dict:
    arr = cfg.build()
    out = {"rows": {}, "max_viol1": 0.0, "max_viol2": 0.0}
    for row in arr.rows:
        rep = RowReport(row.n)
        _lemma31(row, [y for y in cfg.probes if y >= 1], rep)
        out["rows"][row.n] = [rep.lemma31_viol1, None if math.isnan(rep.lemma31_viol2) else rep.lemma31_viol2]
        out["max_viol1"] = max(out["max_viol1"], rep.lemma31_viol1)
        if not math.isnan(rep.lemma31_viol2):
            out["max_viol2"] = max(out["max_viol2"], rep.lemma31_viol2)
    out["pass"] = out["max_viol1"] <= LEMMA31_SLACK and out["max_viol2"] <= LEMMA31_SLACK
    return out


def check_prop23(cfg: ExperimentConfig) -> dict:
    """Residuals per row and probe; passes when they shrink down the rows at every probe."""
    arr = cfg.build()
    table = {}
    for row in arr.rows:
        cent = centering(row)
        uniq = {mb.key(): mb for mb in cent.centered}.values()
        table[row.n] = [max(_residual(mb, 1j * y) for mb in uniq) for y in cfg.probes]
    vals = np.array(list(table.values()))
    shrinking = bool(np.all(np.diff(vals, axis=0) <= 1e-15)) if len(vals) > 1 else True
    return {"rows": table, "probes": list(cfg.probes), "max_v": float(vals.max()), "pass": shrinking}


def check_phi_additivity(cfg: ExperimentConfig) -> dict:
    spec = cfg.phi_additivity or {}
    if "mu" in spec:
        mu, nu = _law(spec["mu"]), _law(spec["nu"])
    else:
        row = cfg.build().rows[-1]
        ms = row.measures
        mu, nu = ms[0], ms[1] if len(ms) > 1 else ms[0]
    probes = [complex(*p) if isinstance(p, list) else complex(p) for p in spec.get("probes", [])]
    if not probes:
        probes = [1j * y for y in cfg.probes]
    tol = float(spec.get("tol", 1e-4))
    err = phi_additivity_check(mu, nu, probes, grid=cfg.grid)
    return {"max_error": err, "tol": tol, "pass": err <= tol}


SUITES = {"lemma31": check_lemma31, "prop23": check_prop23, "phi-additivity": check_phi_additivity}


# ---------------------------------------------------------------- CLI

class BadInput(Exception):
    pass


def _complex(text: str) -> complex:
    try:
        return complex(text.strip().replace(" ", "").replace("i", "j"))
    except ValueError:
        raise BadInput(f"not a complex number: {text!r}") from None


def _points(text: str) -> list[complex]:
    return [_complex(p) for p in text.split(",") if p.strip()]


def _grid_arg(text: str | None) -> GridSpec | None:
    if text is None:
        return None
    try:
        lo, hi, n = text.split(",")
        return GridSpec(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise BadInput(f"--grid expects LO,HI,N: {exc}") from None


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _cmd_transform(args):
    m = load_measure(args.measure)
    pts = _points(args.points)
    fn = {"cauchy": cauchy, "f": f_transform, "phi": voiculescu}[args.which]
    vals = [fn(m, z) for z in pts]
    _emit([{"z": [z.real, z.imag], "value": [v.real, v.imag]} for z, v in zip(pts, vals)], args.out)


def _cmd_freeconv(args):
    ms = [load_measure(p) for p in args.files]
    save_measure(free_convolve_many(ms, args.shift, _grid_arg(args.grid)), args.out)


def _cmd_classical(args):
    ms = [load_measure(p) for p in args.files]
    save_measure(classical_convolve_many(ms, args.shift, _grid_arg(args.grid)), args.out)


def _cmd_lh(args):
    sigma = Measure.from_dict(json.loads(Path(args.sigma).read_text()), normalize=False)
    g = GeneratorPair(args.gamma, sigma)
    grid = _grid_arg(args.grid)
    m = materialize_free(g, grid) if args.law == "free" else materialize_classical(g, grid)
    save_measure(m, args.out)


def _cmd_limit(args):
    cfg = load_config(args.config)
    report = run_experiment(cfg, threads=args.threads)
    out = args.out_csv or cfg.out_csv
    if out:
        report.write_csv(out)
    else:
        sys.stdout.write(report.csv_text())
    for n, errs in report.errors.items():
        for e in errs:
            print(f"row {n}: {e}", file=sys.stderr)
    return 1 if report.errors else 0


def _cmd_check(args):
    cfg = load_config(args.config)
    result = SUITES[args.suite](cfg)
    result["suite"] = args.suite
    print(json.dumps(result, indent=1, default=str))
    return 0 if result["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freelimit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transform", help="evaluate G, F or phi at points")
    t.add_argument("--measure", required=True)
    t.add_argument("--which", choices=("cauchy", "f", "phi"), required=True)
    t.add_argument("--points", required=True, help="comma-separated complex numbers, e.g. 2j,1+3j")
    t.add_argument("--out")
    t.set_defaults(func=_cmd_transform)

    for name, func, what in (("freeconv", _cmd_freeconv, "free"), ("classical", _cmd_classical, "classical")):
        c = sub.add_parser(name, help=f"{what} convolution of measure files")
        c.add_argument("files", nargs="+")
        c.add_argument("--shift", type=float, default=0.0)
        c.add_argument("--grid", help="LO,HI,N output grid")
        c.add_argument("--out", required=True)
        c.set_defaults(func=func)

    h = sub.add_parser("lh", help="materialize the infinitely divisible law of (gamma, sigma)")
    h.add_argument("--gamma", type=float, required=True)
    h.add_argument("--sigma", required=True)
    h.add_argument("--law", choices=("free", "classical"), required=True)
    h.add_argument("--grid")
    h.add_argument("--out", required=True)
    h.set_defaults(func=_cmd_lh)

    lim = sub.add_parser("limit", help="run a convergence experiment and write its CSV table")
    lim.add_argument("--config", required=True)
    lim.add_argument("--out-csv")
    lim.add_argument("--threads", type=int, default=1)
    lim.set_defaults(func=_cmd_limit)

    ch = sub.add_parser("check", help="run a property suite against a config")
    ch.add_argument("--suite", choices=tuple(SUITES), required=True)
    ch.add_argument("--config", required=True)
    ch.set_defaults(func=_cmd_check)
    return p


def cli_main(argv=None) -> int:
    """Exit codes: 0 success, 1 numerical failure or failed check, 2 bad input."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        code = args.func(args)
    except NumericalError as exc:
        print(f"numerical failure in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (BadInput, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"bad input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


def main() -> None:
    sys.exit(cli_main())
