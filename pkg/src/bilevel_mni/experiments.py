"""Monte Carlo misclassification experiments with full provenance.

A trial draws a fresh training set, fits the chosen classifier, scores fresh
test points, and counts argmax mistakes. Sweeps run trials over a parameter
grid, stream rows to a CSV, and finish with a deterministic sorted rewrite so
the data file is byte-identical for any worker count; wall times live in
their own column and timestamps in the manifest, keeping the rest diffable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import regimes, rng
from .concentration import wilson_interval
from .ensemble import (BilevelParams, derive_scaling, generate_training,
                       sample_test_points)
from .errors import (CapExceeded, ConfigError, IncompleteGrid, InvalidParams,
                     MismatchedGrids, PartialFailure)
from .interpolator import (_averaging_score_matrix, _mni_score_matrix,
                           build_gram_and_kernel, kernel_vectors)

__all__ = [
    "MNI",
    "AVERAGING",
    "CSV_HEADER",
    "MAX_TRIAL_N",
    "MAX_TRIAL_D",
    "TrialResult",
    "SweepRecord",
    "SweepResult",
    "ComparisonRow",
    "PhaseDiagram",
    "params_digest",
    "run_trial",
    "parse_sweep_spec",
    "run_sweep",
    "read_sweep_csv",
    "aggregate",
    "phase_diagram",
    "compare_classifiers",
]

MNI = "MNI"
AVERAGING = "Averaging"
CLASSIFIERS = (MNI, AVERAGING)

CSV_HEADER = ["p", "q", "r", "t", "n", "c_k", "seed", "classifier",
              "test_points", "errors", "error_rate", "wall_time_ms"]

# Desk-scale caps: a single trial must stay minutes-scale on one machine.
MAX_TRIAL_N = 1600
MAX_TRIAL_D = 10**7


def params_digest(params: BilevelParams) -> str:
    """Stable digest of a grid point (shortest-repr floats, sorted keys)."""
    blob = json.dumps(
        {"p": params.p, "q": params.q, "r": params.r, "t": params.t,
         "n": params.n, "c_k": params.c_k},
        sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrialResult:
    params: BilevelParams
    digest: str
    seed: int
    classifier: str
    test_points: int
    errors: int
    error_rate: float
    wall_time_ms: float
    diagnostics_summary: dict | None = None

    def csv_row(self) -> list:
        p = self.params
        return [repr(float(p.p)), repr(float(p.q)), repr(float(p.r)),
                repr(float(p.t)), p.n, p.c_k, self.seed, self.classifier,
                self.test_points, self.errors, repr(self.error_rate),
                f"{self.wall_time_ms:.3f}"]


def run_trial(params: BilevelParams, seed: int, classifier: str,
              test_points: int, base_seed: int = 0,
              include_diagnostics: bool = False,
              _training=None) -> TrialResult:
    """One fresh-data trial: generate, fit, score, count mistakes.

    The trial seed is derived from (base_seed, params digest, seed index)
    only; the classifier is deliberately excluded so MNI and Averaging see
    identical data and test points for paired comparisons. BLAS threading is
    pinned to 1 inside the trial so results do not depend on the host's
    thread count. _training injects a prebuilt training set for tests.
    """
    if classifier not in CLASSIFIERS:
        raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {classifier!r}")
    if test_points < 1:
        raise ConfigError(f"test_points must be >= 1, got {test_points}")
    if params.n > MAX_TRIAL_N:
        raise CapExceeded(
            f"n = {params.n} exceeds the desk-scale cap {MAX_TRIAL_N}; "
            "reduce n or run a custom pipeline on bigger hardware")
    scaling = derive_scaling(params)
    if scaling.d > MAX_TRIAL_D:
        raise CapExceeded(
            f"d = {scaling.d} exceeds the streaming cap {MAX_TRIAL_D}; reduce p or n")
    digest = params_digest(params)
    trial_seed = rng.derive_seed(base_seed, digest, seed)
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        training = _training if _training is not None else generate_training(
            params, scaling, trial_seed)
        pts = sample_test_points(params, scaling, trial_seed, test_points)
        summary = None
        if classifier == MNI:
            gram, v = build_gram_and_kernel(training, scaling, pts)
            scores = _mni_score_matrix(gram, training, v)
            if include_diagnostics:
                from .diagnostics import Fitted, survival_contamination
                from .interpolator import solve
                fitted = Fitted(params=params, scaling=scaling, training=training,
                                gram=gram, u=solve(gram, training.y_centered))
                summary = survival_contamination(fitted, 0, 1).to_dict()
        else:
            v = kernel_vectors(training, scaling, pts)
            scores = _averaging_score_matrix(training, scaling, v)
        predicted = np.argmax(scores, axis=1)
        truth = np.array([pt.true_label for pt in pts])
        errors = int(np.count_nonzero(predicted != truth))
    wall_ms = (time.perf_counter() - start) * 1000.0
    return TrialResult(params=params, digest=digest, seed=seed,
                       classifier=classifier, test_points=test_points,
                       errors=errors, error_rate=errors / test_points,
                       wall_time_ms=wall_ms, diagnostics_summary=summary)


@dataclass(frozen=True)
class SweepSpec:
    points: tuple
    skipped: tuple  # (point dict, reason) pairs
    seeds: int
    test_points: int
    classifiers: tuple
    base_seed: int
    config_digest: str


def parse_sweep_spec(spec: dict) -> SweepSpec:
    """Validate a sweep spec dict (parsed JSON).

    The grid block holds per-exponent value lists expanded as a cartesian
    product; an optional top-level "points" list adds explicit grid points
    (each may carry its own c_k). Invalid points (k < 2, k > s, bad exponent
    ranges) are recorded with reasons, not dropped.
    """
    if not isinstance(spec, dict):
        raise ConfigError("sweep spec must be a JSON object")
    unknown = set(spec) - {"grid", "points", "c_k", "seeds", "test_points",
                           "classifiers", "base_seed"}
    if unknown:
        raise ConfigError(f"unknown sweep spec keys: {sorted(unknown)}")
    grid = spec.get("grid", {})
    if not isinstance(grid, dict) or set(grid) - {"p", "q", "r", "t", "n"}:
        raise ConfigError('grid must be an object with keys from {"p","q","r","t","n"}')
    c_k = int(spec.get("c_k", 1))
    seeds = int(spec.get("seeds", 1))
    test_points = int(spec.get("test_points", 100))
    classifiers = tuple(spec.get("classifiers", [MNI]))
    base_seed = int(spec.get("base_seed", 0))
    if seeds < 1 or test_points < 1:
        raise ConfigError("seeds and test_points must be >= 1")
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {c!r}")
    raw_points = []
    if grid:
        for key in ("p", "q", "r", "t", "n"):
            if key not in grid or not grid[key]:
                raise ConfigError(f"grid is missing values for {key!r}")
        for p, q, r, t, n in product(grid["p"], grid["q"], grid["r"],
                                     grid["t"], grid["n"]):
            raw_points.append({"p": p, "q": q, "r": r, "t": t, "n": n, "c_k": c_k})
    for entry in spec.get("points", []):
        if set(entry) - {"p", "q", "r", "t", "n", "c_k"}:
            raise ConfigError(f"unknown keys in points entry: {entry}")
        raw_points.append({**entry, "c_k": entry.get("c_k", c_k)})
    if not raw_points:
        raise ConfigError("sweep spec produces an empty grid")
    points, skipped, seen = [], [], set()
    for raw in raw_points:
        try:
            params = BilevelParams(n=int(raw["n"]), p=float(raw["p"]),
                                   q=float(raw["q"]), r=float(raw["r"]),
                                   t=float(raw["t"]), c_k=int(raw["c_k"]))
        except (InvalidParams, KeyError, TypeError, ValueError) as e:
            skipped.append((raw, str(e)))
            continue
        if params not in seen:
            seen.add(params)
            points.append(params)
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
    return SweepSpec(points=tuple(points), skipped=tuple(skipped), seeds=seeds,
                     test_points=test_points, classifiers=classifiers,
                     base_seed=base_seed, config_digest=digest)


@dataclass(frozen=True)
class SweepRecord:
    """Aggregate of one grid point x classifier across seeds."""

    point: tuple  # (p, q, r, t, n, c_k)
    classifier: str
    seeds: tuple
    error_rates: tuple
    test_points: int
    total_errors: int
    mean_error: float
    wilson_lo: float
    wilson_hi: float
    annotations: dict

    def to_dict(self) -> dict:
        p, q, r, t, n, c_k = self.point
        return {"p": p, "q": q, "r": r, "t": t, "n": n, "c_k": c_k,
                "classifier": self.classifier, "seeds": list(self.seeds),
                "error_rates": list(self.error_rates),
                "test_points": self.test_points,
                "total_errors": self.total_errors,
                "mean_error": self.mean_error,
                "wilson_lo": self.wilson_lo, "wilson_hi": self.wilson_hi,
                "annotations": self.annotations}


@dataclass(frozen=True)
class SweepResult:
    records: tuple
    skipped: tuple
    csv_path: Path
    sidecar_path: Path


def _row_key(row: dict) -> tuple:
    return (row["p"], row["q"], row["r"], row["t"], row["n"], row["c_k"],
            row["seed"], row["classifier"])


def _trial_task(params: BilevelParams, seed: int, classifier: str,
                test_points: int, base_seed: int) -> dict:
    res = run_trial(params, seed, classifier, test_points, base_seed)
    return _result_to_row(res)


def _result_to_row(res: TrialResult) -> dict:
    p = res.params
    return {"p": float(p.p), "q": float(p.q), "r": float(p.r), "t": float(p.t),
            "n": p.n, "c_k": p.c_k, "seed": res.seed,
            "classifier": res.classifier, "test_points": res.test_points,
            "errors": res.errors, "error_rate": res.error_rate,
            "wall_time_ms": res.wall_time_ms}


def _write_csv(path: Path, rows: list) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([repr(row["p"]), repr(row["q"]), repr(row["r"]),
                        repr(row["t"]), row["n"], row["c_k"], row["seed"],
                        row["classifier"], row["test_points"], row["errors"],
                        repr(row["error_rate"]), f"{row['wall_time_ms']:.3f}"])
    os.replace(tmp, path)


def read_sweep_csv(path) -> list:
    """Typed rows from a sweep CSV (inverse of the writer's formatting)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header in {path}: {reader.fieldnames}")
        for raw in reader:
            out.append({"p": float(raw["p"]), "q": float(raw["q"]),
                        "r": float(raw["r"]), "t": float(raw["t"]),
                        "n": int(raw["n"]), "c_k": int(raw["c_k"]),
                        "seed": int(raw["seed"]), "classifier": raw["classifier"],
                        "test_points": int(raw["test_points"]),
                        "errors": int(raw["errors"]),
                        "error_rate": float(raw["error_rate"]),
                        "wall_time_ms": float(raw["wall_time_ms"])})
    return out


def run_sweep(spec: dict, out_dir, workers: int | None = None) -> SweepResult:
    """Run (or resume) every trial in the spec and persist results.

    Rows stream to sweep.csv as trials complete; on exit the file is
    rewritten sorted by (grid point, seed, classifier) so its bytes are
    independent of worker count and completion order. Reruns skip keys
    already present. Trial failures are collected and re-raised as
    PartialFailure after everything else has been written.
    """
    parsed = parse_sweep_spec(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    sidecar_path = out_dir / "sweep.json"
    rows = read_sweep_csv(csv_path) if csv_path.exists() else []
    done = {_row_key(r) for r in rows}
    tasks = []
    for params in parsed.points:
        for classifier in parsed.classifiers:
            for seed in range(parsed.seeds):
                row_probe = {"p": float(params.p), "q": float(params.q),
                             "r": float(params.r), "t": float(params.t),
                             "n": params.n, "c_k": params.c_k, "seed": seed,
                             "classifier": classifier}
                if _row_key(row_probe) not in done:
                    tasks.append((params, seed, classifier))
    failures = []
    mode = "a" if csv_path.exists() else "w"
    with open(csv_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(CSV_HEADER)
        def record(row):
            rows.append(row)
            writer.writerow([repr(row["p"]), repr(row["q"]), repr(row["r"]),
                             repr(row["t"]), row["n"], row["c_k"], row["seed"],
                             row["classifier"], row["test_points"], row["errors"],
                             repr(row["error_rate"]), f"{row['wall_time_ms']:.3f}"])
            fh.flush()
        if workers is None or workers <= 1:
            for params, seed, classifier in tasks:
                try:
                    record(_trial_task(params, seed, classifier,
                                       parsed.test_points, parsed.base_seed))
                except Exception as e:  # noqa: BLE001 - reported via PartialFailure
                    failures.append((params_digest(params), seed, classifier, repr(e)))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(_trial_task, params, seed, classifier,
                                    parsed.test_points, parsed.base_seed):
                        (params, seed, classifier)
                        for params, seed, classifier in tasks}
                for fut in as_completed(futs):
                    params, seed, classifier = futs[fut]
                    try:
                        record(fut.result())
                    except Exception as e:  # noqa: BLE001
                        failures.append((params_digest(params), seed, classifier,
                                         repr(e)))
    rows.sort(key=_row_key)
    _write_csv(csv_path, rows)
    records = aggregate(rows)
    sidecar = {"config_digest": parsed.config_digest,
               "records": [rec.to_dict() for rec in records],
               "skipped": [{"point": point, "reason": reason}
                           for point, reason in parsed.skipped],
               "failures": [{"digest": d, "seed": s, "classifier": c, "error": e}
                            for d, s, c, e in failures]}
    sidecar_path.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    if failures:
        raise PartialFailure(failures)
    return SweepResult(records=tuple(records), skipped=parsed.skipped,
                       csv_path=csv_path, sidecar_path=sidecar_path)


def aggregate(rows: list) -> list:
    """SweepRecords from trial rows, grouped by (grid point, classifier).

    Per-seed data is kept sorted by seed so every aggregate is recomputable
    and byte-stable; Wilson intervals pool errors across seeds.
    """
    groups = {}
    for row in rows:
        key = (row["p"], row["q"], row["r"], row["t"], row["n"], row["c_k"],
               row["classifier"])
        groups.setdefault(key, []).append(row)
    records = []
    for key in sorted(groups, key=lambda k: (k[:6], k[6])):
        p, q, r, t, n, c_k, classifier = key
        grp = sorted(groups[key], key=lambda row: row["seed"])
        test_points = grp[0]["test_points"]
        if any(row["test_points"] != test_points for row in grp):
            raise MismatchedGrids(f"inconsistent test_points within group {key}")
        total_err = sum(row["errors"] for row in grp)
        total = test_points * len(grp)
        lo, hi = wilson_interval(total_err, total)
        annotations = {
            "mni_regime": regimes.mni_regime(p, q, r, t).to_dict(),
            "averaging_regime": regimes.averaging_regime(p, q, r, t).to_dict(),
            "legacy": regimes.legacy_regimes(p, q, r, t).to_dict(),
            "regression_works": regimes.regression_works(q, r).to_dict()}
        records.append(SweepRecord(
            point=(p, q, r, t, n, c_k), classifier=classifier,
            seeds=tuple(row["seed"] for row in grp),
            error_rates=tuple(row["error_rate"] for row in grp),
            test_points=test_points, total_errors=total_err,
            mean_error=total_err / total, wilson_lo=lo, wilson_hi=hi,
            annotations=annotations))
    return records


_AXIS_INDEX = {"p": 0, "q": 1, "r": 2, "t": 3, "n": 4}


@dataclass(frozen=True)
class PhaseDiagram:
    x_name: str
    y_name: str
    x_values: tuple
    y_values: tuple
    mean_error: tuple  # row-major [y][x]
    classifier: str
    fixed: dict
    overlays: dict  # name -> (x samples, y samples)
    svg_path: Path | None = None

    def to_dict(self) -> dict:
        return {"x_name": self.x_name, "y_name": self.y_name,
                "x_values": list(self.x_values), "y_values": list(self.y_values),
                "mean_error": [list(row) for row in self.mean_error],
                "classifier": self.classifier, "fixed": dict(self.fixed),
                "overlays": {k: [list(v[0]), list(v[1])]
                             for k, v in self.overlays.items()}}


def phase_diagram(records: list, axes: tuple = ("r", "t"), fixed: dict | None = None,
                  classifier: str = MNI, out_svg=None) -> PhaseDiagram:
    """Empirical phase diagram over two exponent axes.

    Records must cover the full rectangle of observed axis values (after
    filtering by classifier and the fixed coordinates); mean error colors the
    cells. For (r, t) axes the two theory arms t = 1 - r and
    t = p + 1 - 2 max{1, q + r} are overlaid from the fixed (p, q).
    """
    x_name, y_name = axes
    if x_name not in _AXIS_INDEX or y_name not in _AXIS_INDEX or x_name == y_name:
        raise ConfigError(f"axes must be two distinct of {sorted(_AXIS_INDEX)}")
    fixed = dict(fixed or {})
    sel = [rec for rec in records if rec.classifier == classifier]
    for name, val in fixed.items():
        idx = _AXIS_INDEX[name]
        sel = [rec for rec in sel if rec.point[idx] == val]
    free = [name for name in _AXIS_INDEX
            if name not in (x_name, y_name) and name not in fixed]
    for name in free:
        idx = _AXIS_INDEX[name]
        vals = {rec.point[idx] for rec in sel}
        if len(vals) > 1:
            raise ConfigError(
                f"axis {name!r} is neither plotted nor fixed but varies: {sorted(vals)}")
    if not sel:
        raise IncompleteGrid(["no records match the requested slice"])
    xi, yi = _AXIS_INDEX[x_name], _AXIS_INDEX[y_name]
    xs = tuple(sorted({rec.point[xi] for rec in sel}))
    ys = tuple(sorted({rec.point[yi] for rec in sel}))
    cell = {}
    for rec in sel:
        key = (rec.point[xi], rec.point[yi])
        if key in cell:
            raise ConfigError(f"duplicate records for cell {key}")
        cell[key] = rec.mean_error
    missing = [(x, y) for y in ys for x in xs if (x, y) not in cell]
    if missing:
        raise IncompleteGrid(missing)
    grid = tuple(tuple(cell[(x, y)] for x in xs) for y in ys)
    overlays = {}
    if (x_name, y_name) == ("r", "t"):
        p = fixed.get("p", sel[0].point[0])
        q = fixed.get("q", sel[0].point[1])
        rs = np.linspace(min(xs), max(xs), 256)
        overlays["t = 1 - r"] = (tuple(rs), tuple(1.0 - rs))
        arm = p + 1.0 - 2.0 * np.maximum(1.0, q + rs)
        overlays["t = p + 1 - 2 max{1, q + r}"] = (tuple(rs), tuple(arm))
    diagram = PhaseDiagram(x_name=x_name, y_name=y_name, x_values=xs,
                           y_values=ys, mean_error=grid, classifier=classifier,
                           fixed=fixed, overlays=overlays,
                           svg_path=Path(out_svg) if out_svg else None)
    if out_svg is not None:
        _render_phase_svg(diagram, Path(out_svg))
    return diagram


def _render_phase_svg(diagram: PhaseDiagram, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "bilevel-mni"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        xs, ys = diagram.x_values, diagram.y_values
        err = np.array(diagram.mean_error)
        # cell edges from midpoints so single-row/column grids still render
        def edges(vals):
            v = np.asarray(vals, dtype=float)
            if len(v) == 1:
                return np.array([v[0] - 0.5, v[0] + 0.5])
            mid = (v[1:] + v[:-1]) / 2
            return np.concatenate([[v[0] - (mid[0] - v[0])], mid,
                                   [v[-1] + (v[-1] - mid[-1])]])
        mesh = ax.pcolormesh(edges(xs), edges(ys), err, cmap="RdYlGn_r",
                             vmin=0.0, vmax=1.0)
        fig.colorbar(mesh, ax=ax, label="mean error")
        for name, (ox, oy) in diagram.overlays.items():
            ax.plot(ox, oy, label=name, linewidth=1.5)
        ax.set_xlim(edges(xs)[[0, -1]])
        ax.set_ylim(edges(ys)[[0, -1]])
        ax.set_xlabel(diagram.x_name)
        ax.set_ylabel(diagram.y_name)
        ax.set_title(f"{diagram.classifier} mean error")
        if diagram.overlays:
            ax.legend(loc="upper right", fontsize=8)
        fig.savefig(path, format="svg", metadata={"Date": None},
                    bbox_inches="tight")
        plt.close(fig)


@dataclass(frozen=True)
class ComparisonRow:
    point: tuple
    mni_mean: float
    averaging_mean: float
    difference: float  # MNI minus Averaging
    diff_lo: float
    diff_hi: float

    def to_dict(self) -> dict:
        p, q, r, t, n, c_k = self.point
        return {"p": p, "q": q, "r": r, "t": t, "n": n, "c_k": c_k,
                "mni_mean": self.mni_mean, "averaging_mean": self.averaging_mean,
                "difference": self.difference,
                "diff_lo": self.diff_lo, "diff_hi": self.diff_hi}


def compare_classifiers(records: list) -> list:
    """Paired MNI vs Averaging table per grid point.

    Pairing is per seed (both classifiers share trial data by seed
    construction); the interval is a normal approximation on the per-seed
    differences.
    """
    by_cls = {MNI: {}, AVERAGING: {}}
    for rec in records:
        if rec.classifier in by_cls:
            by_cls[rec.classifier][rec.point] = rec
    if set(by_cls[MNI]) != set(by_cls[AVERAGING]):
        only_m = sorted(set(by_cls[MNI]) - set(by_cls[AVERAGING]))
        only_a = sorted(set(by_cls[AVERAGING]) - set(by_cls[MNI]))
        raise MismatchedGrids(
            f"points missing a classifier side: MNI-only {only_m}, "
            f"Averaging-only {only_a}")
    out = []
    for point in sorted(by_cls[MNI]):
        m, a = by_cls[MNI][point], by_cls[AVERAGING][point]
        if m.seeds != a.seeds:
            raise MismatchedGrids(f"seed sets differ at {point}")
        diffs = np.array(m.error_rates) - np.array(a.error_rates)
        mean = float(np.mean(diffs))
        if len(diffs) > 1:
            half = 1.96 * float(np.std(diffs, ddof=1)) / math.sqrt(len(diffs))
        else:
            half = 0.0
        out.append(ComparisonRow(point=point, mni_mean=m.mean_error,
                                 averaging_mean=a.mean_error, difference=mean,
                                 diff_lo=mean - half, diff_hi=mean + half))
    return out
