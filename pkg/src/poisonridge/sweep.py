"""Parameter-sweep harness: grid enumeration, trial execution, aggregation, CSV.

The built-in grid covers seven aspect ratios, six
penalties, four poison fractions and nine trigger norms, with p = 500 and
100 trials per grid point.  Records are reproducible from
(master_seed, grid_index, trial_index) alone, so worker count and execution
order never change the bytes on disk.
"""

from __future__ import annotations

import csv
import enum
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import simulator, theory
from .errors import EmptyGroup, PoisonRidgeError, SchemaMismatch
from .records import _EMPIRICAL_FIELDS, FIELD_NAMES, SweepRecord
from .theory import ModelParams

# each axis of the one-at-a-time sweep varies a single parameter around
# these fixed values

DEFAULTS = {"c": 0.1, "lam": 0.1, "theta": 0.1, "v_norm": 1.0}

WORKERS_ENV = "POISONRIDGE_WORKERS"


class AxisMode(enum.Enum):
    FULL = "full"
    ONE_AT_A_TIME = "one-at-a-time"


@dataclass(frozen=True)
class SweepGrid:
    c_values: tuple = (0.1, 0.3, 0.5, 0.75, 1.25, 1.5, 2.0)
    lambda_values: tuple = (0.001, 0.005, 0.01, 0.05, 0.1, 1.0)
    theta_values: tuple = (0.01, 0.05, 0.1, 0.2)
    vnorm_values: tuple = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
    p: int = 500
    trials: int = 100
    master_seed: int = 0

    @classmethod
    def builtin(cls, p: int = 500, trials: int = 100, master_seed: int = 0) -> "SweepGrid":
        return cls(p=p, trials=trials, master_seed=master_seed)

    def points(self, axis_mode: AxisMode) -> list[ModelParams]:
        """Grid points in deterministic order."""
        if axis_mode is AxisMode.FULL:
            return [
                ModelParams(c=c, lam=lam, theta=th, v_norm=vn)
                for c, lam, th, vn in itertools.product(
                    self.c_values, self.lambda_values, self.theta_values, self.vnorm_values
                )
            ]
        pts = []
        for c in self.c_values:
            pts.append(ModelParams(c=c, lam=DEFAULTS["lam"], theta=DEFAULTS["theta"], v_norm=DEFAULTS["v_norm"]))
        for lam in self.lambda_values:
            pts.append(ModelParams(c=DEFAULTS["c"], lam=lam, theta=DEFAULTS["theta"], v_norm=DEFAULTS["v_norm"]))
        for th in self.theta_values:
            pts.append(ModelParams(c=DEFAULTS["c"], lam=DEFAULTS["lam"], theta=th, v_norm=DEFAULTS["v_norm"]))
        for vn in self.vnorm_values:
            pts.append(ModelParams(c=DEFAULTS["c"], lam=DEFAULTS["lam"], theta=DEFAULTS["theta"], v_norm=vn))
        return pts


def trial_seed(master_seed: int, grid_index: int, trial_index: int) -> int:
    """64-bit per-trial seed, stateless in (master, grid, trial)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(grid_index, trial_index))
    return int(ss.generate_state(1, np.uint64)[0])


def _error_record(
    params: ModelParams, p: int, grid_index: int, trial_index: int, seed: int
) -> SweepRecord:
    nan = float("nan")
    try:
        pred = theory.predict(params)
        th_cols = (pred.mu, pred.sigma_sq, pred.eta, pred.C_align)
    except PoisonRidgeError:
        th_cols = (nan, nan, nan, nan)
    n = max(1, round(p / params.c))
    return SweepRecord(
        grid_index=grid_index,
        trial_index=trial_index,
        c_target=params.c,
        c_effective=p / n,
        lam=params.lam,
        theta=params.theta,
        v_norm=params.v_norm,
        p=p,
        n=n,
        seed=seed,
        mu_emp=nan,
        sigma2_emp=nan,
        eta_emp_mc=nan,
        eta_emp_plugin=nan,
        mu_theory=th_cols[0],
        sigma2_theory=th_cols[1],
        eta_theory=th_cols[2],
        C_theory=th_cols[3],
        centering_mode=simulator.Centering.POPULATION.value,
        wall_time_ms=0.0,
    )


def _run_one(job) -> SweepRecord:
    params, p, master_seed, grid_index, trial_index, m_test = job
    seed = trial_seed(master_seed, grid_index, trial_index)
    shape = simulator.SimShape(p=p, n=max(1, round(p / params.c)), seed=seed)
    try:
        return simulator.run_trial(
            params,
            shape,
            grid_index=grid_index,
            trial_index=trial_index,
            m_test=m_test,
        )
    except PoisonRidgeError:
        return _error_record(params, p, grid_index, trial_index, seed)


def run_sweep(
    grid: SweepGrid,
    axis_mode: AxisMode = AxisMode.ONE_AT_A_TIME,
    m_test: int = 10000,
    workers: int | None = None,
) -> list[SweepRecord]:
    """All (grid point, trial) records, canonically sorted.

    Per-trial failures become NaN-valued error rows rather than aborting the
    sweep; near-singular solves at tiny lambda and c near 1 are expected.
    """
    points = grid.points(axis_mode)
    jobs = [
        (params, grid.p, grid.master_seed, gi, ti, m_test)
        for gi, params in enumerate(points)
        for ti in range(grid.trials)
    ]
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=4))
    else:
        records = [_run_one(job) for job in jobs]
    records.sort(key=lambda r: (r.grid_index, r.trial_index))
    return records


# --- aggregation ---

AGG_FIELDS = [
    "grid_index", "c_target", "lambda", "theta", "v_norm", "p", "n",
    "n_trials", "n_errors",
]
for _col in _EMPIRICAL_FIELDS:
    AGG_FIELDS += [f"{_col}_mean", f"{_col}_median", f"{_col}_q25", f"{_col}_q75"]
AGG_FIELDS += ["mu_theory", "sigma2_theory", "eta_theory", "C_theory"]


def aggregate(records: list[SweepRecord]) -> list[dict]:
    """Per grid point: mean, median, q25, q75 of each empirical column.

    Quantiles use linear interpolation between closest ranks (numpy's
    default convention).  Error rows are excluded from all statistics.
    """
    if not records:
        raise EmptyGroup("no records to aggregate")
    rows = []
    keyfn = lambda r: r.grid_index
    for gi, group_iter in itertools.groupby(sorted(records, key=keyfn), key=keyfn):
        group = list(group_iter)
        valid = [r for r in group if not r.is_error]
        if not valid:
            raise EmptyGroup(f"grid point {gi} has no valid trials")
        first = valid[0]
        row = {
            "grid_index": gi,
            "c_target": first.c_target,
            "lambda": first.lam,
            "theta": first.theta,
            "v_norm": first.v_norm,
            "p": first.p,
            "n": first.n,
            "n_trials": len(group),
            "n_errors": len(group) - len(valid),
        }
        for col in _EMPIRICAL_FIELDS:
            vals = np.array([getattr(r, col) for r in valid])
            row[f"{col}_mean"] = float(vals.mean())
            row[f"{col}_median"] = float(np.percentile(vals, 50))
            row[f"{col}_q25"] = float(np.percentile(vals, 25))
            row[f"{col}_q75"] = float(np.percentile(vals, 75))
        for col in ("mu_theory", "sigma2_theory", "eta_theory", "C_theory"):
            row[col] = getattr(first, col)
        rows.append(row)
    return rows


# --- CSV persistence (UTF-8, LF, shortest round-trip floats) ---

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(path, records: list[SweepRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELD_NAMES)
        for r in records:
            writer.writerow([
                _fmt(getattr(r, "lam" if name == "lambda" else name))
                for name in FIELD_NAMES
            ])


def read_records(path) -> list[SweepRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FIELD_NAMES:
            raise SchemaMismatch(f"unexpected header in {path}: {header}")
        records = []
        for row in reader:
            kwargs = {}
            for name, value in zip(FIELD_NAMES, row):
                attr = "lam" if name == "lambda" else name
                if attr in ("grid_index", "trial_index", "p", "n", "seed"):
                    kwargs[attr] = int(value)
                elif attr == "centering_mode":
                    kwargs[attr] = value
                else:
                    kwargs[attr] = float(value)
            kwargs["wall_time_ms"] = 0.0  # not persisted
            records.append(SweepRecord(**kwargs))
    return records


def write_aggregates(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGG_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[name]) for name in AGG_FIELDS])


def read_aggregates(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != AGG_FIELDS:
            raise SchemaMismatch(f"unexpected aggregate header in {path}: {header}")
        rows = []
        for raw in reader:
            row = {}
            for name, value in zip(AGG_FIELDS, raw):
                if name in ("grid_index", "p", "n", "n_trials", "n_errors"):
                    row[name] = int(value)
                else:
                    row[name] = float(value)
            rows.append(row)
    return rows
