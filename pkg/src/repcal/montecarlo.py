"""RMSE-versus-SNR sweeps over random scenarios.

Every trial gets its own seed derived from ``(master_seed, snr index, trial
index)`` through :class:`numpy.random.SeedSequence`, so results do not
depend on execution order and can be computed in parallel.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .estimators import (
    SolverOptions,
    alternating_nls,
    basic_nls,
    ingenuous_estimate,
    precalibrated_estimate,
)
from .model import ScenarioConfig, generate_scenario, preprocess, take_calibration_measurements

# "uncalibrated" guesses a random unit-modulus gamma
KNOWN_ESTIMATORS = ("uncalibrated", "ingenuous", "basic", "alt", "precal")
CSV_HEADER = ("snr_db", "estimator", "rmse", "trials", "failures", "seed")
QUANTILES = (0.5, 0.9, 0.99)
MAX_FAILURE_FRACTION = 0.1


def rmse(errors):
    errors = np.asarray(errors, dtype=complex)
    if errors.size == 0:
        raise ValueError("rmse of an empty error list is undefined")
    return float(np.sqrt(np.mean(np.abs(errors) ** 2)))


def snr_to_noise_std(snr_db):
    """sigma = 10^(-snr/20); ``inf`` maps to the noise-free case."""
    return 0.0 if math.isinf(snr_db) and snr_db > 0 else 10.0 ** (-snr_db / 20.0)


@dataclass(frozen=True)
class SweepConfig:
    snr_db_grid: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    trials: int = 1000
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    estimators: tuple = ("uncalibrated", "basic", "alt")
    master_seed: int = 2024
    solver: SolverOptions = field(default_factory=SolverOptions)
    workers: int = 1

    def __post_init__(self):
        if len(self.snr_db_grid) == 0:
            raise ConfigError("snr_db_grid must be nonempty")
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not self.estimators:
            raise ConfigError("estimators must be nonempty")
        for name in self.estimators:
            if name not in KNOWN_ESTIMATORS:
                raise ConfigError(f"estimators: unknown estimator {name!r} (known: {', '.join(KNOWN_ESTIMATORS)})")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown sweep field(s): {', '.join(sorted(unknown))}")
        if "snr_db_grid" in d:
            d["snr_db_grid"] = tuple(float(x) for x in d["snr_db_grid"])
        if "estimators" in d:
            d["estimators"] = tuple(d["estimators"])
        if "scenario" in d:
            d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        if "solver" in d:
            try:
                d["solver"] = SolverOptions(**d["solver"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"solver: {exc}") from None
        return cls(**d)

    def to_dict(self):
        return {
            "snr_db_grid": list(self.snr_db_grid),
            "trials": self.trials,
            "scenario": self.scenario.to_dict(),
            "estimators": list(self.estimators),
            "master_seed": self.master_seed,
            "solver": {f.name: getattr(self.solver, f.name) for f in fields(self.solver)},
            "workers": self.workers,
        }


@dataclass
class SweepRow:
    snr_db: float
    estimator: str
    rmse: float
    trials: int
    failures: int
    seed: int
    quantiles: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    rows: list
    valid: bool = True

    def rmse_of(self, estimator, snr_db):
        for row in self.rows:
            if row.estimator == estimator and row.snr_db == snr_db:
                return row.rmse
        raise KeyError((estimator, snr_db))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([f"{r.snr_db:.17e}", r.estimator, f"{r.rmse:.17e}", r.trials, r.failures, r.seed])

    def write_plot_data(self, path):
        """Whitespace-delimited table: SNR then one RMSE column per estimator."""
        names = list(dict.fromkeys(r.estimator for r in self.rows))
        snrs = list(dict.fromkeys(r.snr_db for r in self.rows))
        table = {(r.snr_db, r.estimator): r.rmse for r in self.rows}
        lines = ["# snr_db " + " ".join(names)]
        for snr in snrs:
            lines.append(" ".join([f"{snr:.17e}"] + [f"{table[(snr, n)]:.17e}" for n in names]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def trial_seeds(master_seed, snr_index, trial_index):
    """Independent integer seeds for (scenario, noise, baseline) of one trial."""
    ss = np.random.SeedSequence(int(master_seed) & ((1 << 64) - 1), spawn_key=(snr_index, trial_index))
    return [int(x) for x in ss.generate_state(3, dtype=np.uint64)]


def run_trial(cfg, snr_index, trial_index):
    """Errors ``gamma_hat - gamma`` per estimator for one trial (``None`` on failure).

    All estimators see the same measurement set; ``alt`` starts from the
    ``basic`` fit of the same data.
    """
    scen_seed, noise_seed, base_seed = trial_seeds(cfg.master_seed, snr_index, trial_index)
    scenario = generate_scenario(cfg.scenario, scen_seed)
    sigma = snr_to_noise_std(cfg.snr_db_grid[snr_index])
    ms = take_calibration_measurements(scenario, sigma, noise_seed)
    p = preprocess(ms)
    opts = cfg.solver

    basic = None
    out = {}
    for name in cfg.estimators:
        try:
            if name == "uncalibrated":
                gamma_hat = np.exp(1j * np.random.default_rng(base_seed).uniform(-np.pi, np.pi))
            elif name == "ingenuous":
                gamma_hat = ingenuous_estimate(ms)
            elif name == "precal":
                # arrays assumed jointly calibrated: A and B known exactly
                gamma_hat = precalibrated_estimate(p, scenario.a_true, scenario.b_true, opts).gamma_hat
            else:
                if basic is None:
                    basic = basic_nls(p, opts)
                gamma_hat = basic.gamma_hat if name == "basic" else alternating_nls(p, basic, opts).gamma_hat
        except (DegenerateInputError, np.linalg.LinAlgError):
            out[name] = None
            continue
        err = complex(gamma_hat - scenario.gamma)
        out[name] = err if np.isfinite(err) else None
    return out


def _run_point(args):
    cfg, snr_index = args
    return [run_trial(cfg, snr_index, t) for t in range(cfg.trials)]


def run_sweep(cfg):
    """RMSE of ``gamma_hat`` for every (SNR, estimator) pair."""
    jobs = [(cfg, i) for i in range(len(cfg.snr_db_grid))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_point = list(pool.map(_run_point, jobs))
    else:
        per_point = [_run_point(job) for job in jobs]

    rows = []
    valid = True
    for snr, trials in zip(cfg.snr_db_grid, per_point):
        for name in cfg.estimators:
            errors = [t[name] for t in trials if t[name] is not None]
            failures = len(trials) - len(errors)
            if failures > MAX_FAILURE_FRACTION * len(trials):
                valid = False
            if errors:
                mags = np.abs(np.asarray(errors))
                quantiles = {f"q{int(q * 100)}": float(np.quantile(mags, q)) for q in QUANTILES}
                value = rmse(errors)
            else:
                quantiles = {}
                value = float("nan")
            rows.append(SweepRow(
                snr_db=float(snr), estimator=name, rmse=value, trials=len(trials),
                failures=failures, seed=cfg.master_seed, quantiles=quantiles,
            ))
    return SweepResult(rows=rows, valid=valid)
