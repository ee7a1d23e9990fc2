"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical degeneracy.
Machine-readable lines on stdout start with ``RESULT ``.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import jsonio
from .errors import ConfigError, DegenerateInputError
from .estimators import (
    SolverOptions,
    alternating_nls,
    basic_nls,
    ingenuous_estimate,
    precalibrated_estimate,
)
from .model import (
    MeasurementSet,
    Scenario,
    ScenarioConfig,
    calibration_residual,
    generate_multi_scenario,
    generate_scenario,
    make_rng,
    preprocess,
    take_calibration_measurements,
)
from .montecarlo import SweepConfig, run_sweep
from .multi import hadamard_pattern, multi_calibrate, run_protocol

log = logging.getLogger("repcal")

EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
CALIBRATE_ESTIMATORS = ("basic", "alt", "ingenuous", "precal")


def _result(**items):
    parts = []
    for key, value in items.items():
        if isinstance(value, complex):
            value = f"{value.real:.17g}{value.imag:+.17g}j"
        elif isinstance(value, float):
            value = f"{value:.17g}"
        parts.append(f"{key}={value}")
    print("RESULT " + " ".join(parts))


def _load_json(path, what):
    try:
        return jsonio.load(path)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


def _noise_rng(seed):
    """Measurement-noise stream, independent of the scenario drawn from ``seed``."""
    ss = np.random.SeedSequence(seed & ((1 << 64) - 1), spawn_key=(1,))
    return make_rng(int(ss.generate_state(1, np.uint64)[0]))


def _pop_noise_std(cfg):
    """Accept either ``noise_std`` or ``snr_db`` in a config dict."""
    if "noise_std" in cfg and "snr_db" in cfg:
        raise ConfigError("give either noise_std or snr_db, not both")
    if "snr_db" in cfg:
        return 10.0 ** (-float(cfg.pop("snr_db")) / 20.0)
    noise_std = float(cfg.pop("noise_std", 0.0))
    if not noise_std >= 0:
        raise ConfigError("noise_std must be nonnegative")
    return noise_std


def cmd_simulate(args):
    cfg = _load_json(args.config, "config") if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg = dict(cfg)
    noise_std = _pop_noise_std(cfg)
    seed = args.seed if args.seed is not None else int(cfg.pop("seed", 1))
    cfg.pop("seed", None)
    scenario_cfg = ScenarioConfig.from_dict(cfg)

    scenario = generate_scenario(scenario_cfg, seed)
    rng = _noise_rng(seed)
    ms = take_calibration_measurements(scenario, noise_std, rng)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jsonio.dump(scenario.to_dict(), out / "scenario.json")
    jsonio.dump(ms.to_dict(), out / "measurements.json")
    gamma = complex(scenario.gamma)
    _result(gamma=gamma, abs_gamma=abs(gamma), noise_std=noise_std, seed=seed)
    return 0


def cmd_calibrate(args):
    ms = MeasurementSet.from_dict(_load_json(args.input, "measurement"))
    scenario = Scenario.from_dict(_load_json(args.scenario, "scenario")) if args.scenario else None
    opts = SolverOptions()
    name = args.estimator

    if name == "ingenuous":
        gamma_hat = ingenuous_estimate(ms)
        payload = {"estimator": name, "gamma_hat": jsonio.complex_to_json(gamma_hat)}
    else:
        p = preprocess(ms)
        if name == "basic":
            est = basic_nls(p, opts)
        elif name == "alt":
            est = alternating_nls(p, basic_nls(p, opts), opts, record=args.verbose)
        else:
            if scenario is None:
                raise ConfigError("estimator 'precal' needs --scenario for the known array calibration")
            est = precalibrated_estimate(p, scenario.a_true, scenario.b_true, opts)
        gamma_hat = est.gamma_hat
        payload = {"estimator": name, **est.to_dict(verbose=args.verbose)}

    if args.out:
        jsonio.dump(payload, args.out)
    items = {"gamma_hat": complex(gamma_hat)}
    if scenario is not None:
        items["abs_error"] = float(abs(gamma_hat - scenario.gamma))
        items["residual"] = calibration_residual(scenario, gamma_hat)
    _result(**items)
    return 0


def cmd_sweep(args):
    cfg = _load_json(args.config, "config") if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.estimator:
        cfg["estimators"] = [e for item in args.estimator for e in item.split(",")]
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.workers is not None:
        cfg["workers"] = args.workers
    sweep = SweepConfig.from_dict(cfg)

    result = run_sweep(sweep)
    result.write_csv(args.out)
    if args.plot_data:
        result.write_plot_data(args.plot_data)
    for row in result.rows:
        log.info("snr=%g %s rmse=%.4g failures=%d", row.snr_db, row.estimator, row.rmse, row.failures)
    _result(rows=len(result.rows), valid=str(result.valid).lower(), csv=args.out)
    return 0 if result.valid else EXIT_DEGENERATE


def cmd_multi(args):
    cfg = _load_json(args.config, "config") if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg = dict(cfg)
    n = int(args.repeaters if args.repeaters is not None else cfg.pop("n_repeaters", 4))
    cfg.pop("n_repeaters", None)
    noise_std = _pop_noise_std(cfg)
    seed = args.seed if args.seed is not None else int(cfg.pop("seed", 1))
    cfg.pop("seed", None)
    scenario_cfg = ScenarioConfig.from_dict(cfg.pop("scenario", {}))
    if cfg:
        raise ConfigError(f"unknown multi field(s): {', '.join(sorted(cfg))}")
    hadamard_pattern(n)  # validates the order before anything is drawn

    ms = generate_multi_scenario(scenario_cfg, n, seed)
    rng = _noise_rng(seed)
    transcript = run_protocol(ms, noise_std, rng)
    result = multi_calibrate(transcript.rounds, transcript.flipped)

    payload = {
        "n_repeaters": n,
        "seed": seed,
        "scenario": ms.to_dict(),
        "transcript": transcript.to_dict(),
        "result": result.to_dict(),
    }
    if args.out:
        jsonio.dump(payload, args.out)
    for idx, (g_hat, g_true) in enumerate(zip(result.gamma_hats, ms.gammas)):
        _result(repeater=idx, gamma_hat=complex(g_hat), gamma=complex(g_true), abs_error=float(abs(g_hat - g_true)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="repcal", description="Reciprocity calibration of dual-antenna repeaters")
    parser.add_argument("--verbose", "-v", action="store_true", help="more logging and extra output fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a scenario and synthesize calibration measurements")
    p.add_argument("--config", help="scenario config JSON (ScenarioConfig fields plus noise_std or snr_db)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate gamma from a measurement set")
    p.add_argument("--input", "--config", dest="input", required=True, help="measurement-set JSON")
    p.add_argument("--scenario", help="ground-truth scenario JSON (for errors and 'precal')")
    p.add_argument("--estimator", choices=CALIBRATE_ESTIMATORS, default="basic")
    p.add_argument("--out", help="estimate JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="Monte-Carlo RMSE versus SNR")
    p.add_argument("--config", help="sweep config JSON")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--plot-data", help="optional whitespace-delimited table for plotting")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--estimator", action="append", help="estimator name(s); repeat or comma-separate")
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("multi", help="simultaneous Hadamard-pattern calibration of several repeaters")
    p.add_argument("--config", help="JSON with n_repeaters, noise_std/snr_db, scenario")
    p.add_argument("--repeaters", type=int, help="override n_repeaters")
    p.add_argument("--out", help="transcript JSON")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_multi)
    return parser


def main(argv=None):
    parser = build_parser()
    # allow --verbose after the subcommand as well
    argv = list(sys.argv[1:] if argv is None else argv)
    verbose = any(a in ("--verbose", "-v") for a in argv)
    argv = [a for a in argv if a not in ("--verbose", "-v")]
    args = parser.parse_args(argv)
    args.verbose = verbose
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_CONFIG

if __name__ == "__main__":
    sys.exit(main())
