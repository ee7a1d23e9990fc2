"""Simultaneous calibration of several repeaters with Hadamard phase patterns.

Protocol for ``N`` repeaters (``N`` a power of two):

* round ``k = 0 .. N-1``: repeater ``n`` applies sign ``S[k, n]``; row 0 is
  all ``+1`` (every repeater nominal);
* one extra round with every repeater rotated by pi (all ``-1``).

Averaging round 0 and the all-flipped round eliminates the repeaters and
gives ``H`` and ``B H A``; the diagonals ``a, b`` follow from those. After
subtracting ``H`` / ``B H A`` from every round, inverting the pattern
separates each ``Z_n`` and ``gamma_n B Z_n A``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .errors import ConfigError, DegenerateInputError
from .estimators import (
    SolverOptions,
    basic_nls,
    estimate_gamma_closed_form,
    fit_ab,
    fix_gauge,
    rank_one_factors,
)
from .model import _measure, make_rng, preprocess, take_calibration_measurements


@dataclass(frozen=True, eq=False)
class PatternMatrix:
    entries: np.ndarray

    @property
    def n(self):
        return self.entries.shape[0]


@dataclass(eq=False)
class MultiCalibrationResult:
    z_hats: list
    gamma_hats: list
    h_hat: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    z_factors: list = field(default_factory=list)

    def to_dict(self):
        return {
            "gamma_hats": [jsonio.complex_to_json(g) for g in self.gamma_hats],
            "z_hats": [jsonio.array_to_json(z) for z in self.z_hats],
            "h_hat": jsonio.array_to_json(self.h_hat),
            "a_hat": jsonio.array_to_json(self.a_hat),
            "b_hat": jsonio.array_to_json(self.b_hat),
        }


@dataclass(eq=False)
class MultiTranscript:
    """Everything measured during one run of the protocol."""

    pattern: PatternMatrix
    rounds: list  # N (y_ab, y_ba) pairs, one per pattern row
    flipped: tuple  # (y_ab, y_ba) with every repeater rotated by pi
    noise_std: float = 0.0

    def to_dict(self):
        return {
            "pattern": self.pattern.entries.astype(int).tolist(),
            "noise_std": float(self.noise_std),
            "rounds": [
                {"signs": row.astype(int).tolist(), "y_ab": jsonio.array_to_json(y_ab), "y_ba": jsonio.array_to_json(y_ba)}
                for row, (y_ab, y_ba) in zip(self.pattern.entries, self.rounds)
            ],
            "flipped_round": {
                "signs": [-1] * self.pattern.n,
                "y_ab": jsonio.array_to_json(self.flipped[0]),
                "y_ba": jsonio.array_to_json(self.flipped[1]),
            },
        }


def is_supported_order(n):
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def hadamard_pattern(n):
    """Sylvester-type Hadamard matrix of order ``n`` (a power of two)."""
    if not is_supported_order(n):
        raise ConfigError(f"unsupported pattern order {n}; supported orders are powers of two (1, 2, 4, 8, ...)")
    h = np.ones((1, 1), dtype=int)
    base = np.array([[1, 1], [1, -1]])
    while h.shape[0] < n:
        h = np.kron(base, h)
    return PatternMatrix(entries=h)


def measure_patterned(ms, signs, noise_std=0.0, rng=None):
    """Bi-directional measurement with repeater ``n`` multiplied by ``signs[n]``."""
    signs = np.asarray(signs)
    if signs.shape != (ms.n_repeaters,):
        raise ValueError(f"expected {ms.n_repeaters} signs, got {signs.shape}")
    if not np.all(np.abs(signs) == 1):
        raise ValueError("pattern signs must be +1 or -1")
    return _measure(ms, signs, noise_std, make_rng(0 if rng is None else rng))


def run_protocol(ms, noise_std=0.0, rng=None):
    """Take the N patterned rounds and the all-flipped round."""
    rng = make_rng(0 if rng is None else rng)
    pattern = hadamard_pattern(ms.n_repeaters)
    rounds = [measure_patterned(ms, row, noise_std, rng) for row in pattern.entries]
    flipped = measure_patterned(ms, -np.ones(ms.n_repeaters, dtype=int), noise_std, rng)
    return MultiTranscript(pattern=pattern, rounds=rounds, flipped=flipped, noise_std=noise_std)


def multi_calibrate(rounds, flipped, opts=None, pattern=None):
    """Recover every ``Z_n`` and ``gamma_n`` from a protocol transcript.

    ``rounds[k]`` must have been taken under row ``k`` of the Hadamard
    pattern of order ``len(rounds)``.
    """
    opts = opts or SolverOptions()
    n = len(rounds)
    pattern = pattern or hadamard_pattern(n)
    if pattern.n != n:
        raise ValueError(f"pattern of order {pattern.n} does not match {n} measurement rounds")
    signs = pattern.entries
    if not np.all(signs[0] == 1):
        raise ValueError("first pattern row must be all +1 (nominal configuration)")

    y_ab = np.stack([np.asarray(r[0], dtype=complex) for r in rounds])
    y_ba_t = np.stack([np.asarray(r[1], dtype=complex).T for r in rounds])
    flip_ab = np.asarray(flipped[0], dtype=complex)
    flip_ba_t = np.asarray(flipped[1], dtype=complex).T

    h_hat = (y_ab[0] + flip_ab) / 2
    bha_hat = (y_ba_t[0] + flip_ba_t) / 2
    fit = fit_ab(h_hat, bha_hat.T, opts=opts)
    a_hat, b_hat = fix_gauge(fit.a, fit.b)

    # pattern inversion: S^T S = N I
    z_sums = np.einsum("kn,kij->nij", signs, y_ab - h_hat) / n
    m_sums = np.einsum("kn,kij->nij", signs, y_ba_t - bha_hat) / n

    z_hats, gamma_hats, factors = [], [], []
    for idx in range(n):
        zf = rank_one_factors(z_sums[idx])
        z = zf[0] * np.outer(zf[1], zf[2])
        try:
            gamma = estimate_gamma_closed_form(a_hat, b_hat, z, m_sums[idx].T)
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"repeater {idx}: {exc}") from None
        z_hats.append(z)
        gamma_hats.append(gamma)
        factors.append(zf)
    return MultiCalibrationResult(
        z_hats=z_hats, gamma_hats=gamma_hats, h_hat=h_hat, a_hat=a_hat, b_hat=b_hat, z_factors=factors,
    )


def calibrate_sequentially(ms, noise_std=0.0, rng=None, opts=None):
    """Reference scheme: calibrate one repeater at a time with the others off."""
    rng = make_rng(0 if rng is None else rng)
    gammas = []
    for idx in range(ms.n_repeaters):
        single = ms.repeater(idx)
        meas = take_calibration_measurements(single, noise_std, rng)
        gammas.append(basic_nls(preprocess(meas), opts).gamma_hat)
    return gammas
