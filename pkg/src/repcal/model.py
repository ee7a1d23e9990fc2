"""Scenario generation and synthesis of bi-directional channel measurements.

Two arrays A (``m_a`` antennas) and B (``m_b`` antennas) measure the channel
between them in both directions. The direct channel ``G`` (B x A) is
reciprocal; a dual-antenna repeater adds ``alpha * g h^T`` in the A->B
direction and ``beta * h g^T`` in the B->A direction. Each antenna branch
carries a receive and transmit reciprocity coefficient, collected on the
diagonals of ``R_A, T_A, R_B, T_B``. Channel estimates are synthesized
directly; there is no pilot-level simulation.

Random quantities follow the usual conventions: ``CN(0, s^2)`` means real
and imaginary parts are independent with variance ``s^2 / 2`` each.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import jsonio
from .errors import ConfigError

_SEED_MASK = (1 << 64) - 1


def make_rng(seed):
    """PCG64 generator for an arbitrary (possibly negative) 64-bit seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return np.random.default_rng(int(seed) & _SEED_MASK)


def crandn(rng, shape, std=1.0):
    """i.i.d. CN(0, std^2) samples."""
    scale = std / np.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def dft_column(m, k):
    """Column ``k`` of the unnormalized m-point DFT matrix (unit-modulus entries)."""
    n = np.arange(m)
    return np.exp(-2j * np.pi * k * n / m)


@dataclass(frozen=True)
class ScenarioConfig:
    m_a: int = 4
    m_b: int = 3
    alpha_gain_db: float = 10.0
    beta_gain_db: float = 10.0
    # False forces every reciprocity coefficient to 1
    random_reciprocity: bool = True
    # False draws h and g as i.i.d. CN(0, 1) instead of DFT columns
    dft_repeater_channels: bool = True

    def __post_init__(self):
        for name in ("m_a", "m_b"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer")
            if value <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("alpha_gain_db", "beta_gain_db"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                raise ConfigError(f"{name} must be a number")
            if not np.isfinite(value):
                raise ConfigError(f"{name} must be finite")

    @property
    def alpha_magnitude(self):
        return 10.0 ** (self.alpha_gain_db / 20.0)

    @property
    def beta_magnitude(self):
        return 10.0 ** (self.beta_gain_db / 20.0)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class Scenario:
    """Ground truth for one array pair and a single repeater.

    ``h_vec`` and ``g_vec`` are stored as 1-D arrays of length ``m_a`` and
    ``m_b``; ``r_a, t_a, r_b, t_b`` are the reciprocity diagonals.
    """

    m_a: int
    m_b: int
    g_mat: np.ndarray
    h_vec: np.ndarray
    g_vec: np.ndarray
    alpha: complex
    beta: complex
    r_a: np.ndarray
    t_a: np.ndarray
    r_b: np.ndarray
    t_b: np.ndarray

    def __post_init__(self):
        checks = {
            "g_mat": (self.m_b, self.m_a),
            "h_vec": (self.m_a,),
            "g_vec": (self.m_b,),
            "r_a": (self.m_a,),
            "t_a": (self.m_a,),
            "r_b": (self.m_b,),
            "t_b": (self.m_b,),
        }
        if self.m_a < 1 or self.m_b < 1:
            raise ValueError("m_a and m_b must be positive")
        for name, shape in checks.items():
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} must have shape {shape}, got {np.shape(getattr(self, name))}")

    @property
    def gamma(self):
        return self.beta / self.alpha

    # re-parameterized quantities seen by the estimators
    @property
    def h_true(self):
        return self.r_b[:, None] * self.g_mat * self.t_a[None, :]

    @property
    def z_true(self):
        return self.alpha * np.outer(self.r_b * self.g_vec, self.h_vec * self.t_a)

    @property
    def a_true(self):
        return self.r_a / self.t_a

    @property
    def b_true(self):
        return self.t_b / self.r_b

    def to_dict(self):
        return {
            "m_a": self.m_a,
            "m_b": self.m_b,
            "g_mat": jsonio.array_to_json(self.g_mat),
            "h_vec": jsonio.column_to_json(self.h_vec),
            "g_vec": jsonio.column_to_json(self.g_vec),
            "alpha": jsonio.complex_to_json(self.alpha),
            "beta": jsonio.complex_to_json(self.beta),
            "r_a": jsonio.array_to_json(self.r_a),
            "t_a": jsonio.array_to_json(self.t_a),
            "r_b": jsonio.array_to_json(self.r_b),
            "t_b": jsonio.array_to_json(self.t_b),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            m_a=int(d["m_a"]),
            m_b=int(d["m_b"]),
            g_mat=jsonio.array_from_json(d["g_mat"]),
            h_vec=jsonio.column_from_json(d["h_vec"]),
            g_vec=jsonio.column_from_json(d["g_vec"]),
            alpha=jsonio.complex_from_json(d["alpha"]),
            beta=jsonio.complex_from_json(d["beta"]),
            r_a=jsonio.array_from_json(d["r_a"]),
            t_a=jsonio.array_from_json(d["t_a"]),
            r_b=jsonio.array_from_json(d["r_b"]),
            t_b=jsonio.array_from_json(d["t_b"]),
        )

    def as_multi(self):
        return MultiScenario(
            m_a=self.m_a,
            m_b=self.m_b,
            g_mat=self.g_mat,
            h_vecs=self.h_vec[None, :],
            g_vecs=self.g_vec[None, :],
            alphas=np.array([self.alpha]),
            betas=np.array([self.beta]),
            r_a=self.r_a,
            t_a=self.t_a,
            r_b=self.r_b,
            t_b=self.t_b,
        )


@dataclass(frozen=True, eq=False)
class MultiScenario:
    """Ground truth with ``N`` repeaters sharing the same two arrays.

    Row ``n`` of ``h_vecs`` / ``g_vecs`` holds repeater ``n``'s channels.
    """

    m_a: int
    m_b: int
    g_mat: np.ndarray
    h_vecs: np.ndarray
    g_vecs: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    r_a: np.ndarray
    t_a: np.ndarray
    r_b: np.ndarray
    t_b: np.ndarray

    def __post_init__(self):
        n = len(self.alphas)
        if n < 1:
            raise ValueError("at least one repeater is required")
        if (
            np.shape(self.h_vecs) != (n, self.m_a)
            or np.shape(self.g_vecs) != (n, self.m_b)
            or np.shape(self.betas) != (n,)
            or np.shape(self.g_mat) != (self.m_b, self.m_a)
        ):
            raise ValueError("repeater channel shapes inconsistent with arrays")

    @property
    def n_repeaters(self):
        return len(self.alphas)

    @property
    def gammas(self):
        return self.betas / self.alphas

    def repeater(self, n):
        """Single-repeater view of repeater ``n`` (others ignored)."""
        return Scenario(
            m_a=self.m_a,
            m_b=self.m_b,
            g_mat=self.g_mat,
            h_vec=self.h_vecs[n],
            g_vec=self.g_vecs[n],
            alpha=complex(self.alphas[n]),
            beta=complex(self.betas[n]),
            r_a=self.r_a,
            t_a=self.t_a,
            r_b=self.r_b,
            t_b=self.t_b,
        )

    def to_dict(self):
        return {
            "m_a": self.m_a,
            "m_b": self.m_b,
            "n_repeaters": self.n_repeaters,
            "g_mat": jsonio.array_to_json(self.g_mat),
            "h_vec": [jsonio.column_to_json(h) for h in self.h_vecs],
            "g_vec": [jsonio.column_to_json(g) for g in self.g_vecs],
            "alpha": jsonio.array_to_json(self.alphas),
            "beta": jsonio.array_to_json(self.betas),
            "r_a": jsonio.array_to_json(self.r_a),
            "t_a": jsonio.array_to_json(self.t_a),
            "r_b": jsonio.array_to_json(self.r_b),
            "t_b": jsonio.array_to_json(self.t_b),
        }


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Phase-flip measurement pairs: index 0 nominal, index 1 rotated by pi."""

    x_ab0: np.ndarray
    x_ba0: np.ndarray
    x_ab1: np.ndarray
    x_ba1: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        shape_ab = np.shape(self.x_ab0)
        if len(shape_ab) != 2:
            raise ValueError("x_ab0 must be a matrix")
        shape_ba = shape_ab[::-1]
        if np.shape(self.x_ab1) != shape_ab:
            raise ValueError(f"x_ab1 must have shape {shape_ab}")
        for name in ("x_ba0", "x_ba1"):
            if np.shape(getattr(self, name)) != shape_ba:
                raise ValueError(f"{name} must have shape {shape_ba}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        for name in ("x_ab0", "x_ab1", "x_ba0", "x_ba1"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    def to_dict(self):
        return {
            "x_ab0": jsonio.array_to_json(self.x_ab0),
            "x_ba0": jsonio.array_to_json(self.x_ba0),
            "x_ab1": jsonio.array_to_json(self.x_ab1),
            "x_ba1": jsonio.array_to_json(self.x_ba1),
            "noise_std": float(self.noise_std),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            x_ab0=jsonio.array_from_json(d["x_ab0"]),
            x_ba0=jsonio.array_from_json(d["x_ba0"]),
            x_ab1=jsonio.array_from_json(d["x_ab1"]),
            x_ba1=jsonio.array_from_json(d["x_ba1"]),
            noise_std=float(d.get("noise_std", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class PreprocessedSet:
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray

    @property
    def shape(self):
        """(m_b, m_a)"""
        return np.shape(self.r1)


def generate_scenario(config=None, seed=0):
    """Draw a random scenario.

    Draw order is fixed (G, h column, g column, reciprocity phases, repeater
    phases) so the result is a pure function of ``(config, seed)``.
    """
    config = config or ScenarioConfig()
    return generate_multi_scenario(config, 1, seed).repeater(0)


def generate_multi_scenario(config=None, n_repeaters=1, seed=0):
    config = config or ScenarioConfig()
    if n_repeaters < 1:
        raise ConfigError("n_repeaters must be positive")
    rng = make_rng(seed)
    m_a, m_b = config.m_a, config.m_b

    g_mat = crandn(rng, (m_b, m_a))

    if config.dft_repeater_channels:
        h_idx = rng.integers(0, m_a, size=n_repeaters)
        g_idx = rng.integers(0, m_b, size=n_repeaters)
        h_vecs = np.stack([dft_column(m_a, k) for k in h_idx])
        g_vecs = np.stack([dft_column(m_b, k) for k in g_idx])
    else:
        h_vecs = crandn(rng, (n_repeaters, m_a))
        g_vecs = crandn(rng, (n_repeaters, m_b))

    phases = rng.uniform(-np.pi, np.pi, size=2 * (m_a + m_b))
    if config.random_reciprocity:
        coeffs = np.exp(1j * phases)
    else:
        coeffs = np.ones(2 * (m_a + m_b), dtype=complex)
    r_a, t_a = coeffs[:m_a], coeffs[m_a:2 * m_a]
    r_b, t_b = coeffs[2 * m_a:2 * m_a + m_b], coeffs[2 * m_a + m_b:]

    gain_phases = rng.uniform(-np.pi, np.pi, size=(2, n_repeaters))
    alphas = config.alpha_magnitude * np.exp(1j * gain_phases[0])
    betas = config.beta_magnitude * np.exp(1j * gain_phases[1])

    return MultiScenario(
        m_a=m_a, m_b=m_b, g_mat=g_mat, h_vecs=h_vecs, g_vecs=g_vecs,
        alphas=alphas, betas=betas, r_a=r_a, t_a=t_a, r_b=r_b, t_b=t_b,
    )


def _measure(ms, coefs, noise_std, rng):
    """Measurements with repeater ``n`` scaled by ``coefs[n]`` (0 turns it off)."""
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    coefs = np.asarray(coefs, dtype=complex)
    fwd = ms.g_mat + np.einsum("n,ni,nj->ij", coefs * ms.alphas, ms.g_vecs, ms.h_vecs)
    rev = ms.g_mat.T + np.einsum("n,ni,nj->ij", coefs * ms.betas, ms.h_vecs, ms.g_vecs)
    x_ab = ms.r_b[:, None] * fwd * ms.t_a[None, :]
    x_ba = ms.r_a[:, None] * rev * ms.t_b[None, :]
    # noise is always drawn so the stream does not depend on noise_std
    w_b = crandn(rng, x_ab.shape, noise_std)
    w_a = crandn(rng, x_ba.shape, noise_std)
    return x_ab + w_b, x_ba + w_a


def measure_bidirectional(s, repeater_phase=0.0, repeater_on=True, noise_std=0.0, rng=None):
    """One A->B and one B->A channel estimate, returned as ``(x_ab, x_ba)``.

    With the repeater on, both repeater gains are rotated by
    ``exp(1j * repeater_phase)``.
    """
    rng = make_rng(0 if rng is None else rng)
    c = np.exp(1j * repeater_phase) if repeater_on else 0.0
    return _measure(s.as_multi(), [c], noise_std, rng)


def take_calibration_measurements(s, noise_std=0.0, rng=None):
    rng = make_rng(0 if rng is None else rng)
    x_ab0, x_ba0 = measure_bidirectional(s, 0.0, True, noise_std, rng)
    x_ab1, x_ba1 = measure_bidirectional(s, np.pi, True, noise_std, rng)
    return MeasurementSet(x_ab0=x_ab0, x_ba0=x_ba0, x_ab1=x_ab1, x_ba1=x_ba1, noise_std=noise_std)


def take_onoff_measurements(s, noise_std=0.0, rng=None):
    """Returns ``(y_on, y_off)``, each an ``(x_ab, x_ba)`` pair."""
    rng = make_rng(0 if rng is None else rng)
    y_on = measure_bidirectional(s, 0.0, True, noise_std, rng)
    y_off = measure_bidirectional(s, 0.0, False, noise_std, rng)
    return y_on, y_off


def preprocess(ms):
    """Half-sums and half-differences of the phase-flipped pairs."""
    if np.shape(ms.x_ab0) != np.shape(ms.x_ab1) or np.shape(ms.x_ba0) != np.shape(ms.x_ba1):
        raise ValueError("measurement shapes do not match")
    if np.shape(ms.x_ba0) != np.shape(ms.x_ab0)[::-1]:
        raise ValueError("x_ba must be the transpose shape of x_ab")
    return PreprocessedSet(
        r1=(ms.x_ab0 + ms.x_ab1) / 2,
        r2=(ms.x_ab0 - ms.x_ab1) / 2,
        r3=(ms.x_ba0 + ms.x_ba1) / 2,
        r4=(ms.x_ba0 - ms.x_ba1) / 2,
    )


def calibration_residual(s, gamma_hat):
    """Relative non-reciprocity left after compensating the reverse gain.

    The repeater's reverse gain is re-configured to ``beta / gamma_hat``; the
    result is the Frobenius distance between the effective forward channel
    and the transpose of the effective reverse channel, relative to the
    repeater contribution.
    """
    if gamma_hat == 0:
        raise ValueError("gamma_hat must be nonzero")
    beta_comp = s.beta / gamma_hat
    forward = s.g_mat + s.alpha * np.outer(s.g_vec, s.h_vec)
    reverse = s.g_mat.T + beta_comp * np.outer(s.h_vec, s.g_vec)
    repeater_part = np.linalg.norm(s.alpha * np.outer(s.g_vec, s.h_vec))
    return float(np.linalg.norm(forward - reverse.T) / repeater_part)
