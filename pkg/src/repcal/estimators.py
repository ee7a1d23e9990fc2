"""Estimators of the repeater gain ratio ``gamma = beta / alpha``.

Measurements are modeled in re-parameterized form as

    R1 = H,   R2 = Z,   R3 = A H^T B,   R4 = gamma A Z^T B

(plus noise), with ``A`` and ``B`` diagonal and ``Z`` rank one. ``A`` and
``B`` are represented by their diagonals ``a`` (length ``m_a``) and ``b``
(length ``m_b``); they are only identifiable up to ``(c a, b / c)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import jsonio
from .errors import DegenerateInputError
from .model import PreprocessedSet, preprocess


@dataclass(frozen=True)
class SolverOptions:
    ab_iters: int = 100
    ab_tol: float = 1e-12
    outer_iters: int = 25
    outer_tol: float = 1e-10

    def __post_init__(self):
        if self.ab_iters < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not (self.ab_tol > 0 and self.outer_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(eq=False)
class Estimate:
    """Fitted parameters and solver bookkeeping.

    ``Z`` is held in factored form ``z_scale * outer(z_left, z_right)`` so it
    is rank one by construction.
    """

    h_hat: np.ndarray
    z_scale: float
    z_left: np.ndarray
    z_right: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    gamma_hat: complex
    objective: float
    iterations: int
    converged: bool
    terminated_on_increase: bool = False
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def z_hat(self):
        return self.z_scale * np.outer(self.z_left, self.z_right)

    def to_dict(self, verbose=False):
        d = {
            "h_hat": jsonio.array_to_json(self.h_hat),
            "z_hat": jsonio.array_to_json(self.z_hat),
            "z_factors": {
                "scale": float(self.z_scale),
                "left": jsonio.array_to_json(self.z_left),
                "right": jsonio.array_to_json(self.z_right),
            },
            "a_hat": jsonio.array_to_json(self.a_hat),
            "b_hat": jsonio.array_to_json(self.b_hat),
            "gamma_hat": jsonio.complex_to_json(self.gamma_hat),
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "terminated_on_increase": bool(self.terminated_on_increase),
        }
        if verbose:
            d["objective_trace"] = [float(v) for v in self.trace]
            d["iterates"] = [
                {
                    "h_hat": jsonio.array_to_json(it["h"]),
                    "z_hat": jsonio.array_to_json(it["z"]),
                    "a_hat": jsonio.array_to_json(it["a"]),
                    "b_hat": jsonio.array_to_json(it["b"]),
                    "gamma_hat": jsonio.complex_to_json(it["gamma"]),
                }
                for it in self.history
            ]
        return d


@dataclass
class ABFit:
    a: np.ndarray
    b: np.ndarray
    iterations: int
    converged: bool
    trace: list


def rank_one_factors(m):
    """Dominant singular triple as ``(s, u, v)`` with ``m ~ s * outer(u, v)``."""
    m = np.asarray(m, dtype=complex)
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    return float(s[0]), u[:, 0], vh[0, :]


def rank_one_approx(m):
    """Best rank-one approximation of ``m`` in Frobenius norm."""
    s, u, v = rank_one_factors(m)
    return s * np.outer(u, v)


def _repeater_model(a, b, z):
    """A Z^T B, shape (m_a, m_b)."""
    return a[:, None] * z.T * b[None, :]


def nls_objective(h, z, a_diag, b_diag, gamma, p):
    """Least-squares fitting criterion in pre-processed form."""
    h = np.asarray(h)
    z = np.asarray(z)
    a = np.asarray(a_diag)
    b = np.asarray(b_diag)
    m_b, m_a = p.shape
    if h.shape != (m_b, m_a) or z.shape != (m_b, m_a) or a.shape != (m_a,) or b.shape != (m_b,):
        raise ValueError("parameter shapes do not match the measurements")
    return float(
        np.linalg.norm(p.r1 - h) ** 2
        + np.linalg.norm(p.r2 - z) ** 2
        + np.linalg.norm(p.r3 - _repeater_model(a, b, h)) ** 2
        + np.linalg.norm(p.r4 - gamma * _repeater_model(a, b, z)) ** 2
    )


def fit_ab(h_hat, r3, z_hat=None, gamma=None, r4=None, opts=None, a0=None, b0=None):
    """Alternating projection for the diagonals of ``A`` and ``B``.

    Minimizes ``||R3 - A H^T B||^2``, plus ``||R4 - gamma A Z^T B||^2`` when
    ``z_hat`` is given. Each half-step is the exact per-entry least-squares
    update; ``a`` is renormalized to unit norm after every iteration.
    """
    opts = opts or SolverOptions()
    p_mat = np.asarray(h_hat, dtype=complex).T  # (m_a, m_b)
    r3 = np.asarray(r3, dtype=complex)
    m_a, m_b = p_mat.shape
    if r3.shape != (m_a, m_b):
        raise ValueError("r3 must have the transpose shape of h_hat")

    # the model entry (i, j) is a_i * P_ij * b_j; fold everything into
    # cross terms and weights so each update is two mat-vec products
    cross = np.conj(p_mat) * r3
    weight = np.abs(p_mat) ** 2
    terms = [(p_mat, r3, 1.0)]
    if z_hat is not None:
        if gamma is None or r4 is None:
            raise ValueError("gamma and r4 are required together with z_hat")
        q_mat = np.asarray(z_hat, dtype=complex).T
        r4 = np.asarray(r4, dtype=complex)
        if q_mat.shape != (m_a, m_b) or r4.shape != (m_a, m_b):
            raise ValueError("z_hat / r4 shapes do not match")
        cross = cross + np.conj(gamma) * np.conj(q_mat) * r4
        weight = weight + abs(gamma) ** 2 * np.abs(q_mat) ** 2
        terms.append((q_mat, r4, gamma))

    def objective(a, b):
        outer = np.outer(a, b)
        return float(sum(np.linalg.norm(r - g * outer * m) ** 2 for m, r, g in terms))

    a = np.ones(m_a, dtype=complex) if a0 is None else np.array(a0, dtype=complex)
    b = np.ones(m_b, dtype=complex) if b0 is None else np.array(b0, dtype=complex)

    trace = [objective(a, b)]
    converged = False
    iterations = 0
    for _ in range(opts.ab_iters):
        den_a = weight @ np.abs(b) ** 2
        if np.any(den_a == 0):
            raise DegenerateInputError("a column of B H is zero; A is not identifiable")
        a = (cross @ np.conj(b)) / den_a
        den_b = np.abs(a) ** 2 @ weight
        if np.any(den_b == 0):
            raise DegenerateInputError("a column of A H^T is zero; B is not identifiable")
        b = (np.conj(a) @ cross) / den_b

        scale = np.linalg.norm(a)
        if scale == 0:
            raise DegenerateInputError("fitted A collapsed to zero")
        a = a / scale
        b = b * scale

        iterations += 1
        trace.append(objective(a, b))
        prev, cur = trace[-2], trace[-1]
        if cur == 0.0 or prev - cur <= opts.ab_tol * prev:
            converged = True
            break
    return ABFit(a=a, b=b, iterations=iterations, converged=converged, trace=trace)


def alternating_projection_ab(h_hat, r3, z_hat=None, gamma=None, r4=None, opts=None, a0=None, b0=None):
    fit = fit_ab(h_hat, r3, z_hat, gamma, r4, opts, a0, b0)
    return fit.a, fit.b


def estimate_gamma_closed_form(a_diag, b_diag, z_hat, r4):
    """Least-squares ``gamma`` for ``R4 ~ gamma A Z^T B``."""
    model = _repeater_model(np.asarray(a_diag), np.asarray(b_diag), np.asarray(z_hat))
    energy = np.linalg.norm(model) ** 2
    if energy == 0:
        raise DegenerateInputError("repeater path is unobservable (A Z^T B = 0)")
    return complex(np.vdot(model, r4) / energy)


def update_h_kron(a_diag, b_diag, r1, r3):
    """Exact minimizer of ``||R1 - H||^2 + ||R3 - A H^T B||^2`` over ``H``.

    The stacked system ``[I; A kron B] vec(H) = [vec R1; vec R3^T]`` has a
    diagonal normal matrix, so the solve is entry-wise.
    """
    a = np.asarray(a_diag)
    b = np.asarray(b_diag)
    coef = b[:, None] * a[None, :]  # (B H A)_ij = b_i H_ij a_j
    return (r1 + np.conj(coef) * np.asarray(r3).T) / (1.0 + np.abs(coef) ** 2)


def _z_target(a, b, gamma, r2, r4):
    if np.any(a == 0) or np.any(b == 0):
        raise DegenerateInputError("A and B must have nonzero diagonals to update Z")
    unmixed = np.asarray(r4).T / (b[:, None] * a[None, :])
    return (r2 + np.conj(gamma) * unmixed) / (1.0 + abs(gamma) ** 2)


def update_z(a_diag, b_diag, gamma, r2, r4):
    """Approximate rank-one ``Z`` update from ``R2`` and the unmixed ``R4``."""
    return rank_one_approx(_z_target(np.asarray(a_diag), np.asarray(b_diag), gamma, r2, r4))


def fix_gauge(a, b):
    """Rescale so ``||a|| = 1`` and ``a[0]`` is real nonnegative."""
    scale = np.linalg.norm(a)
    if scale == 0:
        return a, b
    a = a / scale
    b = b * scale
    if a[0] != 0:
        rot = np.abs(a[0]) / a[0]
        a = a * rot
        b = b / rot
        a[0] = a[0].real
    return a, b


def _make_estimate(p, h, z_factors, a, b, gamma, iterations, converged, gauge=True, **extra):
    if gauge:
        a, b = fix_gauge(a, b)
    s, u, v = z_factors
    z = s * np.outer(u, v)
    return Estimate(
        h_hat=h, z_scale=s, z_left=u, z_right=v, a_hat=a, b_hat=b,
        gamma_hat=complex(gamma),
        objective=nls_objective(h, z, a, b, gamma, p),
        iterations=iterations, converged=converged, **extra,
    )


def basic_nls(p, opts=None):
    """Sequential NLS fit: H, then Z, then (A, B), then gamma."""
    opts = opts or SolverOptions()
    h = np.asarray(p.r1, dtype=complex)
    z_factors = rank_one_factors(p.r2)
    z = z_factors[0] * np.outer(z_factors[1], z_factors[2])
    fit = fit_ab(h, p.r3, opts=opts)
    gamma = estimate_gamma_closed_form(fit.a, fit.b, z, p.r4)
    est = _make_estimate(p, h, z_factors, fit.a, fit.b, gamma, fit.iterations, fit.converged)
    est.trace = [est.objective]
    return est


def alternating_nls(p, init, opts=None, record=False):
    """Refine an estimate by cycling over H, (A, B), Z and gamma.

    Stops after ``outer_iters`` rounds, when the relative decrease drops
    below ``outer_tol``, or when a round would increase the objective (the
    Z step is only approximate). The returned iterate never has a larger
    objective than ``init``.
    """
    opts = opts or SolverOptions()
    h = init.h_hat
    z_factors = (init.z_scale, init.z_left, init.z_right)
    a, b, gamma = init.a_hat, init.b_hat, init.gamma_hat
    best = nls_objective(h, init.z_hat, a, b, gamma, p)
    trace = [best]
    history = [dict(h=h, z=init.z_hat, a=a, b=b, gamma=gamma)] if record else []

    rounds = 0
    converged = False
    increased = False
    for _ in range(opts.outer_iters):
        z = z_factors[0] * np.outer(z_factors[1], z_factors[2])
        h_new = update_h_kron(a, b, p.r1, p.r3)
        # warm start from the current diagonals keeps this step monotone
        fit = fit_ab(h_new, p.r3, z, gamma, p.r4, opts, a0=a, b0=b)
        a_new, b_new = fix_gauge(fit.a, fit.b)
        zf_new = rank_one_factors(_z_target(a_new, b_new, gamma, p.r2, p.r4))
        z_new = zf_new[0] * np.outer(zf_new[1], zf_new[2])
        gamma_new = estimate_gamma_closed_form(a_new, b_new, z_new, p.r4)
        value = nls_objective(h_new, z_new, a_new, b_new, gamma_new, p)
        if value > best:
            increased = True
            break
        rounds += 1
        decrease = best - value
        h, z_factors, a, b, gamma = h_new, zf_new, a_new, b_new, gamma_new
        best = value
        trace.append(value)
        if record:
            history.append(dict(h=h, z=z_new, a=a, b=b, gamma=gamma))
        if value == 0.0 or decrease <= opts.outer_tol * (value + decrease):
            converged = True
            break

    if rounds == 0:
        return replace(
            init, objective=best, iterations=0, converged=converged, terminated_on_increase=increased,
            trace=trace, history=history,
        )
    # accepted iterates are already gauge-fixed; keep them bit-identical
    return _make_estimate(
        p, h, z_factors, a, b, gamma, rounds, converged, gauge=False,
        terminated_on_increase=increased, trace=trace, history=history,
    )


def precalibrated_estimate(p, a_diag, b_diag, opts=None):
    """Estimate with ``A`` and ``B`` known from a joint array calibration.

    ``H`` has an exact solve; ``Z`` and ``gamma`` are refined cyclically
    starting from ``gamma = 0``.
    """
    opts = opts or SolverOptions()
    a = np.asarray(a_diag, dtype=complex)
    b = np.asarray(b_diag, dtype=complex)
    h = update_h_kron(a, b, p.r1, p.r3)
    gamma = 0.0
    best = np.inf
    state = None
    trace = []
    rounds = 0
    converged = False
    increased = False
    for _ in range(opts.outer_iters):
        zf = rank_one_factors(_z_target(a, b, gamma, p.r2, p.r4))
        z = zf[0] * np.outer(zf[1], zf[2])
        gamma_new = estimate_gamma_closed_form(a, b, z, p.r4)
        value = nls_objective(h, z, a, b, gamma_new, p)
        if value > best:
            increased = True
            break
        rounds += 1
        decrease = best - value
        state = (zf, gamma_new)
        gamma = gamma_new
        best = value
        trace.append(value)
        if value == 0.0 or decrease <= opts.outer_tol * (value + decrease):
            converged = True
            break
    zf, gamma = state
    return _make_estimate(
        p, h, zf, a, b, gamma, rounds, converged,
        terminated_on_increase=increased, trace=trace,
    )


def onoff_preprocess(y_on, y_off):
    """Map on/off measurement pairs onto the four-term criterion.

    With the repeater off, ``Y_off`` carries ``H`` and ``A H^T B`` directly;
    the on-minus-off differences carry ``Z`` and ``gamma A Z^T B``.
    """
    on_ab, on_ba = (np.asarray(x, dtype=complex) for x in y_on)
    off_ab, off_ba = (np.asarray(x, dtype=complex) for x in y_off)
    if on_ab.shape != off_ab.shape or on_ba.shape != off_ba.shape or on_ba.shape != on_ab.shape[::-1]:
        raise ValueError("on/off measurement pairs must be shaped (m_b x m_a, m_a x m_b)")
    return PreprocessedSet(r1=off_ab, r2=on_ab - off_ab, r3=off_ba, r4=on_ba - off_ba)


def onoff_estimate(y_on, y_off, opts=None):
    return basic_nls(onoff_preprocess(y_on, y_off), opts)


def ingenuous_estimate(ms):
    """Average of the element-wise ratio that equals ``beta / alpha`` without noise.

    Kept for comparison only: the division by noisy sums makes the error
    heavy-tailed (its moments do not exist), so it should not be used for
    actual calibration.
    """
    sum_ab = ms.x_ab0 + ms.x_ab1
    sum_ba = ms.x_ba0 + ms.x_ba1
    if np.any(sum_ab == 0) or np.any(sum_ba == 0):
        raise DegenerateInputError("zero entry in x0 + x1; element-wise ratio undefined")
    lhs_ab = 2 * ms.x_ab0 / sum_ab - 1
    lhs_ba = (2 * ms.x_ba0 / sum_ba - 1).T
    if np.any(lhs_ab == 0):
        raise DegenerateInputError("zero entry in the A->B ratio; element-wise ratio undefined")
    return complex(np.mean(lhs_ba / lhs_ab))
