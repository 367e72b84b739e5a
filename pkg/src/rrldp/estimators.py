"""Unbiased recovery of true answer proportions from perturbed counts.

Three routes are provided:

* matrix inversion (works for any nonsingular perturbation matrix),
* closed forms for the named three-answer and n-answer families,
* a damped-Newton maximum-likelihood solver for arbitrary matrices.

Estimates are intentionally NOT projected onto [0, 1]: clamping would
destroy unbiasedness, which is the whole point of these estimators.  Values
outside the unit interval are flagged instead.

The closed forms for the *second* proportion of the two_rate and two_stage
families carry systematic bias for essentially all parameter settings;
this is detected analytically at call time (by pushing expected counts
through the formula) and the matrix-inversion estimate is substituted, with
a flag recording the swap.  The three_rate closed form passes the same
check and is used directly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .mechanisms import MechanismSpec, ProbabilityMatrix, build_matrix

DETERMINANT_TOL = 1e-10
_EXCLUDED_TOL = 1e-12

FLAG_OUTSIDE_UNIT = "outside_unit_interval"
FLAG_BIASED_CLOSED_FORM = "biased_closed_form"


class ExcludedParameterError(ValueError):
    """A parameter sits exactly on a value where the estimator is undefined."""


class SingularMatrixError(ValueError):
    """The perturbation matrix cannot be inverted."""


class ConvergenceError(RuntimeError):
    """The numeric likelihood solver did not reach its tolerance."""


@dataclass(frozen=True)
class CountVector:
    """Per-answer nonnegative report counts."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.array(self.counts, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("counts must be a 1-d vector of length >= 2")
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        if arr.sum() < 1:
            raise ValueError("total count must be >= 1")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_answers(cls, answers, m: int) -> "CountVector":
        return cls(np.bincount(np.asarray(answers, dtype=np.int64), minlength=m))


@dataclass(frozen=True)
class EstimateWithVariance:
    estimate: float
    variance: float
    estimator: str
    flags: tuple[str, ...] = ()


def _as_counts(counts) -> tuple[np.ndarray, int]:
    if isinstance(counts, CountVector):
        return counts.counts, counts.total
    cv = CountVector(np.asarray(counts))
    return cv.counts, cv.total


def _unit_flags(value: float) -> tuple[str, ...]:
    return (FLAG_OUTSIDE_UNIT,) if (value < 0.0 or value > 1.0) else ()


def _check_not_excluded(condition: bool, message: str):
    if condition:
        raise ExcludedParameterError(message)


# ---------------------------------------------------------------------------
# variance machinery
# ---------------------------------------------------------------------------


def count_variance(true_proportions, matrix: ProbabilityMatrix, answer: int, total: int) -> float:
    """Exact variance of the count of reported answer ``answer``.

    Each report is an independent indicator with success probability equal
    to the corresponding reported-proportion entry, so the count is
    binomial: N * pt * (1 - pt).
    """
    pi = np.asarray(true_proportions, dtype=float)
    if pi.shape != (matrix.m,):
        raise ValueError(f"proportions must have length {matrix.m}, got shape {pi.shape}")
    if not 0 <= int(answer) < matrix.m:
        raise ValueError(f"answer {answer} out of range for m = {matrix.m}")
    pt = float(pi @ matrix.entries[:, int(answer)])
    return float(total) * pt * (1.0 - pt)


def linear_estimator_variance(coeffs, reported_proportions, total: int) -> float:
    """Variance of sum_j c_j * N_j / N under multinomial counts.

    Equals (sum c^2 pt - (sum c pt)^2) / N with pt the reported-proportion
    vector.  This is the single exact propagation rule every closed-form
    variance in this module must agree with.
    """
    c = np.asarray(coeffs, dtype=float)
    pt = np.asarray(reported_proportions, dtype=float)
    mean = float(c @ pt)
    return (float((c * c) @ pt) - mean * mean) / float(total)


# ---------------------------------------------------------------------------
# matrix inversion route
# ---------------------------------------------------------------------------


def inversion_estimate(observed_proportions, matrix: ProbabilityMatrix) -> np.ndarray:
    """Debias reported proportions by right-multiplying the matrix inverse.

    The output sums to 1 (the inverse of a row-stochastic matrix keeps row
    sums), but individual entries may fall outside [0, 1] on noisy input.

    Raises:
        SingularMatrixError: |det| below 1e-10, naming the offending
            mechanism parameters when known.
    """
    pt = np.asarray(observed_proportions, dtype=float)
    if pt.shape != (matrix.m,):
        raise ValueError(f"proportions must have length {matrix.m}, got shape {pt.shape}")
    if abs(pt.sum() - 1.0) > 1e-9:
        raise ValueError("observed proportions must sum to 1")
    det = matrix.determinant()
    if abs(det) < DETERMINANT_TOL:
        raise SingularMatrixError(
            f"matrix for {matrix.describe()} is singular (det = {det!r}); cannot invert"
        )
    return pt @ np.linalg.inv(matrix.entries)


def inversion_coefficients(matrix: ProbabilityMatrix, component: int) -> np.ndarray:
    """Count coefficients of the inversion estimate for one component:
    pihat_k = sum_j (N_j / N) * inv(P)[j, k]."""
    det = matrix.determinant()
    if abs(det) < DETERMINANT_TOL:
        raise SingularMatrixError(f"matrix for {matrix.describe()} is singular (det = {det!r})")
    return np.linalg.inv(matrix.entries)[:, int(component)].copy()


def inversion_variance(
    proportions, matrix: ProbabilityMatrix, component: int, total: int, *, reported: bool = False
) -> float:
    """Exact variance of one component of the inversion estimate.

    Args:
        proportions: true proportions, or reported ones when
            ``reported=True`` (the plug-in choice).
    """
    pi = np.asarray(proportions, dtype=float)
    pt = pi if reported else pi @ matrix.entries
    return linear_estimator_variance(inversion_coefficients(matrix, component), pt, total)


# ---------------------------------------------------------------------------
# symmetric families
# ---------------------------------------------------------------------------


def var_symmetric3(pi0: float, p: float, total: int) -> float:
    """Analytic variance of the symmetric three-answer estimator.

    (1 - p^2 + 2p(3p-1)pi - (3p-1)^2 pi^2) / ((3p-1)^2 N); nonnegative for
    pi in [0, 1] and valid p.
    """
    _check_not_excluded(abs(p - 1.0 / 3.0) < _EXCLUDED_TOL, "p = 1/3 is excluded")
    d = 3.0 * p - 1.0
    num = 1.0 - p * p + 2.0 * p * d * pi0 - d * d * pi0 * pi0
    return num / (d * d * float(total))


def mle_symmetric3(counts, p: float) -> tuple[EstimateWithVariance, EstimateWithVariance]:
    """Closed-form estimates of the first two proportions under the
    symmetric three-answer mechanism, with plug-in variances."""
    c, total = _as_counts(counts)
    if c.size != 3:
        raise ValueError("symmetric three-answer estimator needs 3 counts")
    _check_not_excluded(abs(p - 1.0 / 3.0) < _EXCLUDED_TOL, "p = 1/3 is excluded")
    out = []
    for i in (0, 1):
        est = ((1.0 - p) * (total - 2.0 * c[i]) - 2.0 * p * c[i]) / ((1.0 - 3.0 * p) * total)
        var = var_symmetric3(est, p, total)
        out.append(EstimateWithVariance(float(est), float(var), "symmetric3", _unit_flags(est)))
    return out[0], out[1]


def var_symmetric(pi_i: float, p: float, n: int, total: int) -> float:
    """Analytic variance of the symmetric n-answer estimator.

    [(1-p) + (np-1)pi] * [(n-2+p) - (np-1)pi] / ((np-1)^2 N).  At n = 3
    this reduces exactly to :func:`var_symmetric3`; the indicator-variance
    propagation check in the test suite pins the identity at 1e-12.
    """
    _check_not_excluded(abs(p - 1.0 / n) < _EXCLUDED_TOL, f"p = 1/{n} is excluded")
    d = n * p - 1.0
    num = ((1.0 - p) + d * pi_i) * ((n - 2.0 + p) - d * pi_i)
    return num / (d * d * float(total))


def var_symmetric_two_answer_form(pi_i: float, p: float, n: int, total: int) -> float:
    """Variant that applies the two-answer variance pattern at any n.

    Exact only for n = 2 (where it coincides with :func:`var_symmetric`);
    for n > 2 it understates the variance and fails the indicator-variance
    propagation identity.  Retained for cross-checking only.
    """
    _check_not_excluded(abs(p - 1.0 / n) < _EXCLUDED_TOL, f"p = 1/{n} is excluded")
    d = n * p - 1.0
    num = ((1.0 - p) + d * pi_i) * (p - d * pi_i)
    return num / (d * d * float(total))


def mle_symmetric(counts, p: float, n: int) -> tuple[EstimateWithVariance, ...]:
    """Closed-form estimates of every proportion under the symmetric
    n-answer mechanism."""
    c, total = _as_counts(counts)
    if c.size != n:
        raise ValueError(f"expected {n} counts, got {c.size}")
    _check_not_excluded(abs(p - 1.0 / n) < _EXCLUDED_TOL, f"p = 1/{n} is excluded")
    denom = (1.0 - n * p) * total
    out = []
    for i in range(n):
        est = ((1.0 - p) * (total - (n - 1.0) * c[i]) - (n - 1.0) * p * c[i]) / denom
        var = var_symmetric(est, p, n, total)
        out.append(EstimateWithVariance(float(est), float(var), "symmetric", _unit_flags(est)))
    return tuple(out)


# ---------------------------------------------------------------------------
# asymmetric three-answer families: first proportion (closed, unbiased)
# ---------------------------------------------------------------------------


def var_two_rate(pi0: float, p1: float, p2: float, total: int) -> float:
    """Variance of the two_rate first-proportion estimator."""
    c = 2.0 * p1 + p2 - 1.0
    _check_not_excluded(abs(c) < _EXCLUDED_TOL, "p2 + 2*p1 = 1 is excluded")
    num = (1.0 - p2 * p2) + 2.0 * p2 * c * pi0 - c * c * pi0 * pi0
    return num / (c * c * float(total))


def var_two_stage(pi0: float, p1: float, total: int) -> float:
    """Variance of the two_stage first-proportion estimator."""
    c = 2.0 * p1 - 1.0
    _check_not_excluded(abs(c) < _EXCLUDED_TOL, "p1 = 1/2 is excluded")
    num = p1 * (1.0 - p1) + c * c * pi0 - c * c * pi0 * pi0
    return num / (c * c * float(total))


def var_three_rate(pi0: float, p1: float, p2: float, total: int) -> float:
    """Variance of the three_rate first-proportion estimator."""
    c = p1 + p2 - 1.0
    _check_not_excluded(abs(c) < _EXCLUDED_TOL, "p1 + p2 = 1 is excluded")
    num = p2 * (1.0 - p2) + (2.0 * p2 - 1.0) * c * pi0 - c * c * pi0 * pi0
    return num / (c * c * float(total))


# ---------------------------------------------------------------------------
# asymmetric families: second proportion (closed candidates + bias check)
# ---------------------------------------------------------------------------


def closed_pi1_coefficients(family: str, *params: float) -> tuple[float, float, float]:
    """Affine representation (const, c0, c1) of the closed-form second
    proportion: pihat_1 = const + c0*N0/N + c1*N1/N."""
    if family == "two_rate":
        p1, p2 = params
        c = p2 + 2.0 * p1 - 1.0
        d = 3.0 * p2 - 1.0
        _check_not_excluded(abs(c) < _EXCLUDED_TOL, "p2 + 2*p1 = 1 is excluded")
        _check_not_excluded(abs(d) < _EXCLUDED_TOL, "p2 = 1/3 is excluded")
        return ((p1 - 1.0) / c - 1.0 / d, -1.0 / c + 1.0 / d, 2.0 / d)
    if family == "two_stage":
        p1, p2 = params
        c = 2.0 * p1 - 1.0
        d = 2.0 * p1 * p2 - 1.0
        _check_not_excluded(abs(c) < _EXCLUDED_TOL, "p1 = 1/2 is excluded")
        _check_not_excluded(abs(d) < _EXCLUDED_TOL, "p1*p2 = 1/2 is excluded")
        return (p1 / c - 1.0 / d, -1.0 / c + 1.0 / d, 2.0 / d)
    if family == "three_rate":
        p1, p2, q = params
        c = p1 + p2 - 1.0
        d = 2.0 * p2 * (2.0 * q - 1.0)
        _check_not_excluded(abs(c) < _EXCLUDED_TOL, "p1 + p2 = 1 is excluded")
        _check_not_excluded(abs(d) < _EXCLUDED_TOL, "q = 1/2 is excluded")
        return (p1 / (2.0 * c) - 1.0 / d, -1.0 / (2.0 * c) + 1.0 / d, 2.0 / d)
    raise ValueError(f"no closed second-proportion form for family {family!r}")


def closed_pi1_bias(family: str, params: tuple[float, ...], true_proportions) -> float:
    """Exact bias of the closed-form second proportion at given truth.

    The form is affine in the counts, so substituting expected counts gives
    its expectation exactly; no simulation involved.
    """
    pi = np.asarray(true_proportions, dtype=float)
    spec = _family_spec(family, params)
    pt = pi @ build_matrix(spec).entries
    const, c0, c1 = closed_pi1_coefficients(family, *params)
    return const + c0 * pt[0] + c1 * pt[1] - pi[1]


_BIAS_PROBES = ((0.5, 0.3, 0.2), (0.2, 0.5, 0.3), (0.1, 0.7, 0.2))


def closed_pi1_is_biased(family: str, params: tuple[float, ...], tol: float = 1e-9) -> bool:
    """Whether the closed second-proportion form fails the exact
    expectation check on a probe grid of truths."""
    return any(abs(closed_pi1_bias(family, params, pi)) > tol for pi in _BIAS_PROBES)


def _family_spec(family: str, params: tuple[float, ...]) -> MechanismSpec:
    if family == "two_rate":
        return MechanismSpec.two_rate(*params)
    if family == "two_stage":
        return MechanismSpec.two_stage(*params)
    if family == "three_rate":
        return MechanismSpec.three_rate(*params)
    raise ValueError(f"unknown three-answer family {family!r}")


def closed_pi1_estimate(family: str, counts, *params: float) -> float:
    """Value of the closed-form second proportion (no bias guard)."""
    c, total = _as_counts(counts)
    const, c0, c1 = closed_pi1_coefficients(family, *params)
    return const + c0 * c[0] / total + c1 * c[1] / total


def _pi1_with_fallback(
    family: str, params: tuple[float, ...], counts, total: int
) -> EstimateWithVariance:
    c, _ = _as_counts(counts)
    pt_plugin = c / total
    if closed_pi1_is_biased(family, params):
        matrix = build_matrix(_family_spec(family, params))
        est = float(inversion_estimate(pt_plugin, matrix)[1])
        var = linear_estimator_variance(inversion_coefficients(matrix, 1), pt_plugin, total)
        return EstimateWithVariance(
            est,
            float(var),
            f"{family}.pi1_inversion",
            _unit_flags(est) + (FLAG_BIASED_CLOSED_FORM,),
        )
    const, c0, c1 = closed_pi1_coefficients(family, *params)
    est = const + c0 * c[0] / total + c1 * c[1] / total
    coeffs = np.zeros(3)
    coeffs[0], coeffs[1] = c0, c1
    var = linear_estimator_variance(coeffs, pt_plugin, total)
    return EstimateWithVariance(float(est), float(var), f"{family}.pi1_closed", _unit_flags(est))


def mle_two_rate(counts, p1: float, p2: float) -> tuple[EstimateWithVariance, EstimateWithVariance]:
    """Estimates of the first two proportions under the two_rate mechanism.

    The first proportion uses the closed form; the second falls back to
    matrix inversion because the closed candidate fails the exact
    expectation check for these parameters (flagged on the result).
    """
    c, total = _as_counts(counts)
    if c.size != 3:
        raise ValueError("two_rate estimator needs 3 counts")
    denom = p2 + 2.0 * p1 - 1.0
    _check_not_excluded(abs(denom) < _EXCLUDED_TOL, "p2 + 2*p1 = 1 is excluded")
    _check_not_excluded(abs(p2 - 1.0 / 3.0) < _EXCLUDED_TOL, "p2 = 1/3 is excluded")
    est0 = (p2 - 1.0) / denom + 2.0 * c[0] / (denom * total)
    pi0 = EstimateWithVariance(
        float(est0), float(var_two_rate(est0, p1, p2, total)), "two_rate", _unit_flags(est0)
    )
    return pi0, _pi1_with_fallback("two_rate", (p1, p2), counts, total)


def mle_two_stage(counts, p1: float, p2: float) -> tuple[EstimateWithVariance, EstimateWithVariance]:
    """Estimates of the first two proportions under the two_stage mechanism."""
    c, total = _as_counts(counts)
    if c.size != 3:
        raise ValueError("two_stage estimator needs 3 counts")
    denom = 2.0 * p1 - 1.0
    _check_not_excluded(abs(denom) < _EXCLUDED_TOL, "p1 = 1/2 is excluded")
    _check_not_excluded(abs(2.0 * p1 * p2 - 1.0) < _EXCLUDED_TOL, "p1*p2 = 1/2 is excluded")
    est0 = (p1 - 1.0) / denom + c[0] / (denom * total)
    pi0 = EstimateWithVariance(
        float(est0), float(var_two_stage(est0, p1, total)), "two_stage", _unit_flags(est0)
    )
    return pi0, _pi1_with_fallback("two_stage", (p1, p2), counts, total)


def mle_three_rate(
    counts, p1: float, p2: float, q: float
) -> tuple[EstimateWithVariance, EstimateWithVariance]:
    """Estimates of the first two proportions under the three_rate
    mechanism.  Both closed forms pass the exact expectation check."""
    c, total = _as_counts(counts)
    if c.size != 3:
        raise ValueError("three_rate estimator needs 3 counts")
    denom = p2 + p1 - 1.0
    _check_not_excluded(abs(denom) < _EXCLUDED_TOL, "p1 + p2 = 1 is excluded")
    _check_not_excluded(abs(q - 0.5) < _EXCLUDED_TOL, "q = 1/2 is excluded")
    est0 = (p2 - 1.0) / denom + c[0] / (denom * total)
    pi0 = EstimateWithVariance(
        float(est0), float(var_three_rate(est0, p1, p2, total)), "three_rate", _unit_flags(est0)
    )
    return pi0, _pi1_with_fallback("three_rate", (p1, p2, q), counts, total)


# ---------------------------------------------------------------------------
# numeric maximum likelihood
# ---------------------------------------------------------------------------


def log_likelihood(counts, matrix: ProbabilityMatrix, proportions) -> float:
    """Multinomial log-likelihood of true proportions given reported counts."""
    c, _ = _as_counts(counts)
    pi = np.asarray(proportions, dtype=float)
    pt = pi @ matrix.entries
    mask = c > 0
    if np.any(pt[mask] <= 0.0):
        return -np.inf
    return float(c[mask] @ np.log(pt[mask]))


def score_and_hessian(counts, matrix: ProbabilityMatrix, proportions) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the log-likelihood in the free coordinates
    (all proportions but the last, which is pinned by the simplex)."""
    c, _ = _as_counts(counts)
    pi = np.asarray(proportions, dtype=float)
    P = matrix.entries
    m = matrix.m
    pt = pi @ P
    G = P[: m - 1] - P[m - 1]  # d pt / d pi_a for free coordinate a
    grad = np.zeros(m - 1)
    hess = np.zeros((m - 1, m - 1))
    for j in range(m):
        if c[j] == 0:
            continue
        gj = G[:, j]
        grad += c[j] * gj / pt[j]
        hess -= c[j] * np.outer(gj, gj) / (pt[j] * pt[j])
    return grad, hess


def mle_numeric(
    counts,
    matrix: ProbabilityMatrix,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Maximum-likelihood proportions by damped Newton on the simplex.

    Starts from the inversion estimate projected into the simplex interior
    and iterates on the free coordinates with the simplex as a box
    constraint.  Convergence requires the per-sample score norm to fall
    below ``tol`` (the raw score scales with N, so the criterion is
    ``max|grad| <= tol * N``).  For the named families this agrees with the
    closed forms to 1e-8 whenever those land in the simplex interior.

    Raises:
        SingularMatrixError: the matrix cannot seed the starting point.
        ConvergenceError: no interior stationary point found within
            ``max_iter`` iterations (e.g. the optimum sits on the boundary).
    """
    c, total = _as_counts(counts)
    if c.size != matrix.m:
        raise ValueError(f"expected {matrix.m} counts, got {c.size}")
    floor = 1e-9

    start = inversion_estimate(c / total, matrix)
    pi = np.clip(start, floor, 1.0 - floor)
    pi = pi / pi.sum()

    def feasible(x: np.ndarray) -> bool:
        if np.any(x < 0.0):
            return False
        pt = x @ matrix.entries
        return bool(np.all(pt[c > 0] > 0.0))

    ll = log_likelihood(c, matrix, pi)
    for _ in range(max_iter):
        grad, hess = score_and_hessian(c, matrix, pi)
        if np.max(np.abs(grad)) <= tol * total:
            return pi
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        t = 1.0
        while t > 1e-14:
            free = pi[:-1] + t * step
            cand = np.append(free, 1.0 - free.sum())
            if feasible(cand):
                cand_ll = log_likelihood(c, matrix, cand)
                if cand_ll >= ll:
                    pi, ll = cand, cand_ll
                    break
            t *= 0.5
        else:
            break
    grad, _ = score_and_hessian(c, matrix, pi)
    if np.max(np.abs(grad)) <= tol * total:
        return pi
    raise ConvergenceError(
        f"score norm {np.max(np.abs(grad)):.3e} above tolerance after {max_iter} iterations; "
        "the likelihood optimum may sit on the simplex boundary"
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _params_text(params: dict) -> str:
    return ";".join(f"{k}={v!r}" for k, v in params.items())


def estimates_to_csv(records) -> str:
    """CSV rows for (estimator id, params dict, EstimateWithVariance)."""
    buf = io.StringIO()
    buf.write("estimator,parameters,estimate,variance,flags\n")
    for estimator_id, params, ewv in records:
        flags = "|".join(ewv.flags)
        buf.write(
            f"{estimator_id},{_params_text(params)},{ewv.estimate!r},{ewv.variance!r},{flags}\n"
        )
    return buf.getvalue()


def estimates_to_json(records) -> str:
    """JSON document for the same records as :func:`estimates_to_csv`."""
    payload = [
        {
            "estimator": estimator_id,
            "parameters": dict(params),
            "estimate": ewv.estimate,
            "variance": ewv.variance,
            "flags": list(ewv.flags),
        }
        for estimator_id, params, ewv in records
    ]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
