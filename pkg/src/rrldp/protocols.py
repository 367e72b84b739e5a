"""Client-side key-value perturbation protocols and server-side aggregation.

Each participant reports one uniformly sampled item index together with a
perturbed (presence, sign) tuple from {(0,0), (1,1), (1,-1)}; the server
debiases per-item tuple counts into unbiased degree and weight estimates.

Protocol variants:
    lpp      random dummy weight for absent edges (drawn uniform in [-1,1]).
    lpp0     dummy weight pinned to zero, tightening the realized budget.
    pckv-ue  unary-encoding perturbation with keep rates (a, b) tied to the
             existence budget by a*b / ((1-a)(1-b)) = e^eps1.

Report categories map to wire tuples as 0 -> (0,0), 1 -> (1,1),
2 -> (1,-1); item indices are 0-based in memory and 1-based in the CSV
stream format "participant,j,bit,value".
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import sample_indexed, sample_rowwise
from .graphs import WeightedBipartiteGraph
from .mechanisms import MechanismSpec, ProbabilityMatrix, build_matrix

TUPLES = ((0, 0), (1, 1), (1, -1))

VARIANTS = ("lpp", "lpp0", "pckv-ue")

FLAG_NO_REPORTS = "no_reports"


def keep_probability(epsilon: float) -> float:
    """Truth-keeping rate e^eps / (e^eps + 1) of a binary flip at budget eps."""
    e = math.exp(epsilon)
    return e / (e + 1.0)


def positive_report_prob(q: float, w: float) -> float:
    """Probability that discretize-then-flip reports +1 for weight w:
    q(1+w)/2 + (1-q)(1-w)/2."""
    return q * (1.0 + w) / 2.0 + (1.0 - q) * (1.0 - w) / 2.0


@dataclass(frozen=True)
class Report:
    """One client report: item index plus the perturbed tuple."""

    item: int
    bit: int
    value: int

    def __post_init__(self):
        if (self.bit, self.value) not in TUPLES:
            raise ValueError(f"tuple ({self.bit}, {self.value}) not in {TUPLES}")

    @property
    def category(self) -> int:
        return TUPLES.index((self.bit, self.value))

    @classmethod
    def from_category(cls, item: int, category: int) -> "Report":
        bit, value = TUPLES[category]
        return cls(int(item), bit, value)


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol variant plus its stage budgets and derived rates.

    p1 = e^eps1/(e^eps1+1) gates edge existence, q = e^eps2/(e^eps2+1)
    keeps the discretized sign.  For pckv-ue the unary-encoding keep rates
    (a, b) must satisfy a*b/((1-a)(1-b)) = e^eps1; when not supplied they
    default to the symmetric solution a = b = e^(eps1/2)/(e^(eps1/2)+1).
    """

    variant: str
    epsilon1: float
    epsilon2: float
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown protocol variant {self.variant!r}")
        if self.epsilon1 <= 0.0 or self.epsilon2 <= 0.0:
            raise ValueError("stage budgets must be > 0")
        if self.variant == "pckv-ue":
            a, b = self.a, self.b
            if a is None or b is None:
                s = math.exp(self.epsilon1 / 2.0)
                a = b = s / (s + 1.0)
                object.__setattr__(self, "a", a)
                object.__setattr__(self, "b", b)
            if not (0.5 <= a <= 1.0 and 0.5 <= b <= 1.0):
                raise ValueError("pckv-ue keep rates a, b must lie in [1/2, 1]")
            product = a * b / ((1.0 - a) * (1.0 - b))
            if abs(product - math.exp(self.epsilon1)) > 1e-9 * math.exp(self.epsilon1):
                raise ValueError(
                    f"a*b/((1-a)(1-b)) = {product!r} does not match e^eps1 = "
                    f"{math.exp(self.epsilon1)!r}"
                )
        elif self.a is not None or self.b is not None:
            raise ValueError("keep rates a, b apply to the pckv-ue variant only")

    @property
    def p1(self) -> float:
        return keep_probability(self.epsilon1)

    @property
    def q(self) -> float:
        return keep_probability(self.epsilon2)


# ---------------------------------------------------------------------------
# state-conditional report distributions and matrices
# ---------------------------------------------------------------------------


def lpp_report_row(params: ProtocolParams, has_edge: bool, w: float, wtilde: float = 0.0) -> np.ndarray:
    """Tuple distribution [(0,0), (1,1), (1,-1)] for one participant state."""
    p1, q = params.p1, params.q
    if has_edge:
        pos = positive_report_prob(q, w)
        return np.array([1.0 - p1, p1 * pos, p1 * (1.0 - pos)])
    pos = positive_report_prob(q, wtilde)
    return np.array([p1, (1.0 - p1) * pos, (1.0 - p1) * (1.0 - pos)])


def lpp_matrix(epsilon1: float, epsilon2: float, w: float, wtilde: float) -> ProbabilityMatrix:
    """3x3 kernel of the random-dummy protocol at fixed edge weight w and
    dummy weight wtilde; rows ordered (0,0), (1,1), (1,-1)."""
    p1 = keep_probability(epsilon1)
    q = keep_probability(epsilon2)
    q1 = positive_report_prob(q, wtilde)
    q2 = positive_report_prob(q, w)
    entries = np.array(
        [
            [p1, (1.0 - p1) * q1, (1.0 - p1) * (1.0 - q1)],
            [1.0 - p1, p1 * q2, p1 * (1.0 - q2)],
            [1.0 - p1, p1 * (1.0 - q2), p1 * q2],
        ]
    )
    return ProbabilityMatrix(entries)


def lpp0_matrix(epsilon1: float, epsilon2: float, w: float) -> ProbabilityMatrix:
    """Zero-dummy variant of :func:`lpp_matrix`."""
    return lpp_matrix(epsilon1, epsilon2, w, 0.0)


def lpp0_state_matrix(params: ProtocolParams) -> ProbabilityMatrix:
    """Kernel over discretized states for the zero-dummy protocol: the
    two_stage mechanism with sign-keep rate q."""
    return build_matrix(MechanismSpec.two_stage(params.p1, params.q))


def pckv_matrix(params: ProtocolParams) -> ProbabilityMatrix:
    """Unary-encoding kernel: the three_rate mechanism at (b, a, q)."""
    if params.variant != "pckv-ue":
        raise ValueError("pckv_matrix needs pckv-ue params")
    return build_matrix(MechanismSpec.three_rate(params.b, params.a, params.q))


# ---------------------------------------------------------------------------
# single-participant primitives
# ---------------------------------------------------------------------------


def _discretize_and_flip(w: float, q: float, rng: np.random.Generator) -> int:
    wstar = 1 if rng.random() < (1.0 + w) / 2.0 else -1
    if rng.random() >= q:
        wstar = -wstar
    return wstar


def vpp(weights_row, epsilon2: float, rng: np.random.Generator) -> tuple[int, int]:
    """Value perturbation: sample one item, discretize its weight to +/-1,
    then flip the sign with probability 1/(e^eps2 + 1).

    Pr[+1] works out to q(1+w)/2 + (1-q)(1-w)/2 with q = e^eps2/(e^eps2+1).
    """
    if epsilon2 <= 0.0:
        raise ValueError("epsilon2 must be > 0")
    row = np.asarray(weights_row, dtype=float)
    if np.any(np.abs(row) > 1.0):
        raise ValueError("weights must lie in [-1, 1]")
    j = int(rng.integers(row.size))
    return j, _discretize_and_flip(float(row[j]), keep_probability(epsilon2), rng)


def lpp_client(weights_row, edge_row, params: ProtocolParams, rng: np.random.Generator) -> Report:
    """One participant's report under the lpp or lpp0 variant.

    Samples an item uniformly; an existing edge has its weight value-
    perturbed and is reported present with probability p1, an absent edge
    reports a perturbed dummy weight and claims presence with probability
    1 - p1.
    """
    if params.variant not in ("lpp", "lpp0"):
        raise ValueError("lpp_client needs lpp or lpp0 params")
    w_row = np.asarray(weights_row, dtype=float)
    e_row = np.asarray(edge_row, dtype=bool)
    if w_row.shape != e_row.shape:
        raise ValueError("weights and edge mask must have matching shapes")
    if np.any(np.abs(w_row) > 1.0):
        raise ValueError("weights must lie in [-1, 1]")
    j = int(rng.integers(w_row.size))
    p1, q = params.p1, params.q
    if e_row[j]:
        wstar = _discretize_and_flip(float(w_row[j]), q, rng)
        present = rng.random() < p1
    else:
        wtilde = float(rng.uniform(-1.0, 1.0)) if params.variant == "lpp" else 0.0
        wstar = _discretize_and_flip(wtilde, q, rng)
        present = rng.random() < (1.0 - p1)
    if present:
        return Report(j, 1, wstar)
    return Report(j, 0, 0)


def pckv_perturb(tup: tuple[int, int], params: ProtocolParams, rng: np.random.Generator) -> tuple[int, int]:
    """Perturb one discretized tuple through the unary-encoding kernel."""
    if tup not in TUPLES:
        raise ValueError(f"tuple {tup!r} not in {TUPLES}")
    cdf = pckv_matrix(params).cumulative()[TUPLES.index(tup)]
    u = rng.random()
    return TUPLES[int(min(int((cdf <= u).sum()), 2))]


# ---------------------------------------------------------------------------
# vectorised client populations
# ---------------------------------------------------------------------------


def _sample_items(u: np.ndarray, m: int) -> np.ndarray:
    return np.minimum((u * m).astype(np.int64), m - 1)


def lpp_client_many(
    graph: WeightedBipartiteGraph, params: ProtocolParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """All participants' reports under lpp/lpp0, kernel-sampled.

    Each participant consumes a fixed slot of uniforms (index, dummy
    weight, tuple), so output depends only on the stream, not on
    scheduling.  Returns (item indices, tuple categories).
    """
    if params.variant not in ("lpp", "lpp0"):
        raise ValueError("lpp_client_many needs lpp or lpp0 params")
    n, m = graph.n, graph.m
    u = rng.random((n, 3))
    items = _sample_items(u[:, 0], m)
    rows_idx = np.arange(n)
    has_edge = graph.adjacency[rows_idx, items]
    w = graph.weight_matrix[rows_idx, items]
    p1, q = params.p1, params.q

    pos_edge = positive_report_prob(q, w)
    if params.variant == "lpp":
        wtilde = 2.0 * u[:, 1] - 1.0
    else:
        wtilde = np.zeros(n)
    pos_dummy = positive_report_prob(q, wtilde)

    probs = np.empty((n, 3))
    probs[:, 0] = np.where(has_edge, 1.0 - p1, p1)
    present = np.where(has_edge, p1, 1.0 - p1)
    pos = np.where(has_edge, pos_edge, pos_dummy)
    probs[:, 1] = present * pos
    probs[:, 2] = present * (1.0 - pos)

    categories = sample_rowwise(np.cumsum(probs, axis=1), u[:, 2])
    return items, categories


def pckv_client_many(
    graph: WeightedBipartiteGraph, params: ProtocolParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """All participants' reports under pckv-ue: discretize the sampled
    edge's weight into a tuple, then perturb through the shared kernel."""
    if params.variant != "pckv-ue":
        raise ValueError("pckv_client_many needs pckv-ue params")
    n, m = graph.n, graph.m
    u = rng.random((n, 3))
    items = _sample_items(u[:, 0], m)
    rows_idx = np.arange(n)
    has_edge = graph.adjacency[rows_idx, items]
    w = graph.weight_matrix[rows_idx, items]

    positive = u[:, 1] < (1.0 + w) / 2.0
    true_cats = np.where(has_edge, np.where(positive, 1, 2), 0).astype(np.int64)
    categories = sample_indexed(pckv_matrix(params).cumulative(), true_cats, u[:, 2])
    return items, categories


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraphEstimates:
    """Per-item degree and weight estimates with plug-in variances.

    Graph-wide averages are recomputed from the per-item arrays on demand;
    there is no separate accumulation path.
    """

    degree: np.ndarray
    degree_variance: np.ndarray
    weight: np.ndarray
    weight_variance: np.ndarray
    flags: tuple[tuple[str, ...], ...]
    participants: int
    items: int

    def average_degree(self, normalization: str = "pairs") -> float:
        return float(self.degree.sum()) / self._denominator(normalization)

    def average_weight(self, normalization: str = "pairs") -> float:
        return float(self.weight.sum()) / self._denominator(normalization)

    def _denominator(self, normalization: str) -> float:
        n, m = self.participants, self.items
        if normalization == "pairs":
            return (n + m) * (n + m - 1) / 2.0
        if normalization == "density":
            return float(n * m)
        raise ValueError(f"unknown normalization {normalization!r}")

    def to_dict(self) -> dict:
        # JSON keys are 1-based item indices, matching the file formats.
        return {
            str(j + 1): {
                "degree": float(self.degree[j]),
                "degree_variance": float(self.degree_variance[j]),
                "weight": float(self.weight[j]),
                "weight_variance": float(self.weight_variance[j]),
                "flags": list(self.flags[j]),
            }
            for j in range(self.items)
        }


def _reports_to_arrays(reports) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(reports, tuple) and len(reports) == 2:
        items, cats = reports
        return np.asarray(items, dtype=np.int64), np.asarray(cats, dtype=np.int64)
    items = np.fromiter((r.item for r in reports), dtype=np.int64)
    cats = np.fromiter((r.category for r in reports), dtype=np.int64)
    return items, cats


def aggregate(reports, params: ProtocolParams, n: int, m: int) -> GraphEstimates:
    """Debias per-item tuple counts into degree and weight estimates.

    For item j with tuple counts (N0, N1, N2) over n_j = N0+N1+N2 reports,
    the presence channel gives the degree and the sign channel the weight:

        lpp/lpp0:  k_j = m (p1 n_j - N0) / (2 p1 - 1)
                   w_j = m (N1 - N2) / (p1 (2 q - 1))
        pckv-ue:   k_j = m (b n_j - N0) / (a + b - 1)
                   w_j = m (N1 - N2) / (a (2 q - 1))

    These are the per-item closed-form proportion estimators scaled by the
    uniform index-sampling factor m and the report count, with the sign
    debias 1/(2q-1) applied exactly once (discretize-then-flip has
    expectation (2q-1) w).  Items with no reports get zero estimates, an
    infinite variance, and a "no_reports" flag.
    """
    items, cats = _reports_to_arrays(reports)
    if items.shape != cats.shape:
        raise ValueError("items and categories must have matching shapes")
    if items.size != n:
        raise ValueError(f"expected one report per participant (n = {n}), got {items.size}")
    if items.size and (items.min() < 0 or items.max() >= m):
        raise ValueError("report item index out of range")
    counts = np.bincount(items * 3 + cats, minlength=3 * m).reshape(m, 3).astype(float)
    n_j = counts.sum(axis=1)

    if params.variant in ("lpp", "lpp0"):
        keep_absent = params.p1  # probability an absent edge reports (0,0)
        keep_present = params.p1
        sign_scale = params.p1 * (2.0 * params.q - 1.0)
    else:
        keep_absent = params.b
        keep_present = params.a
        sign_scale = params.a * (2.0 * params.q - 1.0)
    presence_denom = keep_absent + keep_present - 1.0

    # k_j = sum_c a_c N_cj and w_j = sum_c b_c N_cj with these coefficients
    deg_coeffs = (m / presence_denom) * np.array([keep_absent - 1.0, keep_absent, keep_absent])
    wgt_coeffs = (m / sign_scale) * np.array([0.0, 1.0, -1.0])

    k_hat = counts @ deg_coeffs
    w_hat = counts @ wgt_coeffs

    # Plug-in multinomial variance over the four buckets (three tuple
    # categories for item j, plus "reported another item" with coefficient
    # zero): Var(sum a_c N_c) = n * (sum a^2 t - (sum a t)^2), t = counts/n.
    theta = counts / float(n)
    k_var = float(n) * ((theta @ (deg_coeffs**2)) - (theta @ deg_coeffs) ** 2)
    w_var = float(n) * ((theta @ (wgt_coeffs**2)) - (theta @ wgt_coeffs) ** 2)

    empty = n_j == 0
    k_hat[empty] = 0.0
    w_hat[empty] = 0.0
    k_var = np.where(empty, np.inf, k_var)
    w_var = np.where(empty, np.inf, w_var)
    flags = tuple((FLAG_NO_REPORTS,) if empty[j] else () for j in range(m))

    return GraphEstimates(k_hat, k_var, w_hat, w_var, flags, n, m)


# ---------------------------------------------------------------------------
# categorical single-edge survey
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CategorySurveyEstimates:
    """Per-item recovered weight-category proportions and weight totals."""

    item_counts: np.ndarray
    proportions: np.ndarray  # (m, 3), categories are weights {0, 0.5, 1}
    proportion_variances: np.ndarray  # (m, 2) analytic variances for the first two
    weight: np.ndarray
    flags: tuple[tuple[str, ...], ...]


def category_survey(
    graph: WeightedBipartiteGraph, spec: MechanismSpec, rng: np.random.Generator
) -> CategorySurveyEstimates:
    """Survey weight categories of degree-1 participants.

    Every participant must hold exactly one edge whose weight lies in
    {0, 0.5, 1}; the weight category (mapped to answers 0, 1, 2) is
    perturbed with the given three-answer mechanism while the item index
    travels in the clear.  Per item, category proportions are recovered
    with the matching closed-form estimator and the item weight is the
    category-midpoint sum n_j * (0.5 pi1 + 1.0 pi2).
    """
    from .estimators import CountVector, mle_symmetric3, mle_two_rate

    if not np.all(graph.participant_degrees() == 1):
        raise ValueError("category survey needs exactly one edge per participant")
    matrix = build_matrix(spec)
    if matrix.m != 3:
        raise ValueError("category survey needs a three-answer mechanism")

    order = np.argsort(graph.participants, kind="stable")
    items = graph.items[order]
    w = graph.weights[order]
    cats = np.full(w.size, -1, dtype=np.int64)
    for cat, value in enumerate((0.0, 0.5, 1.0)):
        cats[w == value] = cat
    if np.any(cats < 0):
        raise ValueError("survey weights must lie in {0, 0.5, 1}")

    reported = sample_indexed(matrix.cumulative(), cats, rng.random(cats.size))

    m = graph.m
    counts = np.bincount(items * 3 + reported, minlength=3 * m).reshape(m, 3)
    n_j = counts.sum(axis=1)
    proportions = np.zeros((m, 3))
    variances = np.zeros((m, 2))
    flags: list[tuple[str, ...]] = []
    for j in range(m):
        if n_j[j] == 0:
            variances[j] = np.inf
            flags.append((FLAG_NO_REPORTS,))
            continue
        cv = CountVector(counts[j])
        if spec.family in ("symmetric", "grr"):
            e0, e1 = mle_symmetric3(cv, spec.p)
        elif spec.family == "two_rate":
            e0, e1 = mle_two_rate(cv, spec.p1, spec.p2)
        else:
            raise ValueError(f"unsupported survey mechanism family {spec.family!r}")
        proportions[j] = (e0.estimate, e1.estimate, 1.0 - e0.estimate - e1.estimate)
        variances[j] = (e0.variance, e1.variance)
        flags.append(tuple(sorted(set(e0.flags + e1.flags))))

    weight_est = n_j * (0.5 * proportions[:, 1] + 1.0 * proportions[:, 2])
    return CategorySurveyEstimates(n_j, proportions, variances, weight_est, tuple(flags))


# ---------------------------------------------------------------------------
# report stream format
# ---------------------------------------------------------------------------


def reports_to_csv(participant_ids, items, categories) -> str:
    """CSV stream "participant,j,bit,value" with 1-based indices."""
    items = np.asarray(items, dtype=np.int64)
    categories = np.asarray(categories, dtype=np.int64)
    buf = io.StringIO()
    buf.write("participant,j,bit,value\n")
    for pid, item, cat in zip(participant_ids, items, categories):
        bit, value = TUPLES[int(cat)]
        buf.write(f"{int(pid) + 1},{int(item) + 1},{bit},{value}\n")
    return buf.getvalue()


def reports_from_csv(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse the stream format back into (participants, items, categories)."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != "participant,j,bit,value":
        raise ValueError("missing 'participant,j,bit,value' header")
    pids, items, cats = [], [], []
    for ln in lines[1:]:
        pid, j, bit, value = (int(x) for x in ln.split(","))
        pids.append(pid - 1)
        items.append(j - 1)
        cats.append(TUPLES.index((bit, value)))
    return (
        np.asarray(pids, dtype=np.int64),
        np.asarray(items, dtype=np.int64),
        np.asarray(cats, dtype=np.int64),
    )
