"""Randomized-response mechanisms as row-stochastic probability matrices.

Answers are integers 0..m-1.  For the three-answer key-value families the
fixed convention is: answer 0 = "absent" (wire tuple (0,0)), answer 1 =
"present, positive" (tuple (1,1)), answer 2 = "present, negative"
(tuple (1,-1)).

Families
--------
warner(p)                classic two-answer flip: keep with probability p.
grr(p, m) / symmetric(p, n)
                         m answers, keep with probability p, lie uniformly
                         with probability (1-p)/(m-1) each.
two_rate(p1, p2)         three answers; answer 0 kept with rate p1, answers
                         1/2 kept with rate p2, lies spread evenly.
two_stage(p1, p2)        three answers; a presence gate at rate p1 followed
                         by a sign flip kept at rate p2.
three_rate(p1, p2, q)    three answers; absent kept at p1, present kept at
                         p2, sign kept at q.
custom(rows)             any user-supplied row-stochastic matrix.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ._kernels import sample_indexed

ROW_SUM_TOL_CONSTRUCTED = 1e-12
ROW_SUM_TOL_CUSTOM = 1e-9

_DEGENERATE_TOL = 1e-12

FAMILIES = ("warner", "grr", "symmetric", "two_rate", "two_stage", "three_rate", "custom")


def _check_probability(name: str, value: float) -> float:
    value = float(value)
    # p = 1 is the deterministic (identity-row) limit and stays legal.
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class MechanismSpec:
    """Tagged mechanism family plus its named parameters.

    Use the classmethod constructors; they validate parameter ranges.
    """

    family: str
    p: float | None = None
    p1: float | None = None
    p2: float | None = None
    q: float | None = None
    n: int | None = None
    rows: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mechanism family {self.family!r}")

    @classmethod
    def warner(cls, p: float) -> "MechanismSpec":
        return cls("warner", p=_check_probability("p", p))

    @classmethod
    def grr(cls, p: float, m: int) -> "MechanismSpec":
        if int(m) < 2:
            raise ValueError(f"m must be >= 2, got {m}")
        return cls("grr", p=_check_probability("p", p), n=int(m))

    @classmethod
    def symmetric(cls, p: float, n: int) -> "MechanismSpec":
        if int(n) < 2:
            raise ValueError(f"n must be >= 2, got {n}")
        return cls("symmetric", p=_check_probability("p", p), n=int(n))

    @classmethod
    def two_rate(cls, p1: float, p2: float) -> "MechanismSpec":
        return cls("two_rate", p1=_check_probability("p1", p1), p2=_check_probability("p2", p2))

    @classmethod
    def two_stage(cls, p1: float, p2: float) -> "MechanismSpec":
        return cls("two_stage", p1=_check_probability("p1", p1), p2=_check_probability("p2", p2))

    @classmethod
    def three_rate(cls, p1: float, p2: float, q: float) -> "MechanismSpec":
        return cls(
            "three_rate",
            p1=_check_probability("p1", p1),
            p2=_check_probability("p2", p2),
            q=_check_probability("q", q),
        )

    @classmethod
    def custom(cls, rows) -> "MechanismSpec":
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
            raise ValueError(f"custom matrix must be square with m >= 2, got shape {arr.shape}")
        return cls("custom", rows=tuple(tuple(float(x) for x in row) for row in arr))

    def named_params(self) -> dict[str, float | int]:
        """Scalar parameters actually set, in a fixed order."""
        out: dict[str, float | int] = {}
        for name in ("p", "p1", "p2", "q", "n"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def describe(self) -> str:
        params = ", ".join(f"{k}={v!r}" for k, v in self.named_params().items())
        return f"{self.family}({params})" if params else self.family


def degenerate_notes(spec: MechanismSpec) -> tuple[str, ...]:
    """Parameter settings that keep perturbation valid but block estimation.

    These are flagged rather than rejected: the perturbation channel is
    still well defined, only the downstream inversion/closed forms lose
    their preconditions.
    """

    def near(x, y):
        return abs(x - y) < _DEGENERATE_TOL

    notes: list[str] = []
    if spec.family == "warner" and near(spec.p, 0.5):
        notes.append("p = 1/2: responses carry no signal")
    if spec.family in ("grr", "symmetric") and near(spec.p, 1.0 / spec.n):
        notes.append(f"p = 1/{spec.n}: matrix is singular, estimation blocked")
    if spec.family == "two_rate":
        if near(spec.p2, 1.0 / 3.0):
            notes.append("p2 = 1/3: second/third answers carry no signal")
        if near(spec.p2 + 2.0 * spec.p1, 1.0):
            notes.append("p2 + 2*p1 = 1: first-answer estimator undefined")
    if spec.family == "two_stage":
        if near(spec.p1, 0.5):
            notes.append("p1 = 1/2: presence channel carries no signal")
        if near(spec.p1 * spec.p2, 0.5):
            notes.append("p1*p2 = 1/2: sign channel estimator undefined")
    if spec.family == "three_rate":
        if near(spec.p1 + spec.p2, 1.0):
            notes.append("p1 + p2 = 1: presence channel carries no signal")
        if near(spec.q, 0.5):
            notes.append("q = 1/2: sign channel carries no signal")
    return tuple(notes)


@dataclass(frozen=True, eq=False)
class ProbabilityMatrix:
    """Row-stochastic m-by-m perturbation kernel.

    entries[i, j] is the probability of reporting answer j given true
    answer i.  Constructed matrices are validated at 1e-12 row-sum
    tolerance, user-supplied ones at 1e-9.
    """

    entries: np.ndarray
    spec: MechanismSpec | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
            raise ValueError(f"probability matrix must be square with m >= 2, got shape {arr.shape}")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("probability matrix entries must lie in [0, 1]")
        constructed = self.spec is not None and self.spec.family != "custom"
        tol = ROW_SUM_TOL_CONSTRUCTED if constructed else ROW_SUM_TOL_CUSTOM
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > tol):
            worst = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"row {worst} sums to {sums[worst]!r}, outside tolerance {tol}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def cumulative(self) -> np.ndarray:
        """Row-wise cumulative probabilities, for inverse-CDF sampling."""
        return np.cumsum(self.entries, axis=1)

    def determinant(self) -> float:
        return float(np.linalg.det(self.entries))

    def describe(self) -> str:
        return self.spec.describe() if self.spec is not None else f"custom {self.m}x{self.m} matrix"


def build_matrix(spec: MechanismSpec) -> ProbabilityMatrix:
    """Construct the probability matrix for a mechanism spec.

    Degenerate-but-valid parameters (e.g. symmetric p = 1/n) are accepted
    and surfaced via the matrix ``flags``; only estimation rejects them.
    """
    if spec.family == "warner":
        p = spec.p
        arr = np.array([[p, 1.0 - p], [1.0 - p, p]])
    elif spec.family in ("grr", "symmetric"):
        p, n = spec.p, spec.n
        arr = np.full((n, n), (1.0 - p) / (n - 1))
        np.fill_diagonal(arr, p)
    elif spec.family == "two_rate":
        p1, p2 = spec.p1, spec.p2
        arr = np.array(
            [
                [p1, (1.0 - p1) / 2.0, (1.0 - p1) / 2.0],
                [(1.0 - p2) / 2.0, p2, (1.0 - p2) / 2.0],
                [(1.0 - p2) / 2.0, (1.0 - p2) / 2.0, p2],
            ]
        )
    elif spec.family == "two_stage":
        p1, p2 = spec.p1, spec.p2
        arr = np.array(
            [
                [p1, (1.0 - p1) / 2.0, (1.0 - p1) / 2.0],
                [1.0 - p1, p1 * p2, p1 * (1.0 - p2)],
                [1.0 - p1, p1 * (1.0 - p2), p1 * p2],
            ]
        )
    elif spec.family == "three_rate":
        p1, p2, q = spec.p1, spec.p2, spec.q
        arr = np.array(
            [
                [p1, (1.0 - p1) / 2.0, (1.0 - p1) / 2.0],
                [1.0 - p2, p2 * q, p2 * (1.0 - q)],
                [1.0 - p2, p2 * (1.0 - q), p2 * q],
            ]
        )
    elif spec.family == "custom":
        arr = np.asarray(spec.rows, dtype=float)
    else:  # pragma: no cover - guarded by __post_init__
        raise ValueError(f"unknown mechanism family {spec.family!r}")
    return ProbabilityMatrix(arr, spec=spec, flags=degenerate_notes(spec))


def perturb(answer: int, matrix: ProbabilityMatrix, rng: np.random.Generator) -> int:
    """Randomize one answer through the matrix, using a single uniform draw.

    Sampling is inverse-CDF over the matrix row, so the draw count is fixed
    regardless of outcome.
    """
    answer = int(answer)
    if not 0 <= answer < matrix.m:
        raise ValueError(f"answer {answer} out of range for m = {matrix.m}")
    cdf = matrix.cumulative()[answer]
    u = rng.random()
    return int(min(int((cdf <= u).sum()), matrix.m - 1))


def perturb_many(
    answers,
    matrix: ProbabilityMatrix,
    rng: np.random.Generator | None = None,
    uniforms=None,
) -> np.ndarray:
    """Vectorised :func:`perturb`: one uniform per answer, kernel-backed.

    Exactly one of ``rng`` and ``uniforms`` must be given.  Passing a
    pre-drawn uniform array keeps results identical across backends and
    execution orders.
    """
    answers = np.asarray(answers, dtype=np.int64)
    if answers.size and (answers.min() < 0 or answers.max() >= matrix.m):
        raise ValueError(f"answers out of range for m = {matrix.m}")
    if (rng is None) == (uniforms is None):
        raise ValueError("pass exactly one of rng, uniforms")
    u = rng.random(answers.shape[0]) if uniforms is None else np.asarray(uniforms, dtype=float)
    if u.shape[0] != answers.shape[0]:
        raise ValueError("uniforms must match answers in length")
    return sample_indexed(matrix.cumulative(), answers, u)


def response_distribution(true_proportions, matrix: ProbabilityMatrix) -> np.ndarray:
    """Expected reported proportions: the true proportions pushed through
    the matrix (row-vector times matrix)."""
    pi = np.asarray(true_proportions, dtype=float)
    if pi.shape != (matrix.m,):
        raise ValueError(f"proportions must have length {matrix.m}, got shape {pi.shape}")
    if np.any(pi < 0.0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("true proportions must be a probability vector summing to 1")
    return pi @ matrix.entries


def calibrate_two_element(observed_yes_fraction: float, p: float) -> float:
    """Debias the raw yes-fraction of a two-answer randomized response.

    Returns (f - (1-p)) / (2p - 1).  The result can fall outside [0, 1] on
    noisy input; it is returned raw, clamping is the caller's policy.
    """
    f = float(observed_yes_fraction)
    p = float(p)
    denom = 2.0 * p - 1.0
    if denom == 0.0:
        raise ValueError("p = 1/2 carries no signal; calibration undefined")
    return (f - (1.0 - p)) / denom


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def spec_to_config(spec: MechanismSpec) -> str:
    """Key-value text form of a spec: one ``name = value`` line each."""
    lines = [f"family = {spec.family}"]
    for name, value in spec.named_params().items():
        lines.append(f"{name} = {value!r}")
    if spec.rows is not None:
        rows = " ; ".join(" ".join(repr(x) for x in row) for row in spec.rows)
        lines.append(f"matrix = {rows}")
    return "\n".join(lines) + "\n"


def spec_from_config(text: str) -> MechanismSpec:
    """Parse the key-value text emitted by :func:`spec_to_config`."""
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected 'name = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value
    family = fields.pop("family", None)
    if family is None:
        raise ValueError("mechanism config must set 'family'")
    if family == "warner":
        return MechanismSpec.warner(float(fields["p"]))
    if family == "grr":
        return MechanismSpec.grr(float(fields["p"]), int(fields["n"]))
    if family == "symmetric":
        return MechanismSpec.symmetric(float(fields["p"]), int(fields["n"]))
    if family == "two_rate":
        return MechanismSpec.two_rate(float(fields["p1"]), float(fields["p2"]))
    if family == "two_stage":
        return MechanismSpec.two_stage(float(fields["p1"]), float(fields["p2"]))
    if family == "three_rate":
        return MechanismSpec.three_rate(float(fields["p1"]), float(fields["p2"]), float(fields["q"]))
    if family == "custom":
        rows = [[float(x) for x in row.split()] for row in fields["matrix"].split(";")]
        return MechanismSpec.custom(rows)
    raise ValueError(f"unknown mechanism family {family!r}")


def matrix_to_csv(matrix: ProbabilityMatrix) -> str:
    """CSV text: m rows of m decimal entries."""
    buf = io.StringIO()
    for row in matrix.entries:
        buf.write(",".join(repr(float(x)) for x in row))
        buf.write("\n")
    return buf.getvalue()


def matrix_from_csv(text: str) -> ProbabilityMatrix:
    """Parse a matrix CSV back into a (custom-tolerance) matrix."""
    rows = [[float(x) for x in line.split(",")] for line in text.strip().splitlines()]
    return ProbabilityMatrix(np.asarray(rows, dtype=float))
