"""Bayesian optimization over mixed integer-grid / continuous configuration spaces.

Gaussian-process surrogate with a squared-exponential kernel whose
hyperparameters stay fixed for the whole run, and Expected Improvement
(for minimization) as the acquisition function.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import ndtr

from .signals import FloatArray

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------- spaces


@dataclass(frozen=True)
class ContinuousDim:
    lo: float
    hi: float
    name: str = ""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"continuous dimension needs finite lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class IntegerDim:
    values: tuple[int, ...]
    name: str = ""

    def __post_init__(self) -> None:
        vals = tuple(sorted(set(int(v) for v in self.values)))
        if not vals:
            raise ValueError("integer dimension needs at least one value")
        object.__setattr__(self, "values", vals)


Dim = ContinuousDim | IntegerDim


@dataclass(frozen=True)
class EnvSpace:
    """Product of continuous intervals and integer grids.

    Configurations are float vectors in native units. The unit-box encoding
    maps a grid value to ``index / (k - 1)`` and an interval linearly onto
    ``[0, 1]``.
    """

    dims: tuple[Dim, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise ValueError("a configuration space needs at least one dimension")

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [dim.name or f"d{i + 1}" for i, dim in enumerate(self.dims)]

    @property
    def continuous(self) -> list[int]:
        return [i for i, dim in enumerate(self.dims) if isinstance(dim, ContinuousDim)]

    @property
    def integer(self) -> list[int]:
        return [i for i, dim in enumerate(self.dims) if isinstance(dim, IntegerDim)]

    def contains(self, d: ArrayLike) -> bool:
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (self.p,) or not np.all(np.isfinite(d)):
            return False
        for v, dim in zip(d, self.dims):
            if isinstance(dim, ContinuousDim):
                if not dim.lo <= v <= dim.hi:
                    return False
            elif v not in dim.values:
                return False
        return True

    def to_unit(self, d: ArrayLike) -> FloatArray:
        d = np.asarray(d, dtype=np.float64)
        if not self.contains(d):
            raise ValueError(f"configuration {d.tolist()} is outside the space")
        u = np.empty(self.p)
        for i, (v, dim) in enumerate(zip(d, self.dims)):
            if isinstance(dim, ContinuousDim):
                u[i] = (v - dim.lo) / (dim.hi - dim.lo)
            else:
                k = len(dim.values)
                u[i] = dim.values.index(int(v)) / (k - 1) if k > 1 else 0.5
        return u

    def from_unit(self, u: ArrayLike) -> FloatArray:
        u = np.asarray(u, dtype=np.float64)
        d = np.empty(self.p)
        for i, (x, dim) in enumerate(zip(u, self.dims)):
            x = min(max(float(x), 0.0), 1.0)
            if isinstance(dim, ContinuousDim):
                d[i] = dim.lo + x * (dim.hi - dim.lo)
            else:
                k = len(dim.values)
                d[i] = dim.values[int(round(x * (k - 1))) if k > 1 else 0]
        return d

    def sample(self, rng: np.random.Generator) -> FloatArray:
        """One configuration drawn uniformly (uniform grid value per integer dim)."""
        d = np.empty(self.p)
        for i, dim in enumerate(self.dims):
            if isinstance(dim, ContinuousDim):
                d[i] = rng.uniform(dim.lo, dim.hi)
            else:
                d[i] = dim.values[rng.integers(len(dim.values))]
        return d

    def initial_design(self, count: int, rng: np.random.Generator) -> FloatArray:
        """Stratified (Latin-hypercube style) design of ``count`` configurations."""
        out = np.empty((count, self.p))
        for i, dim in enumerate(self.dims):
            pos = (rng.permutation(count) + rng.uniform(size=count)) / count
            if isinstance(dim, ContinuousDim):
                out[:, i] = dim.lo + pos * (dim.hi - dim.lo)
            else:
                k = len(dim.values)
                out[:, i] = [dim.values[min(int(q * k), k - 1)] for q in pos]
        return out

    def grid_unit_combos(self) -> FloatArray:
        """Unit-box coordinates of every integer-grid combination, shape (combos, #integer dims)."""
        axes = []
        for i in self.integer:
            k = len(self.dims[i].values)
            axes.append(np.arange(k) / (k - 1) if k > 1 else np.array([0.5]))
        if not axes:
            return np.empty((1, 0))
        return np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(axes))


# --------------------------------------------------------------------------- GP


class GPFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelParams:
    """Fixed squared-exponential hyperparameters (unit-box length scales).

    ``mean`` is the constant prior mean; ``None`` uses the mean of the
    training targets at fit time.
    """

    length_scale: float | tuple[float, ...] = 0.2
    signal_variance: float = 1.0
    mean: float | None = None
    jitter: float = 1e-10
    max_jitter: float = 1e-6

    def scales(self, p: int) -> FloatArray:
        ls = np.broadcast_to(np.asarray(self.length_scale, dtype=np.float64), (p,)).copy()
        if np.any(ls <= 0):
            raise ValueError("length scales must be positive")
        return ls


def se_kernel(A: FloatArray, B: FloatArray, length_scales: FloatArray) -> FloatArray:
    """Unit-variance squared-exponential correlation matrix between row sets."""
    A = A / length_scales
    B = B / length_scales
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass(frozen=True, eq=False)
class GPModel:
    params: KernelParams
    X: FloatArray
    y: FloatArray
    mean: float
    jitter: float
    chol: FloatArray = field(repr=False)
    alpha: FloatArray = field(repr=False)

    @property
    def length_scales(self) -> FloatArray:
        return self.params.scales(self.X.shape[1])


def _dedupe(X: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
    keep: dict[bytes, int] = {}
    conflicts = []
    for i, row in enumerate(X):
        key = row.tobytes()
        if key in keep:
            j = keep[key]
            if abs(y[i] - y[j]) > 1e-12 * max(1.0, abs(y[i]), abs(y[j])):
                conflicts.append((j, i))
        else:
            keep[key] = i
    if conflicts:
        pairs = ", ".join(f"#{a} and #{b} at {X[a].tolist()}" for a, b in conflicts)
        raise GPFitError(f"kernel matrix is singular: duplicate inputs with conflicting targets ({pairs})")
    idx = sorted(keep.values())
    return X[idx], y[idx]


def _near_duplicates(X: FloatArray, tol: float = 1e-6) -> list[tuple[int, int]]:
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    i, j = np.nonzero(np.triu(dist < tol, k=1))
    return list(zip(i.tolist(), j.tolist()))


def gp_fit(X: ArrayLike, y: ArrayLike, params: KernelParams = KernelParams()) -> GPModel:
    """Condition a noiseless GP on unit-box inputs ``X`` and targets ``y``.

    Exact duplicate inputs with equal targets are merged; conflicting
    duplicates raise :class:`GPFitError`. The jitter grows tenfold per failed
    Cholesky attempt until ``params.max_jitter``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) != len(y) or len(y) == 0:
        raise ValueError(f"need matching non-empty inputs and targets, got {len(X)} and {len(y)}")
    if np.any(X < -1e-12) or np.any(X > 1 + 1e-12):
        raise ValueError("GP inputs must be normalized into the unit box")
    if not np.all(np.isfinite(y)):
        raise ValueError("GP targets must be finite")
    if params.signal_variance <= 0:
        raise ValueError("signal variance must be positive")
    X, y = _dedupe(X, y)
    mean = float(np.mean(y)) if params.mean is None else float(params.mean)
    K = se_kernel(X, X, params.scales(X.shape[1]))
    jitter = params.jitter
    while True:
        try:
            c, _ = cho_factor(K + jitter * np.eye(len(X)), lower=True, check_finite=False)
            break
        except LinAlgError:
            if jitter * 10 > params.max_jitter * (1 + 1e-9):
                near = _near_duplicates(X)
                raise GPFitError(
                    f"Cholesky failed with jitter up to {params.max_jitter:g}; "
                    f"near-duplicate inputs: {near or 'none found'}"
                ) from None
            jitter *= 10
    chol = np.tril(c)
    alpha = _refined_weights(K, chol, y - mean)
    return GPModel(params, X, y, mean, jitter, chol, alpha)


def _refined_weights(K: FloatArray, chol: FloatArray, r: FloatArray, steps: int = 50) -> FloatArray:
    """Solve ``K alpha = r`` through the jittered factor, refining away the nugget's bias.

    The plain jittered solve misses each target by ``jitter * alpha``, which on
    ill-conditioned designs is far above interpolation accuracy. Each refinement
    step shrinks the residual by ``jitter / (lambda_min + jitter)``; it stops
    once the residual no longer improves.
    """
    alpha = cho_solve((chol, True), r, check_finite=False)
    tol = 1e-10 * (1.0 + float(np.max(np.abs(r))))
    resid = r - K @ alpha
    size = float(np.max(np.abs(resid)))
    for _ in range(steps):
        if size <= tol:
            break
        step = alpha + cho_solve((chol, True), resid, check_finite=False)
        new_resid = r - K @ step
        new_size = float(np.max(np.abs(new_resid)))
        if not new_size < size:
            break
        alpha, resid, size = step, new_resid, new_size
    return alpha


def gp_posterior_batch(m: GPModel, Xq: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Posterior means and variances at the rows of ``Xq``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    ks = se_kernel(m.X, Xq, m.length_scales)
    mu = m.mean + ks.T @ m.alpha
    v = solve_triangular(m.chol, ks, lower=True, check_finite=False)
    var = m.params.signal_variance * (1.0 - (v * v).sum(0))
    # below the jitter floor a variance is numerically zero
    var[var < 2.0 * m.jitter * m.params.signal_variance] = 0.0
    return mu, var


def gp_posterior(m: GPModel, x: ArrayLike) -> tuple[float, float]:
    mu, var = gp_posterior_batch(m, np.asarray(x, dtype=np.float64)[None, :])
    return float(mu[0]), float(var[0])


def ei_from_moments(mu: ArrayLike, sigma: ArrayLike, best: float) -> FloatArray:
    """Closed-form Expected Improvement below ``best``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    gain = best - mu
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = gain * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(sigma > 0, ei, np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(m: GPModel, x: ArrayLike, best: float) -> float:
    mu, var = gp_posterior(m, x)
    return float(ei_from_moments(mu, math.sqrt(var), best))


def _ei_batch(m: GPModel, Xq: FloatArray, best: float) -> tuple[FloatArray, FloatArray]:
    mu, var = gp_posterior_batch(m, Xq)
    return ei_from_moments(mu, np.sqrt(var), best), mu


def propose_next(
    m: GPModel,
    space: EnvSpace,
    best: float,
    n_starts: int = 16,
    seed: int = 0,
    n_refine: int = 6,
    min_spacing: float = 1e-2,
) -> FloatArray:
    """Configuration (native units) maximizing EI.

    Every integer-grid combination is crossed with ``n_starts`` seeded
    continuous starting points (plus the continuous part of the best training
    inputs); the best candidates are refined by coordinate search on the
    continuous coordinates. Candidates closer than ``min_spacing`` (unit-box
    distance) to a training input are discarded while any others remain.
    Ties within 1e-12 go to the lower posterior mean, then to the
    lexicographically smallest configuration.
    """
    rng = np.random.default_rng(seed)
    cont, ints = space.continuous, space.integer
    combos = space.grid_unit_combos()

    def assemble(grid: FloatArray, cvals: FloatArray) -> FloatArray:
        out = np.empty((len(grid), space.p))
        out[:, ints] = grid
        out[:, cont] = cvals
        return out

    if cont:
        elite = m.X[np.argsort(m.y, kind="stable")[:n_refine]][:, cont]
        starts = np.unique(np.vstack([rng.uniform(size=(n_starts, len(cont))), elite]), axis=0)
        grid = np.repeat(combos, len(starts), axis=0)
        cand = assemble(grid, np.tile(starts, (len(combos), 1)))
    else:
        cand = assemble(combos, np.empty((len(combos), 0)))
    ei, _ = _ei_batch(m, cand, best)

    if cont:
        top = np.argsort(-ei, kind="stable")[:n_refine]
        refined = [_coordinate_search(m, cand[i].copy(), ei[i], cont, best) for i in top]
        cand = np.vstack([cand, np.array(refined)])

    gap = np.sqrt(((cand[:, None, :] - m.X[None, :, :]) ** 2).sum(-1)).min(1)
    if np.any(gap >= min_spacing):
        cand = cand[gap >= min_spacing]
    ei, mu = _ei_batch(m, cand, best)
    native = np.array([space.from_unit(u) for u in cand])
    ties = np.flatnonzero(ei >= ei.max() - 1e-12)
    ties = ties[mu[ties] <= mu[ties].min()]
    order = sorted(ties.tolist(), key=lambda i: tuple(native[i]))
    return native[order[0]]


def _coordinate_search(
    m: GPModel, x: FloatArray, value: float, cont: Sequence[int], best: float, step: float = 0.05, tol: float = 1e-9
) -> FloatArray:
    while step > tol:
        moves = []
        for i in cont:
            for s in (step, -step):
                y = x.copy()
                y[i] = min(max(y[i] + s, 0.0), 1.0)
                moves.append(y)
        trial = np.array(moves)
        vals, _ = _ei_batch(m, trial, best)
        k = int(np.argmax(vals))
        if vals[k] > value:
            x, value = trial[k], float(vals[k])
        else:
            step *= 0.5
    return x


# --------------------------------------------------------------------------- BO loop


@dataclass(frozen=True)
class Evaluation:
    iteration: int
    d: tuple[float, ...]
    value: float
    incumbent: float
    diverged: bool = False


def _csv_line(fields: Sequence[object]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(fields)
    return buf.getvalue()


def history_header(names: Sequence[str]) -> str:
    return _csv_line(["iteration", *names, "value", "incumbent", "diverged"])


def history_row(e: Evaluation) -> str:
    """One history CSV line; floats use ``repr`` so they round-trip exactly."""
    return _csv_line([e.iteration, *map(repr, e.d), repr(e.value), repr(e.incumbent), int(e.diverged)])


def parse_history_row(row: Sequence[str]) -> Evaluation:
    return Evaluation(int(row[0]), tuple(float(v) for v in row[1:-3]), float(row[-3]), float(row[-2]), bool(int(row[-1])))


@dataclass(frozen=True)
class FalsificationResult:
    h_star: float
    d_star: tuple[float, ...]
    history: tuple[Evaluation, ...]
    budget: int
    names: tuple[str, ...] = ()

    def incumbent_curve(self) -> FloatArray:
        return np.array([e.incumbent for e in self.history])

    def history_csv(self) -> str:
        names = list(self.names) or [f"d{i + 1}" for i in range(len(self.d_star))]
        return history_header(names) + "".join(history_row(e) for e in self.history)

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.history_csv())

    @classmethod
    def from_history(cls, history: Iterable[Evaluation], budget: int, names: Sequence[str] = ()) -> "FalsificationResult":
        history = tuple(history)
        if not history:
            raise ValueError("empty history")
        k = min(range(len(history)), key=lambda i: history[i].value)
        return cls(history[k].value, history[k].d, history, budget, tuple(names))

    @classmethod
    def read_csv(cls, path: str | Path, budget: int | None = None) -> "FalsificationResult":
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
        header, body = rows[0], rows[1:]
        names = header[1:-3]
        history = [parse_history_row(r) for r in body]
        return cls.from_history(history, budget if budget is not None else len(history), names)


def static_params(y_init: ArrayLike, length_scale: float | tuple[float, ...] = 0.2) -> KernelParams:
    """Hyperparameters frozen from the initial design: its variance and mean."""
    y_init = np.asarray(y_init, dtype=np.float64)
    var = float(np.var(y_init, ddof=1)) if len(y_init) > 1 else 0.0
    if not var > 1e-12:
        var = 1.0
    return KernelParams(length_scale=length_scale, signal_variance=var, mean=float(np.mean(y_init)))


def minimize_robustness(
    objective: Callable[[FloatArray], float],
    space: EnvSpace,
    budget: int,
    init_count: int = 10,
    length_scale: float | tuple[float, ...] = 0.2,
    seed: int = 0,
    n_starts: int = 16,
    history: Sequence[Evaluation] = (),
    on_evaluation: Callable[[Evaluation], None] | None = None,
    explore: float = 0.1,
) -> FalsificationResult:
    """Minimize ``objective`` over ``space`` with GP/EI Bayesian optimization.

    The first ``init_count`` evaluations come from a seeded stratified design.
    Afterwards each iteration maximizes EI, except that with probability
    ``explore`` it draws a uniform configuration instead (epsilon-greedy EI,
    which keeps the search from settling on one basin of a rough objective).
    Evaluations that raise or return a non-finite value are replaced by
    (worst value so far + 1) and flagged. Passing a prefix of a previous run's
    ``history`` resumes it: recorded values are reused, and the remaining
    iterations match an uninterrupted run because every random draw is derived
    from ``(seed, iteration)``.
    """
    if not budget >= init_count >= 1:
        raise ValueError("need budget >= init_count >= 1")
    if not 0.0 <= explore <= 1.0:
        raise ValueError("explore must be a probability")
    if len(history) > budget:
        raise ValueError("resumed history is longer than the budget")
    init = space.initial_design(init_count, np.random.default_rng([seed, 0]))
    evals: list[Evaluation] = list(history)
    params: KernelParams | None = None
    for it in range(budget):
        if it < len(evals):
            continue
        values = np.array([e.value for e in evals])
        best = float(values.min()) if len(values) else math.inf
        if it < init_count:
            d = init[it]
        else:
            if params is None:
                params = static_params(values[:init_count], length_scale)
            X = np.array([space.to_unit(e.d) for e in evals])
            coin = np.random.default_rng([seed, it, 2])
            d = None
            if coin.uniform() >= explore:
                try:
                    model = gp_fit(X, values, params)
                    d = propose_next(model, space, best, n_starts=n_starts, seed=_iter_seed(seed, it))
                except GPFitError as exc:
                    logger.warning("iteration %d: %s; sampling uniformly instead", it, exc)
            if d is None:
                d = space.sample(coin)
        value, diverged = _evaluate(objective, d, values)
        best = min(best, value)
        e = Evaluation(it, tuple(float(v) for v in d), value, best, diverged)
        evals.append(e)
        if on_evaluation is not None:
            on_evaluation(e)
    return FalsificationResult.from_history(evals, budget, space.names)


def _iter_seed(seed: int, it: int) -> int:
    return int(np.random.SeedSequence([seed, it]).generate_state(1)[0])


def _evaluate(objective: Callable[[FloatArray], float], d: FloatArray, seen: FloatArray) -> tuple[float, bool]:
    try:
        value = float(objective(np.array(d)))
    except (ArithmeticError, RuntimeError) as exc:
        logger.warning("objective failed at %s: %s", np.asarray(d).tolist(), exc)
        value = math.nan
    if math.isfinite(value):
        return value, False
    worst = float(seen.max()) if len(seen) else 0.0
    return worst + 1.0, True


__all__ = [
    "ContinuousDim", "IntegerDim", "EnvSpace", "KernelParams", "GPModel", "GPFitError",
    "gp_fit", "gp_posterior", "gp_posterior_batch", "expected_improvement", "ei_from_moments",
    "propose_next", "Evaluation", "FalsificationResult", "history_header", "history_row", "minimize_robustness", "static_params",
    "se_kernel",
]
