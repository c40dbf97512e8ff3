"""AllPairs: joint likelihood over every nonempty interventional pair.

Each pair (k, k') contributes

    ĉ_k log(p_k r) + ¬ĉ_k log(1 - p_k r) + ĉ_k' log(p_k' r) + ¬ĉ_k' log(1 - p_k' r)

with a shared relevance r = r_{k,k'}. The objective is maximized by projected
gradient ascent with Barzilai-Borwein steps and Armijo backtracking, with
p_1 pinned to 1 and every free variable boxed into [lower, upper].
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Set, Tuple

import numpy as np
from scipy.special import xlogy

from ..exceptions import ConfigError, DomainError, NoInterventionalDataError
from ..interventions import InterventionalStats
from .curve import PropensityCurve

logger = logging.getLogger(__name__)

WEIGHTINGS = ("printed", "set-size")

# Armijo sufficient-increase constant.
_ARMIJO = 1e-4
_MIN_STEP = 1e-20
_MAX_STEP = 1e10


@dataclass(frozen=True)
class AllPairsOptions:
    """Optimizer settings.

    Attributes:
        max_iter: Iteration cap; hitting it leaves ``converged`` False.
        tol: Convergence threshold for both the relative objective change of
            an accepted step and the projected gradient of the normalized
            objective.
        weighting: "printed" uses the raw weighted counts; "set-size" turns
            every pair into rates and rescales them by |S_{k,k'}|.
        lower: Lower box bound for every free p_k and r.
        upper: Upper box bound for every free p_k and r.
    """

    max_iter: int = 10_000
    tol: float = 1e-9
    weighting: str = "printed"
    lower: float = 1e-6
    upper: float = 1 - 1e-6

    def validate(self) -> "AllPairsOptions":
        if self.max_iter < 1:
            raise ConfigError("max_iter", f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ConfigError("tol", f"tol must be > 0, got {self.tol}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError("weighting", f"weighting must be one of {', '.join(WEIGHTINGS)}, got {self.weighting!r}")
        if not 0 < self.lower < self.upper < 1:
            raise ConfigError("bounds", f"need 0 < lower < upper < 1, got [{self.lower}, {self.upper}]")
        return self


@dataclass(frozen=True, eq=False)
class AllPairsSolution:
    curve: PropensityCurve
    r_hat: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    history: Tuple[float, ...] = field(default=(), repr=False)


def _pair_mask(M: int, pairs: List[Tuple[int, int]]) -> np.ndarray:
    mask = np.zeros((M, M), dtype=bool)
    for k, k2 in pairs:
        mask[k - 1, k2 - 1] = mask[k2 - 1, k - 1] = True
    return mask


def _objective(p: np.ndarray, R: np.ndarray, c: np.ndarray, nc: np.ndarray, mask: np.ndarray) -> float:
    pr = np.where(mask, p[:, None] * R, 0.5)
    terms = xlogy(c, pr) + xlogy(nc, 1.0 - pr)
    return float(terms[mask].sum())


def all_pairs_objective(p, r, stats: InterventionalStats) -> float:
    """Log-likelihood of (p, r) under the weighted interventional counts.

    Args:
        p: Length-M propensities.
        r: (M, M) symmetric relevance matrix; the diagonal is ignored.
        stats: Interventional statistics; pairs with an empty set contribute 0.

    Raises:
        DomainError: If any p_k or used r entry lies outside (0, 1).

    Example:
        >>> stats = InterventionalStats.from_pairs(2, {(1, 2): (1, 1, 0, 2, 1)})
        >>> round(all_pairs_objective([0.5, 0.5], [[0, 0.5], [0.5, 0]], stats), 6)
        -2.24934
    """
    p = np.asarray(p, dtype=np.float64)
    R = np.asarray(r, dtype=np.float64)
    M = stats.M
    if p.shape != (M,) or R.shape != (M, M):
        raise ValueError(f"p must have shape ({M},) and r shape ({M}, {M})")
    mask = stats.set_size > 0
    if not np.all((p > 0) & (p < 1)):
        raise DomainError("propensities must lie in the open interval (0, 1)")
    used = R[mask]
    if not np.all((used > 0) & (used < 1)):
        raise DomainError("relevances must lie in the open interval (0, 1)")
    return _objective(p, R, stats.c_hat, stats.notc_hat, mask)


def _weighted_counts(stats: InterventionalStats, weighting: str) -> Tuple[np.ndarray, np.ndarray]:
    if weighting == "printed":
        return stats.c_hat.copy(), stats.notc_hat.copy()
    exposure = stats.exposure()
    seen = exposure > 0
    scale = np.zeros_like(exposure)
    scale[seen] = stats.set_size[seen] / exposure[seen]
    return stats.c_hat * scale, stats.notc_hat * scale


def _connected_to_first(M: int, pairs: List[Tuple[int, int]]) -> Set[int]:
    reached = {1}
    frontier = [1]
    while frontier:
        k = frontier.pop()
        for a, b in pairs:
            for here, there in ((a, b), (b, a)):
                if here == k and there not in reached:
                    reached.add(there)
                    frontier.append(there)
    return reached


def projected_gradient_ascent(
    fun_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    lower: float,
    upper: float,
    max_iter: int,
    tol: float,
    gain: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
) -> Tuple[np.ndarray, float, int, bool, List[float]]:
    """Maximize a smooth function over a box.

    Every accepted step satisfies the Armijo condition, so the objective
    never decreases. The run has converged once an accepted step changes the
    objective by less than ``tol`` relative and the projected gradient
    ``clip(x + g) - x`` is below ``tol`` in every coordinate.

    Args:
        gain: Optional ``gain(x, d)`` returning f(x + d) - f(x) computed
            without subtracting two totals. Without it the Armijo test
            compares objective values directly.

    Returns (x, f, iterations, converged, history).
    """
    x = np.clip(x0, lower, upper)
    f, g = fun_grad(x)
    history = [f]
    step = 1.0
    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        t = step
        while True:
            x_new = np.clip(x + t * g, lower, upper)
            d = x_new - x
            if not d.any():
                break
            f_new, g_new = fun_grad(x_new)
            delta = gain(x, d) if gain is not None else f_new - f
            if np.isfinite(f_new) and np.isfinite(delta) and delta >= _ARMIJO * float(g @ d):
                break
            t *= 0.5
            if t < _MIN_STEP:
                d = np.zeros_like(x)
                break
        if not d.any():
            # No ascent step is numerically possible from here.
            converged = True
            break
        change = abs(delta) / max(abs(f), 1e-12)
        s, y = d, g_new - g
        sy = float(s @ y)
        step = float(s @ s) / -sy if sy < 0 else 2.0 * t
        step = min(max(step, _MIN_STEP), _MAX_STEP)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if change < tol and _projected_gradient_norm(x, g, lower, upper) < tol:
            converged = True
            break
    return x, f, iterations, converged, history


def _projected_gradient_norm(x: np.ndarray, g: np.ndarray, lower: float, upper: float) -> float:
    return float(np.abs(np.clip(x + g, lower, upper) - x).max())


def all_pairs_estimate(
    stats: InterventionalStats,
    options: Optional[AllPairsOptions] = None,
) -> AllPairsSolution:
    """Jointly estimate propensities and per-pair relevances.

    Ranks not linked to rank 1 through nonempty pairs are absent from the
    curve, since their scale cannot be tied to p_1.

    Raises:
        NoInterventionalDataError: If no interventional set is nonempty.
        ConfigError: If the options are invalid.
    """
    options = (options or AllPairsOptions()).validate()
    M = stats.M
    c, nc = _weighted_counts(stats, options.weighting)
    exposure = c + nc
    pairs = [
        (k, k2)
        for k, k2 in stats.nonempty_pairs()
        if exposure[k - 1, k2 - 1] > 0 and exposure[k2 - 1, k - 1] > 0
    ]
    if not pairs:
        raise NoInterventionalDataError()

    diagnostics: List[str] = []
    linked = _connected_to_first(M, pairs)
    for k in range(2, M + 1):
        if k not in linked:
            message = f"rank {k}: not connected to rank 1 through interventional pairs"
            diagnostics.append(message)
            logger.warning(message)
    pairs = [(k, k2) for k, k2 in pairs if k in linked and k2 in linked]
    if not pairs:
        raise NoInterventionalDataError("no interventional data involving rank 1", diagnostics)
    free_ranks = sorted(linked - {1})
    mask = _pair_mask(M, pairs)

    # Normalize so the step-size heuristics and tolerance see O(1) values.
    total = float(c[mask].sum() + nc[mask].sum())
    c_n, nc_n = c / total, nc / total

    p_index = np.array([k - 1 for k in free_ranks], dtype=np.int64)
    rows = np.array([k - 1 for k, _ in pairs], dtype=np.int64)
    cols = np.array([k2 - 1 for _, k2 in pairs], dtype=np.int64)
    n_p = len(free_ranks)

    def unpack(x: np.ndarray, p_fill: float = 1.0, r_fill: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
        p = np.full(M, p_fill)
        p[p_index] = x[:n_p]
        R = np.full((M, M), r_fill)
        R[rows, cols] = x[n_p:]
        R[cols, rows] = x[n_p:]
        return p, R

    def fun_grad(x: np.ndarray) -> Tuple[float, np.ndarray]:
        p, R = unpack(x)
        pr = np.where(mask, p[:, None] * R, 0.5)
        f = float((xlogy(c_n, pr) + xlogy(nc_n, 1.0 - pr))[mask].sum())
        G = np.where(mask, c_n / pr - nc_n / (1.0 - pr), 0.0)
        grad_p = (G * R).sum(axis=1)
        grad_R = G * p[:, None]
        grad = np.concatenate([grad_p[p_index], grad_R[rows, cols] + grad_R[cols, rows]])
        return f, grad

    def gain(x: np.ndarray, d: np.ndarray) -> float:
        p, R = unpack(x)
        dp, dR = unpack(d, 0.0, 0.0)
        pr = np.where(mask, p[:, None] * R, 0.5)
        # (p + dp)(R + dR) - pR, without cancellation.
        dpr = np.where(mask, dp[:, None] * (R + dR) + p[:, None] * dR, 0.0)
        terms = c_n * np.log1p(dpr / pr) + nc_n * np.log1p(-dpr / (1.0 - pr))
        return float(terms[mask].sum())

    x0 = np.concatenate([1.0 / (p_index + 1.0), np.full(len(pairs), 0.5)])
    x, _, iterations, converged, history = projected_gradient_ascent(
        fun_grad, x0, options.lower, options.upper, options.max_iter, options.tol, gain
    )
    if not converged:
        message = f"all-pairs optimizer hit the iteration cap ({options.max_iter}) before converging"
        diagnostics.append(message)
        logger.warning(message)

    p, R = unpack(x)
    values: List[Optional[float]] = [1.0] + [float(p[k - 1]) if k in linked else None for k in range(2, M + 1)]
    r_hat = np.where(mask, R, 0.0)
    objective_value = _objective(p, R, c, nc, mask)
    logger.info(
        "all-pairs fit: %d pairs, %d iterations, converged=%s, objective=%.6g",
        len(pairs), iterations, converged, objective_value,
    )
    return AllPairsSolution(
        curve=PropensityCurve(tuple(values), "all-pairs", tuple(diagnostics)),
        r_hat=r_hat,
        objective_value=objective_value,
        iterations=iterations,
        converged=converged,
        history=tuple(h * total for h in history),
    )
