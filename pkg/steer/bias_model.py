"""Additive persona-bias model RC(i, j) = theta_i + u_j + eps_ij

Fitted by alternating least squares under the centering constraint
sum_i theta_i = 0. The per-persona mean squared residual is the
stability descriptor used by the variance constraint.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core_model import RatingMatrix
from .errors import DomainError, IdentifiabilityError

logger = logging.getLogger("steer")

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 10_000


@dataclass(frozen=True)
class BiasFit:
    theta: Dict[str, float]
    u: Dict[str, float]
    s2: Dict[str, float]
    loss: float
    iterations: int
    loss_history: Tuple[float, ...] = ()
    converged: bool = True


def _observation_components(ratings: RatingMatrix, mask: np.ndarray) -> List[List[str]]:
    """Connected components of the bipartite case/persona graph."""
    n_cases, n_personas = mask.shape
    rows, cols = np.nonzero(mask)
    size = n_cases + n_personas
    graph = csr_matrix(
        (np.ones(len(rows)), (rows, cols + n_cases)), shape=(size, size)
    )
    n_components, labels = connected_components(graph, directed=False)
    if n_components == 1:
        return []
    names = list(ratings.cases) + list(ratings.personas)
    components: List[List[str]] = [[] for _ in range(n_components)]
    for node, label in enumerate(labels):
        components[label].append(names[node])
    return components


def fit_additive_bias_model(ratings: RatingMatrix,
                            tolerance: float = DEFAULT_TOLERANCE,
                            max_iterations: int = DEFAULT_MAX_ITERATIONS) -> BiasFit:
    """
    Least-squares fit of theta (per case) and u (per persona).

    Each sweep solves theta exactly given u, re-centers theta (moving the
    mean into u), then solves u exactly given theta. The loss is therefore
    non-increasing across sweeps. Stops when the largest parameter change
    falls below tolerance.

    Raises:
        DomainError: empty matrix
        IdentifiabilityError: observation graph not connected
    """
    if not ratings.cases or not ratings.personas or len(ratings) == 0:
        raise DomainError("cannot fit the bias model on an empty rating matrix")
    if max_iterations < 1:
        raise DomainError(f"max_iterations={max_iterations} must be >= 1")

    values, mask = ratings.to_arrays()
    components = _observation_components(ratings, mask)
    if components:
        summary = "; ".join("{" + ", ".join(c) + "}" for c in components)
        raise IdentifiabilityError(
            f"observation graph has {len(components)} components: {summary}", components
        )

    weights = mask.astype(float)
    row_counts = weights.sum(axis=1)
    col_counts = weights.sum(axis=0)

    theta = np.zeros(values.shape[0])
    u = np.zeros(values.shape[1])
    history: List[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, max_iterations + 1):
        new_theta = ((values - u[None, :]) * weights).sum(axis=1) / row_counts
        new_theta -= new_theta.mean()
        new_u = ((values - new_theta[:, None]) * weights).sum(axis=0) / col_counts

        change = max(np.abs(new_theta - theta).max(), np.abs(new_u - u).max())
        theta, u = new_theta, new_u
        residuals = (values - theta[:, None] - u[None, :]) * weights
        history.append(float((residuals ** 2).sum()))
        if change < tolerance:
            converged = True
            break

    if not converged:
        logger.warning(f"Bias model stopped after {iterations} sweeps without reaching tolerance {tolerance}")

    residuals = (values - theta[:, None] - u[None, :]) * weights
    s2 = (residuals ** 2).sum(axis=0) / col_counts

    return BiasFit(
        theta={c: float(t) for c, t in zip(ratings.cases, theta)},
        u={p: float(v) for p, v in zip(ratings.personas, u)},
        s2={p: float(v) for p, v in zip(ratings.personas, s2)},
        loss=history[-1],
        iterations=iterations,
        loss_history=tuple(history),
        converged=converged,
    )


def residual_variance(ratings: RatingMatrix, fit: BiasFit, persona: str) -> float:
    """Mean squared residual of one persona over its observed, fitted cells."""
    if persona not in fit.u:
        raise DomainError(f"persona {persona!r} is not part of the fit")
    squared = [
        (level - fit.theta[case_id] - fit.u[persona]) ** 2
        for case_id, level in ratings.persona_ratings(persona).items()
        if case_id in fit.theta
    ]
    if not squared:
        raise DomainError(f"persona {persona!r} has no observed cells in the fit")
    return float(np.mean(squared))
