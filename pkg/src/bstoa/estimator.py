"""Delay matrix estimators: plain least squares and the constrained refinement.

The least squares estimate reduces to per-subchannel pilot means.  The
refined estimate projects it onto the constraint subspace with the weighting
matrix; monostatic channels get an additional symmetrization, which keeps
the linear constraint satisfied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ObservationBlock
from .errors import ConstraintViolated, DimensionMismatch
from .topology import (
    Kind,
    Topology,
    correlation_matrix,
    unvec,
    vec,
    weighting_matrix,
)


@dataclass
class EstimateReport:
    """Both estimates for one observation block.

    constraint_residual is the max-norm of the constraint equations at the
    refined estimate; it is zero up to rounding by construction.
    """

    t_hat: np.ndarray
    t_tilde: np.ndarray
    constraint_residual: float


def ls_estimate(obs: ObservationBlock, topo: Topology) -> np.ndarray:
    """Least squares delay estimate: the mean over the L pilot rows of each
    subchannel.

    This equals the normal equations solution for the pilot matrix used by
    :func:`bstoa.channel.synth_observations`, at O(L m n) cost.
    """
    m, n = topo.m, topo.n
    length = obs.pilot_len
    if obs.y.shape != (length * m, n):
        raise DimensionMismatch(
            f"observations {obs.y.shape} do not match L={length}, m={m}, n={n}"
        )
    return obs.y.reshape(m, length, n).mean(axis=1)


def refine_bistatic(t_hat: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project the estimate onto the constraint subspace: unvec(B vec(t))."""
    t_hat = np.asarray(t_hat, dtype=np.float64)
    m, n = t_hat.shape
    if b.shape != (m * n, m * n):
        raise DimensionMismatch(
            f"weighting matrix {b.shape} does not match delay matrix {t_hat.shape}"
        )
    return unvec(b @ vec(t_hat), m, n)


def refine_monostatic(t_hat: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project onto the constraint subspace, then symmetrize.

    The symmetrization (T + T^T) / 2 is applied after the projection and
    preserves the linear constraint, so the result satisfies both.
    """
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if t_hat.ndim != 2 or t_hat.shape[0] != t_hat.shape[1]:
        raise DimensionMismatch(f"monostatic delay matrix must be square, got {t_hat.shape}")
    t_bar = refine_bistatic(t_hat, b)
    return 0.5 * (t_bar + t_bar.T)


def refine_estimate(t_hat: np.ndarray, topo: Topology, b: np.ndarray) -> np.ndarray:
    """Topology dispatch for the constrained refinement."""
    if topo.kind is Kind.MONOSTATIC:
        return refine_monostatic(t_hat, b)
    return refine_bistatic(t_hat, b)


def full_estimate(
    obs: ObservationBlock, topo: Topology, b: np.ndarray | None = None
) -> EstimateReport:
    """Run both estimators and report the constraint residual."""
    if b is None:
        b = weighting_matrix(correlation_matrix(topo))
    t_hat = ls_estimate(obs, topo)
    t_tilde = refine_estimate(t_hat, topo, b)
    a = correlation_matrix(topo)
    if a.shape[0]:
        residual = float(np.abs(a.astype(np.float64) @ vec(t_tilde)).max())
    else:
        residual = 0.0
    return EstimateReport(t_hat=t_hat, t_tilde=t_tilde, constraint_residual=residual)


def decompose_delays(
    t: np.ndarray, delta: float, gauge_g1: float
) -> tuple[np.ndarray, np.ndarray]:
    """Split a constraint-satisfying delay matrix into uplink and downlink
    delay vectors.

    The split is unique only up to a common shift between the two vectors
    (and delta), so the caller fixes the gauge by choosing the first
    downlink delay ``gauge_g1``.  Monostatic callers get equal vectors by
    passing ``gauge_g1 = (t[0, 0] - delta) / 2``.

    Raises:
        ConstraintViolated: if ``t`` does not satisfy the topology
            constraint to within 1e-9 * max(1, max|t|).
    """
    t = np.asarray(t, dtype=np.float64)
    m, n = t.shape
    a = correlation_matrix(Topology.bistatic(m, n))
    if a.shape[0]:
        residual = np.abs(a.astype(np.float64) @ vec(t)).max()
        tol = 1e-9 * max(1.0, np.abs(t).max())
        if residual > tol:
            raise ConstraintViolated(
                f"constraint residual {residual:.3e} exceeds tolerance {tol:.3e}"
            )
    h = t[:, 0] - delta - gauge_g1
    g = t[0, :] - delta - h[0]
    return h, g
