"""Planted-partition graphs with known communities, for tests and demos."""
import numpy as np

from .graph import Graph, connected

__all__ = ["planted_sbm", "planted_signed"]


def _labels(sizes):
    return np.repeat(np.arange(len(sizes)), sizes)


def planted_sbm(sizes=(30, 30), p_in=0.3, p_out=0.01, seed=None, max_tries=1000):
    """Unsigned stochastic block model, redrawn until connected.

    Returns ``(graph, labels)``.
    """
    rng = np.random.default_rng(seed)
    labels = _labels(sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    for _ in range(max_tries):
        hit = rng.random(len(iu)) < prob
        g = Graph(n, np.column_stack([iu[hit], ju[hit]]), np.ones(hit.sum(), dtype=np.int64))
        if connected(g):
            return g, labels
    raise RuntimeError("could not draw a connected graph")


def planted_signed(sizes=(30, 30), kappa=0.2, sigma=1.5, seed=None, max_tries=1000):
    """Signed two-camp graph: positive links inside blocks, negative across.

    Each node gets a log-normal activity ``a_i = exp(sigma * z_i)``; a dyad
    is linked with probability ``1 - exp(-kappa a_i a_j)``. Activity makes
    links and non-links distinguishable beyond block membership.
    Returns ``(graph, labels)``.
    """
    rng = np.random.default_rng(seed)
    labels = _labels(sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    sign = np.where(labels[iu] == labels[ju], 1, -1)
    for _ in range(max_tries):
        act = np.exp(sigma * rng.standard_normal(n))
        prob = -np.expm1(-kappa * act[iu] * act[ju])
        hit = rng.random(len(iu)) < prob
        g = Graph(n, np.column_stack([iu[hit], ju[hit]]), sign[hit], kind="signed")
        if connected(g):
            return g, labels
    raise RuntimeError("could not draw a connected graph")
