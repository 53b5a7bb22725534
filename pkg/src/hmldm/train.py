"""Initialisation, Adam optimisation and the two-phase training schedule."""
import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import DisconnectedGraphError, connected
from .model import LatentState, loss_and_grad, poisson_loglik, skellam_map_loss

logger = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "TrainTrace",
    "Block",
    "DivergenceError",
    "spectral_init",
    "warmup_effects",
    "sample_block",
    "block_weight",
    "full_objective",
    "fit",
    "fit_best",
]

_DENSE_EIGEN_MAX = 400


class DivergenceError(RuntimeError):
    """Training hit a non-finite objective twice in a row."""

    def __init__(self, msg, state=None, trace=None):
        super().__init__(msg)
        self.state = state
        self.trace = trace


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a dict of parameter arrays."""

    first_moment: dict
    second_moment: dict
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **kw)

    def copy(self):
        return AdamState({k: v.copy() for k, v in self.first_moment.items()},
                         {k: v.copy() for k, v in self.second_moment.items()},
                         self.step_count, self.beta1, self.beta2, self.epsilon)

    def step(self, params, grads, lr):
        """Update ``params`` in place; only keys present in the moments are touched."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for k, m in self.first_moment.items():
            g = grads[k]
            v = self.second_moment[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.epsilon)


@dataclass
class TrainTrace:
    objective: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    champion_fraction: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    full_objective: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.objective)

    def append(self, objective, lr, champions, phase):
        self.objective.append(float(objective))
        self.lr.append(float(lr))
        self.champion_fraction.append(float(champions))
        self.phase.append(phase)


class Block(NamedTuple):
    nodes: np.ndarray
    pairs: np.ndarray
    weight: float


def _normalized_operator(g):
    """D^{-1/2} A D^{-1/2} with D the degrees of |A| (plain normalisation when unsigned)."""
    a = g.adjacency().astype(np.float64)
    deg = np.asarray(abs(a).sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    dm = sp.diags(inv)
    return (dm @ a @ dm).tocsr()


def laplacian_eigenvectors(g, k):
    """The ``k`` eigenpairs of smallest eigenvalue of I - D^{-1/2} A D^{-1/2}."""
    m = _normalized_operator(g)
    n = g.num_nodes
    if n <= _DENSE_EIGEN_MAX or k >= n - 1:
        vals, vecs = scipy.linalg.eigh(np.eye(n) - m.toarray())
        return vals[:k], vecs[:, :k]
    # smallest of I - M are the largest algebraic of M
    vals, vecs = spla.eigsh(m, k=k, which="LA", v0=np.ones(n) / np.sqrt(n))
    order = np.argsort(-vals)
    return 1.0 - vals[order], vecs[:, order]


def _random_effects(kind, n, rng):
    if kind == "unsigned":
        return {"gamma": rng.standard_normal(n)}
    return {"beta": rng.standard_normal(n), "psi": rng.standard_normal(n)}


def spectral_init(g, dim, seed=None):
    """Logits from the ``dim + 1`` bottom eigenvectors of the (signed) normalised Laplacian.

    Each eigenvector column is standardised to zero mean and unit variance
    (constant columns become zeros) and used directly as logits. Random
    effects are i.i.d. standard normal.
    """
    if not connected(g):
        raise DisconnectedGraphError("spectral initialisation needs a connected graph")
    k = dim + 1
    if k > g.num_nodes:
        raise ValueError("dim + 1 may not exceed the number of nodes")
    rng = np.random.default_rng(seed)
    try:
        _, vecs = laplacian_eigenvectors(g, k)
        if not np.all(np.isfinite(vecs)):
            raise np.linalg.LinAlgError("non-finite eigenvectors")
        mu = vecs.mean(axis=0)
        sd = vecs.std(axis=0)
        logits = np.where(sd > 1e-10, (vecs - mu) / np.where(sd > 1e-10, sd, 1.0), 0.0)
    except (np.linalg.LinAlgError, spla.ArpackError) as err:
        warnings.warn(f"eigensolver failed ({err}); using random logits", RuntimeWarning, stacklevel=2)
        logits = 0.1 * rng.standard_normal((g.num_nodes, k))
    return LatentState(logits, **_random_effects(g.kind, g.num_nodes, rng))


def block_weight(num_nodes, block_size):
    """Scale that makes a uniformly sampled node block unbiased for the full dyad sum."""
    if block_size < 2:
        return 0.0
    return num_nodes * (num_nodes - 1) / (block_size * (block_size - 1))


def sample_block(num_nodes, sample_size, seed, iteration, bipartite=None):
    """Dyads among ``sample_size`` nodes drawn with replacement.

    The draw is repeated until at least two distinct nodes come up, so that,
    given its size, the deduplicated node set is a uniform subset and
    ``weight * block_sum`` is an unbiased estimate of the full sum.
    """
    if not 2 <= sample_size <= num_nodes:
        raise ValueError("need 2 <= sample_size <= num_nodes")
    rng = np.random.default_rng([int(seed), int(iteration)])
    while True:
        nodes = np.unique(rng.integers(0, num_nodes, size=sample_size))
        if len(nodes) >= 2:
            break
    if bipartite is not None:
        r = bipartite[0]
        rows, cols = nodes[nodes < r], nodes[nodes >= r]
        pairs = np.column_stack([np.repeat(rows, len(cols)), np.tile(cols, len(rows))])
    else:
        iu, ju = np.triu_indices(len(nodes), k=1)
        pairs = np.column_stack([nodes[iu], nodes[ju]])
    return Block(nodes, pairs.astype(np.int64).reshape(-1, 2), block_weight(num_nodes, len(nodes)))


def full_objective(g, state, cfg):
    """Objective over every dyad (training loss, lower is better)."""
    if g.signed:
        return skellam_map_loss(g, state, cfg)
    return -poisson_loglik(g, state, cfg)


def _uses_blocks(g, cfg):
    return cfg.sample_size is not None and cfg.sample_size < g.num_nodes


def _champions(state, tol):
    return float(np.mean(state.memberships.max(axis=1) >= tol))


def _run_phase(g, state, cfg, n_iters, phase, trace, seed, offset, effects_only):
    params = state.params()
    keys = state.effect_names() if effects_only else tuple(params)
    adam = AdamState.for_params({k: params[k] for k in keys})
    lr = cfg.lr
    failures = 0
    redo = False
    snapshot = None
    it = 0
    while it < n_iters:
        if _uses_blocks(g, cfg):
            blk = sample_block(g.num_nodes, cfg.sample_size, seed, offset + it, g.bipartite)
            pairs, scale = blk.pairs, blk.weight
        else:
            pairs, scale = None, 1.0
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gstate = loss_and_grad(g, LatentState(**params), cfg, pairs, scale, effects_only)
        grads = gstate.params()
        if not (np.isfinite(loss) and all(np.all(np.isfinite(grads[k])) for k in keys)):
            failures += 1
            if failures >= 2 or snapshot is None:
                raise DivergenceError(
                    f"non-finite objective at {phase} iteration {it}", LatentState(**params), trace)
            # undo the step that led here and retry it with half the learning rate
            restored, adam = snapshot
            params.update(restored)
            snapshot = None
            lr *= 0.5
            it -= 1
            for col in (trace.objective, trace.lr, trace.champion_fraction, trace.phase):
                col.pop()
            redo = True
            logger.warning("non-finite objective at %s iteration %d; lr -> %g", phase, it + 1, lr)
            continue
        if not redo:
            failures = 0
        redo = False
        snapshot = ({k: params[k].copy() for k in keys}, adam.copy())
        adam.step(params, grads, lr)
        trace.append(loss, lr, _champions(LatentState(**params), cfg.champion_tol), phase)
        it += 1
    return LatentState(**params)


def warmup_effects(g, state, cfg, trace=None):
    """``cfg.warmup_iters`` Adam steps on the random effects with the logits frozen."""
    trace = TrainTrace() if trace is None else trace
    state = state.copy()
    if cfg.warmup_iters == 0:
        return state
    return _run_phase(g, state, cfg, cfg.warmup_iters, "warmup", trace,
                      cfg.seed, 0, effects_only=True)


def fit(g, cfg, init=None, seed=None):
    """Spectral init, effects warm-up, then joint Adam steps.

    Returns ``(state, trace)``. ``seed`` overrides ``cfg.seed`` (used for
    restarts). Raises ``DivergenceError`` carrying the partial trace when the
    objective turns non-finite twice in a row.
    """
    seed = cfg.seed if seed is None else seed
    if init is None:
        init = spectral_init(g, cfg.dim, seed)
    if init.kind != g.kind:
        raise ValueError("initial state does not match the graph kind")
    trace = TrainTrace(header={
        "init": "normalised-laplacian eigenvectors, standardised columns as logits",
        "objective": "skellam_map" if g.signed else "poisson_nll",
        "sampling": (f"node blocks of {cfg.sample_size} draws" if _uses_blocks(g, cfg)
                     else "full dyad sum"),
        "seed": int(seed),
    })
    state = init.copy()
    if cfg.warmup_iters:
        state = _run_phase(g, state, cfg, cfg.warmup_iters, "warmup", trace,
                           seed, 0, effects_only=True)
    if cfg.train_iters:
        state = _run_phase(g, state, cfg, cfg.train_iters, "train", trace,
                           seed, cfg.warmup_iters, effects_only=False)
    return state, trace


def fit_best(g, cfg):
    """Best of ``cfg.restarts`` runs by full training objective."""
    best = None
    for r in range(cfg.restarts):
        seed = cfg.seed if r == 0 else int(np.random.SeedSequence([cfg.seed, r]).generate_state(1)[0])
        state, trace = fit(g, cfg, seed=seed)
        obj = full_objective(g, state, cfg)
        trace.full_objective.append(obj)
        trace.header["restart"] = r
        if best is None or obj < best[2]:
            best = (state, trace, obj)
    return best[0], best[1]
