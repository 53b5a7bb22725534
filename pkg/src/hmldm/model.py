"""Simplex-constrained latent distance model: rates, objectives and gradients.

Node memberships live on the probability simplex through a row-wise softmax
of unconstrained logits. The unsigned model uses a Poisson likelihood with
one random effect per node (``gamma``); the signed model uses a Skellam
likelihood with separate positive (``beta``) and negative (``psi``) effects
and a Gaussian prior of strength ``rho`` on both.
"""
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .special import log_bessel_i, log_bessel_i_deriv

__all__ = [
    "ModelConfig",
    "LatentState",
    "SkellamRates",
    "softmax_rows",
    "membership",
    "poisson_rate",
    "skellam_rates",
    "poisson_loglik",
    "skellam_map_loss",
    "loss_and_grad",
    "grad",
    "eigenmodel_gap",
]

# distance floor for the p=1 gradient
_DIST_FLOOR = 1e-12
_CHUNK = 1 << 19


@dataclass
class ModelConfig:
    """Hyper-parameters of one training run.

    ``sample_size=None`` (or any value >= N) trains on the full dyad sum;
    smaller values train on randomly sampled node blocks.
    """

    dim: int = 8
    p: int = 2
    delta: float = 1.0
    rho: float = 1.0
    lr: float = 0.05
    warmup_iters: int = 1000
    train_iters: int = 5000
    sample_size: int | None = None
    seed: int = 0
    restarts: int = 5
    champion_tol: float = 0.999
    reproducible: bool = False

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if self.sample_size is not None and self.sample_size < 2:
            raise ValueError("sample_size must be at least 2")
        if self.warmup_iters < 0 or self.train_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not 0.5 < self.champion_tol <= 1.0:
            raise ValueError("champion_tol must lie in (0.5, 1]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LatentState:
    """Model parameters: membership logits plus per-node random effects."""

    logits: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    psi: np.ndarray | None = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        for name in ("gamma", "beta", "psi"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float64))
        if self.gamma is not None and (self.beta is not None or self.psi is not None):
            raise ValueError("a state is either unsigned (gamma) or signed (beta, psi)")
        if self.gamma is None and (self.beta is None or self.psi is None):
            raise ValueError("signed states need both beta and psi")

    @property
    def kind(self):
        return "unsigned" if self.gamma is not None else "signed"

    @property
    def num_nodes(self):
        return self.logits.shape[0]

    @property
    def num_corners(self):
        return self.logits.shape[1]

    @property
    def memberships(self):
        return softmax_rows(self.logits)

    def effect_names(self):
        return ("gamma",) if self.kind == "unsigned" else ("beta", "psi")

    def params(self):
        out = {"logits": self.logits}
        for name in self.effect_names():
            out[name] = getattr(self, name)
        return out

    def copy(self):
        return LatentState(**{k: v.copy() for k, v in self.params().items()})

    @classmethod
    def zeros_like(cls, other):
        return cls(**{k: np.zeros_like(v) for k, v in other.params().items()})


class SkellamRates(NamedTuple):
    lambda_pos: np.ndarray
    lambda_neg: np.ndarray


def softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def membership(state, i):
    """Simplex coordinates of node ``i``."""
    return softmax_rows(state.logits[i])


def _distance_term(diff, delta, p):
    sq = np.einsum("...k,...k->...", diff, diff)
    if p == 2:
        return delta ** 2 * sq, sq
    dist = np.sqrt(sq)
    return delta * dist, dist


def poisson_rate(w_i, w_j, gamma_i, gamma_j, delta, p):
    """exp(gamma_i + gamma_j - delta^p ||w_i - w_j||^p)."""
    diff = np.asarray(w_i, dtype=np.float64) - np.asarray(w_j, dtype=np.float64)
    t, _ = _distance_term(diff, delta, p)
    return np.exp(gamma_i + gamma_j - t)


def skellam_rates(w_i, w_j, beta_i, beta_j, psi_i, psi_j, delta, p):
    """Positive and negative Skellam rates; distance lowers the first and raises the second."""
    diff = np.asarray(w_i, dtype=np.float64) - np.asarray(w_j, dtype=np.float64)
    t, _ = _distance_term(diff, delta, p)
    return SkellamRates(np.exp(beta_i + beta_j - t), np.exp(psi_i + psi_j + t))


def _iter_pairs(g, pairs):
    if pairs is None:
        yield from g.iter_dyads(_CHUNK)
        return
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    for start in range(0, len(pairs), _CHUNK):
        yield pairs[start:start + _CHUNK]


def _check_kind(g, state):
    if g.kind != state.kind:
        raise ValueError(f"{g.kind} graph given to a {state.kind} model state")


def _scatter(idx, vals, n):
    return np.bincount(idx, weights=vals, minlength=n)


def _accumulate(g, state, cfg, pairs, scale, want_grad, effects_only):
    """Sum of per-dyad losses (scaled) and, optionally, raw gradients.

    Returns ``(loss, grad_w, grad_effects)`` where ``grad_w`` is the gradient
    with respect to the simplex coordinates (before the softmax).
    """
    _check_kind(g, state)
    n = state.num_nodes
    W = state.memberships
    signed = state.kind == "signed"
    delta, p = cfg.delta, cfg.p
    total = 0.0
    gw = np.zeros_like(W) if want_grad and not effects_only else None
    ge = {k: np.zeros(n) for k in state.effect_names()} if want_grad else None

    for P in _iter_pairs(g, pairs):
        if not len(P):
            continue
        I, J = P[:, 0], P[:, 1]
        y = g.dyad_weights(P).astype(np.float64)
        diff = W[I] - W[J]
        t, dist = _distance_term(diff, delta, p)
        if not signed:
            eta = state.gamma[I] + state.gamma[J] - t
            lam = np.exp(eta)
            total += scale * (lam.sum() - np.dot(y, eta))
            if not want_grad:
                continue
            g_eta = scale * (lam - y)
            ge["gamma"] += _scatter(I, g_eta, n) + _scatter(J, g_eta, n)
            g_t = -g_eta
        else:
            eta_p = state.beta[I] + state.beta[J] - t
            eta_n = state.psi[I] + state.psi[J] + t
            lp, ln = np.exp(eta_p), np.exp(eta_n)
            x = 2.0 * np.exp(0.5 * (eta_p + eta_n))
            nu = np.abs(y).astype(np.int64)
            total += scale * (lp.sum() + ln.sum() - 0.5 * np.dot(y, eta_p - eta_n)
                              - log_bessel_i(nu, x).sum())
            if not want_grad:
                continue
            # d log I_nu(x) / d eta = x/2 * d log I_nu / dx
            c = 0.5 * x * log_bessel_i_deriv(nu, x)
            g_p = scale * (lp - 0.5 * y - c)
            g_n = scale * (ln + 0.5 * y - c)
            ge["beta"] += _scatter(I, g_p, n) + _scatter(J, g_p, n)
            ge["psi"] += _scatter(I, g_n, n) + _scatter(J, g_n, n)
            g_t = g_n - g_p
        if effects_only:
            continue
        if p == 2:
            coef = g_t * 2.0 * delta ** 2
        else:
            safe = np.maximum(dist, _DIST_FLOOR)
            coef = np.where(dist > 0, g_t * delta / safe, 0.0)
        gd = coef[:, None] * diff
        for k in range(W.shape[1]):
            gw[:, k] += _scatter(I, gd[:, k], n) - _scatter(J, gd[:, k], n)

    if signed:
        reg = 0.5 * cfg.rho * (np.dot(state.beta, state.beta) + np.dot(state.psi, state.psi))
        total += reg
        if want_grad:
            ge["beta"] += cfg.rho * state.beta
            ge["psi"] += cfg.rho * state.psi
    return total, gw, ge


def _softmax_backward(W, gw):
    return W * (gw - np.einsum("ik,ik->i", gw, W)[:, None])


def loss_and_grad(g, state, cfg, pairs=None, scale=1.0, effects_only=False):
    """Training objective (to minimise) and its gradient as a ``LatentState``.

    For unsigned graphs the objective is the negative Poisson log-likelihood,
    for signed graphs the Skellam MAP loss. ``scale`` multiplies the dyad sum
    only (the prior term is never rescaled). With ``effects_only`` the logits
    gradient is returned as zeros.
    """
    loss, gw, ge = _accumulate(g, state, cfg, pairs, scale, True, effects_only)
    if effects_only:
        glog = np.zeros_like(state.logits)
    else:
        glog = _softmax_backward(state.memberships, gw)
    return loss, LatentState(glog, **ge)


def poisson_loglik(g, state, cfg, pairs=None):
    """Poisson log-likelihood over ``pairs`` (all dyads when None), log(y!) dropped."""
    if g.signed:
        raise ValueError("poisson_loglik needs an unsigned graph")
    loss, _, _ = _accumulate(g, state, cfg, pairs, 1.0, False, False)
    return -loss


def skellam_map_loss(g, state, cfg, pairs=None):
    """Skellam negative log-likelihood (constants dropped) plus the effects prior."""
    if not g.signed:
        raise ValueError("skellam_map_loss needs a signed graph")
    loss, _, _ = _accumulate(g, state, cfg, pairs, 1.0, False, False)
    return loss


OBJECTIVES = {"poisson_nll": "unsigned", "skellam_map": "signed"}


def grad(objective, g, state, cfg, pairs=None):
    """Gradient of ``objective`` ('poisson_nll' or 'skellam_map') w.r.t. every parameter."""
    if OBJECTIVES.get(objective) != g.kind:
        raise ValueError(f"objective {objective!r} does not apply to a {g.kind} graph")
    return loss_and_grad(g, state, cfg, pairs)[1]


def eigenmodel_gap(state, cfg, i, j, effect=None):
    """Discrepancy between the distance form and the bias-plus-bilinear form of a log-rate.

    With squared distances, ``a_i + a_j -/+ delta^2 ||w_i - w_j||^2`` equals
    ``a~_i + a~_j + w_i L w_j`` where ``a~ = a -/+ delta^2 ||w||^2`` and
    ``L = +/- 2 delta^2 I`` (minus signs for the negative-rate effect ``psi``).
    """
    if cfg.p != 2:
        raise ValueError("the bilinear reparameterisation holds only for p = 2")
    if effect is None:
        effect = "gamma" if state.kind == "unsigned" else "beta"
    a = getattr(state, effect)
    if a is None:
        raise ValueError(f"state has no {effect} effect")
    sign = 1.0 if effect == "psi" else -1.0
    W = state.memberships
    wi, wj = W[i], W[j]
    d2 = cfg.delta ** 2
    relational = -sign * 2.0 * d2 * np.eye(len(wi))
    a_i = a[i] + sign * d2 * np.dot(wi, wi)
    a_j = a[j] + sign * d2 * np.dot(wj, wj)
    bilinear = a_i + a_j + wi @ relational @ wj
    diff = wi - wj
    distance_form = a[i] + a[j] + sign * d2 * np.dot(diff, diff)
    return abs(bilinear - distance_form)
