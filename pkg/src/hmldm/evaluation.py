"""Link/sign prediction, community read-out and evaluation reports."""
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .logistic import RateLogisticRegression
from .metrics import ari, auc_roc, nmi

__all__ = [
    "RateFeatures",
    "EvalReport",
    "rate_features",
    "unsigned_link_scores",
    "signed_tasks",
    "champion_fraction",
    "corner_champions",
    "is_identifiable",
    "hard_assign",
    "order_adjacency",
    "circular_layout",
    "evaluate",
    "SIGNED_TASKS",
]

SIGNED_TASKS = ("p@n", "p@z", "n@z")


def _log_rates(state, cfg, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    W = state.memberships
    diff = W[pairs[:, 0]] - W[pairs[:, 1]]
    sq = np.einsum("ik,ik->i", diff, diff)
    t = cfg.delta ** 2 * sq if cfg.p == 2 else cfg.delta * np.sqrt(sq)
    I, J = pairs[:, 0], pairs[:, 1]
    if state.kind == "unsigned":
        return state.gamma[I] + state.gamma[J] - t
    return state.beta[I] + state.beta[J] - t, state.psi[I] + state.psi[J] + t


@dataclass
class RateFeatures:
    """Per-dyad ``[lambda+, lambda-, log lambda+, log lambda-]`` rows."""

    chi: np.ndarray

    def __post_init__(self):
        self.chi = np.asarray(self.chi, dtype=np.float64).reshape(-1, 4)

    def __len__(self):
        return len(self.chi)


def rate_features(state, cfg, pairs):
    if state.kind != "signed":
        raise ValueError("rate features are defined for signed models")
    lp, ln = _log_rates(state, cfg, pairs)
    return RateFeatures(np.column_stack([np.exp(lp), np.exp(ln), lp, ln]))


def unsigned_link_scores(state, cfg, pairs):
    """Poisson rates of the given dyads, used directly as link scores."""
    if state.kind != "unsigned":
        raise ValueError("unsigned_link_scores needs an unsigned model")
    return np.exp(_log_rates(state, cfg, pairs))


def _task_data(split, task):
    w = split.test_weights
    pos, neg, ctl = split.test_edges[w > 0], split.test_edges[w < 0], split.controls
    if task == "p@n":
        a, b = pos, neg
    elif task == "p@z":
        a, b = pos, ctl
    elif task == "n@z":
        a, b = neg, ctl
    else:
        raise ValueError(f"unknown signed task {task!r}")
    pairs = np.concatenate([a, b]).reshape(-1, 2)
    labels = np.concatenate([np.ones(len(a), dtype=int), np.zeros(len(b), dtype=int)])
    return pairs, labels


def signed_tasks(state, cfg, split, task, seed=0, n_folds=5, shuffle_labels=False, l2=1e-3):
    """Out-of-fold AUC of the logistic head on one signed prediction task.

    The head is fitted under stratified k-fold cross-validation on the task's
    own test dyads and the pooled held-out scores are ranked. Returns None
    when a class has fewer than two members.
    """
    if state.kind != "signed":
        raise ValueError("signed tasks need a signed model")
    pairs, labels = _task_data(split, task)
    minority = min(labels.sum(), len(labels) - labels.sum())
    if minority < 2:
        return None
    rng = np.random.default_rng(seed)
    if shuffle_labels:
        labels = rng.permutation(labels)
    X = rate_features(state, cfg, pairs).chi
    folds = StratifiedKFold(n_splits=min(n_folds, minority), shuffle=True,
                            random_state=int(rng.integers(2**31 - 1)))
    scores = np.empty(len(labels))
    for tr, te in folds.split(X, labels):
        head = RateLogisticRegression(l2=l2).fit(X[tr], labels[tr])
        scores[te] = head.decision_function(X[te])
    return auc_roc(scores[labels == 1], scores[labels == 0])


def champion_fraction(state, tol=0.999):
    """Share of nodes whose largest membership is at least ``tol``."""
    return float(np.mean(state.memberships.max(axis=1) >= tol))


def corner_champions(state, tol=0.999):
    """Number of champions sitting in each simplex corner."""
    W = state.memberships
    champ = W.max(axis=1) >= tol
    return np.bincount(W.argmax(axis=1)[champ], minlength=W.shape[1])


def is_identifiable(state, tol=0.999):
    """Every corner holds at least one champion."""
    return bool(np.all(corner_champions(state, tol) >= 1))


def hard_assign(state):
    """Corner of maximal membership per node; ties go to the lowest index."""
    return state.memberships.argmax(axis=1)


def order_adjacency(state):
    """Node order grouped by corner, purest members first within each corner."""
    W = state.memberships
    labels = W.argmax(axis=1)
    strength = W.max(axis=1)
    return np.lexsort((-strength, labels))


def circular_layout(state):
    """Corners evenly spaced on the unit circle; nodes at their membership-weighted mean.

    Returns an array with columns ``node, corner, corner_angle, x, y`` and
    the membership weights.
    """
    W = state.memberships
    k = W.shape[1]
    angles = 2.0 * np.pi * np.arange(k) / k
    xy = W @ np.column_stack([np.cos(angles), np.sin(angles)])
    corner = W.argmax(axis=1)
    return np.column_stack([np.arange(len(W)), corner, angles[corner], xy, W])


@dataclass
class EvalReport:
    kind: str
    auc: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    nmi: float | None = None
    ari: float | None = None
    champion_fraction: float = 0.0
    identifiable: bool = False
    skipped: list = field(default_factory=list)
    champion_tol: float = 0.999
    head_cv_folds: int = 5
    nmi_normalization: str = "arithmetic"

    def to_dict(self):
        out = {
            "kind": self.kind,
            "nmi": self.nmi,
            "ari": self.ari,
            "champion_fraction": self.champion_fraction,
            "identifiable": self.identifiable,
            "skipped": ",".join(self.skipped),
            "champion_tol": self.champion_tol,
            "head_cv_folds": self.head_cv_folds,
            "nmi_normalization": self.nmi_normalization,
        }
        for task, v in self.auc.items():
            out[f"auc_{task}"] = v
        for task, v in self.counts.items():
            out[f"n_{task}"] = v
        return out

    @classmethod
    def from_dict(cls, d):
        auc = {k[4:]: v for k, v in d.items() if k.startswith("auc_")}
        counts = {k[2:]: v for k, v in d.items() if k.startswith("n_")}
        return cls(kind=d["kind"], auc=auc, counts=counts, nmi=d["nmi"], ari=d["ari"],
                   champion_fraction=d["champion_fraction"], identifiable=d["identifiable"],
                   skipped=[s for s in d["skipped"].split(",") if s],
                   champion_tol=d["champion_tol"], head_cv_folds=d["head_cv_folds"],
                   nmi_normalization=d["nmi_normalization"])


def evaluate(state, cfg, split=None, tasks=None, labels=None, champion_tol=0.999,
             seed=0, n_folds=5):
    """Collect every applicable metric into an ``EvalReport``."""
    signed = state.kind == "signed"
    if tasks is None:
        tasks = SIGNED_TASKS if signed else ("link",)
    for task in tasks:
        if (task == "link") == signed:
            raise ValueError(f"task {task!r} does not apply to a {state.kind} model")
    report = EvalReport(kind=state.kind, champion_tol=champion_tol, head_cv_folds=n_folds,
                        champion_fraction=champion_fraction(state, champion_tol),
                        identifiable=is_identifiable(state, champion_tol))
    if split is not None:
        for task in tasks:
            if task == "link":
                pos = unsigned_link_scores(state, cfg, split.test_edges)
                neg = unsigned_link_scores(state, cfg, split.controls)
                report.counts[task] = len(pos) + len(neg)
                report.auc[task] = auc_roc(pos, neg) if len(pos) and len(neg) else None
            else:
                pairs, _ = _task_data(split, task)
                report.counts[task] = len(pairs)
                report.auc[task] = signed_tasks(state, cfg, split, task, seed=seed, n_folds=n_folds)
            if report.auc[task] is None:
                report.skipped.append(task)
    if labels is not None:
        pred = hard_assign(state)
        report.nmi = nmi(labels, pred)
        report.ari = ari(labels, pred)
    return report
