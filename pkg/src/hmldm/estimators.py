"""Scikit-learn style wrappers around the training loop.

Both estimators are transductive: ``fit`` takes a whole graph and
``transform`` returns the node memberships learned for it.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_graph, check_pairs
from .evaluation import _log_rates, hard_assign, is_identifiable, rate_features
from .metrics import auc_roc
from .model import ModelConfig
from .train import fit_best

__all__ = ["HMLDM", "SignedHMLDM"]


class _BaseHMLDM(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    _kind = None

    def _config(self):
        return ModelConfig(dim=self.dim, p=self.p, delta=self.delta, rho=getattr(self, "rho", 1.0),
                           lr=self.lr, warmup_iters=self.warmup_iters,
                           train_iters=self.train_iters, sample_size=self.sample_size,
                           seed=self.random_state, restarts=self.restarts,
                           champion_tol=self.champion_tol)

    def fit(self, X, y=None):
        """Learn memberships and random effects for graph ``X``.

        Parameters
        ----------
        X : Graph, array-like or sparse matrix
            Graph or (bi-)adjacency matrix; see ``check_graph``.
        y : ignored
        """
        g = check_graph(X, kind=self._kind, bipartite=self.bipartite)
        cfg = self._config()
        self.state_, self.trace_ = fit_best(g, cfg)
        self.config_ = cfg
        self.graph_ = g
        self.n_nodes_ = g.num_nodes
        self.memberships_ = self.state_.memberships
        for name in self.state_.effect_names():
            setattr(self, f"{name}_", getattr(self.state_, name))
        return self

    def transform(self, X=None):
        """Memberships of the fitted nodes, shape (N, dim + 1).

        ``X`` must be the fitted graph or None; new nodes cannot be embedded.
        """
        check_is_fitted(self)
        if X is not None:
            g = check_graph(X, kind=self._kind, bipartite=self.bipartite)
            if g != self.graph_:
                raise ValueError("transform only applies to the graph seen in fit")
        return self.memberships_

    def predict(self, X=None):
        """Hard community label (dominant corner) per node."""
        self.transform(X)
        return hard_assign(self.state_)

    @property
    def identifiable_(self):
        check_is_fitted(self)
        return is_identifiable(self.state_, self.champion_tol)


class HMLDM(_BaseHMLDM):
    """Latent distance model on a scaled simplex for unsigned graphs.

    Parameters
    ----------
    dim : int
        Simplex dimension; memberships have ``dim + 1`` entries.
    p : {1, 2}
        Exponent on the latent distance.
    delta : float
        Simplex side length. Small values push nodes toward corners.
    lr, warmup_iters, train_iters : Adam settings and phase lengths.
    sample_size : int or None
        Node-block size per step; None trains on every dyad.
    restarts : int
        Independent fits; the lowest full objective wins.
    champion_tol : float
        Membership above which a node counts as a corner champion.
    bipartite : bool
        Read matrix input as a bi-adjacency.
    random_state : int

    Attributes
    ----------
    memberships_ : ndarray of shape (N, dim + 1)
    gamma_ : ndarray of shape (N,)
    state_ : LatentState
    trace_ : TrainTrace
    """

    _kind = "unsigned"

    def __init__(self, dim=8, p=2, delta=1.0, lr=0.05, warmup_iters=1000, train_iters=5000,
                 sample_size=None, restarts=5, champion_tol=0.999, bipartite=False,
                 random_state=0):
        self.dim = dim
        self.p = p
        self.delta = delta
        self.lr = lr
        self.warmup_iters = warmup_iters
        self.train_iters = train_iters
        self.sample_size = sample_size
        self.restarts = restarts
        self.champion_tol = champion_tol
        self.bipartite = bipartite
        self.random_state = random_state

    def decision_function(self, pairs):
        """Poisson rate of each node pair."""
        check_is_fitted(self)
        P = check_pairs(pairs, self.n_nodes_)
        return np.exp(_log_rates(self.state_, self.config_, P))

    def score(self, pairs, y):
        """Link-prediction AUC of the rates against binary labels ``y``."""
        s = self.decision_function(pairs)
        y = np.asarray(y).astype(bool)
        return auc_roc(s[y], s[~y])


class SignedHMLDM(_BaseHMLDM):
    """Skellam latent distance model on a scaled simplex for signed graphs.

    Same parameters as :class:`HMLDM` plus ``rho``, the Gaussian prior
    precision on the positive and negative random effects.

    Attributes
    ----------
    memberships_ : ndarray of shape (N, dim + 1)
    beta_, psi_ : ndarray of shape (N,)
    """

    _kind = "signed"

    def __init__(self, dim=8, p=2, delta=1.0, rho=1.0, lr=0.05, warmup_iters=1000,
                 train_iters=5000, sample_size=None, restarts=5, champion_tol=0.999,
                 bipartite=False, random_state=0):
        self.dim = dim
        self.p = p
        self.delta = delta
        self.rho = rho
        self.lr = lr
        self.warmup_iters = warmup_iters
        self.train_iters = train_iters
        self.sample_size = sample_size
        self.restarts = restarts
        self.champion_tol = champion_tol
        self.bipartite = bipartite
        self.random_state = random_state

    def rate_features(self, pairs):
        """``[lambda+, lambda-, log lambda+, log lambda-]`` per pair."""
        check_is_fitted(self)
        P = check_pairs(pairs, self.n_nodes_)
        return rate_features(self.state_, self.config_, P).chi

    def decision_function(self, pairs):
        """Expected signed weight ``lambda+ - lambda-`` of each pair."""
        chi = self.rate_features(pairs)
        return chi[:, 0] - chi[:, 1]

    def score(self, pairs, y):
        """Sign-prediction AUC of the expected weight against ``y`` (positive = 1)."""
        s = self.decision_function(pairs)
        y = np.asarray(y) > 0
        return auc_roc(s[y], s[~y])
