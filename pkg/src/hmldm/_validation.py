"""Input checks shared by the estimators."""
import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .graph import Graph

__all__ = ["check_graph", "check_pairs"]


def check_graph(X, kind="unsigned", bipartite=False):
    """Coerce ``X`` into a :class:`Graph`.

    Parameters
    ----------
    X : Graph, array-like or sparse matrix
        A ``Graph`` is passed through after a kind check. A matrix is read
        as a symmetric adjacency (``N x N``) or, with ``bipartite=True``,
        as an ``R x C`` bi-adjacency. Entries must be integers; unsigned
        graphs accept only 0/1.
    kind : {"unsigned", "signed"}
    bipartite : bool

    Returns
    -------
    Graph
    """
    if isinstance(X, Graph):
        if X.kind != kind:
            raise ValueError(f"expected a {kind} graph, got {X.kind}")
        return X
    A = check_array(X, accept_sparse=("csr", "coo", "csc"), dtype=np.float64,
                    ensure_min_samples=2, ensure_min_features=2)
    A = sp.coo_matrix(A)
    A.sum_duplicates()
    vals = A.data
    if np.any(vals != np.round(vals)):
        raise ValueError("adjacency entries must be integers")
    if bipartite:
        r, c = A.shape
        keep = vals != 0
        rows, cols = A.row[keep], A.col[keep] + r
        return Graph.from_edges(r + c, np.column_stack([rows, cols]),
                                vals[keep].astype(np.int64), kind=kind, bipartite=(r, c))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {A.shape}")
    if abs(A - A.T).sum() != 0:
        raise ValueError("adjacency must be symmetric")
    if np.any(A.diagonal() != 0):
        raise ValueError("self-loops are not allowed")
    keep = (A.row < A.col) & (vals != 0)
    return Graph.from_edges(A.shape[0], np.column_stack([A.row[keep], A.col[keep]]),
                            vals[keep].astype(np.int64), kind=kind)


def check_pairs(pairs, num_nodes):
    """(m, 2) integer node pairs with ids in range and no self-pairs."""
    P = check_array(pairs, dtype=None, ensure_min_samples=0)
    if P.shape[1] != 2:
        raise ValueError("pairs must have two columns")
    if not np.issubdtype(P.dtype, np.integer):
        if np.any(P != np.round(P)):
            raise ValueError("pairs must be integer node ids")
    P = P.astype(np.int64)
    if len(P) and (P.min() < 0 or P.max() >= num_nodes):
        raise ValueError("node id out of range")
    if np.any(P[:, 0] == P[:, 1]):
        raise ValueError("self-pairs are not dyads")
    return P
