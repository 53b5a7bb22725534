"""L2-regularised logistic regression on standardised rate features."""
import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = ["RateLogisticRegression", "fit_logistic_head"]


class RateLogisticRegression(ClassifierMixin, BaseEstimator):
    """Binary logistic regression fitted by damped Newton iterations.

    Minimises ``mean(logistic loss) + l2/2 * ||coef||^2`` with the intercept
    left unpenalised. Features are standardised internally; the means and
    scales are kept in ``mean_`` and ``scale_``.

    Parameters
    ----------
    l2 : float
        Ridge strength on the standardised coefficients.
    tol : float
        Stop once the gradient norm drops below this value.
    max_iter : int
        Newton iteration cap.
    """

    def __init__(self, l2=1e-3, tol=1e-8, max_iter=200):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def _objective(self, X1, y, theta):
        z = X1 @ theta
        loss = -np.mean(y * log_expit(z) + (1 - y) * log_expit(-z))
        return loss + 0.5 * self.l2 * np.dot(theta[:-1], theta[:-1])

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError("logistic head needs exactly two classes")
        yf = yi.astype(np.float64)
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        Z = (X - self.mean_) / self.scale_
        n, d = Z.shape
        X1 = np.hstack([Z, np.ones((n, 1))])
        penalty = np.full(d + 1, self.l2)
        penalty[-1] = 0.0
        theta = np.zeros(d + 1)
        theta[-1] = np.log(yf.mean() / (1 - yf.mean()))
        f = self._objective(X1, yf, theta)
        for it in range(self.max_iter):
            p = expit(X1 @ theta)
            g = X1.T @ (p - yf) / n + penalty * theta
            gnorm = np.linalg.norm(g)
            if gnorm <= self.tol:
                break
            h = (X1 * (p * (1 - p))[:, None]).T @ X1 / n + np.diag(penalty)
            h[np.diag_indices_from(h)] += 1e-12
            step = np.linalg.solve(h, g)
            t = 1.0
            while True:
                cand = theta - t * step
                fc = self._objective(X1, yf, cand)
                if fc <= f - 1e-4 * t * np.dot(g, step) or t < 1e-10:
                    break
                t *= 0.5
            theta, f = cand, fc
        self.n_iter_ = it + 1
        self.grad_norm_ = float(np.linalg.norm(
            X1.T @ (expit(X1 @ theta) - yf) / n + penalty * theta))
        self.coef_ = theta[:-1]
        self.intercept_ = float(theta[-1])
        return self

    @property
    def weights_(self):
        """Standardised-space coefficients followed by the intercept."""
        check_is_fitted(self)
        return np.append(self.coef_, self.intercept_)

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


def fit_logistic_head(features, labels, l2=1e-3):
    """Fit the head on an (m, 4) rate-feature matrix; returns the fitted estimator."""
    labels = np.asarray(labels)
    if len(labels) < 2 or len(np.unique(labels)) < 2:
        raise ValueError("need at least two examples covering both classes")
    return RateLogisticRegression(l2=l2).fit(features, labels)
