"""Binary-relevance logistic regression over sparse TF-IDF features.

Each of the K labels gets its own independent logistic model, fit by
minimising

    J(w, b) = (1/N) * sum_i s_i * logloss(y_i, w.x_i + b) + (l2 / 2) * ||w||^2

where s_i are the per-example weights (``N / (2 n_class)`` when balanced,
1 otherwise). The bias is not regularised.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, sparse
from scipy.special import expit

from .errors import InputError, NumericalError, ParseError, ShapeError
from .features import SparseVector, to_csr

log = logging.getLogger(__name__)

# logit of this probability is used for labels that never (or always) occur
_BASE_RATE_FLOOR = 1e-6


@dataclass
class LinearConfig:
    max_iter: int = 1000
    tolerance: float = 1e-6
    # None resolves to 1/N, i.e. the liblinear C=1 objective rescaled by 1/N
    l2: float = None
    balanced: bool = True
    solver: str = "lbfgs"
    workers: int = 1

    def __post_init__(self):
        if self.solver not in ("lbfgs", "gd"):
            raise InputError(f"unknown solver {self.solver!r}; choose lbfgs or gd")
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")


@dataclass
class LabelFit:
    loss_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False


@dataclass
class LinearModel:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    fits: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"weights {self.weights.shape} / bias {self.bias.shape} mismatch")

    @property
    def num_labels(self):
        return self.weights.shape[0]

    @property
    def dimension(self):
        return self.weights.shape[1]

    def save(self, path):
        """Header ``K<TAB>D``, then per label ``bias<TAB>idx:w idx:w ...``."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.num_labels}\t{self.dimension}\n")
            for k in range(self.num_labels):
                nz = np.flatnonzero(self.weights[k])
                pairs = " ".join(f"{i}:{float(self.weights[k, i])!r}" for i in nz.tolist())
                fh.write(f"{float(self.bias[k])!r}\t{pairs}\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                k, d = (int(x) for x in fh.readline().split("\t"))
            except ValueError:
                raise ParseError("bad header, expected K<TAB>D", line=1, path=path) from None
            weights = np.zeros((k, d))
            bias = np.zeros(k)
            for row in range(k):
                line = fh.readline()
                if not line:
                    raise ParseError(f"expected {k} label rows, got {row}", line=row + 2, path=path)
                b, _, pairs = line.rstrip("\n").partition("\t")
                bias[row] = float(b)
                for pair in pairs.split():
                    i, v = pair.split(":")
                    weights[row, int(i)] = float(v)
        return cls(weights, bias)


def _as_matrix(X):
    if sparse.issparse(X):
        return X.tocsr()
    if isinstance(X, np.ndarray):
        return sparse.csr_matrix(X)
    X = list(X)
    if X and isinstance(X[0], SparseVector):
        return to_csr(X)
    raise InputError("features must be a sparse matrix, dense array or list of SparseVector")


def _as_targets(Y, n, k=None):
    if isinstance(Y, np.ndarray) and Y.ndim == 2:
        return (Y != 0).astype(np.float64)
    if k is None:
        raise InputError("number of labels needed when targets are label sets")
    out = np.zeros((n, k))
    for i, labels in enumerate(Y):
        out[i, list(labels)] = 1.0
    return out


def sample_weights(y, balanced):
    n = len(y)
    if not balanced:
        return np.ones(n)
    n_pos = y.sum()
    n_neg = n - n_pos
    return np.where(y == 1.0, n / (2.0 * n_pos), n / (2.0 * n_neg))


def objective(theta, X, y, s, l2):
    """Loss and gradient of the regularised weighted log-loss.

    ``theta`` packs the weights followed by the bias.
    """
    w, b = theta[:-1], theta[-1]
    n = X.shape[0]
    z = X @ w + b
    # log(1 + e^z) - y z is the log-loss written in logits
    losses = np.logaddexp(0.0, z) - y * z
    loss = float(s @ losses) / n + 0.5 * l2 * float(w @ w)
    r = s * (expit(z) - y) / n
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def _fit_lbfgs(X, y, s, l2, cfg):
    history = []
    theta0 = np.zeros(X.shape[1] + 1)
    history.append(objective(theta0, X, y, s, l2)[0])

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = optimize.minimize(
        objective, theta0, args=(X, y, s, l2), jac=True, method="L-BFGS-B",
        callback=callback,
        options={"maxiter": cfg.max_iter, "ftol": cfg.tolerance, "gtol": 1e-9},
    )
    if not np.isfinite(res.fun):
        raise NumericalError(f"non-finite training loss {res.fun}")
    return res.x, LabelFit(history, int(res.nit), bool(res.success))


def _fit_gd(X, y, s, l2, cfg):
    """Full-batch gradient descent with Armijo backtracking."""
    theta = np.zeros(X.shape[1] + 1)
    loss, grad = objective(theta, X, y, s, l2)
    history = [loss]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gg = float(grad @ grad)
        if gg == 0.0:
            converged = True
            break
        step *= 2.0
        while True:
            cand = theta - step * grad
            new_loss, new_grad = objective(cand, X, y, s, l2)
            if new_loss <= loss - 0.5 * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                new_loss, new_grad, cand = loss, grad, theta
                break
        if not np.isfinite(new_loss):
            raise NumericalError(f"non-finite training loss at iteration {it}")
        improvement = (loss - new_loss) / max(abs(loss), abs(new_loss), 1.0)
        theta, loss, grad = cand, new_loss, new_grad
        history.append(loss)
        if improvement < cfg.tolerance:
            converged = True
            break
    return theta, LabelFit(history, it, converged)


def fit_binary(X, y, cfg, l2):
    """Fit one binary logistic model; returns (w, b, LabelFit)."""
    n_pos = y.sum()
    n = len(y)
    if n_pos == 0 or n_pos == n:
        rate = min(max(n_pos / n, _BASE_RATE_FLOOR), 1.0 - _BASE_RATE_FLOOR)
        return np.zeros(X.shape[1]), float(np.log(rate / (1.0 - rate))), LabelFit(degenerate=True)
    s = sample_weights(y, cfg.balanced)
    fitter = _fit_lbfgs if cfg.solver == "lbfgs" else _fit_gd
    theta, info = fitter(X, y, s, l2, cfg)
    return theta[:-1], float(theta[-1]), info


def train_binary_relevance(X, Y, config=None, num_labels=None):
    """Train K independent logistic classifiers, one per label.

    ``Y`` is either an N x K binary matrix or a list of label-index sets
    (then ``num_labels`` is required).
    """
    cfg = config or LinearConfig()
    X = _as_matrix(X)
    n = X.shape[0]
    if n == 0:
        raise InputError("no training examples")
    Ym = _as_targets(Y, n, num_labels)
    if Ym.shape[0] != n:
        raise ShapeError(f"{n} feature rows but {Ym.shape[0]} target rows")
    k = Ym.shape[1]
    l2 = cfg.l2 if cfg.l2 is not None else 1.0 / n

    for j in range(k):
        pos = Ym[:, j].sum()
        if pos == 0 or pos == n:
            warnings.warn(f"label {j} has {'no' if pos == 0 else 'only'} positive examples; "
                          "predicting its base rate", stacklevel=2)

    def fit(j):
        return fit_binary(X, Ym[:, j], cfg, l2)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(fit, range(k)))
    else:
        results = [fit(j) for j in range(k)]
    weights = np.stack([r[0] for r in results])
    bias = np.array([r[1] for r in results])
    for j, r in enumerate(results):
        log.debug("label %d: %d iterations, final loss %s", j, r[2].iterations,
                  r[2].loss_history[-1] if r[2].loss_history else None)
    return LinearModel(weights, bias, [r[2] for r in results])


def predict_proba(model, X):
    """N x K matrix of independent per-label probabilities."""
    X = _as_matrix(X)
    if X.shape[1] != model.dimension:
        raise ShapeError(f"feature dimension {X.shape[1]} != model dimension {model.dimension}")
    z = np.asarray(X @ model.weights.T) + model.bias[None, :]
    return expit(z)
