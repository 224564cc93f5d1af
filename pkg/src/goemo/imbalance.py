"""Class weights and the weighted-BCE / focal losses.

Both losses take probabilities (not logits), clamp them to
[1e-12, 1 - 1e-12] and average over all N*K cells. They accept either
numpy arrays (returning a float) or autodiff Tensors (returning a scalar
Tensor that can be back-propagated).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import InputError, ParseError, ShapeError

PROB_EPS = 1e-12
DEFAULT_GAMMA = 2.0


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InputError("class weights must be a finite, positive vector")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return len(self.w)

    @classmethod
    def uniform(cls, k):
        return cls(np.ones(k))

    def save(self, path, names):
        with open(path, "w", encoding="utf-8") as fh:
            for name, weight in zip(names, self.w.tolist()):
                fh.write(f"{name}\t{weight!r}\n")

    @classmethod
    def load(cls, path, names=None):
        weights = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ParseError("expected label<TAB>weight", line=lineno, path=Path(path))
                if names is not None and parts[0] != names[len(weights)]:
                    raise ParseError(f"label {parts[0]!r} out of order", line=lineno, path=Path(path))
                try:
                    weights.append(float(parts[1]))
                except ValueError:
                    raise ParseError(f"bad weight {parts[1]!r}", line=lineno, path=Path(path)) from None
        return cls(np.array(weights))


def inverse_frequency_weights(stats):
    """w_c = N / (n_c * K) from the per-label counts of a training corpus."""
    counts = np.asarray(stats.per_label_counts, dtype=np.float64)
    k = len(counts)
    names = stats.label_names or tuple(str(i) for i in range(k))
    for c, n in enumerate(counts):
        if n <= 0:
            raise InputError(f"label {names[c]!r} has no training examples; weight undefined")
    return ClassWeights(stats.total / (counts * k))


def _prepare(probs, targets, weights):
    as_array = not isinstance(probs, ad.Tensor)
    p = ad.as_tensor(probs)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"probabilities {p.shape} and targets {y.shape} differ in shape")
    if p.ndim != 2:
        raise ShapeError(f"expected an N x K matrix, got shape {p.shape}")
    if np.any(p.value < 0.0) or np.any(p.value > 1.0) or np.any(np.isnan(p.value)):
        raise InputError("probabilities must lie in [0, 1]")
    if np.any((y != 0.0) & (y != 1.0)):
        raise InputError("targets must be binary")
    if weights is None:
        pos_w = np.ones(p.shape[1])
    else:
        pos_w = weights.w if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
        if pos_w.shape != (p.shape[1],):
            raise ShapeError(f"{len(pos_w)} class weights for {p.shape[1]} labels")
    # weight on positive cells, 1 on negative cells
    cell_w = 1.0 + y * (pos_w[None, :] - 1.0)
    return as_array, ad.clip(p, PROB_EPS, 1.0 - PROB_EPS), y, cell_w


def _log_likelihood(p, y):
    # y log p + (1 - y) log(1 - p), i.e. log p_t elementwise
    return ad.add(ad.mul(y, ad.log(p)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, p))))


def _finish(as_array, loss):
    return loss.item() if as_array else loss


def weighted_bce(probs, targets, weights=None):
    """Mean binary cross-entropy, positives scaled by ``weights`` when given."""
    as_array, p, y, cell_w = _prepare(probs, targets, weights)
    ll = _log_likelihood(p, y)
    loss = ad.mul(ad.mean(ad.mul(ll, cell_w)), -1.0)
    return _finish(as_array, loss)


def focal_loss(probs, targets, weights=None, gamma=DEFAULT_GAMMA):
    """Focal loss with modulating factor (1 - p_t)^gamma.

    p_t is the probability assigned to the true outcome of each cell (the
    prediction on positive cells, one minus it on negative cells), so
    confidently correct cells are down-weighted on both sides. Class
    weights scale positive cells only; with ``gamma=0`` and no weights
    this is exactly :func:`weighted_bce`.
    """
    if not np.isfinite(gamma) or gamma < 0:
        raise InputError(f"gamma must be finite and >= 0, got {gamma}")
    as_array, p, y, cell_w = _prepare(probs, targets, weights)
    ll = _log_likelihood(p, y)
    one_minus_pt = ad.add(ad.mul(y, ad.sub(1.0, p)), ad.mul(1.0 - y, p))
    modulated = ad.mul(ad.power(one_minus_pt, gamma), ll)
    loss = ad.mul(ad.mean(ad.mul(modulated, cell_w)), -1.0)
    return _finish(as_array, loss)


@dataclass(frozen=True)
class LossConfig:
    """Which loss to train with. ``kind`` is ``"bce"`` or ``"focal"``."""

    kind: str = "bce"
    gamma: float = DEFAULT_GAMMA
    weights: ClassWeights = None

    def __post_init__(self):
        if self.kind not in ("bce", "focal"):
            raise InputError(f"unknown loss {self.kind!r}; choose bce or focal")

    def __call__(self, probs, targets):
        if self.kind == "focal":
            return focal_loss(probs, targets, self.weights, self.gamma)
        return weighted_bce(probs, targets, self.weights)
