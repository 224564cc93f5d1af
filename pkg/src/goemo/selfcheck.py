"""Finite-difference gradient checks on toy shapes.

Each check builds a small deterministic objective, runs backprop and
compares it with central differences. Used by ``goemo gradcheck`` and the
test suite.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bilstm import BiLstmHyper, BiLstmModel, DenseHead, attention_pool, lstm_cell
from .imbalance import ClassWeights, focal_loss, weighted_bce
from .linear import objective

TOLERANCE = 1e-4
EPSILON = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE


def _params(rng, **shapes):
    return ad.ParameterSet({name: rng.normal(0.0, 0.5, size=s) for name, s in shapes.items()})


def _quadratic(rng):
    p = _params(rng, w=(3, 2))
    return p, lambda q: ad.sum(ad.mul(q["w"], q["w"]))


def _elementwise(rng):
    p = _params(rng, a=(2, 3), b=(3,))

    def f(q):
        a, b = q["a"], q["b"]
        pos = ad.add(ad.mul(a, a), 0.5)
        t = ad.add(ad.mul(ad.tanh(a), ad.sigmoid(b)), ad.exp(ad.mul(a, 0.3)))
        t = ad.add(t, ad.log(pos))
        t = ad.add(t, ad.power(pos, 1.5))
        t = ad.sub(t, ad.mul(ad.clip(a, -0.2, 0.2), b))
        return ad.mean(t)

    return p, f


def _structural(rng):
    p = _params(rng, x=(2, 3, 4), w=(4, 2), v=(2, 3))

    def f(q):
        h = q["x"] @ q["w"]  # (2, 3, 2)
        rows = [ad.select(h, t, axis=1) for t in range(3)]
        s = ad.stack(rows[::-1], axis=1)
        c = ad.concat([s, ad.reshape(q["v"], (2, 3, 1))], axis=-1)
        return ad.sum(ad.mul(ad.tanh(c), c), axis=None)

    return p, f


def _masked_softmax(rng):
    p = _params(rng, s=(3, 5))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0], [1, 0, 0, 0, 0]], dtype=bool)
    target = rng.normal(size=(3, 5))

    def f(q):
        return ad.sum(ad.mul(ad.softmax(q["s"], axis=-1, mask=mask), target))

    return p, f


def _lstm_step(rng):
    hidden, d = 3, 2
    shapes = {f"W_{g}": (hidden + d, hidden) for g in "fiCo"}
    shapes.update({f"b_{g}": (hidden,) for g in "fiCo"})
    shapes.update(x=(2, d), h=(2, hidden), C=(2, hidden))
    p = _params(rng, **shapes)

    def f(q):
        h, C = lstm_cell(q["x"], q["h"], q["C"], q)
        return ad.sum(ad.add(ad.mul(h, h), C))

    return p, f


def _attention(rng):
    p = _params(rng, H=(2, 4, 3), W_a=(3, 3))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    target = rng.normal(size=(2, 3))

    def f(q):
        context, _ = attention_pool(q["H"], q["W_a"], mask)
        return ad.sum(ad.mul(context, target))

    return p, f


def _losses(rng, kind):
    p = _params(rng, z=(3, 4))
    y = (rng.random((3, 4)) < 0.5).astype(float)
    w = ClassWeights(rng.uniform(0.5, 2.0, 4))

    def f(q):
        probs = ad.sigmoid(q["z"])
        if kind == "bce":
            return weighted_bce(probs, y, w)
        return focal_loss(probs, y, w, gamma=2.0)

    return p, f


def _full_bilstm(rng, hidden=4, embed=3, labels=5):
    hp = BiLstmHyper(embed_dim=embed, hidden=hidden, layers=2, dropout=0.0, max_len=4)
    model = BiLstmModel(hp, labels, seed=0)
    for _, t in model.params.items():
        t.value[...] = rng.normal(0.0, 0.5, t.shape)
    X = rng.normal(size=(2, 4, embed))
    lengths = np.array([4, 3])
    Y = np.zeros((2, labels))
    Y[0, [0, 3]] = 1.0
    Y[1, [1]] = 1.0
    w = ClassWeights(rng.uniform(0.5, 2.0, labels))
    return model.params, lambda q: focal_loss(model.forward(X, lengths)[0], Y, w, gamma=2.0)


def _dense_head(rng):
    head = DenseHead(4, 3)
    for _, t in head.params.items():
        t.value[...] = rng.normal(0.0, 0.5, t.shape)
    X = rng.normal(size=(5, 4))
    Y = (rng.random((5, 3)) < 0.4).astype(float)
    return head.params, lambda q: weighted_bce(head.forward(X), Y)


def _lr_objective(rng):
    """Central differences on the closed-form logistic-regression gradient."""
    X = rng.normal(size=(6, 4))
    y = np.array([1, 0, 1, 1, 0, 0], dtype=float)
    s = rng.uniform(0.5, 2.0, 6)
    theta = rng.normal(size=5)
    _, grad = objective(theta, X, y, s, 0.1)
    worst = 0.0
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = EPSILON
        num = (objective(theta + e, X, y, s, 0.1)[0] - objective(theta - e, X, y, s, 0.1)[0]) / (2 * EPSILON)
        worst = max(worst, abs(grad[i] - num) / max(abs(grad[i]), abs(num), 1e-8))
    return worst


SUITE = (
    ("quadratic", _quadratic),
    ("elementwise_ops", _elementwise),
    ("matmul_concat_stack", _structural),
    ("masked_softmax", _masked_softmax),
    ("lstm_cell", _lstm_step),
    ("attention_pool", _attention),
    ("weighted_bce", lambda rng: _losses(rng, "bce")),
    ("focal_loss", lambda rng: _losses(rng, "focal")),
    ("bilstm_attention_focal", _full_bilstm),
    ("dense_head_bce", _dense_head),
)


def run_suite(seed=0):
    """Run every check; returns a list of :class:`CheckResult`."""
    streams = np.random.SeedSequence(seed).spawn(len(SUITE) + 1)
    results = []
    for (name, build), stream in zip(SUITE, streams):
        params, f = build(np.random.default_rng(stream))
        results.append(CheckResult(name, ad.grad_check(f, params, EPSILON)))
    results.append(CheckResult("linear_objective", _lr_objective(np.random.default_rng(streams[-1]))))
    return results
