import numpy as np
import pytest

from goemo import autodiff as ad
from goemo.errors import InputError, NumericalError, ShapeError
from goemo.selfcheck import run_suite


def test_sum_of_squares_gradient():
    p = ad.ParameterSet({"w": np.array([1.0, 2.0])})
    ad.backward(ad.sum(ad.mul(p["w"], p["w"])))
    assert np.array_equal(p["w"].grad, [2.0, 4.0])


def test_sigmoid_derivative_at_zero():
    p = ad.ParameterSet({"x": np.array([0.0])})
    ad.backward(ad.sum(ad.sigmoid(p["x"])))
    assert p["x"].grad[0] == 0.25


def test_unreachable_parameter_keeps_zero_gradient():
    p = ad.ParameterSet({"a": np.array([1.0]), "b": np.array([3.0])})
    p.zero_grad()
    ad.backward(ad.sum(ad.mul(p["a"], 2.0)))
    assert p["b"].grad[0] == 0.0 and p["a"].grad[0] == 2.0


def test_repeated_backward_resets_instead_of_accumulating():
    p = ad.ParameterSet({"w": np.array([3.0])})
    loss = ad.sum(ad.mul(p["w"], p["w"]))
    ad.backward(loss)
    ad.backward(loss)
    assert p["w"].grad[0] == 6.0


def test_shared_subexpression_accumulates():
    p = ad.ParameterSet({"x": np.array([2.0])})
    y = ad.mul(p["x"], p["x"])
    ad.backward(ad.sum(ad.add(y, y)))
    assert p["x"].grad[0] == 8.0


def test_non_scalar_loss_rejected():
    p = ad.ParameterSet({"w": np.ones(2)})
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(p["w"], 2.0))


def test_broadcast_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        ad.add(ad.Tensor(np.ones(2)), ad.Tensor(np.ones(3)))


def test_ndarray_times_tensor_stays_in_graph():
    p = ad.ParameterSet({"w": np.array([1.0, 2.0])})
    out = np.array([3.0, 4.0]) * p["w"]
    assert isinstance(out, ad.Tensor)
    ad.backward(ad.sum(out))
    assert np.array_equal(p["w"].grad, [3.0, 4.0])


def test_masked_softmax_rows_sum_to_one_and_ignore_masked():
    x = ad.Tensor(np.array([[1.0, 2.0, 100.0], [0.5, 0.5, 0.5]]))
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)
    y = ad.softmax(x, mask=mask).value
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert y[0, 2] == 0.0
    with pytest.raises(InputError):
        ad.softmax(x, mask=np.zeros((2, 3), dtype=bool))


def test_dropout_preserves_expectation():
    rng = np.random.default_rng(0)
    x = ad.Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
    runs = np.stack([ad.dropout(x, 0.3, rng).value for _ in range(10_000)])
    assert np.all(np.abs(runs.mean(axis=0) - x.value) <= 0.02 * np.abs(x.value))
    assert ad.dropout(x, 0.3, rng, training=False) is x


def test_adam_first_step_moves_by_lr():
    p = ad.ParameterSet({"w": np.array([0.0])})
    p["w"].grad = np.array([1.0])
    ad.adam_step(p, lr=1e-3)
    assert p["w"].value[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_zero_gradient_is_no_op_and_deterministic():
    a = ad.ParameterSet({"w": np.array([1.5, -2.0])})
    a.zero_grad()
    ad.adam_step(a)
    assert np.array_equal(a["w"].value, [1.5, -2.0])
    b, c = ad.ParameterSet({"w": np.ones(3)}), ad.ParameterSet({"w": np.ones(3)})
    for q in (b, c):
        q["w"].grad = np.array([0.1, -0.3, 2.0])
        ad.adam_step(q)
    assert np.array_equal(b["w"].value, c["w"].value)


def test_adam_rejects_non_finite_gradient():
    p = ad.ParameterSet({"w": np.array([1.0])})
    p["w"].grad = np.array([np.nan])
    with pytest.raises(NumericalError, match="'w'"):
        ad.adam_step(p)


def test_clip_grad_norm():
    p = ad.ParameterSet({"a": np.zeros(1), "b": np.zeros(1)})
    p["a"].grad, p["b"].grad = np.array([3.0]), np.array([4.0])
    assert ad.clip_grad_norm(p, 1.0) == 5.0
    assert np.allclose([p["a"].grad[0], p["b"].grad[0]], [0.6, 0.8])


def test_grad_check_quadratic_and_constant():
    p = ad.ParameterSet({"w": np.array([[0.3, -1.2], [2.0, 0.7]])})
    assert ad.grad_check(lambda q: ad.sum(ad.mul(q["w"], q["w"])), p, 1e-5) < 1e-7
    assert ad.grad_check(lambda q: ad.sum(ad.mul(q["w"], 0.0)), p, 1e-5) == 0.0
    with pytest.raises(InputError):
        ad.grad_check(lambda q: ad.sum(q["w"]), p, 0.0)


def test_grad_check_detects_a_wrong_gradient():
    p = ad.ParameterSet({"w": np.array([1.0, 2.0])})

    def broken(q):
        # forward is w^2 but the backward claims 3w
        w = q["w"]
        out = ad._make(w.value ** 2, (w,), lambda g: ad._accumulate(w, 3.0 * w.value * g))
        return ad.sum(out)

    assert ad.grad_check(broken, p) > 0.1


def test_selfcheck_suite_passes():
    results = run_suite(seed=0)
    assert len(results) >= 10
    assert all(r.passed for r in results), [(r.name, r.max_rel_error) for r in results]


def test_forward_is_bit_identical_across_runs():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(4, 3))
    x = rng.normal(size=(2, 4))
    outs = [ad.softmax(ad.tanh(ad.Tensor(x) @ ad.Tensor(w))).value for _ in range(2)]
    assert np.array_equal(outs[0], outs[1])


def test_tensor_container_round_trip(tmp_path):
    p = ad.ParameterSet({"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5), "c": np.zeros(0)})
    p.save(tmp_path / "p.bin")
    back = ad.ParameterSet.load(tmp_path / "p.bin")
    assert back.names() == ["a", "b", "c"]
    for name in p:
        assert np.array_equal(back[name].value, p[name].value)
    (tmp_path / "junk.bin").write_bytes(b"not a tensor file")
    with pytest.raises(InputError):
        ad.load_tensors(tmp_path / "junk.bin")


def test_load_state_dict_shape_checks():
    p = ad.ParameterSet({"a": np.zeros(2)})
    with pytest.raises(ShapeError):
        p.load_state_dict({"a": np.zeros(3)})
    with pytest.raises(ShapeError):
        p.load_state_dict({"z": np.zeros(2)})
