import math

import numpy as np
import pytest

from rfclink.numerics import (
    Adam,
    CheckpointMismatch,
    ParamStore,
    ShapeMismatch,
    Tensor,
    grad_check,
    kernels,
    load_checkpoint,
    make_optimizer,
    ops,
    save_checkpoint,
)
from rfclink.numerics import _kernels_py

try:
    from rfclink.numerics import _kernels
except ImportError:  # pragma: no cover - built by the editable install
    _kernels = None

TOL = {np.float64: 1e-6, np.float32: 1e-4}


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted(out, w):
    """Scalar sum(out * w) so every output entry gets a distinct upstream gradient."""
    return ops.sum_(ops.mul(out, Tensor(w.astype(out.dtype))))


def _store(dtype, **arrays):
    ps = ParamStore(seed=0, dtype=dtype)
    for name, arr in arrays.items():
        ps.add(name, arr.shape, init="zeros").data[...] = arr
    return ps


def _op_cases(rng):
    """(name, inputs, fn) where fn maps the input tensors to a tensor."""
    ids = np.array([2, 0, 2, 3])
    mask = np.array([True, True, False, True, True])
    return [
        ("matmul", dict(a=rng.normal(size=(3, 4)), b=rng.normal(size=(4, 2))),
         lambda p: ops.matmul(p["a"], p["b"])),
        ("add", dict(a=rng.normal(size=(3, 4)), b=rng.normal(size=(3, 4))),
         lambda p: ops.add(p["a"], p["b"])),
        ("add_bias", dict(a=rng.normal(size=(3, 4)), b=rng.normal(size=4)),
         lambda p: ops.add(p["a"], p["b"])),
        ("sub", dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 3))),
         lambda p: ops.sub(p["a"], p["b"])),
        ("mul", dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 3))),
         lambda p: ops.mul(p["a"], p["b"])),
        ("scale", dict(a=rng.normal(size=(2, 3))), lambda p: ops.scale(p["a"], 0.7)),
        ("relu", dict(a=_away_from_zero(rng, (3, 4))), lambda p: ops.relu(p["a"])),
        ("tanh", dict(a=rng.normal(size=(3, 4))), lambda p: ops.tanh(p["a"])),
        ("sigmoid", dict(a=rng.normal(size=(3, 4))), lambda p: ops.sigmoid(p["a"])),
        ("gelu", dict(a=rng.normal(size=(3, 4))), lambda p: ops.gelu(p["a"])),
        ("softmax_row", dict(a=rng.normal(size=(3, 5))), lambda p: ops.softmax_row(p["a"])),
        ("log_sum_exp", dict(a=rng.normal(size=(3, 5))), lambda p: ops.log_sum_exp(p["a"])),
        ("concat", dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(4, 3))),
         lambda p: ops.concat([p["a"], p["b"]])),
        ("slice", dict(a=rng.normal(size=(4, 3))), lambda p: ops.slice_(p["a"], (slice(1, 3),))),
        ("take_rows", dict(t=rng.normal(size=(5, 3))), lambda p: ops.take_rows(p["t"], ids)),
        ("flip_rows", dict(a=rng.normal(size=(4, 3))), lambda p: ops.flip_rows(p["a"])),
        ("transpose", dict(a=rng.normal(size=(4, 3))), lambda p: ops.transpose(p["a"])),
        ("reshape", dict(a=rng.normal(size=(4, 3))), lambda p: ops.reshape(p["a"], (2, 6))),
        ("mean", dict(a=rng.normal(size=(4, 3))), lambda p: ops.mean(p["a"])),
        ("layer_norm", dict(x=rng.normal(size=(3, 6)), g=rng.normal(size=6), b=rng.normal(size=6)),
         lambda p: ops.layer_norm(p["x"], p["g"], p["b"])),
        ("attention", dict(q=rng.normal(size=(5, 4)), k=rng.normal(size=(5, 4)), v=rng.normal(size=(5, 4))),
         lambda p: ops.attention(p["q"], p["k"], p["v"], 2, mask)),
        ("conv1d_same", dict(x=rng.normal(size=(5, 3)), w=rng.normal(size=(9, 2)), b=rng.normal(size=2)),
         lambda p: ops.conv1d_same(p["x"], p["w"], p["b"])),
        ("max_pool2d", dict(a=rng.permutation(30).reshape(5, 6) / 10.0),
         lambda p: ops.max_pool2d(p["a"])),
        ("gru_scan", dict(a=rng.normal(size=(4, 9)), u=rng.normal(size=(3, 9)) / 2),
         lambda p: ops.gru_scan(p["a"], p["u"])),
    ]


@pytest.mark.parametrize("dtype", [np.float64, np.float32], ids=["f64", "f32"])
@pytest.mark.parametrize("case", range(24))
def test_op_gradients(case, dtype):
    rng = np.random.default_rng(case)
    name, arrays, fn = _op_cases(rng)[case]
    ps = _store(dtype, **arrays)
    w = np.random.default_rng(99).normal(size=fn(ps).shape)
    report = grad_check(lambda: _weighted(fn(ps), w), ps, tol=TOL[dtype])
    assert report.passed, f"{name}\n{report.summary()}"


def test_cross_entropy_gradient():
    ps = _store(np.float64, z=np.random.default_rng(0).normal(size=9))
    report = grad_check(lambda: ops.cross_entropy(ps["z"], 4), ps)
    assert report.passed, report.summary()


def test_linear_softmax_cross_entropy():
    rng = np.random.default_rng(5)
    ps = ParamStore(seed=5)
    ps.add("w", (6, 4))
    ps.add("b", (4,), init="zeros")
    x = Tensor(rng.normal(size=(1, 6)))

    def f():
        logits = ops.add(ops.matmul(x, ps["w"]), ps["b"])
        return ops.cross_entropy(ops.reshape(logits, (4,)), 2)

    report = grad_check(f, ps)
    assert report.max_rel_err < 1e-6


def test_constant_function_has_zero_gradients():
    ps = ParamStore()
    ps.add("w", (3, 3), init="zeros")
    report = grad_check(lambda: ops.sum_(ops.scale(ps["w"], 0.0)), ps)
    assert report.max_rel_err == 0.0


def test_corrupted_backward_is_flagged():
    ps = ParamStore(seed=1)
    ps.add("good", (3,))
    ps.add("bad", (3,))

    def doubled_backward(t):
        def backward(g):
            t.accumulate(2.0 * g)
        return ops._result(t.data * 1.0, (t,), backward)

    def f():
        return ops.sum_(ops.add(ops.tanh(ps["good"]), ops.tanh(doubled_backward(ps["bad"]))))

    report = grad_check(f, ps)
    assert [p.name for p in report.failures] == ["bad"]
    assert "FAIL bad" in report.summary()


def test_sampled_entries_floor():
    ps = ParamStore()
    ps.add("w", (20, 20))
    report = grad_check(lambda: ops.sum_(ops.tanh(ps["w"])), ps, max_entries=10)
    assert report.params[0].checked == 100


def test_grad_check_restores_dtype_and_values():
    ps = ParamStore(dtype=np.float32)
    ps.add("w", (2, 3))
    before = ps["w"].data.copy()
    grad_check(lambda: ops.sum_(ops.tanh(ps["w"])), ps)
    assert ps["w"].data.dtype == np.float32
    assert np.array_equal(ps["w"].data, before)


def test_reference_reuses_difference_quotients():
    narrow = ParamStore(seed=3, dtype=np.float32)
    narrow.add("w", (12, 12))
    wide = ParamStore(dtype=np.float64)
    wide.add("w", (12, 12)).data[...] = narrow["w"].data
    calls = []

    def f(ps):
        return lambda: calls.append(1) or ops.sum_(ops.tanh(ps["w"]))

    base = grad_check(f(wide), wide, tol=1e-6, max_entries=100)
    fresh = grad_check(f(narrow), narrow, tol=1e-4, max_entries=100)
    before = len(calls)
    reused = grad_check(f(narrow), narrow, tol=1e-4, reference=base)
    assert len(calls) - before == 1  # only the analytic pass
    assert reused.params[0].max_rel_err == fresh.params[0].max_rel_err
    assert reused.checked == fresh.checked == 100


# -- forward examples -------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(ops.softmax_row(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-15)


def test_log_sum_exp_two_zeros():
    assert ops.log_sum_exp(Tensor(np.zeros(2))).item() == pytest.approx(math.log(2), abs=1e-12)


def test_log_sum_exp_large_values_are_stable():
    assert ops.log_sum_exp(Tensor(np.array([1000.0, 1000.0]))).item() == pytest.approx(1000 + math.log(2))


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.normal(scale=5, size=(4, 7))
        p = ops.softmax_row(Tensor(x)).data
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(ops.softmax_row(Tensor(x + rng.normal() * 10)).data, p, atol=1e-6)


def test_shape_mismatch_names_op():
    with pytest.raises(ShapeMismatch, match="matmul"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeMismatch, match="add"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeMismatch, match="layer_norm"):
        ops.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_dropout_identity_when_not_training():
    x = Tensor(np.ones((3, 3)))
    assert ops.dropout(x, 0.5, np.random.default_rng(0), training=False) is x


def test_ops_are_deterministic():
    rng = np.random.default_rng(0)
    name, arrays, fn = _op_cases(rng)[20]
    a = fn(_store(np.float64, **arrays)).data
    b = fn(_store(np.float64, **arrays)).data
    assert np.array_equal(a, b)


# -- parameters and checkpoints -----------------------------------------------------

def test_param_init_schemes():
    ps = ParamStore(seed=0)
    w = ps.add("w", (300, 100))
    e = ps.add("e", (1000, 16), init="embedding")
    b = ps.add("b", (100,), init="zeros")
    r = math.sqrt(6 / 400)
    assert np.abs(w.data).max() <= r
    assert abs(e.data.std() - 0.02) < 1e-3
    assert not b.data.any()
    assert all(t.requires_grad for _, t in ps.items())
    with pytest.raises(KeyError):
        ps.add("w", (1,))


def test_checkpoint_round_trip(tmp_path):
    ps = ParamStore(seed=3, dtype=np.float32)
    ps.add("a", (4, 5))
    ps.add("b", (5,), init="embedding")
    save_checkpoint(ps, tmp_path)
    other = ParamStore(seed=9, dtype=np.float32)
    other.add("a", (4, 5), init="zeros")
    other.add("b", (5,), init="zeros")
    load_checkpoint(other, tmp_path)
    for name in ps.names():
        assert np.array_equal(ps[name].data, other[name].data)
    assert (tmp_path / "params.bin").stat().st_size == 4 * 25


def test_checkpoint_mismatch(tmp_path):
    ps = ParamStore()
    ps.add("a", (2, 2))
    save_checkpoint(ps, tmp_path)
    wrong_shape = ParamStore()
    wrong_shape.add("a", (2, 3))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(wrong_shape, tmp_path)
    wrong_name = ParamStore()
    wrong_name.add("z", (2, 2))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(wrong_name, tmp_path)


# -- optimisers and kernels ------------------------------------------------------------

def test_adam_matches_textbook_formula():
    rng = np.random.default_rng(0)
    ps = ParamStore(dtype=np.float64)
    ps.add("w", (3, 4))
    ref = ps["w"].data.copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    opt = Adam(ps, lr=1e-2)
    for t in range(1, 6):
        g = rng.normal(size=ref.shape)
        ps["w"].grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(ps["w"].data, ref, rtol=1e-12, atol=1e-14)


def test_sgd_step():
    ps = ParamStore()
    ps.add("w", (2,), init="ones")
    ps["w"].grad = np.array([1.0, -2.0])
    make_optimizer("sgd", ps, 0.5).step()
    np.testing.assert_allclose(ps["w"].data, [0.5, 2.0])
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", ps, 0.1)


def test_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "python")


needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_compiled_gru_matches_python(dtype, tol):
    rng = np.random.default_rng(2)
    m, h = 7, 5
    a = rng.normal(size=(m, 3 * h)).astype(dtype)
    u = (rng.normal(size=(h, 3 * h)) / 2).astype(dtype)
    g = rng.normal(size=(m, h)).astype(dtype)
    s_py, gates_py = _kernels_py.gru_forward(a, u)
    s_c, gates_c = _kernels.gru_forward(a, u)
    np.testing.assert_allclose(s_c, s_py, atol=tol)
    np.testing.assert_allclose(gates_c, gates_py, atol=tol)
    for x, y in zip(_kernels.gru_backward(a, u, s_c, gates_c, g),
                    _kernels_py.gru_backward(a, u, s_py, gates_py, g)):
        assert x.dtype == dtype
        np.testing.assert_allclose(x, y, atol=10 * tol)


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-14), (np.float32, 1e-6)])
def test_compiled_adam_matches_python(dtype, tol):
    rng = np.random.default_rng(4)
    arrays = [rng.normal(size=1000).astype(dtype) for _ in range(2)]
    state = {}
    for name, mod in (("py", _kernels_py), ("c", _kernels)):
        p, g = arrays[0].copy(), arrays[1].copy()
        m, v = np.zeros_like(p), np.zeros_like(p)
        for t in range(1, 4):
            mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1 - 0.9**t, 1 - 0.999**t)
        state[name] = (p, m, v)
    for x, y in zip(state["py"], state["c"]):
        np.testing.assert_allclose(x, y, rtol=tol, atol=tol)
