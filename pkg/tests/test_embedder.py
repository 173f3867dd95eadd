import numpy as np
import pytest

from advtriplet.embedder import (AdamState, EmbedderParams, GradientBuffer, OptimizerSchedule,
                                 adam_step, backward, beta1, forward, init_params, learning_rate,
                                 load_checkpoint, save_checkpoint)
from advtriplet.errors import NumericError, UsageError
from advtriplet.linalg import Rng

from helpers import central_diff, rel_error


def test_zero_params_give_zero_embedding():
    p = EmbedderParams([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    emb, _ = forward(p, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(emb, np.zeros(2))


def test_identity_linear_layer():
    p = EmbedderParams([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(forward(p, x)[0], x)


def test_forward_is_pure():
    p = init_params([5, 8, 3], Rng(0))
    x = Rng(1).gaussian(5)
    assert np.array_equal(forward(p, x)[0], forward(p, x)[0])


def test_forward_batch_matches_rows():
    p = init_params([5, 8, 3], Rng(0))
    x = Rng(1).gaussian((4, 5))
    batch = forward(p, x)[0]
    for i in range(4):
        np.testing.assert_allclose(batch[i], forward(p, x[i])[0], rtol=1e-14)


def test_forward_dim_mismatch():
    with pytest.raises(UsageError):
        forward(init_params([5, 3], Rng(0)), np.zeros(4))


def test_backward_zero_grad():
    p = init_params([4, 6, 3], Rng(0))
    _, tape = forward(p, Rng(1).gaussian(4))
    buf = GradientBuffer.zeros_like(p)
    gin = backward(p, tape, np.zeros(3), buf)
    assert np.all(gin == 0)
    assert all(np.all(a == 0) for a in buf.arrays())


def test_backward_linear_input_grad():
    w = Rng(2).gaussian((3, 4))
    p = EmbedderParams([w], [np.zeros(3)])
    _, tape = forward(p, Rng(1).gaussian(4))
    g = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(backward(p, tape, g, GradientBuffer.zeros_like(p)), w.T @ g)


def test_backward_tape_mismatch():
    p = init_params([4, 6, 3], Rng(0))
    _, tape = forward(p, np.zeros(4))
    other = init_params([4, 5, 3], Rng(0))
    with pytest.raises(UsageError):
        backward(other, tape, np.zeros(3), GradientBuffer.zeros_like(other))


def network_fd_error(sizes, activation, seed, batch=3):
    """Max relative error of all parameter and input gradients vs central differences."""
    rng = Rng(seed)
    p = init_params(sizes, rng, activation)
    x = rng.gaussian((batch, sizes[0]))
    c = rng.gaussian((batch, sizes[-1]))
    # scalar objective: sum(c * emb) + 0.5 * sum(emb^2)
    def objective(params, xx):
        e = forward(params, xx)[0]
        return float(np.sum(c * e) + 0.5 * np.sum(e * e))

    emb, tape = forward(p, x)
    buf = GradientBuffer.zeros_like(p)
    gin = backward(p, tape, c + emb, buf)
    errs = [rel_error(gin, central_diff(lambda xx: objective(p, xx), x))]
    for arr, g in zip(p.arrays(), buf.arrays()):
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            out = objective(p, x)
            arr[...] = saved
            return out
        errs.append(rel_error(g, central_diff(f, arr)))
    return max(errs)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_backward_matches_finite_differences(seed, activation):
    sizes = [[4, 6, 3], [6, 8, 5, 2], [3, 8, 8, 4]][seed % 3]
    assert network_fd_error(sizes, activation, seed) < 1e-4


def test_gradient_accumulates():
    p = init_params([3, 4, 2], Rng(0))
    _, tape = forward(p, Rng(1).gaussian(3))
    buf = GradientBuffer.zeros_like(p)
    g = np.array([1.0, 2.0])
    backward(p, tape, g, buf)
    once = [a.copy() for a in buf.arrays()]
    backward(p, tape, g, buf)
    for a, b in zip(buf.arrays(), once):
        np.testing.assert_allclose(a, 2 * b)


def test_learning_rate_schedule():
    s = OptimizerSchedule()
    assert learning_rate(s, 0) == 3e-4
    assert learning_rate(s, 35) == 3e-4
    assert learning_rate(s, 65) == pytest.approx(3e-7, rel=1e-12)
    assert learning_rate(s, 100) == learning_rate(s, 65)
    # halfway through the decay: alpha0 * 0.001 ** 0.5
    assert learning_rate(s, 50) == pytest.approx(3e-4 * 10 ** -1.5, rel=1e-12)


def test_learning_rate_monotone_and_continuous():
    s = OptimizerSchedule()
    ts = np.linspace(0, 80, 8001)
    lr = np.array([learning_rate(s, t) for t in ts])
    assert np.all(np.diff(lr) <= 0)
    for knot in (s.t0, s.t1):
        assert learning_rate(s, knot + 1e-9) == pytest.approx(learning_rate(s, knot), rel=1e-6)


def test_beta1_step():
    s = OptimizerSchedule()
    assert beta1(s, 34) == 0.9
    assert beta1(s, 35) == 0.9
    assert beta1(s, 36) == 0.5


@pytest.mark.parametrize("kw", [dict(t0=40, t1=30), dict(beta1_lo=0.95), dict(alpha0=0)])
def test_schedule_validation(kw):
    with pytest.raises(UsageError):
        OptimizerSchedule(**kw)


def test_adam_zero_gradient_noop():
    p = init_params([3, 2], Rng(0))
    before = p.copy()
    adam_step(p, GradientBuffer.zeros_like(p), AdamState.zeros_like(p), OptimizerSchedule(), 1)
    assert p.equal(before)


def test_adam_descends_scalar():
    p = EmbedderParams([np.array([[1.0]])], [np.array([0.0])])
    buf = GradientBuffer([np.array([[0.7]])], [np.array([0.0])])
    adam_step(p, buf, AdamState.zeros_like(p), OptimizerSchedule(), 1)
    assert p.weights[0][0, 0] < 1.0
    # first Adam step moves by lr (bias-corrected m/sqrt(v) = 1)
    assert p.weights[0][0, 0] == pytest.approx(1.0 - 3e-4, rel=1e-6)


def test_adam_non_finite_aborts():
    p = init_params([3, 2], Rng(0))
    before = p.copy()
    buf = GradientBuffer.zeros_like(p)
    buf.weights[0][0, 0] = np.nan
    state = AdamState.zeros_like(p)
    with pytest.raises(NumericError):
        adam_step(p, buf, state, OptimizerSchedule(), 1)
    assert p.equal(before) and state.step == 0


def test_checkpoint_round_trip(tmp_path):
    p = init_params([7, 8, 5, 3], Rng(4), "tanh")
    save_checkpoint(p, tmp_path / "m.ckpt")
    q = load_checkpoint(tmp_path / "m.ckpt")
    assert q.equal(p)
    save_checkpoint(q, tmp_path / "n.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "n.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOTACKPT....")
    with pytest.raises(UsageError):
        load_checkpoint(tmp_path / "bad")
    p = init_params([2, 2], Rng(0))
    save_checkpoint(p, tmp_path / "ok")
    (tmp_path / "cut").write_bytes((tmp_path / "ok").read_bytes()[:-3])
    with pytest.raises(UsageError):
        load_checkpoint(tmp_path / "cut")
