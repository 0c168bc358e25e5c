# Backend/test_numerics.py

import numpy as np
import pytest

from Backend.conftest import assert_gradients_match
from Backend.WaveformEngine.errors import (
    GraphCycle,
    NonFiniteGradient,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
)
from Backend.WaveformEngine.numerics import (
    Adam,
    Param,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    grad_check,
    linear,
    load_checkpoint,
    log,
    log_sigmoid,
    log_softmax,
    matmul,
    read_manifest,
    save_checkpoint,
    sigmoid,
    softmax,
    square,
    sum_,
    take,
    unfold1d,
    write_manifest,
)


class TestTape:
    def test_no_recording_outside_tape(self):
        p = Param(np.ones(3), "p")
        out = square(p)
        assert out._node is None

    def test_linear_gradients(self, rng):
        x = rng.normal(size=(5, 3))
        W = Param(rng.normal(size=(3, 4)), "W")
        b = Param(rng.normal(size=4), "b")
        with Tape() as tape:
            loss = sum_(square(linear(x, W, b)))
        tape.backward(loss)
        y = x @ W.data + b.data
        np.testing.assert_allclose(W.grad, x.T @ (2 * y))
        np.testing.assert_allclose(b.grad, (2 * y).sum(axis=0))

    def test_module_level_backward(self):
        p = Param(np.array([3.0]), "p")
        with Tape():
            loss = sum_(square(p))
        backward(loss)
        np.testing.assert_allclose(p.grad, [6.0])

    def test_take_scatter_adds(self):
        table = Param(np.arange(6.0).reshape(3, 2), "table")
        with Tape() as tape:
            loss = sum_(take(table, np.array([0, 0, 2])))
        tape.backward(loss)
        np.testing.assert_array_equal(table.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_non_scalar_loss(self):
        p = Param(np.ones(3), "p")
        with Tape() as tape:
            out = square(p)
        with pytest.raises(ShapeMismatch):
            tape.backward(out)

    def test_loss_from_another_tape(self):
        p = Param(np.ones(2), "p")
        with Tape():
            loss = sum_(square(p))
        with pytest.raises(GraphCycle):
            Tape().backward(loss)


class TestOps:
    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteValue):
            add(Tensor([np.inf]), 1.0)
        with pytest.raises(NonFiniteValue):
            log(Tensor([0.0, 1.0]))

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeMismatch):
            take(Tensor(np.ones((2, 3))), np.array([2]))

    def test_item_needs_one_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(ShapeMismatch):
            Tensor([1.0, 2.0]).item()

    def test_log_sigmoid_is_stable(self):
        out = log_sigmoid(Tensor([-800.0, 0.0, 800.0]))
        np.testing.assert_allclose(out.data, [-800.0, np.log(0.5), 0.0])

    def test_softmax_rows_sum_to_one(self, rng):
        out = softmax(Tensor(rng.normal(size=(4, 7)) * 50))
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4))

    def test_unfold_matches_manual_windows(self, rng):
        x = rng.normal(size=(6, 2))
        windows = unfold1d(Tensor(x), 3).data
        padded = np.vstack([np.zeros((1, 2)), x, np.zeros((1, 2))])
        for j in range(6):
            np.testing.assert_array_equal(windows[j], padded[j : j + 3])


class TestGradCheck:
    def test_composite_graph(self, rng):
        W = Param(rng.normal(size=(4, 3)), "W")
        b = Param(rng.normal(size=3), "b")
        x = rng.normal(size=(5, 4))

        def fn():
            h = sigmoid(linear(x, W, b))
            z = concat([h, square(h)], axis=-1)
            return sum_(log_softmax(z) * np.arange(6.0))

        assert_gradients_match(grad_check(fn, [W, b]))

    def test_unfold_and_softmax(self, rng):
        X = Param(rng.normal(size=(2, 5, 3)), "X")

        def fn():
            windows = unfold1d(X, 3)
            return sum_(softmax(windows, axis=-2) * windows)

        assert_gradients_match(grad_check(fn, [X]))

    def test_report_flags_wrong_gradient(self, rng):
        p = Param(rng.normal(size=3), "p")

        def fn():
            # the detached term is invisible to backward
            return add(sum_(square(p)), Tensor(3.0 * p.data.sum()))

        report = grad_check(fn, [p])
        assert not report.passed
        assert report.failures and report.failures[0].param == "p"


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Param(np.array([1.0, -1.0]), "p")
        p.grad[...] = [2.0, -0.5]
        Adam([p], lr=0.001).step()
        np.testing.assert_allclose(p.data, [0.999, -0.999], rtol=1e-7)

    def test_minimizes_quadratic(self):
        p = Param(np.zeros(2), "p")
        opt = Adam([p], lr=0.05)
        for _ in range(2000):
            opt.zero_grad()
            with Tape() as tape:
                loss = sum_(square(p - np.array([3.0, -2.0])))
            tape.backward(loss)
            opt.step()
        np.testing.assert_allclose(p.data, [3.0, -2.0], atol=1e-2)

    def test_non_finite_gradient(self):
        p = Param(np.zeros(2), "p")
        p.grad[0] = np.nan
        with pytest.raises(NonFiniteGradient):
            Adam([p]).step()


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        arrays = {"transd/entity_e": rng.normal(size=(4, 3)), "mlp/h": rng.normal(size=5), "scalar": np.array(2.5)}
        first = save_checkpoint(tmp_path / "a.ckpt", arrays)
        restored = load_checkpoint(first)
        assert list(restored) == list(arrays)
        for name, value in arrays.items():
            np.testing.assert_array_equal(restored[name], value)
        second = save_checkpoint(tmp_path / "b.ckpt", restored)
        assert first.read_bytes() == second.read_bytes()

    def test_truncated(self, tmp_path, rng):
        path = save_checkpoint(tmp_path / "a.ckpt", {"w": rng.normal(size=(8, 8))})
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_manifest(self, tmp_path):
        path = write_manifest(tmp_path / "manifest.txt", {"ere_mode": "attn(3)", "seed": 7})
        assert read_manifest(path) == {"ere_mode": "attn(3)", "seed": "7"}
