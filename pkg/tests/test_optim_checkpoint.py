"""Adam update arithmetic and checkpoint round-trips."""

import numpy as np
import pytest

import dygwin.tensor as T
from dygwin.checkpoint import (checkpoint_digest, load_checkpoint, save_checkpoint)
from dygwin.errors import ContractError, DataError
from dygwin.optim import Adam, adam_step


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = T.parameter(np.array([[0.0]]), dtype=np.float64)
        opt = Adam({"p": p}, lr=1e-4)
        p.grad = np.array([[1.0]])
        opt.step()
        # bias-corrected m_hat = v_hat = 1, so the step is lr / (1 + eps)
        expected = -1e-4 * (1.0 / (1.0 + 1e-8))
        assert abs(p.values.item() - expected) < 1e-12

    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = T.parameter(np.array([[1.5]]), dtype=np.float64)
        opt = Adam({"p": p}, lr=1e-4)
        p.grad = np.array([[0.0]])
        opt.step()
        assert p.values.item() == 1.5

    def test_weight_decay_adds_l2_term(self):
        p = T.parameter(np.array([[1.0]]), dtype=np.float64)
        opt = Adam({"p": p}, lr=1e-4, weight_decay=1e-5)
        p.grad = np.array([[0.0]])
        opt.step()
        # effective gradient 1e-5 pushes the parameter down
        assert p.values.item() < 1.0

    def test_step_counter_increments(self):
        p = T.parameter(np.zeros((2, 2)))
        opt = Adam({"p": p})
        for expected in (1, 2, 3):
            p.grad = np.ones((2, 2), dtype=np.float32)
            opt.step()
            assert opt.t == expected

    def test_shape_mismatch_rejected(self):
        p = T.parameter(np.zeros((2, 2)))
        opt = Adam({"p": p})
        p.grad = np.ones((3, 2), dtype=np.float32)
        with pytest.raises(ContractError):
            opt.step()

    def test_functional_step_applies_grads(self):
        p = T.parameter(np.array([[1.0]]), dtype=np.float64)
        state = Adam({"p": p}, lr=0.1)
        adam_step({"p": p}, {"p": np.array([[1.0]])}, state)
        assert p.values.item() < 1.0


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {
            "enc/w": T.parameter(rng.normal(size=(7, 3)), dtype=np.float32),
            "enc/omega": T.parameter(rng.normal(size=(1, 9)), dtype=np.float64),
            "dec/bias": T.parameter(np.zeros((1, 1)), dtype=np.float32),
        }
        path = tmp_path / "model.dygw"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(params)
        for name, p in params.items():
            assert loaded[name].dtype == p.values.dtype
            assert loaded[name].tobytes() == p.values.tobytes()

    def test_magic_header(self, tmp_path):
        path = tmp_path / "model.dygw"
        save_checkpoint(path, {"w": T.parameter(np.ones((2, 2)))})
        assert path.read_bytes()[:4] == b"DYGW"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.dygw"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_digest_tracks_content(self):
        a = {"w": T.parameter(np.ones((2, 2)), dtype=np.float32)}
        b = {"w": T.parameter(np.ones((2, 2)), dtype=np.float32)}
        assert checkpoint_digest(a) == checkpoint_digest(b)
        b["w"].values[0, 0] = 2.0
        assert checkpoint_digest(a) != checkpoint_digest(b)
