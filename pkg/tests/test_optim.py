"""Adam update arithmetic, max-norm clipping, and checkpoint round-trips."""

import numpy as np
import pytest

from opinionsum.autodiff import Tensor, TensorError, precision
from opinionsum.optim import (
    ADAM_EPS,
    CheckpointError,
    OptimizerState,
    ParameterSet,
    adam_step,
    apply_maxnorm,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture(autouse=True)
def float64_mode():
    with precision("float64"):
        yield


def make_params(**arrays) -> ParameterSet:
    ps = ParameterSet()
    for name, arr in arrays.items():
        ps.add(name, np.asarray(arr, dtype=np.float64))
    return ps


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        ps = make_params(w=[[0.1, 0.2], [0.3, 0.4]])
        before = ps["w"].data.copy()
        adam_step(ps, {"w": Tensor(np.zeros((2, 2)))}, OptimizerState())
        np.testing.assert_array_equal(ps["w"].data, before)

    def test_zero_gradient_still_enforces_norm_cap(self):
        ps = make_params(w=[[3.0, 4.0]])
        adam_step(ps, {"w": Tensor(np.zeros((1, 2)))}, OptimizerState(), maxnorm_cap=2.0)
        np.testing.assert_allclose(np.linalg.norm(ps["w"].data), 2.0, rtol=1e-6)

    def test_first_step_scalar_update_is_minus_lr(self):
        # Bias-corrected moments with g=1 at t=1 give m_hat=1, v_hat=1,
        # so the update is -lr / (1 + eps).
        ps = make_params(w=[0.5])
        adam_step(ps, {"w": Tensor([1.0])}, OptimizerState(), lr=1e-3)
        expected = 0.5 - 1e-3 / (1.0 + ADAM_EPS)
        np.testing.assert_allclose(ps["w"].data, [expected], rtol=1e-12)

    def test_update_direction_follows_negative_gradient(self):
        ps = make_params(w=[1.0, -1.0])
        adam_step(ps, {"w": Tensor([2.0, -3.0])}, OptimizerState())
        assert ps["w"].data[0] < 1.0
        assert ps["w"].data[1] > -1.0

    def test_parameters_without_gradients_untouched(self):
        ps = make_params(a=[1.0], b=[2.0])
        adam_step(ps, {"a": Tensor([1.0])}, OptimizerState())
        assert float(ps["b"].data[0]) == 2.0

    def test_nonfinite_gradient_skipped_and_counted(self):
        ps = make_params(w=[1.0])
        state = OptimizerState()
        bad = Tensor([1.0])
        bad.data = np.array([np.nan])
        adam_step(ps, {"w": bad}, state)
        assert state.skipped_nonfinite == 1
        assert float(ps["w"].data[0]) == 1.0
        assert "w" not in state.first_moment

    def test_step_counter_increases(self):
        ps = make_params(w=[1.0])
        state = OptimizerState()
        for expected in (1, 2, 3):
            adam_step(ps, {"w": Tensor([0.1])}, state)
            assert state.step == expected

    def test_unknown_gradient_name_rejected(self):
        ps = make_params(w=[1.0])
        with pytest.raises(TensorError):
            adam_step(ps, {"nope": Tensor([1.0])}, OptimizerState())

    def test_shape_mismatch_rejected(self):
        ps = make_params(w=[1.0, 2.0])
        with pytest.raises(TensorError):
            adam_step(ps, {"w": Tensor([1.0])}, OptimizerState())


class TestMaxNorm:
    def test_row_of_norm_four_scaled_by_half(self):
        row = np.array([[0.0, 4.0], [1.0, 0.0]])
        capped = apply_maxnorm(row, 2.0)
        np.testing.assert_allclose(capped[0], [0.0, 2.0])
        np.testing.assert_array_equal(capped[1], [1.0, 0.0])

    def test_applied_after_adam_update(self):
        ps = make_params(w=np.full((1, 4), 5.0))
        adam_step(ps, {"w": Tensor(np.zeros((1, 4)) + 1e-9)}, OptimizerState(), maxnorm_cap=2.0)
        norm = np.linalg.norm(ps["w"].data[0])
        assert norm <= 2.0 * (1 + 1e-6)

    def test_idempotent_bitwise(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(20, 8)) * 3
        once = apply_maxnorm(w, 2.0)
        twice = apply_maxnorm(once.copy(), 2.0)
        assert once.tobytes() == twice.tobytes()

    def test_idempotent_bitwise_float32(self):
        rng = np.random.default_rng(4)
        w = (rng.normal(size=(50, 16)) * 3).astype(np.float32)
        once = apply_maxnorm(w, 2.0)
        twice = apply_maxnorm(once.copy(), 2.0)
        assert once.tobytes() == twice.tobytes()

    def test_vectors_and_biases_not_clipped(self):
        v = np.full(10, 100.0)
        np.testing.assert_array_equal(apply_maxnorm(v, 2.0), v)


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        ps = make_params(w=[1.0])
        with pytest.raises(TensorError):
            ps.add("w", [2.0])

    def test_merged_with_shares_tensors(self):
        a = make_params(x=[1.0])
        b = make_params(y=[2.0])
        merged = a.merged_with(b)
        assert merged.names() == ["x", "y"]
        assert merged["x"] is a["x"]
        with pytest.raises(TensorError):
            a.merged_with(make_params(x=[3.0]))

    def test_tensors_marked_trainable_and_named(self):
        ps = make_params(w=[[1.0]])
        assert ps["w"].requires_grad
        assert ps["w"].name == "w"


class TestCheckpoint:
    def test_round_trip_preserves_values_and_order(self, tmp_path):
        rng = np.random.default_rng(0)
        ps = ParameterSet()
        ps.add("condense.embeddings", rng.normal(size=(7, 3)).astype(np.float32))
        ps.add("abstract.W_query", rng.normal(size=(4, 4)).astype(np.float32))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ps, meta={"epoch": 3})
        loaded, meta = load_checkpoint(path)
        assert loaded.names() == ps.names()
        assert meta == {"epoch": 3}
        for name in ps.names():
            np.testing.assert_array_equal(
                loaded[name].data.astype(np.float32), ps[name].data.astype(np.float32))

    def test_truncated_payload_rejected(self, tmp_path):
        ps = make_params(w=np.ones((2, 2)))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ps)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_extra_bytes_rejected(self, tmp_path):
        ps = make_params(w=np.ones(3))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ps)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"not json\n\x00\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b'{"format_version": 99, "tensors": []}\n')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_float32_saved_exactly(self, tmp_path):
        # Values representable in float32 survive a float64 -> file -> float64 trip.
        ps = make_params(w=np.array([0.5, -0.25, 3.0]))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ps)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded["w"].data, ps["w"].data)
