"""Tests for parameters, the tape, layers and Adam."""

import math

import pytest
import torch
import torch.nn.functional as F

from grid.sparse_grid import GridSpec, SparseVoxelGrid
from neural import (
    CENTER_TAP,
    KERNEL_OFFSETS,
    AdamState,
    ConvSpec,
    MLPSpec,
    NeighborTable,
    NonFiniteGradientError,
    NonScalarLossError,
    ParameterStore,
    ShapeMismatchError,
    SparseConvSpec,
    Tape,
    adam_step,
    backward,
    conv2d,
    conv_forward,
    mlp_forward,
    positional_encoding,
    sparse_conv3d,
    sparse_conv_forward,
)


def _dense_oracle(dense: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """F.conv3d with the sparse (27, C_in, C_out) weight laid out as a dense kernel."""
    cin, cout = weight.shape[1], weight.shape[2]
    kernel = weight.reshape(3, 3, 3, cin, cout).permute(4, 3, 0, 1, 2)
    out = F.conv3d(dense.permute(3, 0, 1, 2)[None], kernel, bias, padding=1)
    return out[0].permute(1, 2, 3, 0)


class TestParameterStore:
    def test_register_is_seeded_and_fan_in_bounded(self):
        spec = MLPSpec((4, 8, 2))
        a, b = ParameterStore(seed=5), ParameterStore(seed=5)
        a.register("m", spec)
        b.register("m", spec)
        assert a.names() == ["m.0.weight", "m.0.bias", "m.1.weight", "m.1.bias"]
        assert torch.equal(a["m.0.weight"], b["m.0.weight"])
        assert float(a["m.0.weight"].abs().max()) <= 1 / math.sqrt(4)
        assert float(a["m.0.bias"].abs().max()) == 0.0

    def test_group_and_state_round_trip(self):
        store = ParameterStore(seed=1)
        store.register("R.trunk", MLPSpec((2, 3)))
        store.register("G", MLPSpec((3, 3)))
        assert list(store.group("R.")) == ["R.trunk.0.weight", "R.trunk.0.bias"]
        restored = ParameterStore.from_state_dict(store.state_dict())
        for name, tensor in store.items():
            assert torch.equal(restored[name], tensor)

    def test_duplicate_and_unknown_names(self):
        store = ParameterStore()
        store.add("x", torch.zeros(2))
        with pytest.raises(ValueError):
            store.add("x", torch.zeros(2))
        with pytest.raises(KeyError):
            store["y"]

    def test_substitute_keeps_caller_tensors(self):
        store = ParameterStore(seed=1)
        store.register("m", MLPSpec((2, 3)))
        weight = torch.ones(2, 3, requires_grad=True)
        view = store.substitute({"m.0.weight": weight})
        assert view["m.0.weight"] is weight
        assert view["m.0.bias"] is store["m.0.bias"]
        assert not torch.equal(store["m.0.weight"], weight)
        with pytest.raises(ValueError):
            store.substitute({"m.0.weight": torch.ones(3, 2)})
        with pytest.raises(KeyError):
            store.substitute({"m.9.weight": torch.ones(1)})


class TestTape:
    def test_backward_returns_zero_for_unused_sources(self):
        tape = Tape()
        x = tape.watch("x", torch.tensor(3.0))
        y = tape.watch("y", torch.tensor([1.0, 2.0]))
        loss = tape.record("square", x * x, x)
        grads = backward(tape, loss)
        assert float(grads["x"]) == 6.0
        assert grads["y"].tolist() == [0.0, 0.0]

    def test_rejects_non_scalar_loss(self):
        tape = Tape()
        x = tape.watch("x", torch.ones(3))
        with pytest.raises(NonScalarLossError):
            backward(tape, tape.record("id", x * 1.0, x))

    def test_rejects_loss_from_another_tape(self):
        tape = Tape()
        x = tape.watch("x", torch.tensor(2.0))
        with pytest.raises(ValueError):
            backward(tape, x * 2)

    def test_records_operations_in_order(self):
        tape = Tape()
        params = ParameterStore(seed=0)
        params.register("m", MLPSpec((2, 3, 1)))
        mlp_forward(params, "m", MLPSpec((2, 3, 1)), torch.ones(4, 2), tape)
        assert [node.op for node in tape.nodes] == ["m.0:dense", "m.1:dense"]
        assert tape.op_counts()["m.0:dense"] == 1


class TestLayers:
    def test_mlp_matches_manual_computation(self):
        params = ParameterStore(seed=2)
        spec = MLPSpec((3, 4, 2), activation="relu", output_activation="sigmoid")
        params.register("m", spec)
        x = torch.rand(5, 3)
        hidden = torch.relu(x @ params["m.0.weight"] + params["m.0.bias"])
        expected = torch.sigmoid(hidden @ params["m.1.weight"] + params["m.1.bias"])
        torch.testing.assert_close(mlp_forward(params, "m", spec, x), expected)

    def test_mlp_rejects_wrong_width(self):
        params = ParameterStore()
        params.register("m", MLPSpec((3, 2)))
        with pytest.raises(ShapeMismatchError):
            mlp_forward(params, "m", MLPSpec((3, 2)), torch.ones(1, 4))

    def test_conv2d_stride_and_padding(self):
        x = torch.rand(2, 7, 9)
        weight = torch.rand(3, 2, 3, 3)
        out = conv2d(x, weight, None, stride=2)
        assert out.shape == (3, 4, 5)
        torch.testing.assert_close(out, F.conv2d(x[None], weight, stride=2, padding=1)[0])

    def test_conv_forward_downsamples(self):
        params = ParameterStore(seed=0)
        spec = ConvSpec(channels=(3, 4, 5), strides=(2, 2))
        params.register("enc", spec)
        assert conv_forward(params, "enc", spec, torch.rand(3, 16, 12)).shape == (5, 4, 3)

    def test_positional_encoding_layout(self):
        f = torch.tensor([[0.25, 0.5]])
        out = positional_encoding(f, 2)
        assert out.shape == (1, 10)
        torch.testing.assert_close(out[0, :2], f[0])
        torch.testing.assert_close(out[0, 2:4], torch.sin(math.pi * f[0]))
        torch.testing.assert_close(out[0, 8:10], torch.cos(2 * math.pi * f[0]))

    def test_mlp_gradcheck(self):
        params = ParameterStore(seed=4)
        spec = MLPSpec((3, 4, 2), activation="tanh", output_activation="softplus")
        params.register("m", spec)
        x = torch.rand(5, 3, requires_grad=True)
        weight = params["m.0.weight"].detach().clone().requires_grad_(True)
        bias = params["m.1.bias"].detach().clone().requires_grad_(True)

        def forward(x, weight, bias):
            return mlp_forward(params.substitute({"m.0.weight": weight, "m.1.bias": bias}), "m", spec, x)

        assert torch.autograd.gradcheck(forward, (x, weight, bias))

    def test_conv2d_gradcheck(self):
        torch.manual_seed(3)
        x = torch.rand(2, 5, 6, requires_grad=True)
        weight = torch.rand(3, 2, 3, 3, requires_grad=True)
        bias = torch.rand(3, requires_grad=True)
        assert torch.autograd.gradcheck(lambda x, w, b: conv2d(x, w, b, stride=2), (x, weight, bias))

    def test_positional_encoding_gradcheck(self):
        f = torch.rand(4, 3, requires_grad=True)
        assert torch.autograd.gradcheck(lambda f: positional_encoding(f, 3), (f,))


class TestSparseConv:
    def test_kernel_offsets(self):
        assert KERNEL_OFFSETS[0].tolist() == [-1, -1, -1]
        assert KERNEL_OFFSETS[CENTER_TAP].tolist() == [0, 0, 0]

    def test_dense_block_matches_conv3d(self):
        torch.manual_seed(0)
        dense = torch.rand(3, 4, 2, 2)
        weight, bias = torch.rand(27, 2, 3), torch.rand(3)
        grid = SparseVoxelGrid.from_dense(GridSpec(channels=2), dense)
        out = sparse_conv3d(grid.features, NeighborTable(grid), weight, bias)
        torch.testing.assert_close(out, _dense_oracle(dense, weight, bias).reshape(-1, 3))

    def test_submanifold_subset_matches_masked_conv3d(self):
        torch.manual_seed(1)
        dense = torch.rand(4, 4, 4, 2)
        mask = torch.rand(4, 4, 4) > 0.5
        dense = dense * mask[..., None]
        weight = torch.rand(27, 2, 2)
        coords = mask.nonzero()
        grid = SparseVoxelGrid(GridSpec(channels=2), coords, dense[mask])
        out = sparse_conv3d(grid.features, NeighborTable(grid), weight)
        expected = _dense_oracle(dense, weight, None)[grid.coords[:, 0], grid.coords[:, 1], grid.coords[:, 2]]
        torch.testing.assert_close(out, expected)

    def test_active_set_is_preserved(self):
        params = ParameterStore(seed=0)
        spec = SparseConvSpec((2, 3, 4))
        params.register("J", spec)
        grid = SparseVoxelGrid(GridSpec(channels=2), torch.tensor([[0, 0, 0], [5, 5, 5]]), torch.rand(2, 2))
        out = sparse_conv_forward(params, "J", spec, grid)
        assert torch.equal(out.coords, grid.coords)
        assert out.spec.channels == 4

    def test_isolated_voxel_only_uses_center_tap(self):
        weight = torch.zeros(27, 1, 1)
        weight[CENTER_TAP] = 2.0
        grid = SparseVoxelGrid(GridSpec(channels=1), torch.tensor([[0, 0, 0], [4, 0, 0]]), torch.tensor([[1.0], [3.0]]))
        out = sparse_conv3d(grid.features, NeighborTable(grid), weight)
        assert out[:, 0].tolist() == [2.0, 6.0]

    def test_gradcheck(self):
        torch.manual_seed(2)
        coords = torch.tensor([[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 1, 1], [3, 3, 3]])
        grid = SparseVoxelGrid(GridSpec(channels=2), coords, torch.rand(5, 2))
        table = NeighborTable(grid)
        features = torch.rand(5, 2, requires_grad=True)
        weight = torch.rand(27, 2, 3, requires_grad=True)
        assert torch.autograd.gradcheck(lambda f, w: sparse_conv3d(f, table, w), (features, weight))

    def test_rejects_channel_mismatch(self):
        grid = SparseVoxelGrid(GridSpec(channels=2), torch.zeros((1, 3), dtype=torch.int64), torch.rand(1, 2))
        with pytest.raises(ShapeMismatchError):
            sparse_conv3d(grid.features, NeighborTable(grid), torch.rand(27, 3, 1))


class TestAdam:
    def test_matches_bias_corrected_recurrence(self):
        p = torch.tensor([1.0, -2.0], requires_grad=True)
        state = AdamState({"p": p}, lr=0.1)
        g = torch.tensor([0.5, -1.5])
        m = v = torch.zeros(2)
        expected = torch.tensor([1.0, -2.0])
        for t in (1, 2, 3):
            adam_step(state, {"p": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat, v_hat = m / (1 - 0.9**t), v / (1 - 0.999**t)
            expected = expected - 0.1 * m_hat / (v_hat.sqrt() + 1e-8)
        torch.testing.assert_close(p.detach(), expected)
        assert state.steps == 3

    def test_zero_lr_leaves_parameters(self):
        p = torch.tensor([1.0, 2.0], requires_grad=True)
        state = AdamState({"p": p}, lr=0.0)
        adam_step(state, {"p": torch.tensor([3.0, -3.0])})
        assert p.tolist() == [1.0, 2.0]

    def test_non_finite_gradient_is_rejected_before_update(self):
        p = torch.tensor([1.0], requires_grad=True)
        state = AdamState({"p": p}, lr=0.1)
        with pytest.raises(NonFiniteGradientError) as info:
            adam_step(state, {"p": torch.tensor([float("inf")])})
        assert info.value.names == ["p"]
        assert p.tolist() == [1.0]

    def test_state_dict_restores_moments(self):
        p = torch.tensor([1.0, 2.0], requires_grad=True)
        state = AdamState({"p": p}, lr=0.05)
        adam_step(state, {"p": torch.tensor([1.0, -1.0])})

        q = p.detach().clone().requires_grad_(True)
        other = AdamState({"p": q}, lr=0.05)
        other.load_state_dict(state.state_dict())
        adam_step(state, {"p": torch.tensor([0.3, 0.2])})
        adam_step(other, {"p": torch.tensor([0.3, 0.2])})
        assert torch.equal(p.detach(), q.detach())

    def test_rebind_resets_moments(self):
        p = torch.tensor([1.0], requires_grad=True)
        state = AdamState({"p": p}, lr=0.1)
        adam_step(state, {"p": torch.tensor([1.0])})
        fresh = torch.zeros(4, requires_grad=True)
        state.rebind("p", fresh)
        assert state.moments("p") == {}
        adam_step(state, {"p": torch.ones(4)})
        # first bias-corrected step moves each entry by ~lr
        torch.testing.assert_close(fresh.detach(), torch.full((4,), -0.1), atol=1e-6, rtol=0)
