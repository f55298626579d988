import numpy as np
import pytest

import reference as ref
from vnsc import layers as L
from vnsc import tensor as T
from vnsc.errors import ConfigurationError
from vnsc.gradcheck import check_gradients
from vnsc.tensor import Tensor


class Stack(L.Module):
    def __init__(self):
        super().__init__()
        self.pre = L.Conv1d(2, 4, 3, padding=1)
        self.blocks = L.ModuleList([L.McnxBlock(4) for _ in range(2)])
        self.norm = L.LayerNorm(4)

    def forward(self, x):
        y = self.pre(x)
        for b in self.blocks:
            y = b(y)
        return self.norm(y)


class TestModuleRegistry:
    def test_names_are_dotted_and_unique(self):
        names = [n for n, _ in Stack().named_parameters()]
        assert "pre.weight" in names
        assert "blocks.0.dwconv.weight" in names
        assert "blocks.1.pw2.bias" in names
        assert "norm.gamma" in names
        assert len(names) == len(set(names))

    def test_initialize_is_deterministic(self):
        a, b = Stack(), Stack()
        a.initialize(7)
        b.initialize(7)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_initialize_depends_on_name_not_order(self):
        # the same named submodule gets identical weights even when the
        # surrounding model differs
        full = Stack()
        full.initialize(3)
        alone = L.Conv1d(2, 4, 3, padding=1)
        holder = L.Module()
        holder.pre = alone
        holder.initialize(3)
        np.testing.assert_array_equal(full.pre.weight.data, alone.weight.data)

    def test_uniform_bounds_follow_fan_in(self):
        lin = L.Linear(100, 50)
        holder = L.Module()
        holder.lin = lin
        holder.initialize(0)
        bound = np.sqrt(1.0 / 100)
        assert np.abs(lin.weight.data).max() <= bound
        assert np.abs(lin.weight.data).max() > 0.5 * bound
        np.testing.assert_array_equal(lin.bias.data, 0.0)

    def test_state_dict_round_trip(self):
        a, b = Stack(), Stack()
        a.initialize(1)
        b.initialize(2)
        b.load_state_dict(a.state_dict())
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_load_rejects_mismatched_names(self):
        a = Stack()
        state = a.state_dict()
        state["ghost"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(ConfigurationError):
            a.load_state_dict(state)

    def test_train_eval_switch(self):
        m = Stack()
        assert all(mod.training for mod in m.modules())
        m.eval()
        assert not any(mod.training for mod in m.modules())

    def test_zero_grad(self):
        m = Stack()
        m.initialize(0)
        out = m(Tensor(np.random.default_rng(0).normal(size=(2, 6)).astype(np.float32)))
        T.tsum(out).backward()
        assert any(p.grad is not None for p in m.parameters())
        m.zero_grad()
        assert all(p.grad is None for p in m.parameters())


class TestMcnxBlock:
    def test_zero_projection_gives_identity(self, rng):
        block = L.McnxBlock(6)
        block.initialize(0)
        block.pw2.weight.data[:] = 0.0
        block.pw2.bias.data[:] = 0.0
        x = rng.normal(size=(6, 9)).astype(np.float32)
        np.testing.assert_array_equal(block(Tensor(x)).data, x)

    def test_shape_preserved(self, rng):
        block = L.McnxBlock(256)
        block.initialize(0)
        x = Tensor(rng.normal(size=(256, 120)).astype(np.float32))
        assert block(x).shape == (256, 120)

    def test_matches_composed_primitive_oracle(self, rng):
        d, n = 4, 5
        block = L.McnxBlock(d, kernel=3)
        block.initialize(11)
        x = rng.normal(size=(d, n))
        got = block(Tensor(x.astype(np.float64))).data

        from scipy.special import erf
        y = ref.conv1d(x, block.dwconv.weight.data.astype(np.float64),
                       block.dwconv.bias.data.astype(np.float64), 1, 1, groups=d)
        y = ref.layer_norm(y, block.norm.gamma.data, block.norm.beta.data)
        y = block.pw1.weight.data.astype(np.float64) @ y + block.pw1.bias.data[:, None]
        y = y * 0.5 * (1.0 + erf(y / np.sqrt(2.0)))
        y = ref.grn(y, block.grn.gamma.data, block.grn.beta.data)
        y = block.pw2.weight.data.astype(np.float64) @ y + block.pw2.bias.data[:, None]
        np.testing.assert_allclose(got, x + y, atol=1e-6)

    def test_gradients(self, rng):
        block = L.McnxBlock(3, kernel=3)
        block.initialize(5)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        probe = Tensor(rng.normal(size=(3, 4)))

        def loss():
            return T.tsum(T.mul(block(x), probe))

        params = [("x", x)] + block.trainable_parameters()
        assert check_gradients(loss, params, rel_tol=1e-4, max_entries=12).ensure().ok


class TestBatchNorm3d:
    def test_training_normalizes_batch(self, rng):
        bn = L.BatchNorm3d(3)
        bn.initialize(0)
        x = Tensor(rng.normal(loc=2.0, scale=3.0, size=(3, 4, 5, 6)).astype(np.float32))
        y = bn(x).data
        assert np.abs(y.mean(axis=(1, 2, 3))).max() < 1e-5
        assert np.abs(y.std(axis=(1, 2, 3)) - 1.0).max() < 1e-3

    def test_running_stats_converge_then_freeze(self, rng):
        bn = L.BatchNorm3d(2)
        bn.initialize(0)
        x = Tensor(rng.normal(loc=1.5, scale=2.0, size=(2, 6, 8, 8)).astype(np.float32))
        for _ in range(200):
            bn(x)
        # running stats converge to this batch's own statistics
        batch_mean = x.data.mean(axis=(1, 2, 3))
        batch_var = x.data.var(axis=(1, 2, 3), ddof=1)
        assert np.abs(bn.running_mean.data - batch_mean).max() < 1e-3
        assert np.abs(bn.running_var.data - batch_var).max() < 1e-3
        bn.eval()
        y = bn(x).data
        z = bn(x).data
        np.testing.assert_array_equal(y, z)
        assert np.abs(y.mean()) < 0.1

    def test_update_stats_flag_blocks_side_effects(self, rng):
        bn = L.BatchNorm3d(2)
        bn.initialize(0)
        bn.update_stats = False
        before = bn.running_mean.data.copy()
        bn(Tensor(rng.normal(size=(2, 3, 4, 4)).astype(np.float32)))
        np.testing.assert_array_equal(bn.running_mean.data, before)

    def test_gradients_in_training_mode(self, rng):
        bn = L.BatchNorm3d(2)
        bn.initialize(0)
        bn.update_stats = False
        x = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
        probe = Tensor(rng.normal(size=(2, 2, 3, 3)))

        def loss():
            return T.tsum(T.mul(bn(x), probe))

        params = [("x", x), ("gamma", bn.gamma), ("beta", bn.beta)]
        assert check_gradients(loss, params, rel_tol=1e-4, max_entries=20).ensure().ok

    def test_buffers_not_trainable(self):
        bn = L.BatchNorm3d(4)
        trainable = {n for n, _ in bn.trainable_parameters()}
        assert trainable == {"gamma", "beta"}
        everything = {n for n, _ in bn.named_parameters()}
        assert {"running_mean", "running_var"} <= everything
