import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import adaprompt.autodiff as ad
from adaprompt.autodiff import ParamGroup, SgdState, Tensor, grad_check, sgd_step
from adaprompt.errors import ContractViolation

from oracles import conv2d_loops


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))),
                        Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_yields_bias(self):
        x = np.zeros((1, 1, 4, 4))
        k = np.random.default_rng(0).normal(size=(2, 1, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.array([1.5, -2.0])),
                        stride=1, padding=1)
        assert np.all(out.data[0, 0] == 1.5)
        assert np.all(out.data[0, 1] == -2.0)

    def test_strided_padded_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1)
        expected = conv2d_loops(x, k, b, stride=2, padding=1)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_channel_mismatch_reports_shapes(self):
        with pytest.raises(ContractViolation, match=r"1, 2, 4, 4.*3, 1, 3, 3"):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))),
                      Tensor(np.zeros((3, 1, 3, 3))), Tensor(np.zeros(3)))

    def test_bias_length_mismatch(self):
        with pytest.raises(ContractViolation):
            ad.conv2d(Tensor(np.zeros((1, 1, 4, 4))),
                      Tensor(np.zeros((3, 1, 3, 3))), Tensor(np.zeros(2)))

    def test_input_smaller_than_kernel(self):
        with pytest.raises(ContractViolation):
            ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))),
                      Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)))

    @settings(max_examples=120, deadline=None)
    @given(st.data())
    def test_property_matches_oracle(self, data):
        h = data.draw(st.integers(1, 7), label="H")
        w = data.draw(st.integers(1, 7), label="W")
        k = data.draw(st.integers(1, 3), label="k")
        stride = data.draw(st.sampled_from([1, 2]), label="stride")
        pad = data.draw(st.sampled_from([0, 1]), label="pad")
        cin = data.draw(st.integers(1, 2), label="cin")
        cout = data.draw(st.integers(1, 2), label="cout")
        if h + 2 * pad < k or w + 2 * pad < k:
            return
        seed = data.draw(st.integers(0, 2 ** 31), label="seed")
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, cin, h, w))
        kern = rng.normal(size=(cout, cin, k, k))
        b = rng.normal(size=cout)
        out = ad.conv2d(Tensor(x), Tensor(kern), Tensor(b), stride, pad)
        np.testing.assert_allclose(
            out.data, conv2d_loops(x, kern, b, stride, pad), atol=1e-10)


class TestSoftmax:
    def test_symmetry(self):
        out = ad.softmax(Tensor(np.array([0.0, 0.0])), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_scalar_evaluation(self):
        out = ad.softmax(Tensor(np.array([1.0, 0.0])), axis=0)
        np.testing.assert_allclose(out.data, [0.7311, 0.2689], atol=1e-4)

    def test_low_temperature_limit(self):
        out = ad.softmax(Tensor(np.array([1.0, 0.0])), axis=0, temperature=0.01)
        assert out.data[0] > 1.0 - 1e-10

    def test_temperature_contract(self):
        with pytest.raises(ContractViolation):
            ad.softmax(Tensor(np.zeros(2)), axis=0, temperature=0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-15, 15), min_size=2, max_size=6),
           st.floats(-30, 30))
    def test_probability_vector_and_shift_invariance(self, values, shift):
        v = np.array(values)
        out = ad.softmax(Tensor(v), axis=0).data
        assert np.all(out > 0.0) and np.all(out < 1.0)
        assert abs(out.sum() - 1.0) <= 1e-12
        shifted = ad.softmax(Tensor(v + shift), axis=0).data
        np.testing.assert_allclose(out, shifted, atol=1e-12)


class TestBackward:
    def test_sum_gradient_ones(self):
        p = Tensor(np.array([3.0, -1.0, 2.0]), requires_grad=True)
        ad.tsum(p).backward()
        np.testing.assert_array_equal(p.grad, np.ones(3))

    def test_quadratic_gradient(self):
        p = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        ad.tsum(ad.mul(p, p)).backward()
        np.testing.assert_array_equal(p.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractViolation):
            Tensor(np.zeros(3), requires_grad=True).backward()

    def test_accumulation_until_cleared(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        ad.tsum(p).backward()
        ad.tsum(p).backward()
        np.testing.assert_array_equal(p.grad, [2.0, 2.0])

    def test_composed_pipeline_finite_differences(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(1, 1, 6, 6)))
        k = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)

        def build():
            h = ad.relu(ad.conv2d(x, k, b, stride=1, padding=1))
            probs = ad.softmax(ad.reshape(ad.spatial_mean(h), (2,)), axis=0)
            return ad.mul(ad.tsum(ad.log(probs)), -1.0)

        assert grad_check(build, [k, b]) < 1e-4


class TestGradCheck:
    def test_softmax_log_composite(self):
        v = Tensor(np.array([0.3, -1.2, 0.7, 2.0]), requires_grad=True)

        def build():
            return ad.tsum(ad.log(ad.softmax(v, axis=0)))

        assert grad_check(build, [v]) < 1e-6

    def test_conv_padded(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
        k = Tensor(rng.normal(size=(1, 1, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=1), requires_grad=True)

        def build():
            return ad.tsum(ad.conv2d(x, k, b, stride=1, padding=1))

        assert grad_check(build, [x, k, b]) < 1e-6

    def test_identity_map(self):
        # linear map: any finite-difference step is exact, so the probe
        # step can be large enough for exact float arithmetic
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        assert grad_check(lambda: ad.tsum(p), [p], step=0.5) <= 1e-12

    @pytest.mark.parametrize("op", ["mul", "relu", "exp", "narrow", "block_mean",
                                    "upsample", "matmul", "moveaxis",
                                    "cross_entropy", "spatial_mean"])
    def test_registered_op_families(self, op):
        rng = np.random.default_rng(hash(op) % 2 ** 31)
        if op in ("block_mean", "upsample", "spatial_mean", "narrow"):
            p = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        elif op == "matmul":
            p = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        else:
            p = Tensor(rng.normal(size=(2, 5)), requires_grad=True)

        def build():
            if op == "mul":
                return ad.tsum(ad.mul(p, p))
            if op == "relu":
                return ad.tsum(ad.mul(ad.relu(p), p))
            if op == "exp":
                return ad.tsum(ad.exp(ad.mul(p, 0.3)))
            if op == "narrow":
                return ad.tsum(ad.narrow(p, 1, 0, 1))
            if op == "block_mean":
                return ad.tsum(ad.mul(ad.block_mean(p, 2), 2.0))
            if op == "upsample":
                return ad.tsum(ad.mul(ad.upsample_nearest(p, 2),
                                      Tensor(np.arange(256.0).reshape(2, 2, 8, 8))))
            if op == "matmul":
                w = Tensor(np.arange(8.0).reshape(4, 2))
                return ad.tsum(ad.matmul(p, w))
            if op == "moveaxis":
                return ad.tsum(ad.mul(ad.moveaxis(p, 0, 1),
                                      Tensor(np.arange(10.0).reshape(5, 2))))
            if op == "cross_entropy":
                return ad.cross_entropy(p, np.array([1, 3]))
            return ad.tsum(ad.spatial_mean(p))

        assert grad_check(build, [p]) < 1e-4


class TestSgd:
    def _state(self, params, lr, total=1, epoch=0):
        s = SgdState(groups=[ParamGroup(params, lr)], total_epochs=total)
        s.epoch = epoch
        return s

    def test_single_step(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([0.5])
        sgd_step(self._state([p], 1.0, total=0))
        np.testing.assert_array_equal(p.data, [0.5])
        assert p.grad is None

    def test_zero_gradient_no_change(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        p.grad = np.array([0.0])
        sgd_step(self._state([p], 40.0, total=0))
        np.testing.assert_array_equal(p.data, [2.0])

    def test_cosine_midpoint(self):
        s = SgdState(groups=[ParamGroup([], 40.0)], total_epochs=10)
        s.epoch = 5
        assert abs(s.effective_lr(40.0) - 20.0) < 1e-9

    def test_missing_grad_rejected(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(ContractViolation):
            sgd_step(self._state([p], 1.0))

    def test_schedule_nonnegative(self):
        s = SgdState(groups=[], total_epochs=7)
        for e in range(8):
            s.epoch = e
            assert s.effective_lr(40.0) >= 0.0


def test_identical_seeds_identical_trajectories():
    def run():
        rng = np.random.default_rng(42)
        p = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(1, 1, 5, 5)))
        state = SgdState(groups=[ParamGroup([p], 0.1)], total_epochs=5)
        trajectory = []
        for e in range(5):
            state.epoch = e
            out = ad.conv2d(x, p, Tensor(np.zeros(2)), stride=1, padding=1)
            ad.tsum(ad.mul(out, out)).backward()
            sgd_step(state)
            trajectory.append(p.data.copy())
        return trajectory

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)
