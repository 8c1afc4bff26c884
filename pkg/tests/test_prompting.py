import numpy as np
import pytest

import adaprompt.autodiff as ad
from adaprompt.autodiff import Tensor
from adaprompt.errors import ContractViolation
from adaprompt.prompting import (PromptTemplate, apply_prompt,
                                 count_prompt_params, frame_support)

from oracles import apply_prompt_loops


class TestFrameSupport:
    def test_full_cover(self):
        s = frame_support(224, 224, 112)
        assert s.sum() == 224 * 224

    def test_zero_width(self):
        assert frame_support(8, 8, 0).sum() == 0

    def test_width_five(self):
        assert frame_support(224, 224, 5).sum() == 224 ** 2 - 214 ** 2

    def test_closed_form_count(self):
        for h, w, width in [(16, 16, 3), (8, 12, 2), (10, 10, 5), (6, 9, 4)]:
            expected = (h * w - (h - 2 * width) * (w - 2 * width)
                        if 2 * width <= min(h, w) else h * w)
            assert frame_support(h, w, width).sum() == expected

    def test_definition_pointwise(self):
        s = frame_support(7, 9, 2)
        for i in range(7):
            for j in range(9):
                expected = 1.0 if min(i, j, 6 - i, 8 - j) < 2 else 0.0
                assert s[0, i, j] == expected

    def test_negative_width_rejected(self):
        with pytest.raises(ContractViolation):
            frame_support(8, 8, -1)


class TestCountPromptParams:
    def test_default_paper_width(self):
        assert count_prompt_params(224, 224, 30) == 69840

    def test_zero(self):
        assert count_prompt_params(224, 224, 0) == 0

    def test_full_cover(self):
        assert count_prompt_params(224, 224, 112) == 150528


class TestApplyPrompt:
    def _template(self, h=4, w=4, width=1, seed=0):
        return PromptTemplate.create(h, w, width, seed)

    def test_all_zero_mask_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(3, 4, 4))
        out = apply_prompt(x, self._template(), np.zeros((1, 4, 4)))
        assert np.array_equal(out.data, x)

    def test_full_mask_full_cover_adds_template(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(3, 4, 4))
        tpl = self._template(width=2)  # full cover at 4x4
        out = apply_prompt(x, tpl, np.ones((1, 4, 4)))
        np.testing.assert_allclose(out.data, x + tpl.values.data, atol=0)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(3, 4, 4))
        tpl = self._template(width=1)
        mask = rng.uniform(size=(1, 4, 4))
        out = apply_prompt(x, tpl, mask)
        expected = apply_prompt_loops(x, tpl.values.data, tpl.support, mask)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            apply_prompt(np.zeros((3, 4, 4)), self._template(), np.zeros((1, 5, 5)))

    def test_interior_values_never_matter(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(3, 6, 6))
        tpl = self._template(6, 6, width=1, seed=4)
        mask = rng.uniform(size=(1, 6, 6))
        base = apply_prompt(x, tpl, mask).data
        tpl.values.data[:, 2:4, 2:4] += 100.0  # strictly inside the frame
        np.testing.assert_array_equal(apply_prompt(x, tpl, mask).data, base)

    def test_interior_gradient_zero(self):
        rng = np.random.default_rng(5)
        tpl = self._template(6, 6, width=1, seed=6)
        x = rng.uniform(size=(3, 6, 6))
        out = apply_prompt(x, tpl, np.ones((1, 6, 6)))
        ad.tsum(ad.mul(out, out)).backward()
        interior = tpl.values.grad[:, 1:-1, 1:-1]
        np.testing.assert_array_equal(interior, np.zeros_like(interior))
        assert np.any(tpl.values.grad != 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(3, 4, 4))
        tpl = self._template(width=2, seed=8)
        mask = Tensor(rng.uniform(size=(1, 4, 4)), requires_grad=True)
        weights = Tensor(rng.normal(size=(3, 4, 4)))

        def build():
            return ad.tsum(ad.mul(apply_prompt(x, tpl, mask), weights))

        assert ad.grad_check(build, [tpl.values, mask]) < 1e-6

    def test_region_locality(self):
        # flipping one region's decision only changes that block of the output
        rng = np.random.default_rng(9)
        x = rng.uniform(size=(3, 8, 8))
        tpl = self._template(8, 8, width=4, seed=10)
        grid = np.ones((2, 2))
        mask_on = np.repeat(np.repeat(grid, 4, 0), 4, 1)[None]
        grid[0, 1] = 0.0
        mask_off = np.repeat(np.repeat(grid, 4, 0), 4, 1)[None]
        a = apply_prompt(x, tpl, mask_on).data
        b = apply_prompt(x, tpl, mask_off).data
        diff = a != b
        assert not diff[:, :4, :4].any()
        assert not diff[:, 4:, :].any()
        assert diff[:, :4, 4:].any()
