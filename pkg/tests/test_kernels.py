"""Kernel spec validation, Gram assembly, and product-kernel algebra."""
import numpy as np
import pytest

from muka import KernelSpec, cross_kernel, gram, kernel_value, sq_dists, weighted_sq_dists
from muka.errors import DimensionMismatch, MissingSpace, SchemaError

from _oracles import concat_rbf, direct_kernel


def unit_rows(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestKernelSpec:
    def test_needs_a_space(self):
        with pytest.raises(SchemaError):
            KernelSpec(bandwidths=())

    def test_rejects_duplicate_space(self):
        with pytest.raises(SchemaError):
            KernelSpec(bandwidths=(("fine", 1.0), ("fine", 2.0)))

    @pytest.mark.parametrize("beta", [0.0, -1.0, np.nan, np.inf])
    def test_rejects_bad_bandwidth(self, beta):
        with pytest.raises(SchemaError):
            KernelSpec.single("fine", beta)

    def test_constructors_and_accessors(self):
        spec = KernelSpec.product({"fine": 2.0, "coarse": 5.0})
        assert spec.spaces == ("fine", "coarse")
        assert spec.beta("coarse") == 5.0
        assert spec.as_dict() == {"fine": 2.0, "coarse": 5.0}
        with pytest.raises(KeyError):
            spec.beta("missing")


class TestSquaredDistances:
    def test_matches_direct_loops(self):
        rng = np.random.default_rng(42)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((9, 5))
        d2 = sq_dists(a, b)
        for i in range(7):
            for j in range(9):
                assert d2[i, j] == pytest.approx(np.sum((a[i] - b[j]) ** 2), abs=1e-12)

    def test_never_negative(self):
        rng = np.random.default_rng(0)
        # near-duplicate rows push the expansion into rounding territory
        a = unit_rows(rng, 50, 16)
        b = a + 1e-9 * rng.standard_normal(a.shape)
        assert sq_dists(a, b).min() >= 0.0

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sq_dists(np.ones((2, 3)), np.ones((2, 4)))


class TestGram:
    def test_exactly_symmetric_with_unit_diagonal(self):
        rng = np.random.default_rng(42)
        x = {"fine": unit_rows(rng, 20, 8), "coarse": unit_rows(rng, 20, 6)}
        k = gram(x, KernelSpec.product({"fine": 2.0, "coarse": 0.5}))
        assert np.array_equal(k, k.T)
        assert np.all(np.diag(k) == 1.0)
        assert k.min() > 0.0 and k.max() <= 1.0

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        x = {"fine": unit_rows(rng, 10, 5), "coarse": unit_rows(rng, 10, 4)}
        spec = KernelSpec.product({"fine": 3.0, "coarse": 1.5})
        k = gram(x, spec)
        for i in range(10):
            for j in range(10):
                direct = direct_kernel(
                    {s: x[s][i] for s in x}, {s: x[s][j] for s in x}, spec
                )
                assert k[i, j] == pytest.approx(direct, abs=1e-12)

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(2, 33))
            x = {
                "fine": unit_rows(rng, n, int(rng.integers(2, 12))),
                "coarse": unit_rows(rng, n, int(rng.integers(2, 12))),
            }
            spec = KernelSpec.product(
                {"fine": float(rng.uniform(0.5, 20)), "coarse": float(rng.uniform(0.5, 20))}
            )
            assert np.linalg.eigvalsh(gram(x, spec)).min() >= -1e-8

    def test_missing_space(self):
        rng = np.random.default_rng(0)
        x = {"fine": unit_rows(rng, 4, 3)}
        with pytest.raises(MissingSpace):
            gram(x, KernelSpec.product({"fine": 1.0, "coarse": 1.0}))


class TestCrossKernel:
    def test_matches_kernel_value(self):
        rng = np.random.default_rng(3)
        xq = {"fine": unit_rows(rng, 6, 5), "coarse": unit_rows(rng, 6, 4)}
        xs = {"fine": unit_rows(rng, 8, 5), "coarse": unit_rows(rng, 8, 4)}
        spec = KernelSpec.product({"fine": 2.0, "coarse": 5.0})
        k = cross_kernel(xq, xs, spec)
        assert k.shape == (6, 8)
        for i in range(6):
            for j in range(8):
                v = kernel_value(
                    {s: xq[s][i] for s in xq}, {s: xs[s][j] for s in xs}, spec
                )
                assert k[i, j] == pytest.approx(v, abs=1e-12)

    def test_capped_at_one(self):
        x = {"fine": np.array([[1.0, 0.0]])}
        k = cross_kernel(x, x, KernelSpec.single("fine", 5.0))
        assert k[0, 0] == 1.0

    def test_row_count_mismatch_across_spaces(self):
        rng = np.random.default_rng(1)
        xq = {"fine": unit_rows(rng, 3, 4), "coarse": unit_rows(rng, 5, 4)}
        with pytest.raises(Exception):
            weighted_sq_dists(xq, xq, KernelSpec.product({"fine": 1.0, "coarse": 1.0}))


class TestProductAlgebra:
    def test_product_equals_exp_of_weighted_sum(self):
        rng = np.random.default_rng(11)
        xa = {"fine": unit_rows(rng, 1, 6)[0], "coarse": unit_rows(rng, 1, 3)[0]}
        xb = {"fine": unit_rows(rng, 1, 6)[0], "coarse": unit_rows(rng, 1, 3)[0]}
        spec = KernelSpec.product({"fine": 2.0, "coarse": 7.0})
        factored = 1.0
        for space, beta in spec.bandwidths:
            factored *= np.exp(-0.5 * beta * np.sum((xa[space] - xb[space]) ** 2))
        assert kernel_value(xa, xb, spec) == pytest.approx(factored, abs=1e-15)

    def test_equal_bandwidth_product_is_concatenation_rbf(self):
        rng = np.random.default_rng(42)
        beta = 3.0
        spec = KernelSpec.product({"fine": beta, "coarse": beta})
        for _ in range(20):
            xa = {"fine": unit_rows(rng, 1, 5)[0], "coarse": unit_rows(rng, 1, 7)[0]}
            xb = {"fine": unit_rows(rng, 1, 5)[0], "coarse": unit_rows(rng, 1, 7)[0]}
            reference = concat_rbf(
                (xa["fine"], xa["coarse"]), (xb["fine"], xb["coarse"]), beta
            )
            assert kernel_value(xa, xb, spec) == pytest.approx(reference, abs=1e-12)

    def test_identical_spaces_double_the_bandwidth_bit_exactly(self):
        rng = np.random.default_rng(5)
        rows = unit_rows(rng, 12, 6)
        queries = unit_rows(rng, 9, 6)
        two_copies = cross_kernel(
            {"fine": queries, "coarse": queries},
            {"fine": rows, "coarse": rows},
            KernelSpec.product({"fine": 1.5, "coarse": 1.5}),
        )
        single_doubled = cross_kernel(
            {"fine": queries}, {"fine": rows}, KernelSpec.single("fine", 3.0)
        )
        assert np.array_equal(two_copies, single_doubled)

    def test_gram_reduction_is_bit_exact_too(self):
        rng = np.random.default_rng(6)
        rows = unit_rows(rng, 15, 8)
        k2 = gram(
            {"fine": rows, "coarse": rows},
            KernelSpec.product({"fine": 2.0, "coarse": 2.0}),
        )
        k1 = gram({"fine": rows}, KernelSpec.single("fine", 4.0))
        assert np.array_equal(k2, k1)
