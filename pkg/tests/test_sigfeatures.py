import numpy as np
import pytest

from sigforecast import arrayops, randfourier, sigfeatures, sigoracle
from sigforecast.arrayops import FracDiffOrders


def _random_case(rng, m=3, length=5, dd=2, q=None):
    u = rng.uniform(-1, 1, (m, length, dd))
    qv = np.full(dd, 1.0 if q is None else q)
    return u, FracDiffOrders(qv, 4)


class TestRfsf:
    def test_constant_sequence_is_zero(self, rng):
        dd = 3
        u = np.tile(rng.uniform(-1, 1, (2, 1, dd)), (1, 7, 1))
        levels = sigfeatures.rfsf(u, FracDiffOrders(np.ones(dd), 4))
        for lvl in levels.levels:
            assert np.allclose(lvl, 0.0)

    def test_matches_direct_enumeration(self, rng):
        for _ in range(20):
            u, orders = _random_case(rng, q=rng.uniform(0.1, 0.9))
            got = sigfeatures.rfsf(u, orders)
            want = sigoracle.direct_rfsf(sigfeatures.increments(u, orders))
            for a, b in zip(got.levels, want):
                assert np.abs(a - b).max() < 1e-10 * max(1.0, np.abs(b).max())

    def test_duplicated_time_point_invariance(self, rng):
        # time-warping invariance: a repeated point adds a zero increment
        m, dd = 3, 2
        x = rng.standard_normal((6, 2))
        basis = randfourier.sample_basis(m, 2, dd, 0)
        omega, phases = basis.eps_freq, 2 * np.pi * basis.u_prior
        orders = FracDiffOrders(np.ones(dd), 2)
        base = sigfeatures.rfsf(randfourier.rff_levels(x, omega, phases), orders)
        for dup_at in (1, 3, 5):
            x2 = np.insert(x, dup_at, x[dup_at], axis=0)
            dup = sigfeatures.rfsf(randfourier.rff_levels(x2, omega, phases), orders)
            for a, b in zip(base.levels, dup.levels):
                assert np.allclose(a[-1], b[-1], atol=1e-12)

    def test_first_step_is_base_case(self, rng):
        u, orders = _random_case(rng)
        levels = sigfeatures.rfsf(u, orders)
        for lvl in levels.levels:
            assert np.allclose(lvl[0], 0.0)

    def test_causality(self, rng):
        u, orders = _random_case(rng, length=8, q=0.6)
        base = sigfeatures.rfsf(u, orders)
        u2 = u.copy()
        u2[:, 5:, :] = rng.uniform(-1, 1, u2[:, 5:, :].shape)
        bumped = sigfeatures.rfsf(u2, orders)
        for a, b in zip(base.levels, bumped.levels):
            assert np.array_equal(a[:5], b[:5])


class TestRfdsf:
    def test_lambda_one_reduces_to_rfsf(self, rng):
        u, orders = _random_case(rng, q=0.3)
        plain = sigfeatures.rfsf(u, orders)
        decayed = sigfeatures.rfdsf(u, orders, np.ones(u.shape[2]))
        for a, b in zip(plain.levels, decayed.levels):
            assert np.array_equal(a, b)

    def test_matches_direct_enumeration(self, rng):
        for _ in range(20):
            u, orders = _random_case(rng, m=3, length=4, q=rng.uniform(0.1, 0.9))
            lam = rng.uniform(0.3, 1.0, u.shape[2])
            got = sigfeatures.rfdsf(u, orders, lam)
            want = sigoracle.direct_rfsf(sigfeatures.increments(u, orders), lam)
            for a, b in zip(got.levels, want):
                assert np.abs(a - b).max() < 1e-10 * max(1.0, np.abs(b).max())

    def test_total_forgetting_limit(self, rng):
        # lam -> 0: level-1 final row keeps only the final increment
        u, orders = _random_case(rng, m=1, length=6)
        du = sigfeatures.increments(u, orders)
        levels = sigfeatures.rfdsf(u, orders, np.full(u.shape[2], 1e-14))
        assert np.allclose(levels.levels[0][-1], du[0, -1], atol=1e-12)

    def test_rejects_bad_lambda(self, rng):
        u, orders = _random_case(rng)
        with pytest.raises(ValueError):
            sigfeatures.rfdsf(u, orders, np.full(u.shape[2], 1.5))


class TestAssemble:
    def test_unit_norm_blocks(self, rng):
        u, orders = _random_case(rng, q=0.5)
        levels = sigfeatures.rfsf(u, orders)
        phi = sigfeatures.assemble(levels)
        m, (length, dd) = levels.depth, levels.shape
        assert phi.shape == (length, m * dd + 1)
        assert np.allclose(phi[:, 0], 1.0)
        for mm in range(m):
            norms = np.linalg.norm(phi[:, 1 + mm * dd : 1 + (mm + 1) * dd], axis=1)
            assert np.all((np.abs(norms - 1.0) < 1e-12) | (norms == 0.0))

    def test_first_step_bias_only(self, rng):
        u, orders = _random_case(rng)
        phi = sigfeatures.assemble(sigfeatures.rfsf(u, orders))
        expect = np.zeros(phi.shape[1])
        expect[0] = 1.0
        assert np.array_equal(phi[0], expect)

    def test_unnormalized_keeps_scaling(self, rng):
        u, orders = _random_case(rng, m=2)
        levels = sigfeatures.rfsf(u, orders)
        phi = sigfeatures.assemble(levels, normalize=False)
        dd = levels.shape[1]
        assert np.allclose(phi[:, 1 : 1 + dd], levels.scaled(1))


class TestFeatureMatrix:
    def test_identical_to_public_composition(self, rng):
        # the fused pipeline must reproduce the building blocks exactly
        for length in (600, 900):  # below and above the fused-path gate
            m, dd, d_in = 4, 24, 3
            basis = randfourier.sample_basis(m, d_in, dd, 5)
            omega, phases = basis.eps_freq, 2 * np.pi * basis.u_prior
            x = rng.standard_normal((length, d_in))
            orders = FracDiffOrders(rng.uniform(0.1, 0.9, dd), 6)
            lam = rng.uniform(0.3, 1.0, dd)
            fused = sigfeatures.feature_matrix(x, omega, phases, orders, lam)
            u = randfourier.rff_levels(x, omega, phases)
            ref = sigfeatures.assemble(sigfeatures.rfdsf(u, orders, lam))
            assert np.array_equal(fused, ref)

    def test_small_input_fallback(self, rng):
        basis = randfourier.sample_basis(2, 2, 4, 5)
        x = rng.standard_normal((6, 2))
        orders = FracDiffOrders(np.full(4, 0.5), 3)
        fused = sigfeatures.feature_matrix(
            x, basis.eps_freq, 2 * np.pi * basis.u_prior, orders, np.full(4, 0.9)
        )
        u = randfourier.rff_levels(x, basis.eps_freq, 2 * np.pi * basis.u_prior)
        ref = sigfeatures.assemble(sigfeatures.rfdsf(u, orders, np.full(4, 0.9)))
        assert np.allclose(fused, ref, atol=1e-14)

    def test_rejects_bad_decay(self, rng):
        basis = randfourier.sample_basis(2, 2, 64, 5)
        x = rng.standard_normal((200, 2))
        orders = FracDiffOrders(np.full(64, 0.5), 3)
        with pytest.raises(ValueError):
            sigfeatures.feature_matrix(
                x, basis.eps_freq, 2 * np.pi * basis.u_prior, orders, np.full(64, 1.5)
            )


class TestUnnormalizedInner:
    def test_constant_sequences_zero(self, rng):
        dd = 2
        u = np.tile(rng.uniform(-1, 1, (2, 1, dd)), (1, 5, 1))
        orders = FracDiffOrders(np.ones(dd), 2)
        levels = sigfeatures.rfsf(u, orders)
        for m in (1, 2):
            assert sigfeatures.unnormalized_inner(levels, levels, m) == 0.0

    def test_unbiased_for_sig_kernel(self, rng):
        # small-sample version of the acceptance check
        x = rng.standard_normal((4, 2)) * 0.6
        y = rng.standard_normal((4, 2)) * 0.6
        target = sigoracle.exact_sig_kernel(x, y, 2, base="gauss", level=2)
        dd = 8
        orders = FracDiffOrders(np.ones(dd), 2)
        vals = []
        for rep in range(300):
            basis = randfourier.sample_basis(2, 2, dd, 900 + rep)
            om, ph = basis.eps_freq, 2 * np.pi * basis.u_prior
            lx = sigfeatures.rfsf(randfourier.rff_levels(x, om, ph), orders)
            ly = sigfeatures.rfsf(randfourier.rff_levels(y, om, ph), orders)
            vals.append(sigfeatures.unnormalized_inner(lx, ly, 2))
        vals = np.asarray(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - target) < 3 * se

    def test_variance_shrinks_with_width(self, rng):
        x = rng.standard_normal((4, 2)) * 0.6
        y = rng.standard_normal((4, 2)) * 0.6
        stds = []
        for dd in (8, 64):
            orders = FracDiffOrders(np.ones(dd), 2)
            vals = []
            for rep in range(120):
                basis = randfourier.sample_basis(1, 2, dd, 300 + rep)
                om, ph = basis.eps_freq, 2 * np.pi * basis.u_prior
                lx = sigfeatures.rfsf(randfourier.rff_levels(x, om, ph), orders)
                ly = sigfeatures.rfsf(randfourier.rff_levels(y, om, ph), orders)
                vals.append(sigfeatures.unnormalized_inner(lx, ly, 1))
            stds.append(np.std(vals))
        assert stds[1] < stds[0]

    def test_level_out_of_range(self, rng):
        u, orders = _random_case(rng, m=2)
        levels = sigfeatures.rfsf(u, orders)
        with pytest.raises(ValueError):
            sigfeatures.unnormalized_inner(levels, levels, 3)
