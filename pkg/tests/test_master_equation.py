"""Tests for the exact master-equation engine."""

import numpy as np
import pytest
from scipy.linalg import expm

from ebmlab import master_equation as meq
from ebmlab.master_equation import (CapacityError, DetailedBalanceError, EnergyTable,
                                    SpinStateSpace, build_continuous_glauber,
                                    build_discrete_heatbath, delta_distribution,
                                    error_zero_crossings, evolve, evolve_direct,
                                    exact_finite_k_gradient, finite_k_moment,
                                    finite_k_moments, gibbs_distribution,
                                    hessian_check, lambda_correction, mismatch_D,
                                    mixing_time, moment_error_curve,
                                    moments_of_distribution, pair_field_observables,
                                    spectral_expansion, train_exact,
                                    uniform_distribution)
from ebmlab.moments import MomentEstimate
from ebmlab.numerics import sym_eig


def random_model(rng, n, scale=0.4, with_fields=True):
    j = rng.normal(scale=scale, size=(n, n))
    j = 0.5 * (j + j.T)
    np.fill_diagonal(j, 0.0)
    h = rng.normal(scale=scale, size=n) if with_fields else np.zeros(n)
    return EnergyTable.from_couplings(j, h)


def ring_couplings(n, beta):
    j = np.zeros((n, n))
    for i in range(n):
        j[i, (i + 1) % n] += beta
        j[(i + 1) % n, i] += beta
    return j


class TestStateSpaceAndEnergies:
    def test_encoding_bijection(self):
        space = SpinStateSpace(4)
        x = space.configurations()
        assert x.shape == (16, 4)
        for a in range(16):
            assert space.index_of(x[a]) == a

    def test_bit_convention(self):
        """Bit i of the state index is 1 iff spin i is +1 (little-endian)."""
        space = SpinStateSpace(3)
        np.testing.assert_array_equal(space.configurations()[0b101], [1.0, -1.0, 1.0])

    def test_energy_table_spot_check(self):
        """100 random states match the explicit pair/field sum to 1e-12."""
        rng = np.random.default_rng(0)
        energy = random_model(rng, 6)
        x = energy.space.configurations()
        for a in rng.integers(0, energy.space.size, size=100):
            direct = 0.0
            for i in range(6):
                for jdx in range(i + 1, 6):
                    direct -= energy.couplings[i, jdx] * x[a, i] * x[a, jdx]
            direct -= energy.fields @ x[a]
            assert abs(energy.energies[a] - direct) <= 1e-12

    def test_capacity_bound(self):
        with pytest.raises(CapacityError):
            SpinStateSpace(21)

    def test_dense_capacity_bound(self):
        energy = EnergyTable.from_couplings(np.zeros((13, 13)))
        with pytest.raises(CapacityError):
            build_discrete_heatbath(energy)


class TestGibbsDistribution:
    def test_zero_energy_uniform(self):
        """Zero couplings on 3 spins give probability 1/8 everywhere."""
        g = gibbs_distribution(EnergyTable.from_couplings(np.zeros((3, 3))))
        np.testing.assert_allclose(g.probabilities, 1.0 / 8.0, atol=1e-15)

    def test_two_state_analytic(self):
        """Single spin in field 0.5: p(+1) = e^.5/(e^.5 + e^-.5)."""
        g = gibbs_distribution(EnergyTable.from_couplings(np.zeros((1, 1)), [0.5]))
        expected = np.exp(0.5) / (np.exp(0.5) + np.exp(-0.5))
        assert abs(g.probabilities[1] - expected) <= 1e-12

    def test_ring_log_partition_against_direct_sum(self):
        """N=4 ring at 0.44: log Z matches the direct 16-term sum."""
        energy = EnergyTable.from_couplings(ring_couplings(4, 0.44))
        g = gibbs_distribution(energy)
        direct = np.log(np.exp(-energy.energies).sum())
        assert abs(g.log_partition - direct) <= 1e-10
        assert abs(g.probabilities.sum() - 1.0) <= 1e-12
        assert g.probabilities.min() > 0


class TestOperatorBuilders:
    def test_single_spin_unbiased_kernel(self):
        op = build_discrete_heatbath(EnergyTable.from_couplings(np.zeros((1, 1))))
        np.testing.assert_allclose(op.matrix, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_single_spin_field_kernel_is_stochastic_and_reversible(self):
        op = build_discrete_heatbath(EnergyTable.from_couplings(np.zeros((1, 1)), [0.5]))
        np.testing.assert_allclose(op.matrix.sum(axis=0), 1.0, atol=1e-12)
        assert op.detailed_balance_residual() <= 1e-12

    def test_heatbath_spectrum_in_unit_interval(self):
        """Similarity-symmetrized heat-bath kernel has eigenvalues in [0,1]."""
        rng = np.random.default_rng(1)
        op = build_discrete_heatbath(random_model(rng, 3))
        p = op.gibbs.probabilities
        d = np.sqrt(p)
        sym = op.matrix * (d[None, :] / d[:, None])
        lam = sym_eig(0.5 * (sym + sym.T)).eigenvalues
        assert lam.min() >= -1e-12
        assert lam.max() <= 1.0 + 1e-12

    def test_single_spin_generator(self):
        op = build_continuous_glauber(EnergyTable.from_couplings(np.zeros((1, 1))))
        np.testing.assert_allclose(op.matrix, [[-0.5, 0.5], [0.5, -0.5]], atol=1e-15)
        exp = spectral_expansion(op, [0.5, 0.5])
        np.testing.assert_allclose(exp.eigenvalues, [0.0, -1.0], atol=1e-12)

    def test_generator_columns_sum_to_zero(self):
        rng = np.random.default_rng(2)
        op = build_continuous_glauber(random_model(rng, 4))
        np.testing.assert_allclose(op.matrix.sum(axis=0), 0.0, atol=1e-12)

    def test_two_spin_detailed_balance(self):
        """N=2 with J12 = 0.3: elementwise flux balance against Gibbs."""
        j = np.array([[0.0, 0.3], [0.3, 0.0]])
        op = build_continuous_glauber(EnergyTable.from_couplings(j))
        assert op.detailed_balance_residual() <= 1e-12

    def test_detailed_balance_property_50_models(self):
        """Both builders balance within 1e-12 on 50 random models, N in 2..6."""
        rng = np.random.default_rng(5)
        for trial in range(50):
            n = int(rng.integers(2, 7))
            energy = random_model(rng, n)
            assert build_discrete_heatbath(energy).detailed_balance_residual() <= 1e-12
            assert build_continuous_glauber(energy).detailed_balance_residual() <= 1e-12


class TestSpectralExpansion:
    def test_stationary_start(self):
        """p0 = Gibbs leaves only the stationary coefficient."""
        rng = np.random.default_rng(7)
        op = build_continuous_glauber(random_model(rng, 3))
        exp = spectral_expansion(op, op.gibbs.probabilities)
        assert abs(exp.coefficients[0] - 1.0) <= 1e-10
        assert np.abs(exp.coefficients[1:]).max() <= 1e-10

    def test_two_state_mode_product(self):
        """Single unbiased spin from (1,0): c1 * u1 = (1/2, -1/2)."""
        op = build_continuous_glauber(EnergyTable.from_couplings(np.zeros((1, 1))))
        exp = spectral_expansion(op, [1.0, 0.0])
        np.testing.assert_allclose(exp.coefficients[1] * exp.modes[:, 1],
                                   [0.5, -0.5], atol=1e-12)

    def test_reconstruction(self):
        """p0 = sum_a c_a u_a within 1e-10 for a random model."""
        rng = np.random.default_rng(9)
        op = build_discrete_heatbath(random_model(rng, 3))
        p0 = uniform_distribution(op.energy.space)
        exp = spectral_expansion(op, p0)
        resum = exp.modes @ exp.coefficients
        assert np.abs(resum - p0).max() <= 1e-10

    def test_mode_normalization(self):
        """u0 sums to one; every other mode sums to zero."""
        rng = np.random.default_rng(10)
        op = build_continuous_glauber(random_model(rng, 4))
        exp = spectral_expansion(op, uniform_distribution(op.energy.space))
        sums = exp.modes.sum(axis=0)
        assert abs(sums[0] - 1.0) <= 1e-12
        assert np.abs(sums[1:]).max() <= 1e-10

    def test_rejects_detailed_balance_violation(self):
        """An irreversible operator is rejected: the spectral method is invalid."""
        energy = EnergyTable.from_couplings(np.zeros((2, 2)))
        op = build_discrete_heatbath(energy)
        broken = meq.TransitionOperator(kind=op.kind, matrix=op.matrix.copy(),
                                        gibbs=op.gibbs, energy=op.energy)
        broken.matrix[0, 1] += 0.2
        broken.matrix[1, 1] -= 0.2
        with pytest.raises(DetailedBalanceError):
            spectral_expansion(broken, uniform_distribution(energy.space))


class TestEvolve:
    def test_identity_at_zero_time(self):
        rng = np.random.default_rng(12)
        op = build_continuous_glauber(random_model(rng, 3))
        p0 = delta_distribution(op.energy.space, 5)
        exp = spectral_expansion(op, p0)
        assert np.abs(evolve(exp, 0.0) - p0).max() <= 1e-10

    def test_two_state_analytic(self):
        """Unbiased single spin from (1,0) relaxes as (1 + e^-k)/2."""
        op = build_continuous_glauber(EnergyTable.from_couplings(np.zeros((1, 1))))
        exp = spectral_expansion(op, [1.0, 0.0])
        for k in (0.3, 1.0, 4.0):
            expected = np.array([0.5 + 0.5 * np.exp(-k), 0.5 - 0.5 * np.exp(-k)])
            np.testing.assert_allclose(evolve(exp, k), expected, atol=1e-12)

    def test_discrete_matches_power_oracle(self):
        """Spectral evolution at k=4 equals four kernel applications."""
        rng = np.random.default_rng(13)
        op = build_discrete_heatbath(random_model(rng, 3))
        p0 = uniform_distribution(op.energy.space)
        exp = spectral_expansion(op, p0)
        assert np.abs(evolve(exp, 4) - evolve_direct(op, p0, 4)).max() <= 1e-10

    def test_continuous_matches_expm_oracle(self):
        """Spectral evolution equals scaling-and-squaring within 1e-9, N <= 6."""
        rng = np.random.default_rng(14)
        for n in (2, 4, 6):
            op = build_continuous_glauber(random_model(rng, n))
            p0 = delta_distribution(op.energy.space, 1)
            exp = spectral_expansion(op, p0)
            for k in (0.5, 2.0, 7.0):
                brute = expm(op.matrix * k) @ p0
                assert np.abs(evolve(exp, k) - brute).max() <= 1e-9

    def test_probability_vector_on_grid(self):
        """Evolved distributions stay normalized and nonnegative."""
        rng = np.random.default_rng(15)
        op = build_discrete_heatbath(random_model(rng, 4))
        p0 = delta_distribution(op.energy.space, 3)
        exp = spectral_expansion(op, p0)
        for k in range(0, 30, 3):
            p = evolve(exp, k)
            assert p.min() >= -1e-12
            assert abs(p.sum() - 1.0) <= 1e-10

    def test_negative_time_rejected(self):
        op = build_continuous_glauber(EnergyTable.from_couplings(np.zeros((1, 1))))
        exp = spectral_expansion(op, [1.0, 0.0])
        with pytest.raises(ValueError):
            evolve(exp, -1.0)


class TestLambdaCorrection:
    def test_zero_at_stationary_start(self):
        rng = np.random.default_rng(16)
        op = build_continuous_glauber(random_model(rng, 3))
        exp = spectral_expansion(op, op.gibbs.probabilities)
        assert np.abs(lambda_correction(exp, 1.0)).max() <= 1e-10

    def test_components_sum_to_zero(self):
        rng = np.random.default_rng(17)
        op = build_discrete_heatbath(random_model(rng, 4))
        exp = spectral_expansion(op, uniform_distribution(op.energy.space))
        assert abs(lambda_correction(exp, 2).sum()) <= 1e-10

    def test_definitional(self):
        """Correction equals evolve(k) minus the Gibbs distribution."""
        rng = np.random.default_rng(18)
        op = build_continuous_glauber(random_model(rng, 3))
        p0 = delta_distribution(op.energy.space, 0)
        exp = spectral_expansion(op, p0)
        direct = evolve(exp, 1.0) - exp.stationary
        assert np.abs(lambda_correction(exp, 1.0) - direct).max() <= 1e-12

    def test_decay_bound_at_ten_mixing_times(self):
        """After 10 mixing times every mode has decayed by e^-10."""
        rng = np.random.default_rng(19)
        op = build_continuous_glauber(random_model(rng, 3))
        p0 = delta_distribution(op.energy.space, 2)
        exp = spectral_expansion(op, p0)
        k = 10.0 * mixing_time(exp)
        bound = np.exp(-10.0) * np.sum(
            np.abs(exp.coefficients[1:]) * np.abs(exp.modes[:, 1:]).max(axis=0))
        assert np.abs(lambda_correction(exp, k)).max() <= bound + 1e-15

    def test_monotone_decay_heatbath(self):
        """Nonnegative kernel spectrum makes max|correction| non-increasing."""
        rng = np.random.default_rng(20)
        for _ in range(5):
            op = build_discrete_heatbath(random_model(rng, 4))
            p0 = delta_distribution(op.energy.space, int(rng.integers(0, 16)))
            exp = spectral_expansion(op, p0)
            norms = [np.abs(lambda_correction(exp, k)).max() for k in range(12)]
            assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


class TestMixingTime:
    def test_two_state_continuous(self):
        op = build_continuous_glauber(EnergyTable.from_couplings(np.zeros((1, 1))))
        exp = spectral_expansion(op, [1.0, 0.0])
        assert abs(mixing_time(exp) - 1.0) <= 1e-10

    def test_single_spin_heatbath_mixes_in_one_step(self):
        """Uniform resampling has lambda_1 = 0, hence zero mixing time."""
        op = build_discrete_heatbath(EnergyTable.from_couplings(np.zeros((1, 1))))
        exp = spectral_expansion(op, [1.0, 0.0])
        assert mixing_time(exp) == 0.0

    def test_ring_mixing_time_matches_decay_fit(self):
        """1/kappa matches the fitted tail decay rate of the correction."""
        energy = EnergyTable.from_couplings(ring_couplings(4, 0.44))
        op = build_continuous_glauber(energy)
        p0 = delta_distribution(energy.space, 0)
        exp = spectral_expansion(op, p0)
        kappa = mixing_time(exp)
        ks = kappa * np.linspace(6.0, 12.0, 7)
        norms = np.array([np.abs(lambda_correction(exp, k)).max() for k in ks])
        slope = np.polyfit(ks, np.log(norms), 1)[0]
        assert abs(-slope - 1.0 / kappa) <= 0.02 / kappa


class TestFiniteKMoment:
    def test_normalization_observable(self):
        rng = np.random.default_rng(21)
        op = build_discrete_heatbath(random_model(rng, 3))
        exp = spectral_expansion(op, uniform_distribution(op.energy.space))
        ones = np.ones(op.n_states)
        for k in (0, 1, 5):
            assert abs(finite_k_moment(exp, ones, k) - 1.0) <= 1e-10

    def test_long_time_equals_gibbs_average(self):
        rng = np.random.default_rng(22)
        op = build_continuous_glauber(random_model(rng, 3))
        exp = spectral_expansion(op, delta_distribution(op.energy.space, 1))
        f = pair_field_observables(op.energy.space)
        k = 60.0 * mixing_time(exp)
        gibbs_avg = f.T @ op.gibbs.probabilities
        assert np.abs(finite_k_moment(exp, f, k) - gibbs_avg).max() <= 1e-10

    def test_pair_observable_against_power_oracle(self):
        """<x_i x_j> at k=2 equals the brute-force U^2 p0 average."""
        rng = np.random.default_rng(23)
        op = build_discrete_heatbath(random_model(rng, 3))
        p0 = uniform_distribution(op.energy.space)
        exp = spectral_expansion(op, p0)
        x = op.energy.space.configurations()
        f = x[:, 0] * x[:, 1]
        brute = f @ evolve_direct(op, p0, 2)
        assert abs(finite_k_moment(exp, f, 2) - brute) <= 1e-10


class TestMismatch:
    def test_identical_processes_vanish_exactly(self):
        rng = np.random.default_rng(24)
        op = build_continuous_glauber(random_model(rng, 3))
        p0 = uniform_distribution(op.energy.space)
        exp = spectral_expansion(op, p0)
        f = pair_field_observables(op.energy.space)
        d = mismatch_D(exp, 2.0, p0, 2.0, p0, f)
        assert np.abs(d).max() <= 1e-12

    def test_both_equilibrated_vanish(self):
        rng = np.random.default_rng(25)
        op = build_continuous_glauber(random_model(rng, 3))
        p0 = uniform_distribution(op.energy.space)
        q0 = delta_distribution(op.energy.space, 4)
        exp = spectral_expansion(op, p0)
        f = pair_field_observables(op.energy.space)
        k = 80.0 * mixing_time(exp)
        assert np.abs(mismatch_D(exp, k, p0, k, q0, f)).max() <= 1e-10

    def test_definitional_oracle(self):
        """D(k'=5, k=2, q0=p0) equals the direct moment difference."""
        rng = np.random.default_rng(26)
        op = build_discrete_heatbath(random_model(rng, 3))
        p0 = uniform_distribution(op.energy.space)
        exp = spectral_expansion(op, p0)
        f = pair_field_observables(op.energy.space)
        d = mismatch_D(exp, 2, p0, 5, p0, f)
        direct = finite_k_moment(exp, f, 5) - finite_k_moment(exp, f, 2)
        assert np.abs(d - direct).max() <= 1e-12

    def test_vanishes_for_100_random_triples(self):
        """D(k'=k, q0=p0) = 0 within 1e-12 across models, times, and starts."""
        rng = np.random.default_rng(27)
        for _ in range(100):
            n = int(rng.integers(2, 5))
            op = build_discrete_heatbath(random_model(rng, n))
            p0 = rng.random(op.n_states)
            p0 /= p0.sum()
            exp = spectral_expansion(op, p0)
            f = pair_field_observables(op.energy.space)
            k = int(rng.integers(0, 20))
            assert np.abs(mismatch_D(exp, k, p0, k, p0, f)).max() <= 1e-12


class TestExactGradient:
    def test_zero_at_maximum_likelihood_long_time(self):
        """At k >> mixing time with data = own Gibbs moments, gradient ~ 0."""
        rng = np.random.default_rng(28)
        energy = random_model(rng, 3)
        data = moments_of_distribution(energy.space,
                                       gibbs_distribution(energy).probabilities)
        p0 = uniform_distribution(energy.space)
        op = build_continuous_glauber(energy)
        k = 80.0 * mixing_time(spectral_expansion(op, p0))
        gj, gh = exact_finite_k_gradient(energy, data, k, p0)
        assert max(np.abs(gj).max(), np.abs(gh).max()) <= 1e-10

    def test_self_consistency_at_finite_k(self):
        """Data equal to the model's own finite-k moments zero the gradient."""
        rng = np.random.default_rng(29)
        energy = random_model(rng, 4)
        p0 = uniform_distribution(energy.space)
        vec = finite_k_moments(energy, 1.5, p0)
        n_pairs = 4 * 3 // 2
        data = MomentEstimate.exact(means=vec[n_pairs:], correlations=vec[:n_pairs])
        gj, gh = exact_finite_k_gradient(energy, data, 1.5, p0)
        assert max(np.abs(gj).max(), np.abs(gh).max()) <= 1e-13

    def test_matches_finite_difference_of_exact_objective(self):
        """At k beyond the mixing time the gradient matches central finite
        differences of the tractable objective theta . data - log Z."""
        rng = np.random.default_rng(30)
        energy = random_model(rng, 4, scale=0.3)
        data = moments_of_distribution(
            energy.space, gibbs_distribution(
                random_model(np.random.default_rng(31), 4, scale=0.3)).probabilities)
        p0 = uniform_distribution(energy.space)
        k = 60.0 * mixing_time(spectral_expansion(build_continuous_glauber(energy), p0))
        gj, gh = exact_finite_k_gradient(energy, data, k, p0)

        def objective(j, h):
            en = EnergyTable.from_couplings(j, h)
            g = gibbs_distribution(en)
            vec = data.as_vector()
            theta = np.concatenate([en.couplings[np.triu_indices(4, 1)], en.fields])
            return float(theta @ vec + g.log_partition * -1.0)

        eps = 1e-6
        iu = np.triu_indices(4, 1)
        for idx in range(len(iu[0])):
            i, jdx = iu[0][idx], iu[1][idx]
            jp, jm = energy.couplings.copy(), energy.couplings.copy()
            jp[i, jdx] = jp[jdx, i] = jp[i, jdx] + eps
            jm[i, jdx] = jm[jdx, i] = jm[i, jdx] - eps
            fd = (objective(jp, energy.fields) - objective(jm, energy.fields)) / (2 * eps)
            assert abs(gj[i, jdx] - fd) <= 1e-6
        for i in range(4):
            hp, hm = energy.fields.copy(), energy.fields.copy()
            hp[i] += eps
            hm[i] -= eps
            fd = (objective(energy.couplings, hp)
                  - objective(energy.couplings, hm)) / (2 * eps)
            assert abs(gh[i] - fd) <= 1e-6


class TestTrainExact:
    def patch_data(self, n=3, beta=0.5):
        from ebmlab.experiments import grid_patch_couplings
        energy = EnergyTable.from_couplings(grid_patch_couplings(n, beta))
        return moments_of_distribution(energy.space,
                                       gibbs_distribution(energy).probabilities)

    def test_fixed_point_at_start(self):
        """Data equal to the zero model's finite-k moments: no net motion."""
        zero = EnergyTable.from_couplings(np.zeros((3, 3)))
        p0 = uniform_distribution(zero.space)
        vec = finite_k_moments(zero, 2.0, p0)
        data = MomentEstimate.exact(means=vec[3:], correlations=vec[:3])
        report = train_exact(zero, data, 2.0, p0, gamma=0.3, tol=1e-12)
        assert report.converged
        assert report.iterations == 0
        np.testing.assert_array_equal(report.energy.couplings, zero.couplings)

    def test_converges_and_matches_moments(self):
        """At convergence the finite-k moments equal the data within tol."""
        data = self.patch_data()
        zero = EnergyTable.from_couplings(np.zeros((3, 3)))
        p0 = uniform_distribution(zero.space)
        report = train_exact(zero, data, 2.0, p0, gamma=0.4, tol=1e-9)
        assert report.converged
        vec = finite_k_moments(report.energy, 2.0, p0)
        assert np.abs(vec - data.as_vector()).max() <= 1e-9

    def test_residual_is_error_at_training_time(self):
        """Stopping at residual eps leaves exactly eps moment error at k'=k."""
        data = self.patch_data()
        zero = EnergyTable.from_couplings(np.zeros((3, 3)))
        p0 = uniform_distribution(zero.space)
        report = train_exact(zero, data, 2.0, p0, gamma=0.4, tol=1e-3)
        vec = finite_k_moments(report.energy, 2.0, p0)
        err = np.abs(vec - data.as_vector()).max()
        assert err == report.gradient_residual

    def test_divergence_abort(self):
        data = self.patch_data()
        zero = EnergyTable.from_couplings(np.zeros((3, 3)))
        p0 = uniform_distribution(zero.space)
        report = train_exact(zero, data, 2.0, p0, gamma=4e3, tol=1e-12, max_iters=500)
        assert report.diverged

    def test_kdagger_scan_moves_toward_k(self):
        """Zero crossings of the moment error approach k as eps shrinks."""
        data = self.patch_data()
        zero = EnergyTable.from_couplings(np.zeros((3, 3)))
        p0 = uniform_distribution(zero.space)
        k_grid = np.linspace(0.5, 5.0, 181)
        devs = []
        for eps in (1e-2, 1e-4):
            report = train_exact(zero, data, 2.0, p0, gamma=0.4, tol=eps)
            errors = moment_error_curve(report.energy, data, p0, k_grid)
            crossings = error_zero_crossings(k_grid, errors)
            assert crossings
            devs.append(max(abs(loc - 2.0) for _, loc in crossings))
        assert devs[1] < devs[0]


class TestHessian:
    def test_single_spin_analytic(self):
        """Field-only model: Hessian is -(1 - tanh^2 h)."""
        report = hessian_check(EnergyTable.from_couplings(np.zeros((1, 1)), [0.7]))
        expected = 1.0 - np.tanh(0.7) ** 2
        assert abs(report.covariance[0, 0] - expected) <= 1e-12
        assert abs(report.hessian[0, 0] + expected) <= 1e-12

    def test_pinned_spins_degenerate(self):
        """Strong fields pin the spins; the covariance collapses to zero."""
        report = hessian_check(EnergyTable.from_couplings(np.zeros((2, 2)), [12.0, 12.0]))
        assert np.abs(report.covariance).max() <= 1e-8
        assert report.positive_semidefinite

    def test_random_model_psd(self):
        """Covariance of the sufficient statistics is PSD within -1e-10."""
        rng = np.random.default_rng(33)
        report = hessian_check(random_model(rng, 4))
        assert report.min_eigenvalue >= -1e-10
        assert report.positive_semidefinite


class TestCsvDumps(object):
    def test_spectrum_and_operator_dumps(self, tmp_path):
        rng = np.random.default_rng(34)
        op = build_discrete_heatbath(random_model(rng, 2))
        exp = spectral_expansion(op, uniform_distribution(op.energy.space))
        spec_path = tmp_path / "spectrum.csv"
        op_path = tmp_path / "operator.csv"
        meq.dump_spectrum_csv(exp, spec_path)
        meq.dump_operator_csv(op, op_path)
        spec_lines = spec_path.read_text().splitlines()
        assert spec_lines[0] == "index,eigenvalue,u_0,u_1,u_2,u_3"
        assert len(spec_lines) == 1 + 4
        op_lines = op_path.read_text().splitlines()
        assert op_lines[0] == "row,col,value"
        assert len(op_lines) == 1 + 16
        assert float(spec_lines[1].split(",")[1]) == exp.eigenvalues[0]
