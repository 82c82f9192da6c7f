import numpy as np
import pytest

from fcmlab.designs import (
    GeneratorSpec,
    NoiseSpec,
    center,
    gen_covariate,
    gen_design,
    mode_family_values,
)
from fcmlab.errors import ValidationError
from fcmlab.grids import GridFunction, inner_product
from fcmlab.identifiability import self_similarity_residual
from fcmlab.model import CoefficientSet, lag_convolve, sse


def sine_kernel(step, alpha):
    u = step * np.arange(round(alpha / step) + 1)
    return GridFunction(0.0, step, np.sin(2.0 * np.pi * u))


class TestGenCovariate:
    def test_rich_sinusoid_partial_sum(self):
        x = gen_covariate(
            GeneratorSpec("sinusoid_rich", 1.0, 0.25, params={"K": 4})
        )
        # at t = 1/4 only the k=1 and k=3 terms survive: 1/2 - 1/8
        assert x.values[1] == pytest.approx(0.375, abs=1e-12)

    def test_orthogonal_counterexample_kills_odd_sines(self):
        step = 1.0 / 256.0
        x = gen_covariate(
            GeneratorSpec("orthogonal_counterexample", 3.0, step, params={"K": 4})
        )
        t = x.times()
        for j in (1, 2, 3):
            probe = x.with_values(np.sin(2.0 * np.pi * (2 * j - 1) * t))
            assert abs(inner_product(x, probe)) < 1e-10

    def test_orthogonal_counterexample_needs_integer_domain(self):
        with pytest.raises(ValidationError):
            gen_covariate(
                GeneratorSpec("orthogonal_counterexample", 2.5, 1.0 / 8.0, params={"K": 3})
            )

    def test_self_similar_reduces_to_cosine(self):
        spec = GeneratorSpec(
            "self_similar", 1.0, 0.125,
            params={"terms": [{"c": 1.0, "m": 0, "a": 0.0, "b": 2.0 * np.pi, "d": np.pi / 2.0}]},
        )
        x = gen_covariate(spec)
        assert x.values[0] == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(x.values, np.cos(2.0 * np.pi * x.times()), atol=1e-12)

    def test_filtered_noise_is_seed_deterministic(self):
        spec = GeneratorSpec(
            "filtered_noise", 1.0, 0.125, seed=9,
            params={"n_modes": 16, "max_frequency": 3.0, "bandwidth": 0.05},
        )
        assert np.array_equal(gen_covariate(spec).values, gen_covariate(spec).values)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            gen_covariate(GeneratorSpec("brownian", 1.0, 0.125))


class TestModeFamilyValues:
    def test_single_term_closed_form(self):
        t = np.linspace(0.0, 2.0, 33)
        got = mode_family_values(
            [{"c": 2.0, "m": 1, "a": -0.5, "b": 3.0, "d": 0.25}], t
        )
        want = 2.0 * t * np.exp(-0.5 * t) * np.sin(3.0 * t + 0.25)
        assert np.allclose(got, want, atol=1e-14)

    def test_terms_superpose(self):
        t = np.linspace(0.0, 1.0, 17)
        t1 = [{"c": 1.0, "m": 0, "a": 0.3, "b": 0.0, "d": np.pi / 2.0}]
        t2 = [{"c": -0.5, "m": 2, "a": 0.0, "b": 2.0, "d": 0.0}]
        assert np.allclose(
            mode_family_values(t1 + t2, t),
            mode_family_values(t1, t) + mode_family_values(t2, t),
            atol=1e-14,
        )


class TestGenDesign:
    def test_noiseless_truth_has_zero_sse(self, noiseless_design):
        design, truth = noiseless_design
        assert sse(design, truth) <= 1e-18

    def test_same_seed_is_bit_identical(self):
        step = 1.0 / 16.0
        spec = GeneratorSpec(
            "filtered_noise", 1.5, step, seed=11,
            params={"n_modes": 32, "max_frequency": 5.0, "bandwidth": 0.02},
        )
        beta = CoefficientSet((0.7, -0.3), (sine_kernel(step, 0.5),))
        noise = NoiseSpec("ar1", sd=0.2, ar_coefficient=0.5)
        d1, t1 = gen_design([spec], beta, noise, n=3, seed=42)
        d2, t2 = gen_design([spec], beta, noise, n=3, seed=42)
        for o1, o2 in zip(d1.observations, d2.observations):
            assert np.array_equal(o1.y.values, o2.y.values)
            assert np.array_equal(o1.x[0].values, o2.x[0].values)
            assert o1.z == o2.z

    def test_observations_differ_across_seeds(self):
        step = 1.0 / 16.0
        spec = GeneratorSpec(
            "filtered_noise", 1.5, step, seed=11,
            params={"n_modes": 32, "max_frequency": 5.0, "bandwidth": 0.02},
        )
        beta = CoefficientSet((0.7,), (sine_kernel(step, 0.5),))
        d1, _ = gen_design([spec], beta, NoiseSpec("white", sd=0.1), n=1, seed=1)
        d2, _ = gen_design([spec], beta, NoiseSpec("white", sd=0.1), n=1, seed=2)
        assert not np.array_equal(d1.observations[0].y.values, d2.observations[0].y.values)

    def test_ar1_noise_is_mean_zero(self):
        # 200 seeded replicates at one grid point; the replicate mean
        # stays within three standard errors of zero.
        step = 1.0 / 32.0
        spec = GeneratorSpec(
            "filtered_noise", 1.0, step, seed=41,
            params={"n_modes": 32, "max_frequency": 6.0, "bandwidth": 0.05},
        )
        beta = CoefficientSet((0.0,), (GridFunction(0.0, step, np.zeros(9)),))
        sd = 0.3
        samples = []
        for rep in range(200):
            d, _ = gen_design(
                [spec], beta, NoiseSpec("ar1", sd=sd, ar_coefficient=0.6),
                n=1, seed=1000 + rep,
            )
            samples.append(d.observations[0].y.values[16])
        assert abs(np.mean(samples)) <= 3.0 * sd / np.sqrt(200.0)

    def test_ar_coefficient_must_be_stationary(self):
        with pytest.raises(ValidationError):
            NoiseSpec("ar1", sd=0.1, ar_coefficient=1.0)


class TestCounterexampleMechanism:
    def test_odd_sine_convolutions_vanish(self):
        step = 1.0 / 128.0
        x = gen_covariate(
            GeneratorSpec("orthogonal_counterexample", 3.0, step, params={"K": 3})
        )
        u = step * np.arange(129)
        for j in (1, 2, 3):
            beta = GridFunction(0.0, step, np.sin(2.0 * np.pi * (2 * j - 1) * u))
            out = lag_convolve(x, beta, 1.0)
            assert np.max(np.abs(out.values)) < 1e-8


class TestSelfSimilarOrders:
    @pytest.mark.parametrize(
        "a,b,m,order",
        [(-0.5, 2.0, 1, 4), (0.3, 0.0, 2, 3), (0.0, 5.0, 0, 2)],
    )
    def test_family_members_hit_analytic_order(self, a, b, m, order):
        step = 1.0 / 256.0
        spec = GeneratorSpec(
            "self_similar", 2.0, step,
            params={"terms": [{"c": 1.0, "m": m, "a": a, "b": b, "d": 0.7}]},
        )
        x = gen_covariate(spec)
        assert self_similarity_residual(x, order, alpha=1.0) < 1e-8


class TestFilteredNoiseFloor:
    def test_no_parsimonious_order_explains_noise(self):
        # Spectrum out to the grid Nyquist frequency, so no order up to
        # half the window comes close to explaining the curve.
        spec = GeneratorSpec(
            "filtered_noise", 2.0, 1.0 / 64.0, seed=7,
            params={"n_modes": 128, "max_frequency": 32.0, "bandwidth": 1.0 / 64.0},
        )
        x = gen_covariate(spec)
        for K in range(1, 17):
            assert self_similarity_residual(x, K, alpha=0.5) > 0.05


class TestCenter:
    def test_constant_response_becomes_zero(self):
        step = 1.0 / 16.0
        spec = GeneratorSpec(
            "filtered_noise", 1.0, step, seed=5,
            params={"n_modes": 16, "max_frequency": 4.0, "bandwidth": 0.05},
        )
        beta = CoefficientSet((0.0,), (GridFunction(0.0, step, np.zeros(9)),))
        design, _ = gen_design([spec], beta, NoiseSpec("white", sd=0.0), n=2, seed=3)
        shifted = type(design)(
            tuple(
                type(o)(o.y.with_values(np.full(len(o.y), 4.2)), o.x, o.z)
                for o in design.observations
            ),
            design.lags,
            design.step,
        )
        centered = center(shifted)
        for obs in centered.observations:
            assert np.allclose(obs.y.values, 0.0, atol=1e-12)

    def test_covariate_mean_curve_removed(self, noisy_design):
        design, _ = noisy_design
        centered = center(design)
        stack = np.stack([o.x[0].values for o in centered.observations])
        assert np.max(np.abs(stack.mean(axis=0))) < 1e-12

    def test_idempotent(self, noisy_design):
        design, _ = noisy_design
        once = center(design)
        twice = center(once)
        for o1, o2 in zip(once.observations, twice.observations):
            assert np.allclose(o1.y.values, o2.y.values, atol=1e-12)
            assert np.allclose(o1.x[0].values, o2.x[0].values, atol=1e-12)

    def test_drop_scalars(self, noisy_design):
        design, _ = noisy_design
        dropped = center(design, drop_scalars=True)
        assert dropped.d == 0
        assert all(o.z == () for o in dropped.observations)
