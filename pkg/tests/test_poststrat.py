"""Cell predictions, poststratified estimates and predictive distributions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit, logit

from seromrp.inference import McmcConfig, ParameterVector, PosteriorModel, sample_cells, sample_posterior
from seromrp.inference.posterior import PosteriorDraws
from seromrp.model import (
    POPULATION_COUNTS,
    SAMPLE_COUNTS,
    CalibrationData,
    CellTable,
    Covariate,
    CovariateSchema,
    EstimatedSpecificity,
    KnownErrorRates,
    ModelSpec,
    SchemaError,
    Term,
    TermType,
    build_model_ladder,
    cell_table,
)
from seromrp.poststrat import (
    cell_prevalence,
    credible_interval,
    estimand_draws,
    population_estimate,
    prior_predictive,
    sample_ppc_mean,
)

V, S, B = TermType.VARYING_INTERCEPT, TermType.OVERALL_SLOPE, TermType.BOTH
SCHEMA_A = CovariateSchema((Covariate("a", 2),))
SPEC_A = ModelSpec(1, (Term("a", V),))


def _cells(levels, counts, kind=POPULATION_COUNTS, covs=("a",), slopes=(), slope_values=None, positives=None):
    levels = np.asarray(levels, dtype=np.int64).reshape(len(counts), len(covs))
    sv = np.empty((len(counts), 0)) if slope_values is None else np.asarray(slope_values, float)
    pos = None if positives is None else np.asarray(positives)
    return CellTable(tuple(covs), levels, tuple(slopes), sv, np.asarray(counts), kind, pos)


def _intercept_cells(n, kind=POPULATION_COUNTS, positives=None):
    return _cells(np.empty((1, 0)), [n], kind, covs=(), positives=positives)


def _draws(names, rows):
    values = np.asarray(rows, float)[None]
    C, S, P = values.shape
    return PosteriorDraws(list(names), values, np.zeros((C, S)), np.zeros((C, S, 6)), np.ones(C))


class TestCellPrevalence:
    def test_zero_intercept(self):
        p = cell_prevalence(ParameterVector(0.0), _intercept_cells(10), ModelSpec(0))
        np.testing.assert_allclose(p, 0.5)

    def test_logit_intercept(self):
        pv = ParameterVector(logit(0.01), alpha={"a": np.zeros(2)}, sigma={"a": 1.0})
        p = cell_prevalence(pv, _cells([[1], [2]], [3, 4]), SPEC_A, SCHEMA_A)
        np.testing.assert_allclose(p, 0.01, rtol=1e-12)

    def test_varying_offsets(self):
        pv = ParameterVector(0.0, alpha={"a": np.array([1.0, -1.0])}, sigma={"a": 1.0})
        p = cell_prevalence(pv, _cells([[1], [2]], [3, 4]), SPEC_A, SCHEMA_A)
        np.testing.assert_allclose(p, [0.731, 0.269], atol=5e-4)

    def test_slope_uses_cell_mean(self):
        spec = ModelSpec(1, (Term("a", B),))
        cells = _cells([[1], [2]], [2, 2], slopes=("a",), slope_values=[[-0.5], [0.5]])
        pv = ParameterVector(0.0, beta={"a": 2.0}, alpha={"a": np.zeros(2)}, sigma={"a": 1.0})
        np.testing.assert_allclose(cell_prevalence(pv, cells, spec, SCHEMA_A), expit([-1.0, 1.0]))

    def test_unseen_level_is_an_error(self):
        pv = ParameterVector(0.0, alpha={"a": np.zeros(2)}, sigma={"a": 1.0})
        with pytest.raises(SchemaError):
            cell_prevalence(pv, _cells([[1], [3]], [1, 1]), SPEC_A)


class TestWeightedMeans:
    def test_equal_cells(self):
        assert population_estimate([0.3, 0.3, 0.3], _cells([[1], [2], [3]], [5, 1, 9])) == pytest.approx(0.3)

    def test_population_arithmetic(self):
        assert population_estimate([0.1, 0.2], _cells([[1], [2]], [100, 300])) == pytest.approx(0.175)

    def test_sample_arithmetic(self):
        assert sample_ppc_mean([0.1, 0.2], _cells([[1], [2]], [10, 30], SAMPLE_COUNTS)) == pytest.approx(0.175)

    def test_proportional_sample_matches_population(self):
        probs = [0.05, 0.2, 0.4]
        pop = _cells([[1], [2], [3]], [100, 300, 600])
        samp = _cells([[1], [2], [3]], [10, 30, 60], SAMPLE_COUNTS)
        assert sample_ppc_mean(probs, samp) == pytest.approx(population_estimate(probs, pop), abs=1e-15)

    def test_zero_total(self):
        with pytest.raises(ValueError):
            population_estimate([0.1], _cells([[1]], [0]))

    def test_unit_level_oracle(self, schema20):
        from seromrp.synthpop import PopulationConfig, generate_population

        pop = generate_population(PopulationConfig(N=1000, levels=20, seed=8))
        spec = build_model_ladder(schema20)[5]
        g = np.random.default_rng(0)
        pv = ParameterVector(-2.0, alpha={c: g.normal(size=20) for c in spec.varying},
                             sigma={c: 1.0 for c in spec.varying})
        cells = cell_table(pop, spec)
        est = population_estimate(cell_prevalence(pv, cells, spec, schema20), cells)
        eta = pv.beta0 + sum(pv.alpha[c][pop.levels[c] - 1] for c in spec.varying)
        assert est == pytest.approx(expit(eta).mean(), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(2, 1000), st.floats(0.0, 1.0)), min_size=1, max_size=30),
           st.randoms(use_true_random=False), st.integers(0, 29))
    def test_order_and_split_invariance(self, cells, rnd, split_at):
        counts = np.array([c for c, _ in cells])
        probs = np.array([p for _, p in cells])
        ones = lambda k: np.ones((k, 1))
        base = population_estimate(probs, _cells(ones(len(cells)), counts))
        assert probs.min() - 1e-12 <= base <= probs.max() + 1e-12

        perm = rnd.sample(range(len(cells)), len(cells))
        shuffled = population_estimate(probs[perm], _cells(ones(len(cells)), counts[perm]))
        assert shuffled == pytest.approx(base, rel=1e-12, abs=1e-15)

        j = split_at % len(cells)
        half = counts[j] // 2
        c2 = np.concatenate([counts, [counts[j] - half]])
        c2[j] = half
        split = population_estimate(np.concatenate([probs, [probs[j]]]), _cells(ones(len(c2)), c2))
        assert split == pytest.approx(base, rel=1e-12, abs=1e-15)


class TestEstimandDraws:
    pop = _cells([[1], [2]], [100, 300])
    samp = _cells([[1], [2]], [30, 10], SAMPLE_COUNTS, positives=[3, 2])
    names = ["beta0", "alpha[a,1]", "alpha[a,2]", "sigma[a]", "specificity"]

    def test_two_cell_hand_computation(self):
        spec = SPEC_A.with_measurement(EstimatedSpecificity(CalibrationData(tn=796, fp=4), sensitivity=0.9))
        d = _draws(self.names, [[0.0, 1.0, -1.0, 1.0, 0.99], [-1.0, 0.5, 0.0, 0.7, 0.95]])
        e = estimand_draws(d, self.pop, self.samp, spec, SCHEMA_A)
        p1 = expit(np.array([1.0, -1.0]))
        p2 = expit(np.array([-0.5, -1.0]))
        prev = np.array([(100 * p1[0] + 300 * p1[1]) / 400, (100 * p2[0] + 300 * p2[1]) / 400])
        ppc = np.array([(30 * p1[0] + 10 * p1[1]) / 40, (30 * p2[0] + 10 * p2[1]) / 40])
        np.testing.assert_allclose(e.prevalence, prev, rtol=1e-12)
        np.testing.assert_allclose(e.sample_mean, ppc, rtol=1e-12)
        gam = np.array([0.99, 0.95])
        np.testing.assert_allclose(e.test_positive, (1 - gam) * (1 - prev) + 0.9 * prev, rtol=1e-12)

    def test_single_draw(self):
        d = _draws(self.names[:4], [[0.3, 0.2, -0.4, 1.0]])
        e = estimand_draws(d, self.pop, None, SPEC_A, SCHEMA_A)
        pv = ParameterVector(0.3, alpha={"a": np.array([0.2, -0.4])}, sigma={"a": 1.0})
        assert len(e) == 1
        assert e.prevalence[0] == pytest.approx(population_estimate(cell_prevalence(pv, self.pop, SPEC_A, SCHEMA_A),
                                                                    self.pop), rel=1e-12)

    def test_perfect_test_identity(self):
        spec = SPEC_A.with_measurement(KnownErrorRates(1.0, 1.0))
        d = _draws(self.names[:4], [[0.3, 0.2, -0.4, 1.0], [-2.0, 0.0, 1.0, 0.5]])
        e = estimand_draws(d, self.pop, self.samp, spec, SCHEMA_A)
        np.testing.assert_array_equal(e.test_positive, e.prevalence)

    def test_mismatched_cells(self):
        d = _draws(["beta0"], [[0.0]])
        with pytest.raises(SchemaError):
            estimand_draws(d, self.pop, None, ModelSpec(0), SCHEMA_A)

    def test_sample_counts_rejected_as_population(self):
        d = _draws(self.names[:4], [[0.3, 0.2, -0.4, 1.0]])
        with pytest.raises(ValueError):
            estimand_draws(d, self.samp, None, SPEC_A, SCHEMA_A)

    def test_ppc_mean_intercept_only(self):
        cells = _intercept_cells(4000, SAMPLE_COUNTS, positives=[40])
        m = PosteriorModel(ModelSpec(0), cells, SCHEMA_A)
        d = sample_posterior(m, McmcConfig(seed=4))
        e = estimand_draws(d, _intercept_cells(500_000), cells, ModelSpec(0), SCHEMA_A)
        assert abs(e.sample_mean.mean() - 0.01) < 0.002

    def test_perfect_known_test_matches_no_measurement(self, small_population, schema20):
        from seromrp.synthpop import draw_sample

        s = draw_sample(small_population, 1000, 5)
        s = s.with_tests(s.y)
        plain = build_model_ladder(schema20)[1]
        known = plain.with_measurement(KnownErrorRates(1.0, 1.0))
        means = {}
        for spec in (plain, known):
            cells = sample_cells(s, spec)
            pop = cell_table(small_population, spec)
            vals = []
            for seed in range(4):
                d = sample_posterior(PosteriorModel(spec, cells, schema20),
                                     McmcConfig(chains=2, warmup=300, draws=300, seed=seed), check=False)
                vals.append(estimand_draws(d, pop, cells, spec, schema20).sample_mean.mean())
            means[spec.measurement is None] = np.array(vals)
        diff = means[True].mean() - means[False].mean()
        se = np.sqrt(means[True].var(ddof=1) / 4 + means[False].var(ddof=1) / 4)
        assert abs(diff) <= 3 * max(se, 1e-5)


class TestPriorPredictive:
    def test_perfect_test_equals_prevalence(self, small_population, schema20):
        spec = build_model_ladder(schema20, measurement=KnownErrorRates(1.0, 1.0))[2]
        e = prior_predictive(spec, cell_table(small_population, spec), 2000, seed=3, schema=schema20)
        np.testing.assert_array_equal(e.test_positive, e.prevalence)

    def test_intercept_only_median_half(self):
        e = prior_predictive(ModelSpec(0), _intercept_cells(100), 10_000, seed=1)
        assert abs(np.median(e.prevalence) - 0.5) < 0.02

    def test_intercept_only_symmetric(self):
        e = prior_predictive(ModelSpec(0), _intercept_cells(100), 10_000, seed=2)
        assert stats.ks_2samp(e.prevalence, 1.0 - e.prevalence).pvalue > 0.01

    def test_more_groups_less_extreme_mass(self, small_population, schema20):
        ladder = build_model_ladder(schema20)
        mass = []
        for m in (0, 5):
            e = prior_predictive(ladder[m], cell_table(small_population, ladder[m]), 10_000, seed=6, schema=schema20)
            mass.append(np.mean(e.prevalence < 0.001))
        assert mass[1] < mass[0]

    def test_estimated_specificity_draws(self):
        spec = ModelSpec(0, (), EstimatedSpecificity(CalibrationData(tn=796, fp=4)))
        e = prior_predictive(spec, _intercept_cells(100), 20_000, seed=4)
        assert e.specificity.mean() == pytest.approx(796 / 800, abs=5e-4)
        assert np.all((e.test_positive >= 0) & (e.test_positive <= 1))

    def test_deterministic(self):
        a = prior_predictive(ModelSpec(0), _intercept_cells(100), 100, seed=9)
        b = prior_predictive(ModelSpec(0), _intercept_cells(100), 100, seed=9)
        np.testing.assert_array_equal(a.prevalence, b.prevalence)


def test_credible_interval():
    x = np.arange(1001) / 1000
    assert credible_interval(x, 0.9) == pytest.approx((0.05, 0.95))
    assert credible_interval(x, 0.8) == pytest.approx((0.1, 0.9))
