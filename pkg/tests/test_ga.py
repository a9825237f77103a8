import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _oracles as oracle
from gaeit.errors import ConfigurationError, DomainError
from gaeit.forward import forward_solve
from gaeit.ga import GAConfig, Individual, crossover, init_population, mutate, run_ga, select
from gaeit.objective import ObjectiveSpec, ObjectiveValue, evaluate


@pytest.fixture(scope="module")
def toy():
    mesh, protocol, y = oracle.toy_problem()
    f_star, _ = oracle.grid_minimum(mesh, protocol, y.values, oracle.TOY_ALPHA, oracle.TOY_LEVELS)
    return mesh, protocol, y, f_star


@pytest.fixture(scope="module")
def toy_spec():
    return ObjectiveSpec(alpha=oracle.TOY_ALPHA, regularizer="tikhonov-identity")


def evaluated(fitnesses):
    return [Individual(np.array([float(k)]), f) for k, f in enumerate(fitnesses)]


class TestGAConfig:
    @pytest.mark.parametrize("kw", [
        {"bounds": (0.0, 1.0)}, {"bounds": (2.0, 1.0)}, {"population_size": 0},
        {"elite_count": 0}, {"elite_count": 200}, {"crossover_fraction": 1.5},
        {"mutation_rate": 2.0}, {"init": "sobol"}, {"workers": 0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            GAConfig(**kw)


class TestInitPopulation:
    def test_seeded_twice_identical(self):
        cfg = GAConfig(population_size=20, rng_seed=42)
        a = init_population(cfg, 30)
        b = init_population(cfg, 30)
        assert all(np.array_equal(x.genome, y.genome) for x, y in zip(a, b))

    def test_degenerate_bounds(self):
        pop = init_population(GAConfig(population_size=10, bounds=(1.0, 1.0)), 12)
        assert all(np.all(ind.genome == 1.0) for ind in pop)

    def test_within_bounds(self):
        pop = init_population(GAConfig(population_size=50, bounds=(0.3, 4.0)), 40)
        g = np.array([ind.genome for ind in pop])
        assert g.min() >= 0.3 and g.max() <= 4.0

    def test_seed_individual_first_and_clamped(self):
        seed = np.array([0.1, 1.0, 9.0])
        pop = init_population(GAConfig(population_size=5), 3, seed)
        np.testing.assert_array_equal(pop[0].genome, [0.2, 1.0, 5.0])

    def test_seed_wrong_length(self):
        with pytest.raises(DomainError):
            init_population(GAConfig(population_size=5), 3, np.ones(4))

    def test_around_warm_start(self):
        cfg = GAConfig(population_size=100, init="around-warm-start", init_spread=0.05)
        pop = init_population(cfg, 8, np.full(8, 2.0))
        g = np.array([ind.genome for ind in pop[1:]])
        assert np.all(np.abs(np.log(g / 2.0)) < 0.05 * 6)

    def test_generation_zero_no_worse_than_seed(self, mesh12, protocol16, reference_scene):
        _, y = reference_scene
        spec = ObjectiveSpec()
        seed = np.full(576, 1.05)
        result = run_ga(mesh12, protocol16, y, spec, GAConfig(population_size=8, max_generations=0),
                        warm_start=seed)
        assert result.objective.total <= evaluate(seed, y, spec, mesh12, protocol16).total


class TestMutate:
    def test_zero_sigma_is_identity(self, rng):
        ind = Individual(rng.uniform(0.5, 2, 50))
        out = mutate(ind, GAConfig(mutation_sigma=0.0, mutation_rate=1.0), rng)
        np.testing.assert_array_equal(out.genome, ind.genome)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.0, 2.0))
    def test_stays_in_bounds(self, seed, sigma):
        rng = np.random.default_rng(seed)
        cfg = GAConfig(mutation_sigma=sigma, mutation_rate=0.5)
        out = mutate(Individual(rng.uniform(0.2, 5.0, 30)), cfg, rng)
        assert out.genome.min() >= 0.2 and out.genome.max() <= 5.0

    def test_rate_one(self):
        cfg = GAConfig(mutation_rate=1.0, mutation_sigma=0.1, bounds=(0.2, 100.0))
        parent = Individual(np.full(10_000, 50.0))
        a = mutate(parent, cfg, np.random.default_rng(3)).genome
        b = mutate(parent, cfg, np.random.default_rng(3)).genome
        np.testing.assert_array_equal(a, b)
        assert np.mean(a != parent.genome) == pytest.approx(1.0, abs=1e-3)

    def test_default_rate_is_one_over_n(self):
        cfg = GAConfig(bounds=(0.2, 100.0))
        rng = np.random.default_rng(11)
        parent = Individual(np.full(100, 50.0))
        changed = [np.sum(mutate(parent, cfg, rng).genome != 50.0) for _ in range(4000)]
        assert np.mean(changed) == pytest.approx(1.0, rel=0.06)


class TestCrossover:
    def test_identical_parents(self, rng):
        a = Individual(rng.uniform(0.5, 2, 20))
        c1, c2 = crossover(a, a.copy(), GAConfig(), rng)
        np.testing.assert_allclose(c1.genome, a.genome, rtol=1e-15)
        np.testing.assert_allclose(c2.genome, a.genome, rtol=1e-15)

    def test_within_bounds(self, rng):
        cfg = GAConfig(bounds=(0.5, 2.0))
        for _ in range(200):
            c1, c2 = crossover(Individual(rng.uniform(0.5, 2, 20)), Individual(rng.uniform(0.5, 2, 20)), cfg, rng)
            for c in (c1, c2):
                assert c.genome.min() >= 0.5 and c.genome.max() <= 2.0

    def test_unit_blend_interval(self, rng):
        cfg = GAConfig(blend_range=(0.0, 1.0))
        for _ in range(200):
            a, b = rng.uniform(0.2, 5, 15), rng.uniform(0.2, 5, 15)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            for c in crossover(Individual(a), Individual(b), cfg, rng):
                assert np.all(c.genome >= lo - 1e-12) and np.all(c.genome <= hi + 1e-12)

    def test_length_mismatch(self, rng):
        with pytest.raises(DomainError):
            crossover(Individual(np.ones(3)), Individual(np.ones(4)), GAConfig(), rng)


class TestSelect:
    def test_single_individual(self, rng):
        pop = evaluated([3.0])
        a, b = select(pop, rng)
        assert a is pop[0] and b is pop[0]

    def test_tournament_probability(self):
        rng = np.random.default_rng(5)
        pop = evaluated([1.0, 100.0])
        wins = sum(select(pop, rng)[0] is pop[0] for _ in range(10_000))
        # P(fitter wins) = 1 - (1/2)**2; 3 sigma at n=1e4 is ~0.013
        assert wins / 10_000 == pytest.approx(0.75, abs=0.015)

    def test_tie_goes_to_lower_index(self):
        rng = np.random.default_rng(0)
        pop = evaluated([2.0, 2.0])
        picks = [select(pop, rng)[0] for _ in range(400)]
        # index 1 only wins when drawn twice
        share = np.mean([p is pop[1] for p in picks])
        assert share == pytest.approx(0.25, abs=0.07)

    def test_unevaluated(self, rng):
        with pytest.raises(RuntimeError):
            select([Individual(np.ones(2))], rng)

    def test_empty(self, rng):
        with pytest.raises(DomainError):
            select([], rng)


class TestRunGA:
    def test_warm_start_at_optimum(self, mesh12, protocol16):
        rho = np.full(576, 1.3)
        y = forward_solve(mesh12, rho, protocol16)
        result = run_ga(mesh12, protocol16, y, ObjectiveSpec(alpha=0.0),
                        GAConfig(population_size=10, objective_tol=1e-6), warm_start=rho)
        assert result.termination_reason == "objective"
        assert result.generations == 0
        assert len(result.trace) == 1

    def test_toy_global_minimum(self, toy, toy_spec):
        mesh, protocol, y, f_star = toy
        cfg = GAConfig(population_size=60, max_generations=200, bounds=(0.5, 2.0), objective_tol=1e-12)
        result = run_ga(mesh, protocol, y, toy_spec, cfg)
        assert result.objective.total <= f_star + 1e-3
        assert result.jacobian_count == 0

    def test_trace_invariants(self, toy, toy_spec):
        mesh, protocol, y, _ = toy
        cfg = GAConfig(population_size=30, max_generations=40, bounds=(0.5, 2.0), rng_seed=9)
        result = run_ga(mesh, protocol, y, toy_spec, cfg)
        best = [row.best_fitness for row in result.trace]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert all(row.mean_fitness >= row.best_fitness for row in result.trace)
        assert result.trace[0].forward_solves == 30
        # elites keep their cached fitness
        assert all(row.forward_solves <= 30 - cfg.elite_count for row in result.trace[1:])
        assert sum(row.forward_solves for row in result.trace) == result.forward_solve_count
        assert 0.5 <= result.rho_est.min() and result.rho_est.max() <= 2.0

    def test_stability_stop(self, toy, toy_spec):
        mesh, protocol, y, _ = toy
        cfg = GAConfig(population_size=20, max_generations=500, bounds=(0.5, 2.0), objective_tol=1e-12,
                       stability_tol=0.5, stability_window=5)
        result = run_ga(mesh, protocol, y, toy_spec, cfg)
        assert result.termination_reason == "stability"
        assert result.generations < 500

    def test_zero_generations(self, toy, toy_spec):
        mesh, protocol, y, _ = toy
        cfg = GAConfig(population_size=25, max_generations=0, bounds=(0.5, 2.0))
        result = run_ga(mesh, protocol, y, toy_spec, cfg)
        pop = init_population(cfg, 4)
        values = [evaluate(ind.genome, y, toy_spec, mesh, protocol).total for ind in pop]
        np.testing.assert_array_equal(result.rho_est, pop[int(np.argmin(values))].genome)
        assert result.termination_reason == "budget"

    def test_bit_identical_repeats(self, toy, toy_spec):
        mesh, protocol, y, _ = toy
        cfg = GAConfig(population_size=24, max_generations=30, bounds=(0.5, 2.0), rng_seed=77)
        a = run_ga(mesh, protocol, y, toy_spec, cfg, clock=lambda: 0.0)
        b = run_ga(mesh, protocol, y, toy_spec, cfg, clock=lambda: 0.0)
        assert a.trace == b.trace
        np.testing.assert_array_equal(a.rho_est, b.rho_est)

    def test_workers_do_not_change_result(self, toy, toy_spec):
        mesh, protocol, y, _ = toy
        cfg = GAConfig(population_size=24, max_generations=30, bounds=(0.5, 2.0), rng_seed=77)
        serial = run_ga(mesh, protocol, y, toy_spec, cfg, clock=lambda: 0.0)
        threaded = run_ga(mesh, protocol, y, toy_spec, cfg.replace(workers=4), clock=lambda: 0.0)
        assert serial.trace == threaded.trace
        np.testing.assert_array_equal(serial.rho_est, threaded.rho_est)

    def test_custom_fitness(self, toy, toy_spec):
        mesh, protocol, y, _ = toy
        calls = []

        def sphere(g):
            calls.append(1)
            v = float(np.sum((g - 1.0) ** 2))
            return ObjectiveValue(v, v, 0.0)

        result = run_ga(mesh, protocol, y, toy_spec, GAConfig(population_size=10, max_generations=3),
                        fitness=sphere)
        assert len(calls) == result.forward_solve_count
