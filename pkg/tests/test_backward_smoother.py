"""Tests for core/backward_smoother.py - backward kernel, sampling and the simulator."""
import math

import numpy as np
import pytest

from core.backward_smoother import (BackwardSimulator, SmootherSettings, backward_simulate, build_cost_matrix,
                                    enumerate_global_hypotheses, extend_backward, sample_hypothesis_trajectory,
                                    sample_multi_bernoulli, smoother_estimate, truncate_and_sample_hypothesis)
from core.errors import DomainError, SmoothingFailure
from core.mb_filter import MultiBernoulliFilter, filter_estimate
from core.metrics import gospa
from core.models import (Bernoulli, FilterState, GaussianDensity, GaussianMixture, HypothesisKind, MotionModel,
                         MultiBernoulli, Particle, SingleTrajectoryHypothesis, Trajectory, TrajectorySet)
from core.scenario import (ScenarioConfig, TargetSchedule, constant_velocity_model, generate_measurements,
                           generate_truth, position_sensor)
from core.trajectory import states_at

LINK_PROBABILITY = math.e / (math.e + 1.0)


@pytest.fixture
def random_walk():
    """Scalar random walk with unit noise and certain survival."""
    return MotionModel([[1.0]], [[1.0]], 1.0)


def uncertain_components(n):
    return MultiBernoulli(tuple(
        Bernoulli(0.3 + 0.2 * i, GaussianDensity([3.0 * i, 1.0], np.eye(2))) for i in range(n)))


def expected_hypothesis_count(n, n_s):
    """Links t of n components to n_s survivors; every other component dies or is absent"""
    return sum(math.comb(n, t) * math.comb(n_s, t) * math.factorial(t) * 2 ** (n - t) for t in range(min(n, n_s) + 1))


class TestSettings:
    """Tests for SmootherSettings and input validation."""

    def test_rejects_zero_particles(self):
        """Test at least one particle is required."""
        with pytest.raises(DomainError):
            SmootherSettings(particles=0)

    def test_rejects_gate_of_one(self):
        """Test the gate probability lies strictly inside (0, 1)."""
        with pytest.raises(DomainError):
            SmootherSettings(gate_probability=1.0)

    def test_none_gate_disables_gating(self, crossing_model, crossing_filter):
        """Test gate_probability=None gives an infinite threshold."""
        simulator = BackwardSimulator([crossing_filter], crossing_model, SmootherSettings(gate_probability=None))

        assert simulator.threshold == np.inf

    def test_filters_must_be_ordered(self, crossing_model, crossing_filter):
        """Test filtering densities must start at k = 1 and be consecutive."""
        late = FilterState(3, crossing_filter.posterior)

        with pytest.raises(DomainError):
            BackwardSimulator([crossing_filter, late], crossing_model)

    def test_birth_intensities_length(self, crossing_model, crossing_filter):
        """Test one birth intensity is needed per backward step."""
        second = FilterState(2, crossing_filter.posterior)

        with pytest.raises(DomainError):
            BackwardSimulator([crossing_filter, second], crossing_model, birth_intensities=[])

    def test_empty_filters(self, crossing_model):
        """Test an empty filtering sequence raises."""
        with pytest.raises(DomainError):
            backward_simulate([], crossing_model, 1, 1, None, seed=0)


class TestCostMatrix:
    """Tests for build_cost_matrix and enumerate_global_hypotheses."""

    def test_layout(self, crossing_model, crossing_filter, crossing_survivors):
        """Test certain components with certain survival can only link."""
        cost = build_cost_matrix(crossing_filter.posterior, crossing_survivors, crossing_model)

        assert cost.entries.shape == (2, 6)
        assert np.isfinite(cost.entries[:, :2]).all()
        assert not np.isfinite(cost.entries[:, 2:]).any()
        assert all(cost.floored)

    def test_crossing_link_probability(self, crossing_model, crossing_filter, crossing_survivors):
        """Test the straight continuation has probability e / (e + 1)."""
        cost = build_cost_matrix(crossing_filter.posterior, crossing_survivors, crossing_model)

        hypotheses = enumerate_global_hypotheses(cost, crossing_filter.posterior, 10)

        assert len(hypotheses) == 2
        best = hypotheses[0]
        links = {(h.component, h.survivor) for h in best.by_kind(HypothesisKind.SURVIVE)}
        assert links == {(0, 0), (1, 1)}
        assert math.exp(best.log_probability) == pytest.approx(LINK_PROBABILITY, abs=1e-9)

    @pytest.mark.parametrize("n,n_s", [(2, 2), (3, 3), (2, 3), (3, 1)])
    def test_hypothesis_count(self, broad_birth, n, n_s):
        """Test every link/die/absent/newborn combination is enumerated without a gate."""
        model = MotionModel([[1.0, 1.0], [0.0, 1.0]], np.eye(2), 0.9, broad_birth)
        survivors = [Trajectory(2, [[3.0 * j + 1.0, 1.0]]) for j in range(n_s)]
        mb = uncertain_components(n)

        hypotheses = enumerate_global_hypotheses(build_cost_matrix(mb, survivors, model), mb, 1000)

        assert len(hypotheses) == expected_hypothesis_count(n, n_s)
        assert sum(math.exp(h.log_probability) for h in hypotheses) == pytest.approx(1.0)

    def test_component_order_does_not_matter(self, broad_birth):
        """Test permuting filter components leaves the hypothesis probabilities unchanged."""
        model = MotionModel([[1.0, 1.0], [0.0, 1.0]], np.eye(2), 0.9, broad_birth)
        survivors = [Trajectory(2, [[1.0, 1.0]]), Trajectory(2, [[4.0, 1.0]])]
        mb = uncertain_components(3)
        reversed_mb = MultiBernoulli(tuple(reversed(mb.components)))

        forward = enumerate_global_hypotheses(build_cost_matrix(mb, survivors, model), mb, 1000)
        backward = enumerate_global_hypotheses(build_cost_matrix(reversed_mb, survivors, model), reversed_mb, 1000)

        np.testing.assert_allclose(sorted(h.log_probability for h in forward),
                                   sorted(h.log_probability for h in backward), atol=1e-12)

    def test_gate_blocks_distant_links(self, broad_birth):
        """Test a survivor outside the gate cannot be linked."""
        model = MotionModel([[1.0, 1.0], [0.0, 1.0]], np.eye(2), 0.9, broad_birth)
        mb = uncertain_components(1)

        cost = build_cost_matrix(mb, [Trajectory(2, [[80.0, 1.0]])], model, gate=10.0)

        assert cost.entries[0, 0] == np.inf
        assert np.isfinite(cost.entries[0, 1:]).all()

    def test_infeasible_kernel_raises(self, random_walk):
        """Test a row with no finite entry raises SmoothingFailure."""
        mb = MultiBernoulli((Bernoulli(1.0, GaussianDensity([0.0], [[1.0]])),))
        cost = build_cost_matrix(mb, [], random_walk)

        with pytest.raises(SmoothingFailure) as info:
            truncate_and_sample_hypothesis(cost, mb, 5, np.random.default_rng(0), time_step=4)
        assert info.value.time_step == 4


class TestSampling:
    """Tests for the single-step draws."""

    @pytest.mark.slow
    def test_crossing_extension(self, crossing_model, crossing_filter, crossing_survivors):
        """Test extensions stay on the two supported sets with frequency e / (e + 1) to within 0.005."""
        rng = np.random.default_rng(11)
        particle = Particle(TrajectorySet.of(crossing_survivors), start_time=2)
        straight = TrajectorySet.of([Trajectory(1, [[2.0, -1.0], [1.0, 0.0]]), Trajectory(1, [[1.0, 1.0], [2.0, 0.0]])])
        crossed = TrajectorySet.of([Trajectory(1, [[2.0, -1.0], [2.0, 0.0]]), Trajectory(1, [[1.0, 1.0], [1.0, 0.0]])])

        hits = 0
        draws = 200000
        for _ in range(draws):
            extended = extend_backward(particle, crossing_filter, crossing_model, 10, np.inf, rng)
            assert extended.start_time == 1
            assert extended.trajectories in (straight, crossed)
            hits += extended.trajectories == straight

        assert hits / draws == pytest.approx(LINK_PROBABILITY, abs=0.005)

    def test_crossing_extension_support(self, crossing_model, crossing_filter, crossing_survivors):
        """Test a few hundred extensions hit both supported sets and nothing else."""
        rng = np.random.default_rng(12)
        particle = Particle(TrajectorySet.of(crossing_survivors), start_time=2)

        seen = {extend_backward(particle, crossing_filter, crossing_model, 10, np.inf, rng).trajectories
                for _ in range(300)}

        assert len(seen) == 2
        assert all(len(trajectories) == 2 for trajectories in seen)

    def test_sampled_sets_are_exchangeable(self, crossing_model, crossing_filter, crossing_survivors):
        """Test relabeling filter components and survivors leaves the distribution of sampled sets unchanged."""
        straight = TrajectorySet.of([Trajectory(1, [[2.0, -1.0], [1.0, 0.0]]), Trajectory(1, [[1.0, 1.0], [2.0, 0.0]])])
        relabeled = FilterState(1, MultiBernoulli(tuple(reversed(crossing_filter.posterior.components))))
        draws = 4000

        def straight_frequency(filter_k, survivors, seed):
            rng = np.random.default_rng(seed)
            particle = Particle(TrajectorySet.of(survivors), start_time=2)
            return sum(extend_backward(particle, filter_k, crossing_model, 10, np.inf, rng).trajectories == straight
                       for _ in range(draws)) / draws

        original = straight_frequency(crossing_filter, crossing_survivors, 21)
        permuted = straight_frequency(relabeled, list(reversed(crossing_survivors)), 22)

        assert permuted == pytest.approx(original, abs=0.04)
        assert permuted == pytest.approx(LINK_PROBABILITY, abs=0.04)

    def test_later_births_pass_through(self, crossing_model, crossing_filter, crossing_survivors, rng):
        """Test a trajectory born after k + 1 is carried over untouched."""
        late = Trajectory(3, [[9.0, 0.0]])
        particle = Particle(TrajectorySet.of(crossing_survivors + [late]), start_time=2)

        extended = extend_backward(particle, crossing_filter, crossing_model, 10, np.inf, rng)

        assert late in extended.trajectories
        assert len(extended.trajectories) == 3
        assert sorted(t.birth_time for t in extended.trajectories) == [1, 1, 3]

    def test_extend_checks_start_time(self, crossing_model, crossing_filter, crossing_survivors):
        """Test a particle must start right after the filtering time."""
        particle = Particle(TrajectorySet.of(crossing_survivors), start_time=3)

        with pytest.raises(DomainError):
            extend_backward(particle, crossing_filter, crossing_model, 10, np.inf, np.random.default_rng(0))

    def test_newborn_and_die_windows(self, random_walk, rng):
        """Test NEWBORN copies the survivor start and DIE ends at k."""
        mb = MultiBernoulli((Bernoulli(0.5, GaussianDensity([0.0], [[0.0]])),))
        survivors = [Trajectory(4, [[7.0], [8.0]])]

        born, linked = sample_hypothesis_trajectory(
            SingleTrajectoryHypothesis(HypothesisKind.NEWBORN, 0.0, survivor=0), mb, survivors, random_walk, 3, rng)
        dead, none = sample_hypothesis_trajectory(
            SingleTrajectoryHypothesis(HypothesisKind.DIE, 0.0, component=0), mb, survivors, random_walk, 3, rng)

        assert born == Trajectory(4, [[7.0]]) and linked == 0
        assert dead == Trajectory(3, [[0.0]]) and none is None

    @pytest.mark.slow
    def test_survive_draws_match_conditional(self, random_walk):
        """Test SURVIVE draws follow N(1, 0.5) for prior N(0, 1) and successor 2."""
        rng = np.random.default_rng(5)
        mb = MultiBernoulli((Bernoulli(1.0, GaussianDensity([0.0], [[1.0]])),))
        survivors = [Trajectory(2, [[2.0]])]
        hypothesis = SingleTrajectoryHypothesis(HypothesisKind.SURVIVE, 0.0, component=0, survivor=0)

        draws = np.array([sample_hypothesis_trajectory(hypothesis, mb, survivors, random_walk, 1, rng)[0].states[0, 0]
                          for _ in range(40000)])

        assert draws.mean() == pytest.approx(1.0, abs=0.02)
        assert draws.var() == pytest.approx(0.5, abs=0.02)

    def test_sample_multi_bernoulli_extremes(self, rng):
        """Test r = 1 always and r = 0 never produces a state."""
        g = GaussianDensity([0.0], [[1.0]])
        mb = MultiBernoulli((Bernoulli(1.0, g), Bernoulli(0.0, g)))

        for _ in range(20):
            assert len(sample_multi_bernoulli(mb, rng)) == 1


class TestBackwardSimulator:
    """Tests for full backward passes."""

    def test_retry_without_gate(self, random_walk):
        """Test a pass that fails inside the gate succeeds once gating is lifted."""
        filters = [
            FilterState(1, MultiBernoulli((Bernoulli(1.0, GaussianDensity([0.0], [[1.0]])),))),
            FilterState(2, MultiBernoulli((Bernoulli(1.0, GaussianDensity([100.0], [[1.0]])),))),
        ]
        simulator = BackwardSimulator(filters, random_walk, SmootherSettings(particles=1, gate_probability=0.999))

        particle = simulator.simulate_particle(0, (0,))

        assert particle.start_time == 1
        (trajectory,) = particle.trajectories
        assert trajectory.birth_time == 1 and trajectory.length == 2

    def test_no_retries_raises(self, random_walk):
        """Test max_retries=0 surfaces the failure."""
        filters = [
            FilterState(1, MultiBernoulli((Bernoulli(1.0, GaussianDensity([0.0], [[1.0]])),))),
            FilterState(2, MultiBernoulli((Bernoulli(1.0, GaussianDensity([100.0], [[1.0]])),))),
        ]
        settings = SmootherSettings(particles=1, gate_probability=0.999, max_retries=0)

        with pytest.raises(SmoothingFailure):
            BackwardSimulator(filters, random_walk, settings).simulate(0)

    def test_workers_do_not_change_particles(self, crossing_filter):
        """Test particle draws depend only on the seed and stream."""
        model = MotionModel([[1.0, 1.0], [0.0, 1.0]], np.eye(2), 0.9)
        second = FilterState(2, MultiBernoulli((
            Bernoulli(0.9, GaussianDensity([1.0, 0.0], 0.1 * np.eye(2))),
            Bernoulli(0.9, GaussianDensity([2.0, 0.0], 0.1 * np.eye(2))),
        )))

        serial = backward_simulate([crossing_filter, second], model, 12, 10, 0.999, seed=42, stream=(3,))
        threaded = backward_simulate([crossing_filter, second], model, 12, 10, 0.999, seed=42, stream=(3,),
                                     workers=4)

        assert [p.trajectories for p in serial] == [p.trajectories for p in threaded]
        assert [p.accumulated_log_weight for p in serial] == [p.accumulated_log_weight for p in threaded]

    def test_estimate_picks_heaviest_particle(self):
        """Test the particle with the largest accumulated log weight is returned."""
        light = Particle(TrajectorySet.of([Trajectory(1, [[0.0]])]), 1, -5.0)
        heavy = Particle(TrajectorySet.of([Trajectory(1, [[1.0]])]), 1, -1.0)

        assert smoother_estimate([light, heavy]) == heavy.trajectories

    def test_estimate_needs_particles(self):
        """Test an empty particle list raises."""
        with pytest.raises(DomainError):
            smoother_estimate([])

    @pytest.mark.slow
    def test_single_target_marginals_match_rts(self, random_walk):
        """Test sampled marginals agree with the Rauch-Tung-Striebel smoother."""
        horizon, draws = 30, 10000
        means = [np.sin(k) for k in range(1, horizon + 1)]
        variances = [0.5 + 0.1 * k for k in range(1, horizon + 1)]
        filters = [FilterState(k, MultiBernoulli((Bernoulli(1.0, GaussianDensity([m], [[v]])),)))
                   for k, m, v in zip(range(1, horizon + 1), means, variances)]

        smoothed_mean, smoothed_var = means[:], variances[:]
        for k in range(horizon - 2, -1, -1):
            predicted_var = variances[k] + 1.0
            gain = variances[k] / predicted_var
            smoothed_mean[k] = means[k] + gain * (smoothed_mean[k + 1] - means[k])
            smoothed_var[k] = variances[k] + gain ** 2 * (smoothed_var[k + 1] - predicted_var)

        particles = backward_simulate(filters, random_walk, draws, 5, None, seed=3)

        samples = np.array([next(iter(p.trajectories)).states[:, 0] for p in particles])
        assert samples.shape == (draws, horizon)
        for k in range(horizon):
            assert abs(samples[:, k].mean() - smoothed_mean[k]) < 3.0 * np.sqrt(smoothed_var[k] / draws)
            assert samples[:, k].var() == pytest.approx(smoothed_var[k], rel=0.05)


def _single_target_scenario(process_std, measurement_std, horizon):
    birth = GaussianMixture((0.1,), (GaussianDensity([0.0, 0.0], np.diag([50.0 ** 2, 2.0 ** 2])),))
    return ScenarioConfig(
        horizon=horizon,
        targets=(TargetSchedule(1, horizon + 1, (-10.0, 1.0)),),
        motion=constant_velocity_model(1, 1.0, process_std, 0.99, birth),
        sensor=position_sensor(1, measurement_std, 1.0, 0.0, 200.0),
        region=[[-100.0, 100.0]],
        name="single",
    )


def _filter_and_smooth(scenario, particles, seed):
    rng = np.random.default_rng(seed)
    truth = generate_truth(scenario, rng)
    scans = generate_measurements(truth, scenario.sensor, scenario.region, rng, scenario.horizon)
    filters = MultiBernoulliFilter(scenario.motion, scenario.sensor).run(scans)
    estimate = smoother_estimate(backward_simulate(filters, scenario.motion, particles, 10, 0.999, seed=seed))
    return truth, filters, estimate


class TestSmoothingQuality:
    """End-to-end accuracy on clean single-target scenarios."""

    def test_near_noiseless_recovers_truth(self):
        """Test tiny noise gives a smoothed trajectory on top of the truth."""
        scenario = _single_target_scenario(0.01, 0.01, 10)

        truth, _, estimate = _filter_and_smooth(scenario, 50, seed=1)

        assert len(estimate) == 1
        (smoothed,), (true,) = list(estimate), list(truth)
        assert smoothed.birth_time == 1 and smoothed.length == 10
        np.testing.assert_allclose(smoothed.states[:, 0], true.states[:, 0], atol=0.06)

    @pytest.mark.slow
    def test_smoother_beats_filter(self):
        """Test summed GOSPA of the smoother is below the filter's."""
        scenario = _single_target_scenario(0.001, 0.5, 30)

        truth, filters, estimate = _filter_and_smooth(scenario, 50, seed=2)

        filter_total = smoother_total = 0.0
        for k, state in enumerate(filters, start=1):
            true = [x[:1] for x in states_at(truth, k)]
            filter_total += gospa([x[:1] for x in filter_estimate(state)], true).total
            smoother_total += gospa([x[:1] for x in states_at(estimate, k)], true).total
        assert smoother_total <= filter_total
