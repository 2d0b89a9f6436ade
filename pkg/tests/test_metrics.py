"""Tests for core/metrics.py - GOSPA and track switches."""
from itertools import permutations

import numpy as np
import pytest

from core.errors import DomainError
from core.metrics import gospa, positions, track_switches, track_switches_per_step
from core.models import Trajectory, TrajectorySet


def brute_force_gospa_p(estimate, truth, c, p):
    """GOSPA^p by trying every injection of the smaller set into the larger"""
    small, large = (estimate, truth) if len(estimate) <= len(truth) else (truth, estimate)
    best = np.inf
    for image in permutations(range(len(large)), len(small)):
        value = sum(min(np.linalg.norm(small[i] - large[j]), c) ** p for i, j in enumerate(image))
        best = min(best, value + c ** p / 2.0 * (len(large) - len(small)))
    return best


def track(values, birth=1):
    return Trajectory(birth, [[v] for v in values])


class TestGospa:
    """Tests for gospa."""

    def test_empty_estimate(self):
        """Test every missed target costs c^p / 2."""
        result = gospa([], [[0.0, 0.0], [5.0, 5.0], [9.0, 1.0]], c=40.0, p=1.0)

        assert result.total == pytest.approx(60.0)
        assert result.missed == pytest.approx(60.0)
        assert result.false_ == 0.0 and result.localization == 0.0

    def test_single_pair(self):
        """Test a 3-4-5 pair inside the cutoff is pure localization."""
        result = gospa([[3.0, 4.0]], [[0.0, 0.0]], c=40.0)

        assert result.total == pytest.approx(5.0)
        assert result.localization == pytest.approx(5.0)

    def test_distant_pair_counts_as_missed_and_false(self):
        """Test a pair beyond c is split into a miss and a false target."""
        result = gospa([[100.0]], [[0.0]], c=10.0)

        assert result.localization == 0.0
        assert result.missed == pytest.approx(5.0)
        assert result.false_ == pytest.approx(5.0)

    def test_both_empty(self):
        """Test two empty sets are at distance zero."""
        assert gospa([], []).total == 0.0

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_matches_brute_force(self, rng, p):
        """Test the optimal assignment against exhaustive search."""
        for _ in range(40):
            estimate = rng.uniform(-30.0, 30.0, size=(int(rng.integers(0, 5)), 2))
            truth = rng.uniform(-30.0, 30.0, size=(int(rng.integers(0, 5)), 2))

            result = gospa(estimate, truth, c=20.0, p=p)

            assert result.total ** p == pytest.approx(brute_force_gospa_p(estimate, truth, 20.0, p), abs=1e-9)
            parts = result.localization + result.missed + result.false_
            assert parts == pytest.approx(result.total ** p, abs=1e-9)

    def test_parameter_domain(self):
        """Test c > 0 and p >= 1 are enforced."""
        with pytest.raises(DomainError):
            gospa([], [], c=0.0)
        with pytest.raises(DomainError):
            gospa([], [], p=0.5)

    def test_positions_keep_leading_coordinates(self):
        """Test states are cut to their position part."""
        stacked = positions([np.array([1.0, 2.0, 3.0, 4.0])], 2)

        np.testing.assert_array_equal(stacked, [[1.0, 2.0]])
        assert positions([], 2).shape == (0, 2)


class TestGospaMetric:
    """Tests for the metric axioms of GOSPA."""

    @staticmethod
    def random_set(rng):
        return rng.uniform(-30.0, 30.0, size=(int(rng.integers(0, 5)), 2))

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_symmetry(self, rng, p):
        """Test swapping estimate and truth leaves the distance unchanged."""
        for _ in range(40):
            x, y = self.random_set(rng), self.random_set(rng)

            assert gospa(x, y, c=20.0, p=p).total == pytest.approx(gospa(y, x, c=20.0, p=p).total, abs=1e-9)

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_triangle_inequality(self, rng, p):
        """Test d(x, z) <= d(x, y) + d(y, z) on random triples."""
        for _ in range(500):
            x, y, z = self.random_set(rng), self.random_set(rng), self.random_set(rng)

            direct = gospa(x, z, c=20.0, p=p).total
            detour = gospa(x, y, c=20.0, p=p).total + gospa(y, z, c=20.0, p=p).total
            assert direct <= detour + 1e-9

    def test_identity(self, rng):
        """Test a set is at distance zero from itself and only from itself."""
        x = rng.uniform(-30.0, 30.0, size=(3, 2))

        assert gospa(x, x).total == pytest.approx(0.0, abs=1e-12)
        assert gospa(x, x[:2]).total > 0.0


class TestTrackSwitches:
    """Tests for track switch counting."""

    def test_swap(self):
        """Test estimates that swap partners half way count two switches."""
        truth = TrajectorySet.of([track([0, 1, 2, 3]), track([3, 2, 1, 0])])
        estimate = TrajectorySet.of([track([0, 1, 1, 0]), track([3, 2, 2, 3])])

        per_step = track_switches_per_step(estimate, truth)

        assert per_step.tolist() == [0, 0, 2, 0]
        assert track_switches(estimate, truth) == 2

    def test_perfect_estimate(self):
        """Test an exact estimate never switches."""
        truth = TrajectorySet.of([track([0, 1, 2, 3]), track([3, 2, 1, 0])])

        assert track_switches(truth, truth) == 0

    def test_gap_does_not_switch(self):
        """Test a truth unpaired at k - 1 is not counted at k."""
        truth = TrajectorySet.of([track([0, 1, 2])])
        estimate = TrajectorySet.of([track([0]), track([2], birth=3)])

        assert track_switches_per_step(estimate, truth).tolist() == [0, 0, 0]

    def test_horizon_pads_counts(self):
        """Test an explicit horizon sizes the result."""
        truth = TrajectorySet.of([track([0, 1])])

        assert track_switches_per_step(truth, truth, horizon=5).tolist() == [0, 0, 0, 0, 0]
