import numpy as np
import pytest

from rhpwbc.task_model import PriorityMatrix, validate_priority_matrix
from rhpwbc.transition import (
    BlendPolicy,
    CandidateSet,
    ScheduleState,
    UnknownEventError,
    blend,
    initial_state,
    proportion_from_distance,
    step_schedule,
)

PSI1 = PriorityMatrix(
    np.array([[1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]], dtype=float)
)
PSI2 = PriorityMatrix(
    np.array([[1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 0, 0], [1, 1, 0, 1]], dtype=float)
)
POLICY = BlendPolicy(d_low=0.05, d_high=0.2, ramp="linear", rate_limit=0.01)


class TestProportionFromDistance:
    def test_saturates_high(self):
        assert proportion_from_distance(0.3, POLICY) == 1.0
        assert proportion_from_distance(0.2, POLICY) == 1.0

    def test_saturates_low(self):
        assert proportion_from_distance(0.05, POLICY) == 0.0
        assert proportion_from_distance(0.0, POLICY) == 0.0

    def test_midpoint_linear(self):
        assert proportion_from_distance(0.125, POLICY) == pytest.approx(0.5)

    def test_smoothstep_monotone_and_smooth_at_ends(self):
        pol = BlendPolicy(d_low=0.05, d_high=0.2, ramp="smoothstep", rate_limit=0.01)
        ds = np.linspace(0.0, 0.3, 301)
        ps = [proportion_from_distance(d, pol) for d in ds]
        assert all(b >= a for a, b in zip(ps, ps[1:]))
        assert proportion_from_distance(0.125, pol) == pytest.approx(0.5)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            BlendPolicy(d_low=0.3, d_high=0.2)
        with pytest.raises(ValueError):
            BlendPolicy(rate_limit=0.0)
        with pytest.raises(ValueError):
            BlendPolicy(ramp="cubic")


class TestBlend:
    def test_vertices_exact(self):
        cands = CandidateSet(candidates=(PSI1, PSI2))
        assert blend(cands, np.array([1.0, 0.0])) is PSI1
        assert blend(cands, np.array([0.0, 1.0])) is PSI2

    def test_halfway_only_changes_transitioning_column(self):
        cands = CandidateSet(candidates=(PSI1, PSI2))
        out = blend(cands, np.array([0.5, 0.5]))
        expected = PSI1.values.copy()
        expected[2, 2] = 0.5
        expected[3, 2] = 0.5
        np.testing.assert_array_equal(out.values, expected)

    def test_result_always_valid(self):
        rng = np.random.default_rng(0)
        cands = CandidateSet(candidates=(PSI1, PSI2))
        for _ in range(100):
            p = rng.dirichlet([1.0, 1.0])
            out = blend(cands, p)
            assert validate_priority_matrix(out) is None

    def test_shared_entries_stay_bitwise_equal(self):
        cands = CandidateSet(candidates=(PSI1, PSI2))
        for p0 in np.linspace(0.001, 0.999, 23):
            out = blend(cands, np.array([p0, 1.0 - p0]))
            # columns 0, 1, 3 agree between the candidates
            np.testing.assert_array_equal(out.values[:, 0], PSI1.values[:, 0])
            np.testing.assert_array_equal(out.values[:, 1], PSI1.values[:, 1])
            np.testing.assert_array_equal(out.values[:, 3], PSI1.values[:, 3])

    def test_bad_proportions_rejected(self):
        cands = CandidateSet(candidates=(PSI1, PSI2))
        with pytest.raises(ValueError):
            blend(cands, np.array([0.7, 0.7]))


class TestStepSchedule:
    def test_fixed_point_at_nominal(self):
        state = initial_state(2, start=0)
        out = step_schedule(state, 1.0, [], POLICY, avoidance_candidate=1)
        np.testing.assert_array_equal(out.p, [1.0, 0.0])
        assert out.mode == "nominal"

    def test_rate_limited_single_step(self):
        pol = BlendPolicy(rate_limit=0.1)
        state = initial_state(2, start=0)
        out = step_schedule(state, 0.0, [], pol, avoidance_candidate=1)
        np.testing.assert_allclose(out.p, [0.9, 0.1])
        assert out.mode == "transitioning"

    def test_event_retargets_mid_transition(self):
        pol = BlendPolicy(rate_limit=0.1)
        state = ScheduleState(
            p=np.array([0.6, 0.0, 0.4]), target_candidate=2, mode="transitioning"
        )
        out = step_schedule(
            state,
            1.0,
            ["obstacle_near"],
            pol,
            event_rules={"obstacle_near": 1},
            avoidance_candidate=1,
        )
        assert out.target_candidate == 1
        delta = out.p - state.p
        assert np.max(np.abs(delta)) <= pol.rate_limit + 1e-15
        # moving toward the (0, 1, 0) vertex
        assert delta[1] > 0 and delta[0] < 0 and delta[2] < 0

    def test_unknown_event_raises(self):
        state = initial_state(2)
        with pytest.raises(UnknownEventError):
            step_schedule(state, 1.0, ["??"], POLICY)

    def test_simplex_invariant_over_random_walks(self):
        rng = np.random.default_rng(1)
        state = initial_state(3, start=0)
        for _ in range(500):
            d = float(rng.uniform(0.0, 0.3))
            state = step_schedule(state, d, [], POLICY, avoidance_candidate=2)
            assert np.all(state.p >= -1e-15)
            assert abs(state.p.sum() - 1.0) <= 1e-12

    def test_saturation_reaches_vertex_exactly(self):
        pol = BlendPolicy(rate_limit=0.01)
        state = ScheduleState(p=np.array([0.0, 1.0]), target_candidate=0, mode="avoidance")
        cycles = int(np.ceil(1.0 / pol.rate_limit)) + 1
        for _ in range(cycles):
            state = step_schedule(state, 1.0, [], pol, avoidance_candidate=1)
        np.testing.assert_array_equal(state.p, [1.0, 0.0])
        assert state.mode == "nominal"

    def test_blended_matrix_lipschitz_over_schedule(self):
        pol = BlendPolicy(rate_limit=0.02)
        cands = CandidateSet(candidates=(PSI1, PSI2))
        state = initial_state(2, start=0)
        prev = blend(cands, state.p).values
        rng = np.random.default_rng(2)
        for _ in range(300):
            d = float(rng.uniform(0.0, 0.25))
            state = step_schedule(state, d, [], pol, avoidance_candidate=1)
            cur = blend(cands, state.p).values
            assert np.max(np.abs(cur - prev)) <= pol.rate_limit + 1e-12
            prev = cur


class TestCandidateSet:
    def test_invalid_candidate_rejected(self):
        bad = PriorityMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))  # non-monotone col 0
        with pytest.raises(ValueError, match="invalid"):
            CandidateSet(candidates=(PSI1.values is None and bad or bad,))

    def test_shape_mismatch_rejected(self):
        small = PriorityMatrix(np.zeros((2, 2)))
        with pytest.raises(ValueError, match="shape"):
            CandidateSet(candidates=(PSI1, small))

    def test_default_labels(self):
        cands = CandidateSet(candidates=(PSI1, PSI2))
        assert cands.labels == ("H0", "H1")
