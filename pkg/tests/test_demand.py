import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefcache.demand import (
    DemandModel,
    InfeasibleSimilarityError,
    cosine_similarity,
    global_popularity,
    local_popularity,
    mean_pairwise_similarity,
    synthesize_activity,
    synthesize_demand,
    synthesize_locations,
    synthesize_preferences,
    zipf,
)
from prefcache.toy import TOY_Q, TOY_S


def test_zipf_values():
    np.testing.assert_allclose(zipf(3, 0.0), [1 / 3] * 3)
    np.testing.assert_allclose(zipf(3, 0.6), [0.459, 0.303, 0.238], atol=1e-3)
    np.testing.assert_allclose(zipf(2, 0.6), [0.602, 0.398], atol=1e-3)
    w = 1 / np.arange(1, 8)
    np.testing.assert_allclose(zipf(7, 1.0), w / w.sum(), rtol=1e-14)


def test_global_popularity_toy():
    hom = DemandModel(TOY_Q["hom"], TOY_S, np.eye(2))
    het = DemandModel(TOY_Q["het"], TOY_S, np.eye(2))
    np.testing.assert_allclose(global_popularity(hom), [0.46, 0.30, 0.24], atol=1e-12)
    np.testing.assert_allclose(global_popularity(het), [0.458, 0.302, 0.24], atol=1e-12)
    one = DemandModel([[0.1, 0.9]], [1.0], [[1.0]])
    np.testing.assert_allclose(global_popularity(one), [0.1, 0.9])


def test_local_popularity():
    het = DemandModel(TOY_Q["het"], TOY_S, np.eye(2))
    np.testing.assert_allclose(local_popularity(het, 0), TOY_Q["het"][0])
    # everyone always in cell 1
    pinned = het.with_locations([[0.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(local_popularity(pinned, 1), global_popularity(het))
    with pytest.raises(ValueError, match="no requests"):
        local_popularity(pinned, 0)
    uniform = het.with_locations(np.full((2, 2), 0.5))
    for j in range(2):
        np.testing.assert_allclose(local_popularity(uniform, j), global_popularity(het))


def test_cosine_similarity():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0, 0], [0, 0, 2]) == 0.0
    # dot 0.11, squared norms 0.625 and 0.5048
    assert cosine_similarity(*TOY_Q["het"]) == pytest.approx(0.11 / np.sqrt(0.625 * 0.5048), rel=1e-12)
    assert cosine_similarity(*TOY_Q["het"]) == pytest.approx(0.196, abs=1e-3)
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 0])
    assert mean_pairwise_similarity(TOY_Q["hom"]) == pytest.approx(1.0)


def test_model_validation():
    with pytest.raises(ValueError):
        DemandModel([[0.5, 0.6]], [1.0], [[1.0]])
    with pytest.raises(ValueError):
        DemandModel([[0.5, 0.5]], [0.9], [[1.0]])
    with pytest.raises(ValueError):
        DemandModel([[0.5, 0.5]], [1.0], [[1.2, -0.2]])
    with pytest.raises(ValueError):
        DemandModel([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5], [[1.0]])


def test_json_round_trip(tmp_path):
    m = synthesize_demand(5, 8, 7, rng=np.random.default_rng(0), target_sim=0.5)
    m.save(tmp_path / "d.json")
    back = DemandModel.load(tmp_path / "d.json")
    np.testing.assert_array_equal(back.Q, m.Q)
    np.testing.assert_array_equal(back.s, m.s)
    np.testing.assert_array_equal(back.A, m.A)
    d = m.to_dict()
    d["N_f"] = 9
    with pytest.raises(ValueError, match="header"):
        DemandModel.from_dict(d)


def test_activity_and_locations():
    rng = np.random.default_rng(2)
    s = synthesize_activity(6, 0.4, rng)
    np.testing.assert_allclose(np.sort(s)[::-1], zipf(6, 0.4))
    A = synthesize_locations(10, 7, 0.0, rng)
    np.testing.assert_allclose(A, 1 / 7)
    A = synthesize_locations(10, 7, 1.0, rng)
    ref = [0.386, 0.193, 0.129, 0.096, 0.077, 0.064, 0.055]
    for row in A:
        np.testing.assert_allclose(np.sort(row)[::-1], ref, atol=1e-3)
    A = synthesize_locations(10, 7, 50.0, rng)
    assert np.all(A.max(axis=1) > 1 - 1e-12)


@pytest.mark.parametrize("n_u,n_f,target", [(20, 50, 0.1), (20, 50, 0.5), (20, 50, 0.9),
                                           (100, 100, 0.1), (2, 3, 0.5)])
def test_preferences_hit_target(n_u, n_f, target):
    rng = np.random.default_rng(4)
    p = zipf(n_f, 0.6)
    s = zipf(n_u, 0.4)
    Q, achieved = synthesize_preferences(p, s, target, rng, return_details=True)
    np.testing.assert_allclose(s @ Q, p, atol=1e-6)
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-9)
    assert Q.min() >= 0
    assert abs(mean_pairwise_similarity(Q) - target) <= 0.02
    assert achieved == pytest.approx(mean_pairwise_similarity(Q))


def test_preferences_identical_at_one():
    p = zipf(10, 0.6)
    Q = synthesize_preferences(p, zipf(4, 0.4), 1.0, np.random.default_rng(0))
    np.testing.assert_allclose(Q, np.tile(p, (4, 1)))


def test_infeasible_target_reports_bounds():
    with pytest.raises(InfeasibleSimilarityError) as exc:
        synthesize_preferences(zipf(3, 0.6), TOY_S, 0.1, np.random.default_rng(0))
    low, high = exc.value.bounds
    assert low > 0.12 and high == 1.0


@settings(max_examples=25, deadline=None)
@given(target=st.floats(0.1, 1.0), seed=st.integers(0, 10_000))
def test_popularity_constraint_always_holds(target, seed):
    p = zipf(30, 0.6)
    s = zipf(12, 0.4)
    try:
        Q = synthesize_preferences(p, s, target, np.random.default_rng(seed))
    except InfeasibleSimilarityError as exc:
        # only targets under the diverse base's similarity may be refused
        assert target < exc.bounds[0] - 0.02
        return
    np.testing.assert_allclose(s @ Q, p, atol=1e-6)


def test_demand_is_seeded():
    a = synthesize_demand(8, 12, 7, rng=np.random.default_rng(3), target_sim=0.3)
    b = synthesize_demand(8, 12, 7, rng=np.random.default_rng(3), target_sim=0.3)
    np.testing.assert_array_equal(a.Q, b.Q)
    np.testing.assert_array_equal(a.A, b.A)
    assert a.joint.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(a.popularity_only().Q, np.tile(global_popularity(a), (8, 1)))
