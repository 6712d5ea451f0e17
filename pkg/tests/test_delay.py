import numpy as np
import pytest

from prefcache.delay import (
    CachePolicy,
    evaluate,
    nonoverlap_user_delay,
    user_avg_delay,
    user_avg_delay_piecewise,
    user_delays,
)
from prefcache.demand import DemandModel, synthesize_demand
from prefcache.geometry import build_layout, isolated_layout
from prefcache.radio import TauTable
from prefcache.toy import toy_problem

TAU7 = TauTable.from_ranks([1.0, 2.0, 3.0, 4.0])


def _random_instance(rng, n_b=7, n_u=4, n_f=6):
    Q = rng.dirichlet(np.ones(n_f), n_u)
    s = rng.dirichlet(np.ones(n_u))
    A = rng.dirichlet(np.ones(n_b), n_u)
    C = rng.random((n_b, n_f)) * (rng.random((n_b, n_f)) < 0.6)
    return DemandModel(Q, s, A), C


def test_toy_user_delays():
    model, tau, lay = toy_problem("het")
    t = user_delays([[1, 0, 0], [0, 0, 1]], tau, model, lay, 1.0)
    np.testing.assert_allclose(t, [1.5, 1.78], atol=1e-12)
    np.testing.assert_allclose(model.s * t, [0.90, 0.712], atol=1e-12)


def test_toy_reports():
    model, tau, lay = toy_problem("hom")
    r = evaluate([[1, 0, 0], [0, 1, 0]], tau, model, lay, 1.0)
    assert r.network_avg == pytest.approx(1.84, abs=0.01)
    assert r.max_weighted == pytest.approx(2.13, abs=0.01)
    model, tau, lay = toy_problem("het")
    assert evaluate([[1, 0, 0], [0, 0, 1]], tau, model, lay, 1.0).network_avg == pytest.approx(1.61, abs=0.01)
    r = evaluate([[1, 0, 0], [0, 0.57, 0.43]], tau, model, lay, 1.0)
    assert r.max_weighted == pytest.approx(1.63, abs=0.01)
    w = model.n_users * model.s * r.per_user
    assert abs(w[0] - w[1]) < 0.01
    assert r.argmax_user == 0


def test_empty_cache_is_backhaul():
    rng = np.random.default_rng(0)
    lay = build_layout(7, 250.0)
    model, _ = _random_instance(rng)
    t = user_delays(np.zeros((7, 6)), TAU7, model, lay, 3.0)
    np.testing.assert_allclose(t, 12.0)


def test_piecewise_branches():
    model, tau, lay = toy_problem("het")
    one = DemandModel([[0, 1, 0], [0, 1, 0]], model.s, model.A)
    # file 2 only: 0.57 from rank 1, nothing at rank 2, the rest over the backhaul
    t = user_avg_delay_piecewise(1, [[0, 0, 0], [0, 0.57, 0.43]], tau, one, lay, 1.0)
    assert t == pytest.approx(0.57 * 1 + 0.43 * 3)
    t = user_avg_delay_piecewise(1, [[0, 0, 0], [0, 1, 0]], tau, one, lay, 1.0)
    assert t == pytest.approx(1.0)


def test_max_form_equals_piecewise():
    rng = np.random.default_rng(42)
    lay = build_layout(7, 250.0)
    for _ in range(40):
        model, C = _random_instance(rng)
        taus = np.sort(rng.uniform(0.1, 5.0, 4))
        tau = TauTable.from_ranks(taus)
        F = rng.uniform(0.5, 10)
        fast = user_delays(C, tau, model, lay, F)
        for u in range(model.n_users):
            assert user_avg_delay_piecewise(u, C, tau, model, lay, F) == pytest.approx(
                fast[u], rel=1e-12, abs=1e-12)
            assert user_avg_delay(u, C, tau, model, lay, F) == fast[u]


def test_per_user_tables():
    rng = np.random.default_rng(3)
    lay = build_layout(7, 250.0)
    model, C = _random_instance(rng)
    v = np.sort(rng.uniform(0.1, 5.0, (model.n_users, 7, 12, 4)), axis=-1)
    tau = TauTable(v)
    fast = user_delays(C, tau, model, lay, 1.0)
    for u in range(model.n_users):
        assert user_avg_delay_piecewise(u, C, tau, model, lay, 1.0) == pytest.approx(fast[u], rel=1e-12)


def test_bounds_monotone_convex():
    rng = np.random.default_rng(5)
    lay = build_layout(7, 250.0)
    model, C1 = _random_instance(rng)
    C2 = rng.random(C1.shape)
    t1 = user_delays(C1, TAU7, model, lay, 1.0)
    assert np.all(t1 >= 1.0 - 1e-12) and np.all(t1 <= 4.0 + 1e-12)
    # more cache never hurts
    t_more = user_delays(np.maximum(C1, C2), TAU7, model, lay, 1.0)
    assert np.all(t_more <= t1 + 1e-12)
    # convex in C
    for lam in (0.2, 0.5, 0.8):
        mix = user_delays(lam * C1 + (1 - lam) * C2, TAU7, model, lay, 1.0)
        bound = lam * t1 + (1 - lam) * user_delays(C2, TAU7, model, lay, 1.0)
        assert np.all(mix <= bound + 1e-12)


def test_nonoverlap_closed_form():
    rng = np.random.default_rng(9)
    lay = isolated_layout(3)
    model, C = _random_instance(rng, n_b=3)
    tau = TauTable.from_ranks([1.0, None, None, 3.0])
    np.testing.assert_allclose(user_delays(C, tau, model, lay, 2.0),
                               nonoverlap_user_delay(C, 1.0, 3.0, model, 2.0), rtol=1e-12)


def test_missing_tau_for_present_rank():
    lay = build_layout(7, 250.0)
    model, C = _random_instance(np.random.default_rng(1))
    with pytest.raises(ValueError, match="no value"):
        user_delays(C, TauTable.from_ranks([1.0, 2.0, None, 4.0]), model, lay, 1.0)


def test_policy_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        CachePolicy([[1.2, 0.0]])
    with pytest.raises(ValueError):
        CachePolicy([[1.0, 1.0]], n_cache=1)
    pol = CachePolicy([[1.0, 0.25], [0.0, 0.5]], n_cache=2)
    pol.to_csv(tmp_path / "c.csv")
    back = CachePolicy.from_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.C, pol.C)


def test_report_serialisation():
    model = synthesize_demand(3, 4, 7, rng=np.random.default_rng(0), target_sim=0.8)
    r = evaluate(np.zeros((7, 4)), TAU7, model, build_layout(7, 250.0), 1.0)
    assert set(r.row("x")) == {"policy_name", "T_s", "max_weighted_s", "argmax_user"}
    assert '"per_user_s"' in r.to_json("x")
