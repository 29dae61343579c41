"""Engine-level checks: primal construction, dual closed forms, full loop."""

import numpy as np
import pytest

from transactive.admm import (
    AdmmConfig,
    AdmmError,
    DualState,
    InProcessCoordinator,
    VariableMap,
    build_primal,
    extract_schedule,
    primal_linear_term,
    residual,
    run_admm,
    solve_centralized,
    solve_dual,
    update_multipliers,
)
from transactive.admm import central as central_mod
from transactive.admm.central import InfeasibleScenario
from transactive.admm.coordinator import quantize_trade_row
from transactive.model import (
    HORIZON,
    BatterySpec,
    ProsumerProfile,
    Tariff,
    balance_residual,
    schedule_violations,
)
from transactive.qp import CachedQpSolver, QpSolution, QpStatus, solve_qp

T = HORIZON


def flat(x):
    return np.full(T, float(x))


def bell(total, center, width=6.0):
    t = np.arange(T)
    shape = np.exp(-0.5 * ((t - center) / width) ** 2)
    return total * shape / shape.sum()


def make_tariff(**kw):
    base = dict(alpha=0.3, beta=0.12, pi_p2p=0.14, pi_as=flat(0.02), wear_price=0.8)
    base.update(kw)
    return Tariff(**base)


def pair_profiles():
    """Two prosumers with offset renewables and flexible load at the margin."""
    return [
        ProsumerProfile(id=0, inflexible=flat(0.6), preferred_flexible=flat(1.0),
                        renewable_avail=bell(30.0, center=9.0), battery=BatterySpec()),
        ProsumerProfile(id=1, inflexible=flat(0.8), preferred_flexible=flat(1.2),
                        renewable_avail=bell(18.0, center=16.0), battery=BatterySpec()),
    ]


def solo_profile():
    return ProsumerProfile(id=0, inflexible=flat(0.7), preferred_flexible=flat(0.9),
                           renewable_avail=bell(12.0, center=13.0), battery=BatterySpec())


@pytest.fixture(scope="module")
def pair_run():
    profiles = pair_profiles()
    tariff = make_tariff()
    coord = InProcessCoordinator(2, rho=0.5, epsilon=1e-6)
    result = run_admm(profiles, tariff, AdmmConfig(), coord)
    central = solve_centralized(profiles, tariff)
    return profiles, tariff, result, central


def random_dual(rng, num, scale=1.0):
    p_aux = rng.normal(0, scale, (num, num, T))
    for u in range(num):
        p_aux[u, u] = 0.0
        for v in range(u + 1, num):
            p_aux[v, u] = -p_aux[u, v]
    lam = rng.normal(0, scale, (num, num, T))
    for u in range(num):
        lam[u, u] = 0.0
    return DualState(p_aux=p_aux, lam=lam, iteration=3)


def random_trades(rng, num, scale=1.0):
    p = rng.normal(0, scale, (num, num, T))
    for u in range(num):
        p[u, u] = 0.0
    return p


def test_variable_count():
    for num in (1, 2, 5, 10):
        assert VariableMap(0, num).n == 7 * T + T * (num - 1) + 1


def test_variable_map_rejects_bad_index():
    with pytest.raises(ValueError):
        VariableMap(2, 2)


def test_build_primal_shapes_and_bounds():
    profile = solo_profile()
    tariff = make_tariff()
    dual = DualState.zeros(3)
    prob = build_primal(profile, tariff, dual, rho=0.5, u_index=1)
    vmap = VariableMap(1, 3)
    assert prob.n == vmap.n
    assert prob.A.shape == (2 * T + 1, vmap.n)
    assert prob.G.shape == (2 * T, vmap.n)
    assert np.array_equal(prob.hi[vmap.r], profile.renewable_avail)
    assert np.all(prob.hi[vmap.c] == profile.battery.charge_limit)
    assert np.all(prob.lo[vmap.trade[0]] == -10.0)
    assert np.all(prob.hi[vmap.trade[2]] == 10.0)
    assert prob.lo[vmap.peak] == 0.0 and np.isinf(prob.hi[vmap.peak])
    # quadratic terms sit on flexible load and trades only
    diag = np.diag(prob.Q)
    assert np.all(diag[vmap.l_fl] == 2.0)
    assert np.all(diag[vmap.trade[0]] == 0.5)
    assert diag[vmap.g.start] == 0.0


def test_linear_term_tracks_duals():
    profile = solo_profile()
    tariff = make_tariff()
    vmap = VariableMap(0, 2)
    rng = np.random.default_rng(0)
    p_aux_row = rng.normal(0, 1, (2, T))
    lam_row = rng.normal(0, 1, (2, T))
    p_aux_row[0] = 0
    lam_row[0] = 0
    q = primal_linear_term(profile, tariff, vmap, 0.5, p_aux_row, lam_row)
    expect = tariff.pi_p2p - 0.5 * p_aux_row[1] - lam_row[1]
    assert np.allclose(q[vmap.trade[1]], expect, atol=0, rtol=0)
    assert np.all(q[vmap.g] == tariff.alpha)
    assert np.allclose(q[vmap.l_fl], -2.0 * profile.preferred_flexible)
    assert q[vmap.peak] == tariff.beta


def test_solve_dual_averaging_example():
    dual = DualState.zeros(2)
    p = np.zeros((2, 2, T))
    p[0, 1] = 1.0
    out = solve_dual(p, dual, rho=0.7)
    assert np.all(out.p_aux[0, 1] == 0.5)
    assert np.all(out.p_aux[1, 0] == -0.5)


def test_solve_dual_fixed_point_on_consistent_trades():
    rng = np.random.default_rng(1)
    p = random_trades(rng, 3)
    for u in range(3):
        for v in range(u + 1, 3):
            p[v, u] = -p[u, v]
    out = solve_dual(p, DualState.zeros(3), rho=0.5)
    assert np.array_equal(out.p_aux, p)


def test_solve_dual_reciprocity_bitwise():
    rng = np.random.default_rng(2)
    out = solve_dual(random_trades(rng, 4), random_dual(rng, 4), rho=0.3)
    for u in range(4):
        for v in range(4):
            assert np.array_equal(out.p_aux[u, v], -out.p_aux[v, u])


def test_solve_dual_matches_projected_gradient_oracle():
    # minimize sum of rho/2 (z - p)^2 + lam z over antisymmetric z,
    # by plain projected gradient, independent of the closed form
    rng = np.random.default_rng(3)
    rho = 0.6
    p = random_trades(rng, 3)
    dual = random_dual(rng, 3)
    z = np.zeros_like(p)
    step = 0.9 / rho
    for _ in range(400):
        grad = rho * (z - p) + dual.lam
        z = z - step * grad
        z = (z - z.transpose(1, 0, 2)) / 2.0
    out = solve_dual(p, dual, rho)
    assert np.max(np.abs(out.p_aux - z)) <= 1e-9


def test_update_multipliers_examples():
    dual = DualState.zeros(2)
    p = np.zeros((2, 2, T))
    aux = np.zeros((2, 2, T))
    aux[0, 1, 5] = 0.5
    aux[1, 0, 5] = -0.5
    stepped = DualState(p_aux=aux, lam=dual.lam, iteration=dual.iteration)
    out = update_multipliers(stepped, p, rho=2.0)
    assert out.lam[0, 1, 5] == 1.0
    assert out.lam[1, 0, 5] == -1.0
    assert out.lam[0, 1, 4] == 0.0
    assert out.iteration == dual.iteration + 1

    # consistent submissions leave the multipliers alone
    consistent = np.zeros((2, 2, T))
    consistent[0, 1] = 0.25
    consistent[1, 0] = -0.25
    same = update_multipliers(solve_dual(consistent, dual, rho=2.0), consistent, rho=2.0)
    assert np.array_equal(same.lam, np.zeros_like(same.lam))


def test_residual_examples():
    dual = DualState.zeros(2)
    p = np.zeros((2, 2, T))
    assert residual(p, dual) == 0.0

    aux = np.zeros((2, 2, T))
    aux[0, 1, 7] = 3.0
    aux[1, 0, 7] = -3.0
    dual3 = DualState(p_aux=aux, lam=np.zeros((2, 2, T)), iteration=0)
    assert residual(p, dual3) == pytest.approx(6.0, abs=1e-15)


def test_residual_relabeling_invariance():
    rng = np.random.default_rng(4)
    p = random_trades(rng, 3)
    dual = random_dual(rng, 3)
    perm = [2, 0, 1]
    p_perm = p[np.ix_(perm, perm)]
    dual_perm = DualState(
        p_aux=dual.p_aux[np.ix_(perm, perm)],
        lam=dual.lam[np.ix_(perm, perm)],
        iteration=dual.iteration,
    )
    assert residual(p, dual) == pytest.approx(residual(p_perm, dual_perm), rel=1e-12)


def test_run_admm_single_prosumer():
    profile = solo_profile()
    tariff = make_tariff()
    coord = InProcessCoordinator(1, rho=0.5, epsilon=1e-6)
    result = run_admm([profile], tariff, AdmmConfig(), coord)
    assert result.converged and not result.aborted
    assert result.iterations == 1
    assert np.all(result.trades == 0.0)
    central = solve_centralized([profile], tariff, tol=1e-9)
    assert result.total_cost == pytest.approx(central.total_cost, rel=1e-8)
    assert schedule_violations(profile, result.schedules[0], result.local_trades[0]) == []


def test_run_admm_two_prosumers_matches_centralized(pair_run):
    profiles, tariff, result, central = pair_run
    assert result.converged and not result.aborted
    assert result.iterations < 2000
    gap = abs(result.total_cost - central.total_cost) / abs(central.total_cost)
    assert gap <= 1e-3
    for u, profile in enumerate(profiles):
        assert schedule_violations(profile, result.schedules[u], result.local_trades[u]) == []
    # projected trades are exactly antisymmetric, local rows nearly so
    assert np.array_equal(result.trades[0, 1], -result.trades[1, 0])
    assert np.max(np.abs(result.local_trades[0, 1] + result.local_trades[1, 0])) <= 1e-5


def test_run_admm_residual_tail_below_epsilon(pair_run):
    _, _, result, _ = pair_run
    assert result.history[-1].converged
    assert result.history[-1].residual < 1e-6
    for report in result.history[:-1]:
        assert not report.converged
        assert report.residual >= 1e-6


def test_run_admm_windowed_monotone_residual(pair_run):
    _, _, result, _ = pair_run
    rs = [h.residual for h in result.history]
    for i in range(len(rs) - 50):
        assert rs[i + 50] <= rs[i] * (1 + 1e-9) + 1e-12


def test_run_admm_max_iterations_cap():
    profiles = pair_profiles()
    tariff = make_tariff()
    coord = InProcessCoordinator(2, rho=0.5, epsilon=1e-6)
    result = run_admm(profiles, tariff, AdmmConfig(max_iterations=3), coord)
    assert not result.converged and not result.aborted
    assert result.iterations == 3


def test_large_rho_kills_trades():
    profiles = pair_profiles()
    tariff = make_tariff()
    prob = build_primal(profiles[0], tariff, DualState.zeros(2), rho=1e6, u_index=0)
    sol = solve_qp(prob)
    assert sol.status is QpStatus.OPTIMAL
    _, p_row = extract_schedule(sol.x, VariableMap(0, 2))
    assert np.max(np.abs(p_row)) <= 1e-3


def test_lambda_sign_convention_mirror():
    """Flipping the multiplier sign in both the primal term and the update
    produces identical trades and exactly negated multipliers."""
    profiles = pair_profiles()
    tariff = make_tariff()
    rho = 0.5
    num = len(profiles)
    vmaps = [VariableMap(u, num) for u in range(num)]
    zero = DualState.zeros(num)
    solvers_s = [
        CachedQpSolver(build_primal(profiles[u], tariff, zero, rho, u_index=u))
        for u in range(num)
    ]
    solvers_m = [
        CachedQpSolver(build_primal(profiles[u], tariff, zero, rho, u_index=u))
        for u in range(num)
    ]
    aux_s = np.zeros((num, num, T))
    lam_s = np.zeros((num, num, T))
    aux_m = np.zeros((num, num, T))
    lam_m = np.zeros((num, num, T))
    for k in range(6):
        p_s = np.zeros((num, num, T))
        p_m = np.zeros((num, num, T))
        for u in range(num):
            q_s = primal_linear_term(profiles[u], tariff, vmaps[u], rho, aux_s[u], lam_s[u])
            _, p_s[u] = extract_schedule(solvers_s[u].solve(q=q_s).x, vmaps[u])
            # mirrored convention carries +lam p, so feed the negated state
            q_m = primal_linear_term(profiles[u], tariff, vmaps[u], rho, aux_m[u], -lam_m[u])
            _, p_m[u] = extract_schedule(solvers_m[u].solve(q=q_m).x, vmaps[u])
        assert np.array_equal(p_s, p_m)
        d_s = solve_dual(p_s, DualState(aux_s, lam_s, k), rho)
        aux_s = d_s.p_aux
        lam_s = update_multipliers(d_s, p_s, rho).lam
        d_m = solve_dual(p_m, DualState(aux_m, -lam_m, k), rho)
        aux_m = d_m.p_aux
        lam_m = lam_m - rho * (aux_m - p_m)
        assert np.array_equal(aux_s, aux_m)
        assert np.array_equal(lam_m, -lam_s)


def test_coordinator_dual_path_matches_float_ops():
    # one round through the contract-backed port vs the float closed forms
    profiles = pair_profiles()
    tariff = make_tariff()
    rho = 0.5
    coord = InProcessCoordinator(2, rho=rho, epsilon=1e-6)
    rng = np.random.default_rng(5)
    p = random_trades(rng, 2, scale=2.0)
    for u in range(2):
        coord.submit_trades(u, 0, p[u])
    quantized = np.array(
        [np.asarray(quantize_trade_row(p[u], u), dtype=float) / 1e9 for u in range(2)]
    )
    d = solve_dual(quantized, DualState.zeros(2), rho)
    lam = update_multipliers(d, quantized, rho).lam
    view0 = coord.read_duals(0)
    assert view0.iteration == 1
    assert np.max(np.abs(view0.p_aux_row - d.p_aux[0])) <= 1e-9 + 1e-12
    assert np.max(np.abs(view0.lam_row - lam[0])) <= 1e-9 + 1e-12


def test_centralized_flexible_only_analytic():
    # no renewable, no usable battery, no peak charge: flexible load sits
    # exactly at preference and cost is alpha times total energy
    tariff = make_tariff(beta=0.0, pi_as=flat(0.0))
    profile = ProsumerProfile(
        id=0,
        inflexible=flat(1.0),
        preferred_flexible=bell(12.0, center=19.0, width=3.0),
        renewable_avail=np.zeros(T),
        battery=BatterySpec(capacity=0.0),
    )
    out = solve_centralized([profile], tariff)
    expect = tariff.alpha * (profile.inflexible.sum() + profile.preferred_flexible.sum())
    assert out.total_cost == pytest.approx(expect, abs=1e-5)
    assert np.allclose(out.schedules[0].l_fl, profile.preferred_flexible, atol=1e-4)


def test_centralized_free_surplus_never_raises_cost():
    profiles = pair_profiles()
    tariff = make_tariff()
    base = solve_centralized(profiles, tariff)
    extra = ProsumerProfile(id=2, inflexible=np.zeros(T), preferred_flexible=np.zeros(T),
                            renewable_avail=bell(20.0, center=12.0), battery=BatterySpec())
    bigger = solve_centralized(profiles + [extra], tariff)
    assert bigger.total_cost <= base.total_cost + 1e-6


def test_centralized_trades_respect_reciprocity(pair_run):
    _, _, _, central = pair_run
    assert np.max(np.abs(central.trades[0, 1] + central.trades[1, 0])) <= 1e-6


def test_centralized_reports_infeasible(monkeypatch):
    # valid profiles always admit a grid-only schedule, so force the status
    def fake_solve(problem, tol, max_iter):
        return QpSolution(
            x=np.zeros(problem.n), objective=0.0, status=QpStatus.INFEASIBLE,
            iterations=1, primal_residual=1.0, dual_residual=1.0,
        )

    monkeypatch.setattr(central_mod, "solve_qp", fake_solve)
    with pytest.raises(InfeasibleScenario):
        solve_centralized([solo_profile()], make_tariff())


def test_run_admm_requires_prosumers():
    with pytest.raises(AdmmError):
        run_admm([], make_tariff(), AdmmConfig(), InProcessCoordinator(1, 0.5, 1e-6))


def test_balance_holds_each_iteration(pair_run):
    profiles, _, result, _ = pair_run
    for u, profile in enumerate(profiles):
        res = balance_residual(profile, result.schedules[u], result.local_trades[u])
        assert np.max(np.abs(res)) <= 1e-6
