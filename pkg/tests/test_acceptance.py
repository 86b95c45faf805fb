"""Acceptance criteria, one printed PASS/FAIL line each.

Tolerances are the specified ones; nothing here is tuned to the results.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from pwlcone import arclength as al
from pwlcone import bench, cli
from pwlcone import graphstyle as gs
from pwlcone.cone import fsp_sweep, solve_cone, solve_elementary_cone
from pwlcone.flow import half_map_minus, half_map_plus, poincare_map_k
from pwlcone.system import Region, assemble_state_space, no_sliding_diagnostics, vector_field

MU_TARGET = 0.8066
OMEGA_1 = np.sqrt(2 - 2 * np.cos(np.pi / 7))


@pytest.fixture
def emit(capsys):
    def _emit(num, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {num} {'PASS' if ok else 'FAIL'}: {detail}")

    return _emit


def _ss(kn, c=0.0, cn=0.0):
    return assemble_state_space(bench.make_chain_3dof(kn, c, cn))


def test_criterion_1_sdof_oracle(emit):
    t0 = time.perf_counter()
    ss = assemble_state_space(bench.make_sdof(3.0))
    sol = solve_elementary_cone(ss)
    rt = time.perf_counter() - t0
    err_t = np.abs(sol.times - [np.pi, np.pi / 2]).max()
    err_mu = abs(sol.mu - 1)
    err_w = abs(sol.omega - 4 / 3)
    ok = err_t <= 1e-10 and err_mu <= 1e-10 and err_w <= 1e-10 and rt < 1.0
    emit(1, ok, f"|t - (pi, pi/2)| = {err_t:.2e}, |mu - 1| = {err_mu:.2e}, |omega - 4/3| = {err_w:.2e}, {rt:.2f} s")
    assert ok


def test_criterion_2_damped_multiplier(emit):
    t0 = time.perf_counter()
    ss = _ss(10.0, 0.0295)
    sol = bench.damped_cone_10()
    curve = al.solve_generating_curve(ss, sol, method="shooting", n_harmonics=12)
    mu = al.multiplier_line_integral(ss, curve)
    y, _ = poincare_map_k(ss, sol.xi, sol.k)
    mu_map = np.linalg.norm(y) / np.linalg.norm(sol.xi)
    rt = time.perf_counter() - t0
    hb = al.solve_generating_curve(ss, sol, method="hbm", n_harmonics=12)
    mu_hb = al.multiplier_line_integral(ss, hb)
    ok = abs(mu - MU_TARGET) <= 5e-4 and abs(mu - mu_map) <= 1e-5 and rt < 30
    emit(2, ok, f"mu = {mu:.10f} (target {MU_TARGET}), |mu - map ratio| = {abs(mu - mu_map):.2e}, {rt:.1f} s; "
         f"info: pure N_h = 12 Fourier HBM mu = {mu_hb:.6f}, cone closes after k = {sol.k} contacts")
    assert ok


def test_criterion_3_graphstyle_success(emit):
    t0 = time.perf_counter()
    ss = _ss(1.5)
    sol = bench.conservative_branch_cone(1.5)
    sel = gs.MasterSelection.switching_dof(ss)
    curve = gs.solve_generating_curve_hbm(ss, sel, 20, reference=sol)
    assert isinstance(curve, gs.ThetaGeneratingCurve)
    res = curve.report.residual_norm
    err, _ = bench.gs_rom_error(ss, curve, sol.T, periods=5)
    rt = time.perf_counter() - t0
    th = 2 * np.pi * np.arange(512) / 512
    pw = np.abs(gs.geometry_ode_residual(ss, sel, curve, th)).max()
    ok = curve.report.converged and res <= 1e-8 and err <= 1e-3 and rt < 30
    emit(3, ok, f"HBM residual = {res:.2e}, ROM master sup-error over 5 periods = {err:.3e} (bound 1e-3), {rt:.1f} s; "
         f"info: pointwise geometry residual at 512 angles = {pw:.2e}")
    assert ok


def test_criterion_4_fold_detection(emit, tmp_path):
    t0 = time.perf_counter()
    code = cli.main(["graphstyle", "--bench", "chain3", "--kn", "10", "--out", str(tmp_path)])
    ss = _ss(10.0)
    d = gs.diagnose_failures(ss, gs.MasterSelection.switching_dof(ss), bench.conservative_branch_cone(10.0))
    rt = time.perf_counter() - t0
    rate = d.evidence.get("abs_theta_rate", np.inf)
    ok = code == 2 and d.kind == "fold_point" and rate <= 1e-8 and rt < 10
    emit(4, ok, f"exit code {code}, diagnosis {d.kind}, |Theta| = {rate:.2e} at theta* = {d.evidence.get('theta_star', np.nan):.4f}, {rt:.1f} s")
    assert ok


def _invariance(ss, curve, sol, decay=None):
    x0 = al.reconstruct_state(curve, al.ReducedState(1.0, 0.3 * curve.L))
    t_end = np.log(decay) / -np.log(sol.mu) * sol.T if decay else 5 * sol.T
    from pwlcone.flow import simulate

    return al.invariance_distance(ss, curve, simulate(ss, x0, t_end))


def test_criterion_5_arclength_robustness(emit):
    t0 = time.perf_counter()
    lines, ok = [], True
    for label, ss, sol, decay in (
        ("conservative", _ss(10.0), bench.conservative_branch_cone(10.0), None),
        ("damped", _ss(10.0, 0.0295), bench.damped_cone_10(), 10.0),
    ):
        curve = al.solve_generating_curve(ss, sol, method="shooting", n_harmonics=12)
        dg = curve.diagnostics
        inv = _invariance(ss, curve, sol, decay)
        ok &= dg["closure"] <= 1e-8 and dg["sphere_drift"] <= 1e-8 and inv <= 1e-4
        lines.append(f"{label}: closure {dg['closure']:.1e}, drift {dg['sphere_drift']:.1e}, invariance {inv:.1e}")
    rt = time.perf_counter() - t0
    ok &= rt < 60
    emit(5, ok, "; ".join(lines) + f", {rt:.1f} s")
    assert ok


def test_criterion_6_discontinuous(emit):
    t0 = time.perf_counter()
    ss = _ss(2.5377, 0.0, 1.0)
    sol = solve_elementary_cone(ss)
    curve = al.solve_generating_curve(ss, sol, method="shooting", n_harmonics=12)
    err, (t, r, s, X, tr) = bench.al_rom_error(ss, curve, sol, decay=10.0, dof=5)
    ev = np.flatnonzero(tr.event_flag == 1)
    kink = np.abs(X[5, ev] - tr.x[ev, 5]).max() / np.abs(tr.x[:, 5]).max()
    rt = time.perf_counter() - t0
    ok = curve.diagnostics["closure"] <= 1e-8 and err <= 5e-3 and rt < 60
    emit(6, ok, f"y3 relative sup-error over 10x decay = {err:.2e}, at {ev.size} event samples = {kink:.2e}, {rt:.1f} s")
    assert ok


def test_criterion_7_internal_resonance(emit):
    t0 = time.perf_counter()
    kn, sol = bench.scan_internal_resonance()
    ss = _ss(kn)
    worst = max(np.linalg.norm(poincare_map_k(ss, xi, 4)[0] - sol.mu * xi) for xi in sol.xi_rays)
    d = gs.diagnose_failures(ss, gs.MasterSelection.switching_dof(ss), sol)
    rt = time.perf_counter() - t0
    ok = sol.k == 4 and 0.015 <= kn <= 0.021 and worst <= 1e-7 and d.kind == "multi_valued" and rt < 60
    emit(7, ok, f"k_n/k = {kn}, k = {sol.k}, max |P4(xi_j) - mu xi_j| = {worst:.1e}, diagnosis {d.kind}, {rt:.1f} s")
    assert ok


def test_criterion_8_property_suites(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    parts = {}

    # homogeneity of field, half-maps and return times
    ss = _ss(1.5, 0.1, 0.5)
    worst = 0.0
    n_ok = 0
    while n_ok < 100:
        x = rng.standard_normal(6)
        beta = 10 ** rng.uniform(-2, 2)
        f = vector_field(ss, x)
        worst = max(worst, np.linalg.norm(vector_field(ss, beta * x) - beta * f) / (beta * np.linalg.norm(f)))
        xi = x - (ss.n_exit @ x) * ss.n_exit
        if ss.n_alpha @ (ss.A_plus @ xi) >= -0.05 * np.linalg.norm(xi):
            continue
        eta, tm = half_map_minus(ss, xi)
        etab, tmb = half_map_minus(ss, beta * xi)
        y, tp = half_map_plus(ss, eta)
        yb, tpb = half_map_plus(ss, etab)
        worst = max(worst, np.linalg.norm(etab - beta * eta) / (beta * np.linalg.norm(eta)),
                    np.linalg.norm(yb - beta * y) / (beta * np.linalg.norm(y)), abs(tmb - tm), abs(tpb - tp))
        n_ok += 1
    parts["homogeneity"] = (worst <= 1e-10, f"homogeneity {worst:.1e}")

    # no-sliding diagnostics
    ssd = _ss(2.5377, 0.0, 1.0)
    wp, wj = 0.0, 0.0
    for _ in range(100):
        x = rng.standard_normal(6)
        x[2], x[5] = 0.0, abs(x[5]) + 0.1
        rep = no_sliding_diagnostics(ssd, x)
        assert rep.boundary is Region.SigmaAlpha
        wp = max(wp, abs(rep.projection_minus - rep.projection_plus))
        z = rng.standard_normal(6)
        z[2] = abs(z[2]) + 0.1
        z[5] = -2.5377 * z[2]
        wj = max(wj, no_sliding_diagnostics(ssd, z).field_jump / np.linalg.norm(z))
    parts["no_sliding"] = (wp <= 1e-12 and wj <= 1e-12, f"Sigma_alpha projections {wp:.1e}, Sigma_beta jump {wj:.1e}")

    # conservative multiplier
    mus = [p.mu for p in fsp_sweep(bench.make_chain_3dof, [1e-3, 0.1, 1.5, 3.0, 10.0])]
    mus.append(bench.internal_resonance_cone().mu)
    dm = float(np.abs(np.array(mus) - 1).max())
    parts["conservative_mu"] = (dm <= 1e-8, f"conservative |mu - 1| {dm:.1e}")

    # theta / Chebyshev evaluation
    ss15 = _ss(1.5)
    sel = gs.MasterSelection.switching_dof(ss15)
    curves = {}
    for c in (0.0, 0.5, 1.0):
        s_ = _ss(1.5, c)
        sol = bench.conservative_branch_cone(1.5) if c == 0 else solve_cone(s_, bench.conservative_branch_cone(1.5))
        curves[c] = (s_, sol, gs.solve_generating_curve_hbm(s_, sel, 20, reference=sol))
    we = 0.0
    for _, _, cv in curves.values():
        r = rng.uniform(0.1, 10, 1000)
        th = rng.uniform(-np.pi, np.pi, 1000)
        we = max(we, np.abs(gs.evaluate_slaves_uv(cv, r * np.cos(th), r * np.sin(th)) - r * cv.slaves(th)).max() / r.max())
    parts["chebyshev"] = (we <= 1e-12, f"theta/Chebyshev {we:.1e}")

    # ln mu: graph-style theta integral vs arc-length line integral
    diffs = []
    for c, (s_, sol, cv) in curves.items():
        ac = al.solve_generating_curve(s_, sol, method="shooting")
        diffs.append((c, abs(gs.log_multiplier(s_, cv) - np.log(al.multiplier_line_integral(s_, ac)))))
    dl = max(d for _, d in diffs)
    parts["ln_mu"] = (dl <= 1e-5, "ln mu gs vs al at N_h = 20: " + ", ".join(f"c={c:g} {d:.1e}" for c, d in diffs))

    rt = time.perf_counter() - t0
    ok = all(p[0] for p in parts.values()) and rt < 120
    failed = [k for k, p in parts.items() if not p[0]]
    emit(8, ok, "; ".join(p[1] for p in parts.values()) + f"; {rt:.1f} s" + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok


def test_criterion_9_fsp_branch(emit):
    t0 = time.perf_counter()
    pts = fsp_sweep(bench.make_chain_3dof, list(bench.FSP_VALUES))
    om = np.array([p.omega for p in pts])
    rt = time.perf_counter() - t0
    d0 = abs(om[0] - OMEGA_1)
    dmin = float(np.diff(om).min())
    ok = d0 <= 1e-4 and dmin >= 0 and rt < 120
    emit(9, ok, f"|omega(k_n = {bench.FSP_VALUES[0]:g}) - omega_1| = {d0:.2e}, min increment {dmin:.2e}, "
         f"omega(10)/omega_1 = {om[-1] / OMEGA_1:.4f}, {rt:.1f} s")
    assert ok
