"""Adjoint-tape correctness and the worst-case perturbation search.

The load-bearing oracles are independent of the implementation: central
finite differences through the whole solver, per-rule finite differences on
the two nonlinear primitives, and a dense hand-composed affine map for a
configuration in which every branch is inactive.
"""

import numpy as np
import pytest

from nestanet.nesta import t_mu
from nestanet.operators import (
    AnalysisOperator,
    ImageGrid,
    MaskDensityConfig,
    MeasurementOperator,
    generate_mask,
)
from nestanet.restart import RestartSchedule, restarted_run, schedule_from_inner_iterations
from nestanet.stability import (
    RULES,
    PerturbConfig,
    TapeOp,
    backward,
    branch_signature,
    forward_with_tape,
    perturbation_to_image,
    replay,
    tape_bytes_estimate,
    vjp_solver,
    worst_case_perturbation,
)

OP_KINDS = {
    "analysis",
    "tmu",
    "synthesis",
    "lincomb2",
    "residual",
    "ball_gate",
    "meas_adjoint",
    "gated_add",
    "convex",
}


def _instance(seed, side=16, restarts=2, inner=5, frac=0.4, eta=0.05):
    rng = np.random.default_rng(seed)
    mask = generate_mask(MaskDensityConfig(side=side, target_m=int(frac * side * side), seed=seed))
    A = MeasurementOperator(mask)
    W = AnalysisOperator(side=side, weight=2.5)
    y = rng.standard_normal(A.m) + 1j * rng.standard_normal(A.m)
    sched = schedule_from_inner_iterations(
        inner, r=0.25, zeta=1e-9, eps0=5.0, restarts=restarts,
        beta=W.beta, n_coefficients=W.n_coefficients,
    )
    return rng, A, W, y, eta, sched


def _values_equal(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return a == b
    return a.tobytes() == b.tobytes()


class TestTapeStructure:
    def test_rules_cover_exactly_the_recorded_kinds(self):
        _, A, W, y, eta, sched = _instance(1, side=8, restarts=0, inner=1)
        _, tape = forward_with_tape(y, A, W, sched, eta)
        assert {op.kind for op in tape.ops} == OP_KINDS
        assert set(RULES) == OP_KINDS

    def test_forward_matches_plain_run_bitwise(self):
        _, A, W, y, eta, sched = _instance(2)
        out, _ = forward_with_tape(y, A, W, sched, eta)
        plain, _ = restarted_run(ImageGrid.zeros(A.side), A, W, y, eta, sched)
        assert out.data.tobytes() == plain.data.tobytes()

    def test_op_count_is_thirteen_per_iteration(self):
        _, A, W, y, eta, sched = _instance(3, restarts=1, inner=2)
        _, tape = forward_with_tape(y, A, W, sched, eta)
        blocks = (sched.restarts + 1) * (sched.inner_iterations + 1)
        assert len(tape.ops) == 13 * blocks

    def test_replay_reproduces_every_value_bitwise(self):
        _, A, W, y, eta, sched = _instance(4)
        _, tape = forward_with_tape(y, A, W, sched, eta)
        vals = replay(tape)
        assert len(vals) == len(tape.values)
        for got, want in zip(vals, tape.values):
            assert _values_equal(got, want)

    def test_identical_inputs_identical_tapes(self):
        _, A, W, y, eta, sched = _instance(5, side=8, restarts=1, inner=1)
        _, tape1 = forward_with_tape(y, A, W, sched, eta)
        _, tape2 = forward_with_tape(y, A, W, sched, eta)
        assert tape1.ops == tape2.ops
        for a, b in zip(tape1.values, tape2.values):
            assert _values_equal(a, b)

    def test_memory_guard(self):
        _, A, W, y, eta, sched = _instance(6, side=8, restarts=0, inner=1)
        assert tape_bytes_estimate(A, W, sched) > 1000
        with pytest.raises(MemoryError):
            forward_with_tape(y, A, W, sched, eta, max_bytes=1000)
        cfg = PerturbConfig(eta_tilde=0.1, trials=1, steps=1, seed=0)
        with pytest.raises(MemoryError):
            worst_case_perturbation(y, A, W, sched, eta, cfg, max_bytes=1000)

    def test_branch_signature_changes_with_smoothing(self):
        _, A, W, y, eta, sched = _instance(7, side=8, restarts=0, inner=1)
        _, tape1 = forward_with_tape(y, A, W, sched, eta)
        assert branch_signature(tape1) == branch_signature(tape1)
        loose = RestartSchedule(
            r=sched.r, delta=sched.delta, zeta=sched.zeta, eps0=sched.eps0,
            restarts=0, inner_iterations=1, mu_values=(1e9,),
            eps_values=sched.eps_values, mu_floor=sched.mu_floor, clamped=False,
        )
        _, tape2 = forward_with_tape(y, A, W, loose, eta)
        assert branch_signature(tape1) != branch_signature(tape2)


class TestAdjointRules:
    """Per-rule finite-difference oracles for the two nonlinear primitives."""

    def test_huber_gradient_rule_matches_fd(self):
        rng = np.random.default_rng(10)
        mu = 0.7
        t = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        assert np.abs(np.abs(t) - mu).min() > 1e-3, "stencil must stay on one branch"
        c = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        op = TapeOp("tmu", (0,), (1,), (mu,))
        vals = [t, None]
        cot = {1: c}
        RULES["tmu"].backward(None, op, vals, cot)
        tbar = cot[0]

        def phi(tt):
            return float(np.sum(np.real(np.conj(c) * t_mu(tt, mu))))

        delta = 1e-7
        for j in range(0, 24, 5):
            for unit, part in ((1.0, "real"), (1j, "imag")):
                step = np.zeros(24, complex)
                step[j] = delta * unit
                fd = (phi(t + step) - phi(t - step)) / (2 * delta)
                an = tbar[j].real if part == "real" else tbar[j].imag
                assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))

    def test_ball_gate_rule_matches_fd_when_active(self):
        rng = np.random.default_rng(11)
        mask = generate_mask(MaskDensityConfig(side=4, target_m=6, seed=0))
        A = MeasurementOperator(mask)
        eta = 0.5
        r = rng.standard_normal(A.m) + 1j * rng.standard_normal(A.m)
        rn = float(np.linalg.norm(r))
        assert rn > eta
        lam = max(0.0, rn / eta - 1.0)

        class _Tape:
            pass

        tape = _Tape()
        tape.A, tape.eta = A, eta
        op = TapeOp("ball_gate", (0,), (1,), (rn, lam))
        vals = [r, None]
        cot = {1: 1.0}
        RULES["ball_gate"].backward(tape, op, vals, cot)
        rbar = cot[0]

        def sigma_of(rr):
            nn = float(np.linalg.norm(rr))
            ll = max(0.0, nn / eta - 1.0)
            return ll / ((ll + 1.0) * A.nu)

        delta = 1e-7
        for j in range(A.m):
            for unit, part in ((1.0, "real"), (1j, "imag")):
                step = np.zeros(A.m, complex)
                step[j] = delta * unit
                fd = (sigma_of(r + step) - sigma_of(r - step)) / (2 * delta)
                an = rbar[j].real if part == "real" else rbar[j].imag
                assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))

    def test_ball_gate_rule_zero_when_inactive(self):
        mask = generate_mask(MaskDensityConfig(side=4, target_m=6, seed=0))
        A = MeasurementOperator(mask)

        class _Tape:
            pass

        tape = _Tape()
        tape.A, tape.eta = A, 10.0
        r = 0.01 * np.ones(A.m, dtype=complex)
        op = TapeOp("ball_gate", (0,), (1,), (float(np.linalg.norm(r)), 0.0))
        cot = {1: 1.0}
        RULES["ball_gate"].backward(tape, op, [r, None], cot)
        assert 0 not in cot


class TestVjpSolver:
    def test_zero_cotangent_gives_zero_gradient(self):
        _, A, W, y, eta, sched = _instance(20, side=8, restarts=1, inner=2)
        g = vjp_solver(y, np.zeros(A.m, complex), np.zeros(A.n_pixels, complex), A, W, sched, eta)
        assert g.shape == (A.m,)
        assert not g.any()

    def test_all_branches_inactive_matches_dense_affine_map(self):
        # With mu huge and eta huge, one iteration reduces to the linear map
        # x = (I - W W*/beta) z0, independent of the measurements, so the
        # gradient in e must vanish identically.
        rng = np.random.default_rng(21)
        side = 4
        n_pix = side * side
        mask = generate_mask(MaskDensityConfig(side=side, target_m=8, seed=2))
        A = MeasurementOperator(mask)
        W = AnalysisOperator(side=side, weight=2.5)
        sched = RestartSchedule(
            r=0.5, delta=1e-3, zeta=0.0, eps0=1.0, restarts=0, inner_iterations=0,
            mu_values=(1e9,), eps_values=(1.0, 0.5), mu_floor=0.0, clamped=False,
        )
        z0 = ImageGrid(side, rng.standard_normal(n_pix) + 1j * rng.standard_normal(n_pix))
        y = rng.standard_normal(A.m) + 1j * rng.standard_normal(A.m)
        eta = 1e9

        dense = np.empty((n_pix, n_pix), dtype=complex)
        for j in range(n_pix):
            basis = np.zeros(n_pix, dtype=complex)
            basis[j] = 1.0
            dense[:, j] = basis - W.synthesize(W.analyze(basis)) / W.beta
        out, tape = forward_with_tape(y, A, W, sched, eta, x_init=z0)
        expected = dense @ z0.data
        assert np.linalg.norm(out.data - expected) <= 1e-12 * np.linalg.norm(expected)
        for op in tape.ops:
            if op.kind == "ball_gate":
                assert op.saved[1] == 0.0

        cot = rng.standard_normal(n_pix) + 1j * rng.standard_normal(n_pix)
        g = vjp_solver(y, np.zeros(A.m, complex), cot, A, W, sched, eta, x_init=z0)
        assert np.all(g == 0)

    @pytest.mark.parametrize("seed", [31, 32, 33])
    def test_vjp_matches_central_differences(self, seed):
        rng, A, W, y, eta, sched = _instance(seed, side=8, restarts=1, inner=3)
        cot = rng.standard_normal(A.n_pixels) + 1j * rng.standard_normal(A.n_pixels)
        e0 = 1e-3 * (rng.standard_normal(A.m) + 1j * rng.standard_normal(A.m))
        grad = vjp_solver(y, e0, cot, A, W, sched, eta)

        def phi(e):
            out, tape = forward_with_tape(y + e, A, W, sched, eta)
            return float(np.sum(np.real(np.conj(cot) * out.data))), branch_signature(tape)

        _, sig0 = phi(e0)
        delta = 1e-6 * max(1.0, float(np.abs(y).max()))
        coords = rng.choice(A.m, size=6, replace=False)
        probes = skips = 0
        for j in coords:
            for unit, part in ((1.0, "real"), (1j, "imag")):
                probes += 1
                step = np.zeros(A.m, complex)
                step[j] = delta * unit
                up, sig_up = phi(e0 + step)
                dn, sig_dn = phi(e0 - step)
                if sig_up != sig0 or sig_dn != sig0:
                    skips += 1
                    continue
                fd = (up - dn) / (2 * delta)
                an = grad[j].real if part == "real" else grad[j].imag
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
                assert rel < 1e-5, f"coordinate {j} ({part}): fd {fd}, adjoint {an}"
        assert skips <= probes // 4

    def test_dimension_mismatch_raises(self):
        _, A, W, y, eta, sched = _instance(35, side=8, restarts=0, inner=1)
        with pytest.raises(ValueError):
            vjp_solver(y[:-1], np.zeros(A.m - 1, complex), np.zeros(A.n_pixels), A, W, sched, eta)


class TestWorstCase:
    def test_feasibility_and_monotone_envelope(self):
        _, A, W, y, eta, sched = _instance(40, side=8, restarts=0, inner=2)
        cfg = PerturbConfig(eta_tilde=0.05, trials=3, steps=4, step_size=1.0, seed=7)
        res = worst_case_perturbation(y, A, W, sched, eta, cfg)
        assert np.linalg.norm(res.e_best) <= cfg.eta_tilde * (1 + 1e-12)
        assert len(res.trial_objectives) == cfg.trials
        flat_best = max(max(tr) for tr in res.trial_objectives if tr)
        assert res.objective == flat_best
        for trace in res.trial_objectives:
            assert len(trace) == cfg.steps + 1
            running = -np.inf
            for value in trace:
                running = max(running, value)
                assert running >= value
        assert res.trial_objectives[res.trial][res.step] == res.objective

    def test_ties_prefer_lowest_trial(self):
        _, A, W, y, eta, sched = _instance(41, side=8, restarts=0, inner=1)
        cfg = PerturbConfig(eta_tilde=0.05, trials=4, steps=2, step_size=1.0, seed=3)
        res = worst_case_perturbation(y, A, W, sched, eta, cfg)
        for t in range(res.trial):
            assert max(res.trial_objectives[t]) < res.objective

    def test_seeded_determinism_and_thread_independence(self):
        _, A, W, y, eta, sched = _instance(42, side=8, restarts=0, inner=2)
        cfg = PerturbConfig(eta_tilde=0.03, trials=3, steps=3, step_size=2.0, seed=11)
        res1 = worst_case_perturbation(y, A, W, sched, eta, cfg)
        res2 = worst_case_perturbation(y, A, W, sched, eta, cfg)
        res3 = worst_case_perturbation(y, A, W, sched, eta, cfg, threads=3)
        assert res1.e_best.tobytes() == res2.e_best.tobytes() == res3.e_best.tobytes()
        assert res1.objective == res2.objective == res3.objective
        assert (res1.trial, res1.step) == (res3.trial, res3.step)

    def test_tiny_radius_limit(self):
        _, A, W, y, eta, sched = _instance(43, side=8, restarts=0, inner=1)
        cfg = PerturbConfig(eta_tilde=1e-10, trials=2, steps=2, step_size=1.0, seed=1)
        res = worst_case_perturbation(y, A, W, sched, eta, cfg)
        assert np.linalg.norm(res.e_best) <= cfg.eta_tilde * (1 + 1e-12)
        assert res.objective <= 1e-12

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_measurements_abort_with_diagnostics(self):
        _, A, W, y, eta, sched = _instance(44, side=8, restarts=0, inner=1)
        bad = y.copy()
        bad[0] = np.nan
        cfg = PerturbConfig(eta_tilde=0.05, trials=2, steps=2, step_size=1.0, seed=5)
        with pytest.raises(RuntimeError, match="nonfinite objective"):
            worst_case_perturbation(bad, A, W, sched, eta, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PerturbConfig(eta_tilde=0.0)
        with pytest.raises(ValueError):
            PerturbConfig(eta_tilde=1.0, trials=0)
        with pytest.raises(ValueError):
            PerturbConfig(eta_tilde=1.0, steps=0)
        with pytest.raises(ValueError):
            PerturbConfig(eta_tilde=1.0, step_size=0.0)


class TestPerturbationImage:
    def test_zero_maps_to_zero(self):
        mask = generate_mask(MaskDensityConfig(side=8, target_m=20, seed=1))
        A = MeasurementOperator(mask)
        img = perturbation_to_image(np.zeros(A.m, complex), A)
        assert not img.data.any()

    def test_right_inverse_and_norm_scaling(self):
        rng = np.random.default_rng(50)
        mask = generate_mask(MaskDensityConfig(side=16, target_m=70, seed=2))
        A = MeasurementOperator(mask)
        e = rng.standard_normal(A.m) + 1j * rng.standard_normal(A.m)
        img = perturbation_to_image(e, A)
        back = A.apply(img.data)
        assert np.linalg.norm(back - e) <= 1e-12 * np.linalg.norm(e)
        assert abs(np.linalg.norm(img.data) - np.linalg.norm(e) / np.sqrt(A.nu)) <= 1e-12 * np.linalg.norm(e)

    def test_length_mismatch_raises(self):
        mask = generate_mask(MaskDensityConfig(side=8, target_m=20, seed=1))
        A = MeasurementOperator(mask)
        with pytest.raises(ValueError):
            perturbation_to_image(np.zeros(A.m + 1, complex), A)
