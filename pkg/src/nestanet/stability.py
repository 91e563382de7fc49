"""Worst-case measurement perturbations via hand-derived reverse-mode adjoints.

The forward solve is recorded onto a tape of primitive operations (frame
analysis/synthesis, Huber gradients with their branch masks, residuals,
feasibility gates, gated updates, convex mixing).  Each primitive has a
registered vector-Jacobian rule, so the gradient of a real functional of the
reconstruction with respect to the measurement vector comes from one reverse
sweep.  Complex vectors are treated as pairs of real coordinates throughout;
cotangents use the real pairing <a, b> = Re(a^H b).

Kink conventions at nondifferentiable points (all measure-zero):
the Huber gradient at |t| = mu takes the quadratic-branch derivative, the
feasibility gate max(0, .) at 0 takes derivative 0, and the residual norm at
0 takes gradient 0.  Any fixed choice gives a valid ascent direction almost
everywhere; branch masks are exposed through branch_signature so
finite-difference checks can skip stencils that cross a kink.

The worst-case search runs projected gradient ascent on
||N(y + e) - N(y)||^2 over the ball ||e|| <= eta_tilde, restarting from
random initial perturbations; N(y) is evaluated once and treated as a
constant.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .nesta import IterationRecorder
from .operators import AnalysisOperator, ImageGrid, MeasurementOperator, image_vector
from .restart import RestartSchedule, restarted_run

__all__ = [
    "DEFAULT_TAPE_BUDGET",
    "TapeOp",
    "TapeRule",
    "RULES",
    "AdjointTape",
    "TapeRecorder",
    "PerturbConfig",
    "WorstCaseResult",
    "tape_bytes_estimate",
    "forward_with_tape",
    "replay",
    "backward",
    "branch_signature",
    "vjp_solver",
    "worst_case_perturbation",
    "perturbation_to_image",
]

DEFAULT_TAPE_BUDGET = 4 * 2**30


@dataclass(frozen=True)
class TapeOp:
    """One primitive: value slots consumed/produced plus saved parameters."""

    kind: str
    inputs: tuple
    outputs: tuple
    saved: tuple = ()


@dataclass(frozen=True)
class TapeRule:
    """Forward replay and cotangent accumulation for one primitive kind."""

    forward: object
    backward: object


@dataclass
class AdjointTape:
    """Ordered primitive record of one solve, with every intermediate value.

    Slot 0 holds the measurement vector, slot 1 the initial image; values
    are stored by reference (the kernel never mutates its intermediates).
    """

    A: MeasurementOperator
    Wop: AnalysisOperator
    y: np.ndarray
    eta: float
    values: list = field(default_factory=list)
    ops: list = field(default_factory=list)
    input_slot: int = 0
    init_slot: int = 1
    output_slot: int = -1


def _acc(cot: dict, slot: int, value) -> None:
    if slot in cot:
        cot[slot] = cot[slot] + value
    else:
        cot[slot] = value


def _fwd_analysis(tape, op, vals):
    return (tape.Wop.analyze(vals[op.inputs[0]]),)


def _bwd_analysis(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    _acc(cot, op.inputs[0], tape.Wop.synthesize(c))


def _fwd_tmu(tape, op, vals):
    t = vals[op.inputs[0]]
    mu = op.saved[0]
    mag = np.abs(t)
    denom = np.where(mag <= mu, mu, mag)
    return (t / denom,)


def _bwd_tmu(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    t = vals[op.inputs[0]]
    mu = op.saved[0]
    mag = np.abs(t)
    quad = mag <= mu
    safe = np.where(quad, 1.0, mag)
    # d(t/|t|) pairs to c/|t| - Re(conj(c) t) t / |t|^3 on the saturated branch.
    saturated = c / safe - (np.real(np.conj(c) * t) * t) / (safe * safe * safe)
    _acc(cot, op.inputs[0], np.where(quad, c / mu, saturated))


def _fwd_synthesis(tape, op, vals):
    return (tape.Wop.synthesize(vals[op.inputs[0]]),)


def _bwd_synthesis(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    _acc(cot, op.inputs[0], tape.Wop.analyze(c))


def _fwd_lincomb2(tape, op, vals):
    z, qv_prev, big_g = (vals[i] for i in op.inputs)
    s, sa = op.saved
    return (z - s * big_g, qv_prev - sa * big_g)


def _bwd_lincomb2(tape, op, vals, cot):
    s, sa = op.saved
    c_qx = cot.get(op.outputs[0])
    c_qv = cot.get(op.outputs[1])
    if c_qx is not None:
        _acc(cot, op.inputs[0], c_qx)
        _acc(cot, op.inputs[2], -s * c_qx)
    if c_qv is not None:
        _acc(cot, op.inputs[1], c_qv)
        _acc(cot, op.inputs[2], -sa * c_qv)


def _fwd_residual(tape, op, vals):
    return (vals[op.inputs[1]] - tape.A.apply(vals[op.inputs[0]]),)


def _bwd_residual(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    _acc(cot, op.inputs[1], c)
    _acc(cot, op.inputs[0], -tape.A.adjoint(c))


def _fwd_ball_gate(tape, op, vals):
    r = vals[op.inputs[0]]
    rn = float(np.linalg.norm(r))
    lam = max(0.0, rn / tape.eta - 1.0)
    sigma = lam / ((lam + 1.0) * tape.A.nu)
    return (sigma,)


def _bwd_ball_gate(tape, op, vals, cot):
    c_sigma = cot.get(op.outputs[0])
    if c_sigma is None or c_sigma == 0.0:
        return
    rn, lam = op.saved
    c_lam = c_sigma / ((lam + 1.0) ** 2 * tape.A.nu)
    if lam > 0.0 and rn > 0.0:
        c_rn = c_lam / tape.eta
        _acc(cot, op.inputs[0], (c_rn / rn) * vals[op.inputs[0]])


def _fwd_meas_adjoint(tape, op, vals):
    return (tape.A.adjoint(vals[op.inputs[0]]),)


def _bwd_meas_adjoint(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    _acc(cot, op.inputs[0], tape.A.apply(c))


def _fwd_gated_add(tape, op, vals):
    q, sigma, h = (vals[i] for i in op.inputs)
    return (q + sigma * h,)


def _bwd_gated_add(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    sigma = vals[op.inputs[1]]
    h = vals[op.inputs[2]]
    _acc(cot, op.inputs[0], c)
    _acc(cot, op.inputs[1], float(np.sum(np.real(np.conj(c) * h))))
    _acc(cot, op.inputs[2], sigma * c)


def _fwd_convex(tape, op, vals):
    v, x = vals[op.inputs[0]], vals[op.inputs[1]]
    tau = op.saved[0]
    return (tau * v + (1.0 - tau) * x,)


def _bwd_convex(tape, op, vals, cot):
    c = cot.get(op.outputs[0])
    if c is None:
        return
    tau = op.saved[0]
    _acc(cot, op.inputs[0], tau * c)
    _acc(cot, op.inputs[1], (1.0 - tau) * c)


RULES: dict = {
    "analysis": TapeRule(_fwd_analysis, _bwd_analysis),
    "tmu": TapeRule(_fwd_tmu, _bwd_tmu),
    "synthesis": TapeRule(_fwd_synthesis, _bwd_synthesis),
    "lincomb2": TapeRule(_fwd_lincomb2, _bwd_lincomb2),
    "residual": TapeRule(_fwd_residual, _bwd_residual),
    "ball_gate": TapeRule(_fwd_ball_gate, _bwd_ball_gate),
    "meas_adjoint": TapeRule(_fwd_meas_adjoint, _bwd_meas_adjoint),
    "gated_add": TapeRule(_fwd_gated_add, _bwd_gated_add),
    "convex": TapeRule(_fwd_convex, _bwd_convex),
}


class TapeRecorder(IterationRecorder):
    """Builds the AdjointTape from the iteration kernel's observation hooks.

    Restart warm starts alias the previous final iterate's slot for both the
    new z and the new accumulator, so the reverse sweep merges their
    cotangents without a dedicated boundary rule.
    """

    def __init__(self, A: MeasurementOperator, Wop: AnalysisOperator, y: np.ndarray, eta: float):
        self.tape = AdjointTape(A=A, Wop=Wop, y=y, eta=eta, values=[y, None])
        self._beta = Wop.beta
        self._z_slot = -1
        self._qv_slot = -1
        self._last_x_slot = -1
        self._mu = 0.0
        self._s = 0.0
        self._sa = 0.0
        self._tau = 0.0
        self._t_slot = -1
        self._g_slot = -1
        self._q_slot: dict = {}
        self._r_slot: dict = {}
        self._sigma_slot: dict = {}
        self._h_slot: dict = {}
        self._u_slot: dict = {}

    def _new(self, value) -> int:
        self.tape.values.append(value)
        return len(self.tape.values) - 1

    def _op(self, kind, inputs, outputs, saved=()):
        self.tape.ops.append(TapeOp(kind, tuple(inputs), tuple(outputs), tuple(saved)))

    def begin_restart(self, k: int, mu: float, z0: np.ndarray) -> None:
        if k == 1:
            self.tape.values[self.tape.init_slot] = z0
            self._z_slot = self.tape.init_slot
        else:
            self._z_slot = self._last_x_slot
        self._qv_slot = self._z_slot

    def begin_iteration(self, n: int, mu: float, alpha: float, tau: float) -> None:
        self._mu = mu
        self._s = mu / self._beta
        self._sa = self._s * alpha
        self._tau = tau

    def analysis(self, t: np.ndarray) -> None:
        self._t_slot = self._new(t)
        self._op("analysis", (self._z_slot,), (self._t_slot,))

    def huber_gradient(self, g: np.ndarray) -> None:
        self._g_slot = self._new(g)
        self._op("tmu", (self._t_slot,), (self._g_slot,), (self._mu,))

    def synthesis(self, big_g: np.ndarray) -> None:
        self._big_g_slot = self._new(big_g)
        self._op("synthesis", (self._g_slot,), (self._big_g_slot,))

    def combine_q(self, qx: np.ndarray, qv: np.ndarray) -> None:
        s_qx = self._new(qx)
        s_qv = self._new(qv)
        self._op(
            "lincomb2",
            (self._z_slot, self._qv_slot, self._big_g_slot),
            (s_qx, s_qv),
            (self._s, self._sa),
        )
        self._q_slot = {"x": s_qx, "v": s_qv}
        self._qv_slot = s_qv

    def residual(self, tag: str, r: np.ndarray) -> None:
        self._r_slot[tag] = self._new(r)
        self._op("residual", (self._q_slot[tag], self.tape.input_slot), (self._r_slot[tag],))

    def gate(self, tag: str, rn: float, lam: float, sigma: float) -> None:
        self._sigma_slot[tag] = self._new(sigma)
        self._op("ball_gate", (self._r_slot[tag],), (self._sigma_slot[tag],), (rn, lam))

    def back_projection(self, tag: str, h: np.ndarray) -> None:
        self._h_slot[tag] = self._new(h)
        self._op("meas_adjoint", (self._r_slot[tag],), (self._h_slot[tag],))

    def projected(self, tag: str, u: np.ndarray) -> None:
        self._u_slot[tag] = self._new(u)
        self._op(
            "gated_add",
            (self._q_slot[tag], self._sigma_slot[tag], self._h_slot[tag]),
            (self._u_slot[tag],),
        )

    def combine_z(self, z_next: np.ndarray) -> None:
        s_z = self._new(z_next)
        self._op("convex", (self._u_slot["v"], self._u_slot["x"]), (s_z,), (self._tau,))
        self._z_slot = s_z

    def end_restart(self, k: int, x_star: np.ndarray) -> None:
        self._last_x_slot = self._u_slot["x"]
        self.tape.output_slot = self._last_x_slot


def tape_bytes_estimate(A: MeasurementOperator, Wop: AnalysisOperator, schedule: RestartSchedule) -> int:
    """Tape footprint: per iteration, 2 frame vectors, 8 image vectors, 2 residuals."""
    blocks = (schedule.restarts + 1) * (schedule.inner_iterations + 1)
    n_pix = A.n_pixels
    per_block = 16 * (2 * Wop.n_coefficients + 8 * n_pix + 2 * A.m)
    return blocks * per_block + 16 * (n_pix + A.m)


def forward_with_tape(
    y,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    schedule: RestartSchedule,
    eta: float,
    x_init=None,
    max_bytes: int = DEFAULT_TAPE_BUDGET,
) -> tuple[ImageGrid, AdjointTape]:
    """Run the restarted solver while recording the adjoint tape."""
    estimate = tape_bytes_estimate(A, Wop, schedule)
    if estimate > max_bytes:
        raise MemoryError(
            f"tape estimate {estimate} bytes exceeds the budget {max_bytes}; "
            "reduce restarts/inner iterations or raise max_bytes"
        )
    yy = np.asarray(y, dtype=np.complex128).reshape(-1)
    if x_init is None:
        x_init = ImageGrid.zeros(A.side)
    recorder = TapeRecorder(A, Wop, yy, eta)
    final, _ = restarted_run(x_init, A, Wop, yy, eta, schedule, recorder=recorder)
    return final, recorder.tape


def replay(tape: AdjointTape) -> list:
    """Recompute every op output from the tape inputs; used to audit the record."""
    vals: list = [None] * len(tape.values)
    vals[tape.input_slot] = tape.values[tape.input_slot]
    vals[tape.init_slot] = tape.values[tape.init_slot]
    for op in tape.ops:
        outs = RULES[op.kind].forward(tape, op, vals)
        for slot, value in zip(op.outputs, outs):
            vals[slot] = value
    return vals


def backward(tape: AdjointTape, cotangent) -> tuple[np.ndarray, np.ndarray]:
    """Reverse sweep; returns cotangents of the measurement vector and x_init."""
    seed = image_vector(cotangent, tape.A.side)
    cot: dict = {tape.output_slot: seed}
    for op in reversed(tape.ops):
        RULES[op.kind].backward(tape, op, tape.values, cot)
    e_bar = cot.get(tape.input_slot)
    if e_bar is None:
        e_bar = np.zeros(tape.A.m, dtype=np.complex128)
    init_bar = cot.get(tape.init_slot)
    if init_bar is None:
        init_bar = np.zeros(tape.A.n_pixels, dtype=np.complex128)
    return e_bar, init_bar


def branch_signature(tape: AdjointTape) -> bytes:
    """Packed Huber branch masks and gate activity flags, for kink detection."""
    parts = []
    for op in tape.ops:
        if op.kind == "tmu":
            t = tape.values[op.inputs[0]]
            parts.append(np.packbits(np.abs(t) <= op.saved[0]).tobytes())
        elif op.kind == "ball_gate":
            parts.append(b"\x01" if op.saved[1] > 0.0 else b"\x00")
    return b"".join(parts)


def vjp_solver(
    y,
    e,
    cotangent,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    schedule: RestartSchedule,
    eta: float,
    x_init=None,
    max_bytes: int = DEFAULT_TAPE_BUDGET,
) -> np.ndarray:
    """Gradient of Re<cotangent, solver(y + e)> with respect to e.

    Complex coordinates of e are treated as real pairs; the k-th entry of
    the returned vector holds (d/dRe e_k) + i (d/dIm e_k).
    """
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    e = np.asarray(e, dtype=np.complex128).reshape(-1)
    if y.size != A.m or e.size != A.m:
        raise ValueError(f"y and e must have length m={A.m}")
    _, tape = forward_with_tape(y + e, A, Wop, schedule, eta, x_init=x_init, max_bytes=max_bytes)
    e_bar, _ = backward(tape, cotangent)
    return e_bar


@dataclass(frozen=True)
class PerturbConfig:
    """Ascent-search knobs: ball radius, restarts, step count/size, RNG seed."""

    eta_tilde: float
    trials: int = 400
    steps: int = 150
    step_size: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta_tilde <= 0:
            raise ValueError("eta_tilde must be positive")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass
class WorstCaseResult:
    """Best perturbation found, where it was found, and per-trial traces."""

    e_best: np.ndarray
    objective: float
    trial: int
    step: int
    trial_objectives: tuple
    diagnostics: tuple


def _initial_perturbation(rng: np.random.Generator, m: int, eta_tilde: float) -> np.ndarray:
    """Uniform draw from the ball of radius eta_tilde/sqrt(m) in C^m = R^{2m}."""
    draws = rng.standard_normal((m, 2))
    direction = draws[:, 0] + 1j * draws[:, 1]
    norm = float(np.linalg.norm(direction))
    radius = eta_tilde / math.sqrt(m) * rng.random() ** (1.0 / (2 * m))
    if norm == 0.0:
        return np.zeros(m, dtype=np.complex128)
    return (radius / norm) * direction


def worst_case_perturbation(
    y,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    schedule: RestartSchedule,
    eta: float,
    cfg: PerturbConfig,
    x_init=None,
    threads: int = 1,
    max_bytes: int = DEFAULT_TAPE_BUDGET,
) -> WorstCaseResult:
    """Projected gradient ascent on ||N(y+e) - N(y)||^2 over ||e|| <= eta_tilde.

    Each trial draws its own initial perturbation from an RNG stream keyed by
    (seed, trial), ascends for cfg.steps steps, projects back onto the ball
    after every step (rescale only when outside), and scores every iterate.
    The best iterate across all trials wins; ties go to the lowest trial
    index, so results do not depend on how trials are scheduled.
    """
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    if y.size != A.m:
        raise ValueError(f"measurement length {y.size} does not match m={A.m}")
    estimate = tape_bytes_estimate(A, Wop, schedule)
    if estimate > max_bytes:
        raise MemoryError(
            f"tape estimate {estimate} bytes exceeds the budget {max_bytes}; "
            "reduce restarts/inner iterations or raise max_bytes"
        )
    if x_init is None:
        x_init = ImageGrid.zeros(A.side)
    base, _ = restarted_run(x_init, A, Wop, y, eta, schedule)
    base_vec = base.data

    def run_trial(t: int):
        rng = np.random.default_rng([cfg.seed, t])
        e = _initial_perturbation(rng, A.m, cfg.eta_tilde)
        best_obj = -math.inf
        best_step = -1
        best_e = None
        trace = []
        diagnostic = None
        for step in range(cfg.steps + 1):
            out, tape = forward_with_tape(
                y + e, A, Wop, schedule, eta, x_init=x_init, max_bytes=max_bytes
            )
            diff = out.data - base_vec
            objective = float(np.real(np.vdot(diff, diff)))
            if not math.isfinite(objective):
                diagnostic = f"trial {t}: nonfinite objective at ascent step {step}; trial aborted"
                break
            trace.append(objective)
            if objective > best_obj:
                best_obj, best_step, best_e = objective, step, e.copy()
            if step == cfg.steps:
                break
            grad, _ = backward(tape, 2.0 * diff)
            e = e + cfg.step_size * grad
            e = e / max(1.0, float(np.linalg.norm(e)) / cfg.eta_tilde)
        return best_obj, best_step, best_e, tuple(trace), diagnostic

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_trial, range(cfg.trials)))
    else:
        results = [run_trial(t) for t in range(cfg.trials)]

    best = None
    traces = []
    diagnostics = []
    for t, (obj, step, e, trace, diagnostic) in enumerate(results):
        traces.append(trace)
        if diagnostic is not None:
            diagnostics.append(diagnostic)
        if e is not None and (best is None or obj > best[0]):
            best = (obj, t, step, e)
    if best is None:
        raise RuntimeError("every trial aborted before a finite objective: " + "; ".join(diagnostics))
    return WorstCaseResult(
        e_best=best[3],
        objective=best[0],
        trial=best[1],
        step=best[2],
        trial_objectives=tuple(traces),
        diagnostics=tuple(diagnostics),
    )


def perturbation_to_image(e, A: MeasurementOperator) -> ImageGrid:
    """Minimum-norm image consistent with the perturbation: nu^{-1} A* e."""
    e = np.asarray(e, dtype=np.complex128).reshape(-1)
    if e.size != A.m:
        raise ValueError(f"perturbation length {e.size} does not match m={A.m}")
    return ImageGrid(A.side, A.pseudo_inverse(e))
