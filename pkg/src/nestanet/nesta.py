"""Smoothed l1 minimization over a measurement-fidelity ball.

Solves min ||W* x||_1 subject to ||y - A x||_2 <= eta by Nesterov's
accelerated scheme applied to the Huber-smoothed objective.  Each iteration
evaluates the smoothed-objective gradient through the analysis frame, takes
a primal step and a weighted-accumulator step, projects both onto the
feasibility ball (closed-form, since A A* = nu I), and mixes them:

    q_x = z_n - (mu/beta) W T_mu(W* z_n)
    q_v = q_v_prev - (mu/beta) alpha_n W T_mu(W* z_n),   q_v_init = z_0
    x_n = P(q_x),  v_n = P(q_v)
    z_{n+1} = tau_n v_n + (1 - tau_n) x_n

with alpha_n = (n+1)/2, tau_n = 2/(n+3), and P the Euclidean projection
onto {u: ||y - A u|| <= eta}.  The accumulator form of q_v is an exact
rewrite of the weighted running sum z_0 - (mu/beta) sum_i alpha_i W T_mu(W* z_i).

A run executes iterations n = 0..n_max inclusive and returns x_{n_max}.

The iteration kernel reports every intermediate quantity to an
IterationRecorder.  Recorders only observe; all callers (plain runs,
the layer-by-layer network evaluation, the adjoint tape) therefore produce
bitwise-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import AnalysisOperator, ImageGrid, MeasurementOperator, image_vector

__all__ = [
    "NestaConfig",
    "NestaState",
    "IterationRecorder",
    "huber_value",
    "smoothed_l1",
    "t_mu",
    "alpha_coefficient",
    "tau_coefficient",
    "project_feasible",
    "initial_state",
    "nesta_step",
    "nesta_run",
]


def huber_value(a, mu: float):
    """Huber smoothing of the modulus: |a|^2/(2 mu) on [0, mu], |a| - mu/2 beyond."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    mag = np.abs(a)
    out = np.where(mag <= mu, mag * mag / (2.0 * mu), mag - mu / 2.0)
    return float(out) if np.isscalar(a) or out.ndim == 0 else out


def smoothed_l1(z, mu: float) -> float:
    """Sum of Huber values; satisfies f_mu(z) <= ||z||_1 <= f_mu(z) + len(z)*mu/2."""
    return float(np.sum(huber_value(np.asarray(z).reshape(-1), mu)))


def t_mu(z, mu: float):
    """Gradient of the Huber modulus: z/mu inside the quadratic region, z/|z| outside.

    T_mu(0) = 0, and ties |z| = mu take the quadratic branch.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    z = np.asarray(z, dtype=np.complex128)
    return _t_mu_raw(z, mu)


def _t_mu_raw(z: np.ndarray, mu: float) -> np.ndarray:
    mag = np.abs(z)
    denom = np.where(mag <= mu, mu, mag)
    return z / denom


def alpha_coefficient(i: int) -> float:
    return (i + 1) / 2.0


def tau_coefficient(i: int) -> float:
    return 2.0 / (i + 3)


@dataclass(frozen=True)
class NestaConfig:
    """Smoothing parameter, fidelity radius, and final iteration index."""

    mu: float
    eta: float
    n_max: int

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")


@dataclass
class NestaState:
    """State after iteration `iter`: primal x, mixing point z, accumulator qv."""

    iter: int
    z: ImageGrid
    qv: ImageGrid
    x: ImageGrid


class IterationRecorder:
    """Observation hooks invoked by the iteration kernel, in execution order.

    The base class ignores everything.  Subclasses must not modify the
    arrays they receive.
    """

    def begin_restart(self, k: int, mu: float, z0: np.ndarray) -> None:
        pass

    def begin_iteration(self, n: int, mu: float, alpha: float, tau: float) -> None:
        pass

    def analysis(self, t: np.ndarray) -> None:
        pass

    def huber_gradient(self, g: np.ndarray) -> None:
        pass

    def synthesis(self, big_g: np.ndarray) -> None:
        pass

    def combine_q(self, qx: np.ndarray, qv: np.ndarray) -> None:
        pass

    def residual(self, tag: str, r: np.ndarray) -> None:
        pass

    def gate(self, tag: str, rn: float, lam: float, sigma: float) -> None:
        pass

    def back_projection(self, tag: str, h: np.ndarray) -> None:
        pass

    def projected(self, tag: str, u: np.ndarray) -> None:
        pass

    def combine_z(self, z_next: np.ndarray) -> None:
        pass

    def end_restart(self, k: int, x_star: np.ndarray) -> None:
        pass


_NULL_RECORDER = IterationRecorder()


def _project(
    q: np.ndarray,
    A: MeasurementOperator,
    y: np.ndarray,
    eta: float,
    rec: IterationRecorder,
    tag: str,
) -> tuple[np.ndarray, float]:
    """Euclidean projection onto {u: ||y - A u|| <= eta} for row-orthogonal A.

    u = q + lam/((lam+1) nu) A*(y - A q) with lam = max(0, ||y - A q||/eta - 1).
    The gated term is always evaluated (with gate 0 when q is feasible) so
    every caller runs the same operation sequence.
    """
    r = y - A.apply(q)
    rec.residual(tag, r)
    rn = float(np.linalg.norm(r))
    lam = max(0.0, rn / eta - 1.0)
    sigma = lam / ((lam + 1.0) * A.nu)
    rec.gate(tag, rn, lam, sigma)
    h = A.adjoint(r)
    rec.back_projection(tag, h)
    u = q + sigma * h
    rec.projected(tag, u)
    return u, lam


def project_feasible(q, A: MeasurementOperator, y, eta: float) -> tuple[ImageGrid, float]:
    if eta <= 0:
        raise ValueError("eta must be positive")
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    if y.size != A.m:
        raise ValueError(f"measurement length {y.size} does not match m={A.m}")
    u, lam = _project(image_vector(q, A.side), A, y, eta, _NULL_RECORDER, "x")
    return ImageGrid(A.side, u), lam


def _iteration(
    z: np.ndarray,
    qv_prev: np.ndarray,
    n: int,
    mu: float,
    beta: float,
    A: MeasurementOperator,
    W: AnalysisOperator,
    y: np.ndarray,
    eta: float,
    rec: IterationRecorder,
):
    alpha = alpha_coefficient(n)
    tau = tau_coefficient(n)
    rec.begin_iteration(n, mu, alpha, tau)
    t = W.analyze(z)
    rec.analysis(t)
    g = _t_mu_raw(t, mu)
    rec.huber_gradient(g)
    big_g = W.synthesize(g)
    rec.synthesis(big_g)
    scale = mu / beta
    qx = z - scale * big_g
    qv = qv_prev - (scale * alpha) * big_g
    rec.combine_q(qx, qv)
    x, lam_x = _project(qx, A, y, eta, rec, "x")
    v, lam_v = _project(qv, A, y, eta, rec, "v")
    z_next = tau * v + (1.0 - tau) * x
    rec.combine_z(z_next)
    return x, v, z_next, qv, lam_x, lam_v


def initial_state(z0, A: MeasurementOperator) -> NestaState:
    g = ImageGrid(A.side, image_vector(z0, A.side))
    return NestaState(iter=-1, z=g, qv=g, x=g)


def nesta_step(
    state: NestaState,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    y,
    cfg: NestaConfig,
) -> NestaState:
    """Advance one iteration (index state.iter + 1)."""
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    n = state.iter + 1
    x, _, z_next, qv, _, _ = _iteration(
        state.z.data, state.qv.data, n, cfg.mu, Wop.beta, A, Wop, y, cfg.eta, _NULL_RECORDER
    )
    side = A.side
    return NestaState(iter=n, z=ImageGrid(side, z_next), qv=ImageGrid(side, qv), x=ImageGrid(side, x))


def _run_raw(
    z0: np.ndarray,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    y: np.ndarray,
    cfg: NestaConfig,
    rec: IterationRecorder = _NULL_RECORDER,
    on_iterate=None,
) -> np.ndarray:
    beta = Wop.beta
    z = z0
    qv = z0
    x = z0
    for n in range(cfg.n_max + 1):
        x, _, z, qv, _, _ = _iteration(z, qv, n, cfg.mu, beta, A, Wop, y, cfg.eta, rec)
        if on_iterate is not None:
            on_iterate(n, x)
    return x


def nesta_run(
    z0,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    y,
    cfg: NestaConfig,
    on_iterate=None,
) -> ImageGrid:
    """Run iterations 0..n_max and return x_{n_max}."""
    if A.side != Wop.side:
        raise ValueError("measurement and analysis operators disagree on the side")
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    if y.size != A.m:
        raise ValueError(f"measurement length {y.size} does not match m={A.m}")
    out = _run_raw(image_vector(z0, A.side), A, Wop, y, cfg, on_iterate=on_iterate)
    return ImageGrid(A.side, out)
