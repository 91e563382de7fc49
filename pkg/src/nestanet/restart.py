"""Restart schedules for the smoothed solver.

Restarting re-runs the solver K+1 times, warm-starting each run at the
previous output while shrinking the smoothing parameter geometrically:

    eps_0 = eps0,  eps_k = r * eps_{k-1} + zeta,
    mu_k  = r * delta * eps_{k-1}   (clamped below by mu_floor),
    n_k   = ceil(2 sqrt(beta) / (r * delta * sqrt(M))) - 1   (constant in k).

Under a robust null-space property with constants (rho, gamma), the scale
factor delta = sqrt(s) / (c1 M) with c1 = (1+rho)^2/(1-rho) guarantees
||x - x*_k|| <= eps_k, where zeta absorbs the model error
2 c1 sigma_s(W* x)_1 / sqrt(s) + 2 c2 eta.  The eps_k recursion then gives
exponential decay down to the noise-plus-compressibility floor
zeta / (1 - r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nesta import IterationRecorder, NestaConfig, _run_raw
from .operators import (
    AnalysisOperator,
    ImageGrid,
    MeasurementOperator,
    best_s_term_error,
    image_vector,
)

__all__ = [
    "TheoryConstants",
    "RestartSchedule",
    "build_schedule",
    "schedule_from_inner_iterations",
    "theoretical_schedule",
    "epsilon_closed_form",
    "default_eps0",
    "restarted_run",
    "cs_error",
    "zeta_bound",
]


@dataclass(frozen=True)
class TheoryConstants:
    """Null-space-property constants (rho, gamma) and the sparsity level s."""

    rho: float
    gamma: float
    s: int

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie strictly between 0 and 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.s < 1:
            raise ValueError("s must be a positive integer")

    @property
    def c1(self) -> float:
        return (1.0 + self.rho) ** 2 / (1.0 - self.rho)

    @property
    def c2(self) -> float:
        return (3.0 + self.rho) * self.gamma / (1.0 - self.rho)


def zeta_bound(tc: TheoryConstants, sigma_s: float, eta: float) -> float:
    """Error floor 2 c1 sigma_s / sqrt(s) + 2 c2 eta fed into the schedule."""
    return 2.0 * tc.c1 * sigma_s / math.sqrt(tc.s) + 2.0 * tc.c2 * eta


@dataclass(frozen=True)
class RestartSchedule:
    """Resolved per-restart smoothing values and the shared inner iteration count."""

    r: float
    delta: float
    zeta: float
    eps0: float
    restarts: int  # K; the run executes K+1 restarts
    inner_iterations: int  # n_k, constant across restarts
    mu_values: tuple  # length K+1; restart k uses mu_values[k-1]
    eps_values: tuple  # eps_0 .. eps_{K+1}
    mu_floor: float
    clamped: bool  # True if any mu_k hit mu_floor

    @property
    def total_iterations(self) -> int:
        return (self.restarts + 1) * (self.inner_iterations + 1)


def epsilon_closed_form(k: int, r: float, zeta: float, eps0: float) -> float:
    """eps_k = r^k eps0 + (1 - r^k)/(1 - r) zeta."""
    return r**k * eps0 + (1.0 - r**k) / (1.0 - r) * zeta


def build_schedule(
    r: float,
    delta: float,
    zeta: float,
    eps0: float,
    restarts: int,
    beta: float,
    n_coefficients: int,
    mu_floor: float | None = None,
) -> RestartSchedule:
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie strictly between 0 and 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    if restarts < 0:
        raise ValueError("restarts must be nonnegative")
    if mu_floor is None:
        mu_floor = 1e-13 * max(1.0, eps0)
    inner = math.ceil(2.0 * math.sqrt(beta) / (r * delta * math.sqrt(n_coefficients))) - 1
    eps = [eps0]
    mus = []
    clamped = False
    for _ in range(restarts + 1):
        mu = r * delta * eps[-1]
        if mu < mu_floor:
            mu = mu_floor
            clamped = True
        mus.append(mu)
        eps.append(r * eps[-1] + zeta)
    return RestartSchedule(
        r=r,
        delta=delta,
        zeta=zeta,
        eps0=eps0,
        restarts=restarts,
        inner_iterations=inner,
        mu_values=tuple(mus),
        eps_values=tuple(eps),
        mu_floor=mu_floor,
        clamped=clamped,
    )


def schedule_from_inner_iterations(
    inner_iterations: int,
    r: float,
    zeta: float,
    eps0: float,
    restarts: int,
    beta: float,
    n_coefficients: int,
    mu_floor: float | None = None,
) -> RestartSchedule:
    """Choose delta so the ceil formula lands exactly on the requested n_k.

    The tiny upward nudge keeps the recomputed quotient strictly below the
    next integer despite rounding.
    """
    if inner_iterations < 0:
        raise ValueError("inner_iterations must be nonnegative")
    delta = (
        2.0
        * math.sqrt(beta)
        / (r * (inner_iterations + 1) * math.sqrt(n_coefficients))
        * (1.0 + 1e-12)
    )
    sched = build_schedule(r, delta, zeta, eps0, restarts, beta, n_coefficients, mu_floor)
    if sched.inner_iterations != inner_iterations:
        raise RuntimeError(
            f"inner-iteration inversion failed: requested {inner_iterations}, "
            f"got {sched.inner_iterations}"
        )
    return sched


def theoretical_schedule(
    tc: TheoryConstants,
    beta: float,
    n_coefficients: int,
    r: float,
    zeta: float,
    eps0: float,
    restarts: int,
    mu_floor: float | None = None,
) -> RestartSchedule:
    """Schedule with delta = sqrt(s) / (c1 M) derived from the theory constants."""
    delta = math.sqrt(tc.s) / (tc.c1 * n_coefficients)
    return build_schedule(r, delta, zeta, eps0, restarts, beta, n_coefficients, mu_floor)


def default_eps0(A: MeasurementOperator, y) -> float:
    """||A' y||, the norm of the minimum-norm consistent image."""
    return float(np.linalg.norm(A.pseudo_inverse(np.asarray(y, dtype=np.complex128).reshape(-1))))


def restarted_run(
    x_init,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    y,
    eta: float,
    schedule: RestartSchedule,
    on_iterate=None,
    recorder: IterationRecorder | None = None,
) -> tuple[ImageGrid, list[ImageGrid]]:
    """Run K+1 restarts; return the final image and all restart outputs.

    The history list holds x*_0 (the initial point) through x*_{K+1}.
    on_iterate, if given, is called as on_iterate(k, n, x) after every inner
    iteration with the restart index k >= 1.
    """
    if A.side != Wop.side:
        raise ValueError("measurement and analysis operators disagree on the side")
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    if y.size != A.m:
        raise ValueError(f"measurement length {y.size} does not match m={A.m}")
    rec = recorder if recorder is not None else IterationRecorder()
    x_star = image_vector(x_init, A.side)
    history = [ImageGrid(A.side, x_star)]
    for k, mu_k in enumerate(schedule.mu_values, start=1):
        rec.begin_restart(k, mu_k, x_star)
        cb = None
        if on_iterate is not None:
            cb = lambda n, x, kk=k: on_iterate(kk, n, x)  # noqa: E731
        cfg = NestaConfig(mu=mu_k, eta=eta, n_max=schedule.inner_iterations)
        x_star = _run_raw(x_star, A, Wop, y, cfg, rec=rec, on_iterate=cb)
        rec.end_restart(k, x_star)
        history.append(ImageGrid(A.side, x_star))
    return history[-1], history


def cs_error(Wop: AnalysisOperator, x, s: int, eta: float) -> float:
    """Compressed-sensing error proxy sigma_s(W* x)_1 / sqrt(s) + eta."""
    if s < 1:
        raise ValueError("s must be a positive integer")
    z = Wop.analyze(image_vector(x, Wop.side))
    return best_s_term_error(z, s) / math.sqrt(s) + eta
