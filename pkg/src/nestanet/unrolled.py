"""Layer-structured view of the restarted solver.

Each inner iteration factors into five affine stages interleaved with four
fixed nonlinearities, so a run of K+1 restarts with n+1 iterations each is a
feedforward network of depth 5(K+1)(n+1) + 1 mapping the measurement vector
(width m) to the reconstruction (width N).  Between the affine maps the
stages carry, for an N-pixel image with M analysis coefficients:

    1. (q_v, z, W*z)                          width 2N + M
       -> Huber gradient, componentwise on the frame block
    2. (q_v, q_x, y - A q_v, y - A q_x)       width 2(N + m)
       -> squared modulus, entrywise on the residual blocks
    3. (q_v, q_x, ||r_v||^2, ||r_x||^2)       width 2(N + 1)
       -> s -> max(0, sqrt(s)/eta - 1) on the two scalars
    4. (q_v, lam_v, q_x, lam_x, A*(y - A q_x))  width 3N + 2
       -> gated rescale u -> u/(u+1), scaling the back-projection into q_x
    5. (q_v, lam_v, A*(y - A q_v), x)         width 3N + 1
       -> gated rescale, scaling the back-projection into q_v

after which the next affine map mixes z' = tau v + (1 - tau) x and applies
the analysis frame again.  Every bias is affine in the measurement vector.

The network evaluation shares the iteration kernel with the plain solver; a
recorder captures the trace.  Outputs are therefore bitwise identical to
the solver's by construction, not by reimplementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nesta import IterationRecorder
from .operators import AnalysisOperator, ImageGrid, MeasurementOperator
from .restart import RestartSchedule, restarted_run

__all__ = [
    "ACTIVATION_KINDS",
    "NetworkDims",
    "BlockTrace",
    "LayerTrace",
    "TraceRecorder",
    "network_dims",
    "forward_as_network",
]

ACTIVATION_KINDS = ("huber_gradient", "squared_modulus", "radial_slack", "gated_rescale")

# Activation uses per iteration block: one Huber-gradient pass, then one of
# each remaining kind per projected point (x and v).
_USES_PER_BLOCK = {
    "huber_gradient": 1,
    "squared_modulus": 2,
    "radial_slack": 2,
    "gated_rescale": 2,
}


@dataclass(frozen=True)
class NetworkDims:
    """Depth and width accounting for the unrolled solver."""

    depth: int
    layer_widths: tuple
    max_width: int
    activation_kinds: int = len(ACTIVATION_KINDS)


def network_dims(
    restarts: int,
    inner_iterations: int,
    n_pixels: int,
    n_coefficients: int,
    n_measurements: int,
) -> NetworkDims:
    """Widths for K+1 restarts of n+1 iterations on an N-pixel problem.

    The five-stage block repeats (K+1)(n+1) times between the input width m
    and the output width N, so the depth is 5(K+1)(n+1) + 1 and no stage is
    wider than 3N + M.
    """
    if restarts < 0:
        raise ValueError("restarts must be nonnegative")
    if inner_iterations < 0:
        raise ValueError("inner_iterations must be nonnegative")
    if n_pixels < 1:
        raise ValueError("n_pixels must be positive")
    if n_coefficients < n_pixels:
        raise ValueError("the analysis frame needs at least as many coefficients as pixels")
    if not 1 <= n_measurements <= n_pixels:
        raise ValueError("n_measurements must lie in 1..n_pixels")
    big_n, big_m, m = n_pixels, n_coefficients, n_measurements
    block = (2 * big_n + big_m, 2 * (big_n + m), 2 * (big_n + 1), 3 * big_n + 2, 3 * big_n + 1)
    widths = (m,) + block * ((restarts + 1) * (inner_iterations + 1)) + (big_n,)
    return NetworkDims(depth=len(widths) - 1, layer_widths=widths, max_width=max(widths))


@dataclass
class BlockTrace:
    """Intermediates of one iteration, tagged by the three composite maps.

    t1_out is the gradient-step pair (q_v, q_x); t2_out appends the two gate
    scalars (q_v, q_x, lam_v, lam_x); t3_out is the mixed state (q_v, z_next).
    stage_widths are the five carried widths observed for this block.
    """

    restart: int
    iteration: int
    t1_out: tuple
    t2_out: tuple
    t3_out: tuple
    stage_widths: tuple


@dataclass
class LayerTrace:
    """Per-block traces plus the input/output widths of the whole network."""

    input_width: int
    output_width: int
    blocks: list

    @property
    def layer_widths(self) -> tuple:
        widths = [self.input_width]
        for block in self.blocks:
            widths.extend(block.stage_widths)
        widths.append(self.output_width)
        return tuple(widths)

    def activation_census(self) -> dict:
        return {kind: uses * len(self.blocks) for kind, uses in _USES_PER_BLOCK.items()}


class TraceRecorder(IterationRecorder):
    """Assembles BlockTraces from the iteration kernel's observation hooks."""

    def __init__(self) -> None:
        self.blocks: list = []
        self._restart = 0
        self._cur: dict = {}

    def begin_restart(self, k: int, mu: float, z0: np.ndarray) -> None:
        self._restart = k

    def begin_iteration(self, n: int, mu: float, alpha: float, tau: float) -> None:
        self._cur = {"n": n}

    def analysis(self, t: np.ndarray) -> None:
        self._cur["frame_len"] = t.size

    def combine_q(self, qx: np.ndarray, qv: np.ndarray) -> None:
        self._cur["qx"] = qx
        self._cur["qv"] = qv

    def residual(self, tag: str, r: np.ndarray) -> None:
        self._cur[f"r_{tag}_len"] = r.size

    def gate(self, tag: str, rn: float, lam: float, sigma: float) -> None:
        self._cur[f"lam_{tag}"] = lam

    def back_projection(self, tag: str, h: np.ndarray) -> None:
        self._cur[f"h_{tag}_len"] = h.size

    def combine_z(self, z_next: np.ndarray) -> None:
        c = self._cur
        qv, qx = c["qv"], c["qx"]
        n_pix = qx.size
        stage_widths = (
            2 * n_pix + c["frame_len"],
            2 * n_pix + c["r_x_len"] + c["r_v_len"],
            2 * (n_pix + 1),
            2 * n_pix + c["h_x_len"] + 2,
            2 * n_pix + c["h_v_len"] + 1,
        )
        self.blocks.append(
            BlockTrace(
                restart=self._restart,
                iteration=c["n"],
                t1_out=(qv, qx),
                t2_out=(qv, qx, c["lam_v"], c["lam_x"]),
                t3_out=(qv, z_next),
                stage_widths=stage_widths,
            )
        )


def forward_as_network(
    y,
    A: MeasurementOperator,
    Wop: AnalysisOperator,
    schedule: RestartSchedule,
    eta: float,
    x_init=None,
) -> tuple[ImageGrid, LayerTrace]:
    """Evaluate the restarted solver while recording the layer trace.

    Returns exactly restarted_run's output (bitwise; same kernel) together
    with the per-iteration trace whose widths match network_dims.
    """
    if x_init is None:
        x_init = ImageGrid.zeros(A.side)
    recorder = TraceRecorder()
    final, _ = restarted_run(x_init, A, Wop, y, eta, schedule, recorder=recorder)
    trace = LayerTrace(
        input_width=A.m,
        output_width=A.side * A.side,
        blocks=recorder.blocks,
    )
    return final, trace
