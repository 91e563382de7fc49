"""Layer accounting and staged-evaluation equivalence for the network view."""

import numpy as np
import pytest

from nestanet.operators import (
    AnalysisOperator,
    ImageGrid,
    MaskDensityConfig,
    MeasurementOperator,
    generate_mask,
)
from nestanet.restart import restarted_run, schedule_from_inner_iterations
from nestanet.unrolled import (
    ACTIVATION_KINDS,
    forward_as_network,
    network_dims,
)


def _random_instance(rng, side, restarts, inner):
    target = max(2, int(0.4 * side * side))
    mask = generate_mask(MaskDensityConfig(side=side, target_m=target, seed=int(rng.integers(2**32))))
    A = MeasurementOperator(mask)
    W = AnalysisOperator(side=side, weight=2.5)
    y = rng.standard_normal(A.m) + 1j * rng.standard_normal(A.m)
    eta = float(10.0 ** rng.uniform(-3, 0))
    sched = schedule_from_inner_iterations(
        inner,
        r=float(rng.uniform(0.1, 0.6)),
        zeta=1e-9,
        eps0=float(rng.uniform(0.5, 5.0)),
        restarts=restarts,
        beta=W.beta,
        n_coefficients=W.n_coefficients,
    )
    return A, W, y, eta, sched


class TestNetworkDims:
    def test_minimal_depth(self):
        dims = network_dims(0, 0, n_pixels=4, n_coefficients=12, n_measurements=2)
        assert dims.depth == 6
        assert dims.layer_widths == (2, 4 + 12 + 4, 2 * (4 + 2), 2 * 5, 14, 13, 4)
        assert dims.activation_kinds == 4

    def test_paper_scale_depth(self):
        big_n = 512 * 512
        dims = network_dims(9, 17, n_pixels=big_n, n_coefficients=3 * big_n, n_measurements=big_n // 4)
        assert dims.depth == 901
        assert len(dims.layer_widths) == 902
        assert dims.max_width <= 3 * big_n + 3 * big_n

    def test_max_width_bound(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            big_n = int(rng.integers(4, 5000))
            big_m = int(rng.integers(big_n, 4 * big_n))
            m = int(rng.integers(1, big_n + 1))
            dims = network_dims(int(rng.integers(0, 4)), int(rng.integers(0, 6)), big_n, big_m, m)
            assert dims.max_width <= 3 * big_n + big_m
            assert dims.depth == len(dims.layer_widths) - 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(restarts=-1, inner_iterations=0, n_pixels=4, n_coefficients=12, n_measurements=2),
            dict(restarts=0, inner_iterations=-1, n_pixels=4, n_coefficients=12, n_measurements=2),
            dict(restarts=0, inner_iterations=0, n_pixels=0, n_coefficients=12, n_measurements=2),
            dict(restarts=0, inner_iterations=0, n_pixels=4, n_coefficients=3, n_measurements=2),
            dict(restarts=0, inner_iterations=0, n_pixels=4, n_coefficients=12, n_measurements=5),
            dict(restarts=0, inner_iterations=0, n_pixels=4, n_coefficients=12, n_measurements=0),
        ],
    )
    def test_invalid_dims_raise(self, kwargs):
        with pytest.raises(ValueError):
            network_dims(**kwargs)


class TestForwardAsNetwork:
    def test_bitwise_equivalence_on_random_instances(self):
        rng = np.random.default_rng(20240818)
        for case in range(50):
            side = int(rng.choice([8, 16]))
            restarts = int(rng.integers(0, 4))
            inner = int(rng.integers(0, 6))
            A, W, y, eta, sched = _random_instance(rng, side, restarts, inner)
            net_out, trace = forward_as_network(y, A, W, sched, eta)
            plain_out, _ = restarted_run(ImageGrid.zeros(side), A, W, y, eta, sched)
            assert net_out.data.tobytes() == plain_out.data.tobytes(), f"case {case}"
            assert len(trace.blocks) == (restarts + 1) * (inner + 1)

    def test_trace_widths_match_dims(self):
        rng = np.random.default_rng(3)
        A, W, y, eta, sched = _random_instance(rng, 16, restarts=2, inner=3)
        _, trace = forward_as_network(y, A, W, sched, eta)
        dims = network_dims(2, 3, 16 * 16, W.n_coefficients, A.m)
        assert trace.layer_widths == dims.layer_widths

    def test_block_tags(self):
        rng = np.random.default_rng(4)
        A, W, y, eta, sched = _random_instance(rng, 8, restarts=1, inner=2)
        _, trace = forward_as_network(y, A, W, sched, eta)
        n_pix = 64
        for block in trace.blocks:
            qv, qx = block.t1_out
            assert qv.size == n_pix and qx.size == n_pix
            qv2, qx2, lam_v, lam_x = block.t2_out
            assert qv2 is qv and qx2 is qx
            assert lam_v >= 0.0 and lam_x >= 0.0
            qv3, z_next = block.t3_out
            assert qv3 is qv and z_next.size == n_pix
        assert [(b.restart, b.iteration) for b in trace.blocks] == [
            (k, n) for k in (1, 2) for n in (0, 1, 2)
        ]

    def test_zero_measurements_give_zero_trace(self):
        side = 8
        mask = generate_mask(MaskDensityConfig(side=side, target_m=20, seed=5))
        A = MeasurementOperator(mask)
        W = AnalysisOperator(side=side, weight=2.5)
        sched = schedule_from_inner_iterations(
            0, r=0.25, zeta=0.0, eps0=1.0, restarts=0, beta=W.beta, n_coefficients=W.n_coefficients
        )
        out, trace = forward_as_network(np.zeros(A.m, dtype=complex), A, W, sched, 1e-2)
        assert not out.data.any()
        assert len(trace.blocks) == 1
        block = trace.blocks[0]
        assert not block.t1_out[0].any() and not block.t1_out[1].any()
        assert block.t2_out[2] == 0.0 and block.t2_out[3] == 0.0
        assert not block.t3_out[1].any()

    def test_activation_census(self):
        rng = np.random.default_rng(6)
        A, W, y, eta, sched = _random_instance(rng, 8, restarts=1, inner=1)
        _, trace = forward_as_network(y, A, W, sched, eta)
        census = trace.activation_census()
        assert set(census) == set(ACTIVATION_KINDS)
        blocks = len(trace.blocks)
        assert census == {
            "huber_gradient": blocks,
            "squared_modulus": 2 * blocks,
            "radial_slack": 2 * blocks,
            "gated_rescale": 2 * blocks,
        }

    def test_explicit_initial_point_passthrough(self):
        rng = np.random.default_rng(9)
        A, W, y, eta, sched = _random_instance(rng, 8, restarts=0, inner=2)
        x0 = ImageGrid(8, rng.standard_normal(64) + 1j * rng.standard_normal(64))
        net_out, _ = forward_as_network(y, A, W, sched, eta, x_init=x0)
        plain_out, _ = restarted_run(x0, A, W, y, eta, sched)
        assert net_out.data.tobytes() == plain_out.data.tobytes()
