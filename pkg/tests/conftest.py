import numpy as np
import pytest

from nestanet.operators import (
    AnalysisOperator,
    MaskDensityConfig,
    MeasurementOperator,
    generate_mask,
)


def random_image(rng: np.random.Generator, side: int) -> np.ndarray:
    return rng.standard_normal(side * side) + 1j * rng.standard_normal(side * side)


def random_operator(rng: np.random.Generator, side: int, frac: float = 0.4) -> MeasurementOperator:
    target = max(1, int(round(frac * side * side)))
    cfg = MaskDensityConfig(side=side, target_m=target, seed=int(rng.integers(2**31)))
    return MeasurementOperator(generate_mask(cfg))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture
def analysis16() -> AnalysisOperator:
    return AnalysisOperator(side=16, weight=2.5)
