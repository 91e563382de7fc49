"""Experiment drivers: solver sweeps with CSV, PNG, and manifest outputs.

Every run writes its data files plus a JSON manifest holding the exact
parameters, resolved quantities (realized mask size, effective delta, image
normalization constants), and output hashes.  Re-running a manifest with
rerun_from_manifest reproduces the CSV files byte for byte in
single-threaded mode: all randomness flows through named streams derived
from the run seed (the sampling mask uses the seed itself; noise draws use
default_rng([seed, 7001, index]); the perturbation search derives per-trial
streams from the seed internally), and rows are written in a canonical
sorted order regardless of completion order.

CSV schemas (UTF-8, comma-separated, one header row, full round-trip float
formatting):

    exp_decay.csv:  eta,k,rel_err
    compare.csv:    variant,total_iter,rel_err
    contour.csv:    eta,zeta,err
    stability.csv:  eta_tilde,trial,best_objective

Images are 16-bit grayscale PNGs of elementwise moduli, max-normalized,
with the normalization constant recorded in the manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .nesta import NestaConfig, nesta_run
from .operators import (
    AnalysisOperator,
    ImageGrid,
    MaskDensityConfig,
    MeasurementOperator,
    generate_mask,
    load_mask,
    mask_sha256,
    save_mask,
)
from .phantom import load_grayscale, render_phantom
from .restart import (
    build_schedule,
    default_eps0,
    restarted_run,
    schedule_from_inner_iterations,
)
from .stability import PerturbConfig, perturbation_to_image, worst_case_perturbation
from .unrolled import network_dims

__all__ = [
    "MANIFEST_NAME",
    "MANIFEST_SCHEMA_VERSION",
    "complex_noise",
    "write_csv",
    "save_image",
    "run_exp_decay",
    "run_compare",
    "run_contour",
    "run_stability",
    "run_recover",
    "run_mask",
    "format_dims",
    "rerun_from_manifest",
    "EXPERIMENTS",
]

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA_VERSION = 1
_NOISE_TAG = 7001


def complex_noise(rng: np.random.Generator, m: int, norm: float) -> np.ndarray:
    """I.i.d. complex Gaussian vector rescaled to have Euclidean norm `norm`."""
    draws = rng.standard_normal((m, 2))
    e = draws[:, 0] + 1j * draws[:, 1]
    scale = float(np.linalg.norm(e))
    if norm == 0.0 or scale == 0.0:
        return np.zeros(m, dtype=np.complex128)
    return e * (norm / scale)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_image(path: Path, values) -> float:
    """Write |values| as a max-normalized 16-bit PNG; returns the peak used."""
    mag = np.abs(np.asarray(values))
    if mag.ndim != 2:
        raise ValueError("save_image expects a 2-d array")
    peak = float(mag.max()) if mag.size else 0.0
    if peak > 0.0:
        scaled = np.round(mag * (65535.0 / peak)).astype(np.uint16)
    else:
        scaled = np.zeros(mag.shape, dtype=np.uint16)
    Image.fromarray(scaled).save(path)
    return peak


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, params: dict, resolved: dict, outputs: dict, started: float) -> Path:
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "command": command,
        "package": "nestanet",
        "version": __version__,
        "numpy_version": np.__version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "duration_seconds": time.monotonic() - started,
        "params": params,
        "resolved": resolved,
        "outputs": outputs,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_operators(side: int, sampling: float, weight: float, seed: int):
    target = max(1, int(round(sampling * side * side)))
    mask = generate_mask(MaskDensityConfig(side=side, target_m=target, seed=seed))
    return MeasurementOperator(mask), AnalysisOperator(side=side, weight=weight)


def _resolve_schedule(W: AnalysisOperator, *, r, zeta, eps0, restarts, inner_iterations, delta):
    if delta is not None:
        return build_schedule(r, delta, zeta, eps0, restarts, W.beta, W.n_coefficients)
    return schedule_from_inner_iterations(
        inner_iterations, r=r, zeta=zeta, eps0=eps0, restarts=restarts,
        beta=W.beta, n_coefficients=W.n_coefficients,
    )


def run_exp_decay(
    out_dir,
    *,
    side: int = 64,
    sampling: float = 0.15,
    weight: float = 2.5,
    r: float = 0.25,
    zeta: float = 1e-9,
    restarts: int = 14,
    inner_iterations: int = 33,
    delta: float | None = None,
    etas=(1.0, 0.1, 0.01, 0.001, 0.0001),
    seed: int = 0,
) -> Path:
    """Per-restart relative error under measurement noise of norm eta."""
    started = time.monotonic()
    out = _prepare(out_dir)
    params = dict(
        side=side, sampling=sampling, weight=weight, r=r, zeta=zeta,
        restarts=restarts, inner_iterations=inner_iterations, delta=delta,
        etas=list(etas), seed=seed,
    )
    x = render_phantom(side)
    A, W = _build_operators(side, sampling, weight, seed)
    y_clean = A.apply(x.data)
    x_norm = float(np.linalg.norm(x.data))
    rows = []
    resolved_delta = None
    for index, eta in enumerate(etas):
        noise = complex_noise(np.random.default_rng([seed, _NOISE_TAG, index]), A.m, eta)
        y = y_clean + noise
        sched = _resolve_schedule(
            W, r=r, zeta=zeta, eps0=default_eps0(A, y), restarts=restarts,
            inner_iterations=inner_iterations, delta=delta,
        )
        resolved_delta = sched.delta
        _, history = restarted_run(ImageGrid.zeros(side), A, W, y, eta, sched)
        for k, xk in enumerate(history[1:], start=1):
            rows.append((eta, k, float(np.linalg.norm(xk.data - x.data)) / x_norm))
    rows.sort(key=lambda row: (row[0], row[1]))
    csv_path = out / "exp_decay.csv"
    write_csv(csv_path, "eta,k,rel_err", rows)
    _write_manifest(
        out, "exp-decay", params,
        resolved={"m": A.m, "delta": resolved_delta, "phantom_norm": x_norm},
        outputs={csv_path.name: {"sha256": _sha256(csv_path), "rows": len(rows)}},
        started=started,
    )
    return csv_path


def run_compare(
    out_dir,
    *,
    side: int = 64,
    sampling: float = 0.15,
    weight: float = 2.5,
    r: float = 0.25,
    zeta: float = 1e-9,
    restarts: int = 11,
    inner_iterations: int = 33,
    delta: float | None = None,
    eta: float = 1e-3,
    fixed_mus=(1e-2, 1e-3, 1e-4, 1e-5),
    seed: int = 0,
) -> Path:
    """Restarted vs fixed-smoothing error at an equal total iteration budget."""
    started = time.monotonic()
    out = _prepare(out_dir)
    params = dict(
        side=side, sampling=sampling, weight=weight, r=r, zeta=zeta,
        restarts=restarts, inner_iterations=inner_iterations, delta=delta,
        eta=eta, fixed_mus=list(fixed_mus), seed=seed,
    )
    x = render_phantom(side)
    A, W = _build_operators(side, sampling, weight, seed)
    noise = complex_noise(np.random.default_rng([seed, _NOISE_TAG, 0]), A.m, eta)
    y = A.apply(x.data) + noise
    x_norm = float(np.linalg.norm(x.data))
    sched = _resolve_schedule(
        W, r=r, zeta=zeta, eps0=default_eps0(A, y), restarts=restarts,
        inner_iterations=inner_iterations, delta=delta,
    )
    budget = sched.total_iterations
    rows = []

    counter = {"i": 0}

    def log_restarted(_k, _n, xk):
        counter["i"] += 1
        rows.append(("restarted", counter["i"], float(np.linalg.norm(xk.data - x.data)) / x_norm))

    restarted_run(ImageGrid.zeros(side), A, W, y, eta, sched, on_iterate=log_restarted)

    for mu in fixed_mus:
        variant = f"fixed_mu={mu:g}"

        def log_fixed(n, xk, tag=variant):
            rows.append((tag, n + 1, float(np.linalg.norm(xk.data - x.data)) / x_norm))

        nesta_run(ImageGrid.zeros(side), A, W, y, NestaConfig(mu=mu, eta=eta, n_max=budget - 1),
                  on_iterate=log_fixed)

    rows.sort(key=lambda row: (row[0], row[1]))
    csv_path = out / "compare.csv"
    write_csv(csv_path, "variant,total_iter,rel_err", rows)
    _write_manifest(
        out, "compare", params,
        resolved={"m": A.m, "delta": sched.delta, "budget": budget, "phantom_norm": x_norm},
        outputs={csv_path.name: {"sha256": _sha256(csv_path), "rows": len(rows)}},
        started=started,
    )
    return csv_path


def run_contour(
    out_dir,
    *,
    side: int = 64,
    sampling: float = 0.25,
    weight: float = 2.5,
    r: float = 0.25,
    restarts: int = 14,
    inner_iterations: int = 33,
    delta: float | None = None,
    exponents=(-1, 0, 1, 2, 3, 4),
    seed: int = 0,
    threads: int = 1,
) -> Path:
    """Final error over an (eta, zeta) grid with noiseless measurements."""
    started = time.monotonic()
    out = _prepare(out_dir)
    params = dict(
        side=side, sampling=sampling, weight=weight, r=r, restarts=restarts,
        inner_iterations=inner_iterations, delta=delta, exponents=list(exponents),
        seed=seed, threads=threads,
    )
    x = render_phantom(side)
    A, W = _build_operators(side, sampling, weight, seed)
    y = A.apply(x.data)
    eps0 = default_eps0(A, y)
    values = [10.0 ** (-i) for i in exponents]
    cells = [(eta, zeta) for eta in values for zeta in values]

    def solve(cell):
        eta, zeta = cell
        sched = _resolve_schedule(
            W, r=r, zeta=zeta, eps0=eps0, restarts=restarts,
            inner_iterations=inner_iterations, delta=delta,
        )
        final, _ = restarted_run(ImageGrid.zeros(side), A, W, y, eta, sched)
        return eta, zeta, float(np.linalg.norm(final.data - x.data))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(solve, cells))
    else:
        rows = [solve(cell) for cell in cells]
    rows.sort(key=lambda row: (row[0], row[1]))
    csv_path = out / "contour.csv"
    write_csv(csv_path, "eta,zeta,err", rows)
    _write_manifest(
        out, "contour", params,
        resolved={"m": A.m, "eps0": eps0, "grid": len(rows)},
        outputs={csv_path.name: {"sha256": _sha256(csv_path), "rows": len(rows)}},
        started=started,
    )
    return csv_path


def run_stability(
    out_dir,
    *,
    side: int = 64,
    sampling: float = 0.25,
    weight: float = 2.5,
    r: float = 0.25,
    zeta: float = 1e-9,
    restarts: int = 9,
    inner_iterations: int = 17,
    delta: float | None = None,
    eta: float = 1e-2,
    eta_tilde_exponents=(0, 1, 2, 3),
    trials: int = 8,
    steps: int = 40,
    step_size: float = 3.0,
    seed: int = 0,
    threads: int = 1,
) -> Path:
    """Worst-case perturbation search per radius, with reconstruction images."""
    started = time.monotonic()
    out = _prepare(out_dir)
    params = dict(
        side=side, sampling=sampling, weight=weight, r=r, zeta=zeta,
        restarts=restarts, inner_iterations=inner_iterations, delta=delta, eta=eta,
        eta_tilde_exponents=list(eta_tilde_exponents), trials=trials, steps=steps,
        step_size=step_size, seed=seed, threads=threads,
    )
    x = render_phantom(side)
    A, W = _build_operators(side, sampling, weight, seed)
    y = A.apply(x.data)
    sched = _resolve_schedule(
        W, r=r, zeta=zeta, eps0=default_eps0(A, y), restarts=restarts,
        inner_iterations=inner_iterations, delta=delta,
    )
    base, _ = restarted_run(ImageGrid.zeros(side), A, W, y, eta, sched)
    rows = []
    outputs: dict = {}
    searches = {}
    for index, exponent in enumerate(eta_tilde_exponents):
        eta_tilde = eta * 10.0**exponent
        cfg = PerturbConfig(eta_tilde=eta_tilde, trials=trials, steps=steps,
                            step_size=step_size, seed=seed)
        result = worst_case_perturbation(y, A, W, sched, eta, cfg, threads=threads)
        searches[eta_tilde] = result
        for trial, trace in enumerate(result.trial_objectives):
            best = max(trace) if trace else math.nan
            rows.append((eta_tilde, trial, best))
        perturbed, _ = restarted_run(ImageGrid.zeros(side), A, W, y + result.e_best, eta, sched)
        panels = {
            f"stability_{index}_perturbation.png": perturbation_to_image(result.e_best, A).to_2d(),
            f"stability_{index}_difference.png": (perturbed.data - base.data).reshape(side, side),
            f"stability_{index}_base.png": base.to_2d(),
            f"stability_{index}_perturbed.png": perturbed.to_2d(),
        }
        for name, panel in panels.items():
            peak = save_image(out / name, panel)
            outputs[name] = {"normalization": peak, "eta_tilde": eta_tilde}
    rows.sort(key=lambda row: (row[0], row[1]))
    csv_path = out / "stability.csv"
    write_csv(csv_path, "eta_tilde,trial,best_objective", rows)
    outputs[csv_path.name] = {"sha256": _sha256(csv_path), "rows": len(rows)}
    _write_manifest(
        out, "stability", params,
        resolved={
            "m": A.m,
            "delta": sched.delta,
            "diagnostics": [d for res in searches.values() for d in res.diagnostics],
        },
        outputs=outputs,
        started=started,
    )
    return csv_path


def run_recover(
    out_dir,
    *,
    side: int = 64,
    sampling: float = 0.25,
    weight: float = 2.5,
    r: float = 0.25,
    zeta: float = 1e-9,
    restarts: int = 9,
    inner_iterations: int = 17,
    delta: float | None = None,
    eta: float = 1e-3,
    noise: float = 0.0,
    seed: int = 0,
    mask_file: str | None = None,
    image_file: str | None = None,
) -> Path:
    """Single reconstruction with mask/image overrides; writes PNGs + manifest."""
    started = time.monotonic()
    out = _prepare(out_dir)
    params = dict(
        side=side, sampling=sampling, weight=weight, r=r, zeta=zeta,
        restarts=restarts, inner_iterations=inner_iterations, delta=delta,
        eta=eta, noise=noise, seed=seed, mask_file=mask_file, image_file=image_file,
    )
    if image_file is not None:
        x = load_grayscale(image_file)
        side = x.side
    else:
        x = render_phantom(side)
    if mask_file is not None:
        mask = load_mask(mask_file)
        if mask.side != side:
            raise ValueError(f"mask side {mask.side} does not match image side {side}")
        mask_path = Path(mask_file)
    else:
        target = max(1, int(round(sampling * side * side)))
        mask = generate_mask(MaskDensityConfig(side=side, target_m=target, seed=seed))
        mask_path = out / "mask.txt"
        save_mask(mask, mask_path)
    A = MeasurementOperator(mask)
    W = AnalysisOperator(side=side, weight=weight)
    y = A.apply(x.data)
    if noise > 0.0:
        y = y + complex_noise(np.random.default_rng([seed, _NOISE_TAG, 0]), A.m, noise)
    sched = _resolve_schedule(
        W, r=r, zeta=zeta, eps0=default_eps0(A, y), restarts=restarts,
        inner_iterations=inner_iterations, delta=delta,
    )
    final, _ = restarted_run(ImageGrid.zeros(side), A, W, y, eta, sched)
    outputs = {}
    for name, panel in (("reconstruction.png", final.to_2d()), ("original.png", x.to_2d())):
        peak = save_image(out / name, panel)
        outputs[name] = {"normalization": peak}
    rel_err = float(np.linalg.norm(final.data - x.data) / max(np.linalg.norm(x.data), 1e-300))
    _write_manifest(
        out, "recover", params,
        resolved={
            "m": A.m,
            "delta": sched.delta,
            "rel_err": rel_err,
            "mask_sha256": mask_sha256(mask_path),
            "side": side,
        },
        outputs=outputs,
        started=started,
    )
    return out / "reconstruction.png"


def run_mask(
    out_dir,
    *,
    side: int = 64,
    sampling: float = 0.25,
    seed: int = 0,
) -> Path:
    """Generate and save an inverse-square density sampling mask."""
    started = time.monotonic()
    out = _prepare(out_dir)
    params = dict(side=side, sampling=sampling, seed=seed)
    target = max(1, int(round(sampling * side * side)))
    mask = generate_mask(MaskDensityConfig(side=side, target_m=target, seed=seed))
    path = out / "mask.txt"
    save_mask(mask, path)
    _write_manifest(
        out, "mask", params,
        resolved={"m": mask.m, "target_m": target, "mask_sha256": mask_sha256(path)},
        outputs={path.name: {"sha256": _sha256(path)}},
        started=started,
    )
    return path


def format_dims(restarts: int, inner_iterations: int, side: int, sampling: float) -> str:
    n_pixels = side * side
    dims = network_dims(
        restarts, inner_iterations, n_pixels, 3 * n_pixels,
        max(1, int(round(sampling * n_pixels))),
    )
    widths = dims.layer_widths
    block = widths[1:6]
    return "\n".join(
        [
            f"depth L = {dims.depth}",
            f"max width = {dims.max_width}",
            f"activation kinds = {dims.activation_kinds}",
            f"widths = ({widths[0]}, {', '.join(str(w) for w in block)} "
            f"[x{(restarts + 1) * (inner_iterations + 1)}], {widths[-1]})",
        ]
    )


EXPERIMENTS = {
    "exp-decay": run_exp_decay,
    "compare": run_compare,
    "contour": run_contour,
    "stability": run_stability,
    "recover": run_recover,
    "mask": run_mask,
}


def rerun_from_manifest(manifest_path, out_dir) -> Path:
    """Re-execute a recorded run into out_dir with its exact parameters."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema: {manifest.get('schema_version')}")
    command = manifest["command"]
    if command not in EXPERIMENTS:
        raise ValueError(f"manifest command {command!r} is not re-runnable")
    return EXPERIMENTS[command](out_dir, **manifest["params"])
