"""Monte Carlo engine: Gaussian fields on lattices, chi-bar transform,
expected-EC estimation and empirical sup-tail probabilities.

Replicate ``i`` of stream ``k`` draws from
``PCG64(SeedSequence(master_seed, spawn_key=(k, i)))``, so every replicate is
reproducible on its own. Replicates are processed in fixed-size chunks whose
composition never depends on the number of worker threads; outputs are
therefore bit-identical for any ``threads`` setting.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .euler import euler_characteristic
from .lattice import FieldSample, Lattice
from .rft import DensityFamily, LKCSolution, global_pvalue, solve_lkc

logger = logging.getLogger(__name__)

CHUNK = 64
JITTER_START = 1e-10
JITTER_MAX = 1e-6

STREAM_EC = 0
STREAM_TAIL = 1
STREAM_SINGLE = 2


@dataclass(frozen=True)
class SquaredExponentialKernel:
    """``k(x, y) = prod_d exp(-(x_d - y_d)^2 / (2 l_d^2))`` on physical coordinates."""

    length_scale: float | tuple[float, ...]

    def __post_init__(self):
        ls = self.length_scale
        vals = ls if isinstance(ls, tuple) else (ls,)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValidationError(f"length scales must be positive, got {ls}")

    def scales(self, D: int) -> np.ndarray:
        ls = self.length_scale
        if isinstance(ls, tuple):
            if len(ls) != D:
                raise ValidationError(f"kernel has {len(ls)} length scales for a {D}-D lattice")
            return np.array(ls, dtype=float)
        return np.full(D, float(ls))

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        ell = self.scales(x.shape[1])
        diff = (x[:, None, :] - y[None, :, :]) / ell
        return np.exp(-0.5 * np.sum(diff**2, axis=-1))

    def matrix(self, points: np.ndarray) -> np.ndarray:
        return self(points, points)

    def axis_matrix(self, coords: np.ndarray, d: int, D: int) -> np.ndarray:
        ell = self.scales(D)[d]
        diff = (coords[:, None] - coords[None, :]) / ell
        return np.exp(-0.5 * diff**2)


def theoretical_lkcs_box(kernel: SquaredExponentialKernel, extents: Sequence[float]) -> np.ndarray:
    """``L_0..L_D`` of an axis-aligned box for a unit-variance SE Gaussian field.

    The induced metric rescales axis ``d`` by ``1/l_d`` (second spectral
    moment ``1/l_d^2``), so ``L_j`` is the ``j``-th elementary symmetric
    polynomial of the scaled side lengths. In 2-D: ``L_1 = (a+b)/l``,
    ``L_2 = ab/l^2``.
    """
    sides = np.asarray(extents, dtype=float) / kernel.scales(len(extents))
    D = sides.size
    out = np.zeros(D + 1)
    for j in range(D + 1):
        out[j] = sum(np.prod(c) for c in itertools.combinations(sides, j))
    return out


def replicate_rng(master_seed: int, i: int, stream: int = STREAM_EC) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream), int(i)))
    return np.random.Generator(np.random.PCG64(ss))


def _cholesky_jittered(K: np.ndarray) -> np.ndarray:
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    lam = float(np.linalg.eigvalsh(K)[0])
    raise NumericalError(
        f"covariance not factorizable with jitter up to {JITTER_MAX:g} "
        f"(smallest eigenvalue {lam:.3g})"
    )


class GaussianFieldSampler:
    """Draws ``Z ~ N(0, K)`` on the included points of a lattice.

    Full rectangular lattices use the Kronecker structure of the separable
    kernel (``chol(K_1 x K_2) = chol(K_1) x chol(K_2)``); masked lattices
    factor the dense ``R x R`` covariance.
    """

    def __init__(self, lattice: Lattice, kernel: SquaredExponentialKernel):
        self.lattice = lattice
        self.kernel = kernel
        D = lattice.dims
        if lattice.mask is None:
            self.factors = [
                _cholesky_jittered(kernel.axis_matrix(ax, d, D)) for d, ax in enumerate(lattice.axes)
            ]
            self.dense = None
        else:
            self.factors = None
            self.dense = _cholesky_jittered(kernel.matrix(lattice.points()))

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Map standard normals ``(B, R)`` to correlated fields ``(B, R)``."""
        if self.dense is not None:
            return X @ self.dense.T
        B = X.shape[0]
        Z = X.reshape((B,) + self.lattice.shape)
        for d, L in enumerate(self.factors):
            Z = np.moveaxis(np.tensordot(Z, L, axes=([d + 1], [1])), -1, d + 1)
        return Z.reshape(B, -1)

    def draw_replicates(self, master_seed: int, indices: Sequence[int], stream: int) -> np.ndarray:
        R = self.lattice.R
        X = np.empty((len(indices), R))
        for row, i in enumerate(indices):
            X[row] = replicate_rng(master_seed, i, stream).standard_normal(R)
        return self.transform(X)


def sample_grf(lattice: Lattice, kernel: SquaredExponentialKernel, seed: int) -> FieldSample:
    z = GaussianFieldSampler(lattice, kernel).draw_replicates(seed, [0], STREAM_SINGLE)[0]
    return FieldSample(lattice, z)


def chibar_transform(field: FieldSample) -> FieldSample:
    return FieldSample(field.lattice, _chibar(field.values))


def _chibar(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z * z, 0.0)


TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: z,
    "chibar": _chibar,
}


def _get_transform(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return TRANSFORMS[name]
    except KeyError:
        raise ValidationError(f"unknown transform {name!r}; choose from {sorted(TRANSFORMS)}") from None


def _chunks(n: int) -> list[range]:
    return [range(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _map_chunks(fn, n: int, threads: int):
    chunks = _chunks(n)
    if threads <= 1 or len(chunks) == 1:
        return [fn(ch) for ch in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


@dataclass(frozen=True)
class MCEstimate:
    threshold: float
    mean: float
    se: float
    n_reps: int
    seed: int


def simulate_ec_table(
    lattice: Lattice,
    kernel: SquaredExponentialKernel,
    transform: str,
    thresholds: Sequence[float],
    n_reps: int,
    master_seed: int,
    threads: int = 1,
    sampler: GaussianFieldSampler | None = None,
) -> np.ndarray:
    """EC of every replicate at every threshold, shape ``(n_reps, K)``.

    All thresholds are evaluated on the same replicates.
    """
    if n_reps < 2:
        raise ValidationError("n_reps must be >= 2")
    th = [float(c) for c in thresholds]
    if not th:
        raise ValidationError("need at least one threshold")
    tf = _get_transform(transform)
    sampler = sampler or GaussianFieldSampler(lattice, kernel)

    def work(chunk: range) -> np.ndarray:
        W = tf(sampler.draw_replicates(master_seed, chunk, STREAM_EC))
        out = np.empty((len(chunk), len(th)), dtype=np.int64)
        for row, w in enumerate(W):
            f = FieldSample(lattice, w)
            for k, c in enumerate(th):
                out[row, k] = euler_characteristic(f, c)
        return out

    return np.concatenate(_map_chunks(work, n_reps, threads), axis=0)


def summarize_ec_table(table: np.ndarray, thresholds: Sequence[float], master_seed: int) -> list[MCEstimate]:
    n = table.shape[0]
    means = table.mean(axis=0)
    sds = table.std(axis=0, ddof=1)
    return [
        MCEstimate(float(c), float(m), float(s / math.sqrt(n)), n, int(master_seed))
        for c, m, s in zip(thresholds, means, sds)
    ]


def estimate_expected_ec(
    lattice: Lattice,
    kernel: SquaredExponentialKernel,
    transform: str,
    thresholds: Sequence[float],
    n_reps: int,
    master_seed: int,
    threads: int = 1,
) -> list[MCEstimate]:
    table = simulate_ec_table(lattice, kernel, transform, thresholds, n_reps, master_seed, threads)
    return summarize_ec_table(table, thresholds, master_seed)


def simulate_maxima(
    lattice: Lattice,
    kernel: SquaredExponentialKernel,
    transform: str,
    n_reps: int,
    master_seed: int,
    threads: int = 1,
    sampler: GaussianFieldSampler | None = None,
) -> np.ndarray:
    tf = _get_transform(transform)
    sampler = sampler or GaussianFieldSampler(lattice, kernel)

    def work(chunk: range) -> np.ndarray:
        return tf(sampler.draw_replicates(master_seed, chunk, STREAM_TAIL)).max(axis=1)

    return np.concatenate(_map_chunks(work, n_reps, threads))


def empirical_sup_tail(
    lattice: Lattice,
    kernel: SquaredExponentialKernel,
    transform: str,
    thresholds: Sequence[float],
    n_reps: int,
    master_seed: int,
    threads: int = 1,
) -> list[tuple[float, float]]:
    """Fraction of replicates whose maximum exceeds each threshold, with
    binomial standard errors."""
    if n_reps < 100:
        raise ValidationError("empirical_sup_tail needs n_reps >= 100")
    maxima = simulate_maxima(lattice, kernel, transform, n_reps, master_seed, threads)
    return tail_from_maxima(maxima, thresholds)


def tail_from_maxima(maxima: np.ndarray, thresholds: Sequence[float]) -> list[tuple[float, float]]:
    n = maxima.size
    out = []
    for c in thresholds:
        p = float(np.count_nonzero(maxima > c)) / n
        out.append((p, math.sqrt(p * (1.0 - p) / n)))
    return out


def calibrate_lkc(
    lattice: Lattice,
    kernel: SquaredExponentialKernel,
    transform: str,
    family: DensityFamily,
    L0: float,
    thresholds: Sequence[float],
    n_reps: int,
    master_seed: int,
    threads: int = 1,
) -> tuple[LKCSolution, np.ndarray]:
    """Monte Carlo EC estimates at ``thresholds`` fed into :func:`solve_lkc`.

    Returns the solution and the raw per-replicate EC table.
    """
    th = [float(c) for c in thresholds]
    if len(set(th)) != len(th):
        raise ValidationError(f"calibration thresholds must be distinct, got {th}")
    if len(th) != lattice.dims:
        raise ValidationError(f"need {lattice.dims} calibration thresholds for a {lattice.dims}-D lattice")
    for c in th:
        family.check_threshold(c)
    table = simulate_ec_table(lattice, kernel, transform, th, n_reps, master_seed, threads)
    est = summarize_ec_table(table, th, master_seed)
    sol = solve_lkc(family, L0, th, [e.mean for e in est], [e.se for e in est])
    logger.info("calibrated LKCs %s (condition %.3g)", sol.lkcs, sol.condition)
    return sol, table


@dataclass(frozen=True)
class ValidationRow:
    c: float
    empirical_tail: float
    empirical_se: float
    approx_pvalue: float
    approx_low: float
    approx_high: float


VALIDATION_COLUMNS = ("c", "empirical_tail", "empirical_se", "approx_pvalue", "approx_low", "approx_high")


@dataclass(frozen=True, eq=False)
class ValidationTable:
    rows: list[ValidationRow]
    lkc: LKCSolution
    calib_estimates: list[MCEstimate]

    def to_tsv(self) -> str:
        out = ["\t".join(VALIDATION_COLUMNS)]
        for r in self.rows:
            out.append("\t".join(repr(float(getattr(r, k))) for k in VALIDATION_COLUMNS))
        return "\n".join(out) + "\n"


def validation_curve(
    lattice: Lattice,
    kernel: SquaredExponentialKernel,
    transform: str,
    grid: Sequence[float],
    calib_thresholds: Sequence[float],
    n_calib: int,
    n_tail: int,
    L0: float,
    family: DensityFamily,
    seed: int,
    threads: int = 1,
) -> ValidationTable:
    """EC approximation vs. empirical ``P(sup W > c)`` over a threshold grid.

    Calibration and tail replicates use separate seed streams, so they are
    independent.
    """
    sampler = GaussianFieldSampler(lattice, kernel)
    th = [float(c) for c in calib_thresholds]
    if len(set(th)) != len(th):
        raise ValidationError(f"calibration thresholds must be distinct, got {th}")
    table = simulate_ec_table(lattice, kernel, transform, th, n_calib, seed, threads, sampler)
    est = summarize_ec_table(table, th, seed)
    sol = solve_lkc(family, L0, th, [e.mean for e in est], [e.se for e in est])
    if n_tail < 100:
        raise ValidationError("n_tail must be >= 100")
    maxima = simulate_maxima(lattice, kernel, transform, n_tail, seed, threads, sampler)
    rows = []
    for c, (p, se) in zip(grid, tail_from_maxima(maxima, grid)):
        rep = global_pvalue(c, sol)
        rows.append(ValidationRow(float(c), p, se, rep.raw_pvalue, rep.raw_pvalue - rep.se, rep.raw_pvalue + rep.se))
    return ValidationTable(rows, sol, est)
