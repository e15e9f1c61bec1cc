"""Two-dimensional bump hunt: uniform background plus a Gaussian bump of
known width at an unknown location.

Event density on a region of area ``A``::

    h(x | eta, theta) = (1 - eta) / A + eta * exp(-|x - theta|^2 / (2 nu^2)) / k(theta)

with ``k(theta)`` the Gaussian integral over the region. The test is
``eta = 0`` vs ``eta > 0``; ``theta`` only exists under the alternative, so the
profile LRT is evaluated on a lattice and its supremum calibrated with the
EC approximation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .errors import FieldError, FieldParseError, ModelError, ValidationError
from .euler import euler_characteristic
from .lattice import FieldSample, Lattice, build_lattice
from .rft import CHIBAR01, LKCSolution, PValueReport, global_pvalue, solve_lkc
from .simulate import (
    STREAM_EC,
    SquaredExponentialKernel,
    calibrate_lkc,
    replicate_rng,
    summarize_ec_table,
)

logger = logging.getLogger(__name__)

EVENTS_HEADER = "# tohm-events v1"
ETA_TOL = 1e-9
FAR_CUTOFF = 10.0  # in units of nu; exp(-50) is below double resolution of u
MIN_MASS = 1e-6


@dataclass(frozen=True)
class Region:
    """Search region: a disc (``center``, ``radius``) or a rectangle (``bounds``)."""

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)  # x0, x1, y0, y1

    def __post_init__(self):
        if self.kind == "disc":
            if not self.radius > 0:
                raise ValidationError("disc radius must be positive")
        elif self.kind == "rect":
            x0, x1, y0, y1 = self.bounds
            if not (x1 > x0 and y1 > y0):
                raise ValidationError("rectangle bounds must satisfy x0 < x1 and y0 < y1")
        else:
            raise ValidationError(f"unknown region kind {self.kind!r}")

    @classmethod
    def disc(cls, center: Sequence[float], radius: float) -> "Region":
        return cls("disc", center=(float(center[0]), float(center[1])), radius=float(radius))

    @classmethod
    def rect(cls, x0: float, x1: float, y0: float, y1: float) -> "Region":
        return cls("rect", bounds=(float(x0), float(x1), float(y0), float(y1)))

    @property
    def area(self) -> float:
        if self.kind == "disc":
            return math.pi * self.radius**2
        x0, x1, y0, y1 = self.bounds
        return (x1 - x0) * (y1 - y0)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        if self.kind == "disc":
            cx, cy = self.center
            r = self.radius
            return cx - r, cx + r, cy - r, cy + r
        return self.bounds

    @property
    def centroid(self) -> tuple[float, float]:
        if self.kind == "disc":
            return self.center
        x0, x1, y0, y1 = self.bounds
        return 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "disc":
            cx, cy = self.center
            # small slack so grid points on the circle are kept despite rounding
            return (x - cx) ** 2 + (y - cy) ** 2 <= self.radius**2 * (1 + 1e-12)
        x0, x1, y0, y1 = self.bounds
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def gaussian_mass(self, theta: Sequence[float], nu: float) -> float:
        """Probability that ``N(theta, nu^2 I)`` lands inside the region."""
        t1, t2 = float(theta[0]), float(theta[1])
        if self.kind == "rect":
            x0, x1, y0, y1 = self.bounds
            px = special.ndtr((x1 - t1) / nu) - special.ndtr((x0 - t1) / nu)
            py = special.ndtr((y1 - t2) / nu) - special.ndtr((y0 - t2) / nu)
            return float(px * py)
        cx, cy = self.center
        r = self.radius
        lo = max(cx - r, t1 - FAR_CUTOFF * nu)
        hi = min(cx + r, t1 + FAR_CUTOFF * nu)
        if lo >= hi:
            return 0.0

        def inner(x):
            h = math.sqrt(max(r * r - (x - cx) ** 2, 0.0))
            py = special.ndtr((cy + h - t2) / nu) - special.ndtr((cy - h - t2) / nu)
            return math.exp(-0.5 * ((x - t1) / nu) ** 2) / (nu * math.sqrt(2 * math.pi)) * py

        val, _ = integrate.quad(inner, lo, hi, epsabs=1e-15, epsrel=1e-10, limit=200)
        return float(val)

    def lattice(self, step: float) -> Lattice:
        """Grid of spacing ``step`` over the bounding box, masked to the region.

        Rectangles are gridded from their lower-left corner; discs from the
        centre outwards so the centre is always a lattice point.
        """
        if not step > 0:
            raise ValidationError("grid step must be positive")
        if self.kind == "disc":
            cx, cy = self.center
            m = int(math.floor(self.radius / step + 1e-9))
            offs = np.arange(-m, m + 1) * step
            axes = [cx + offs, cy + offs]
        else:
            x0, x1, y0, y1 = self.bounds
            axes = [
                x0 + np.arange(int(math.floor((x1 - x0) / step + 1e-9)) + 1) * step,
                y0 + np.arange(int(math.floor((y1 - y0) / step + 1e-9)) + 1) * step,
            ]
        return build_lattice(axes, mask=lambda X, Y: self.contains(X, Y))

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x0, x1, y0, y1 = self.bbox
        out = np.empty((0, 2))
        while out.shape[0] < n:
            need = n - out.shape[0]
            batch = int(need * 1.3) + 16
            pts = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
            out = np.vstack([out, pts[self.contains(pts[:, 0], pts[:, 1])]])
        return out[:n]


@dataclass(frozen=True)
class BumpModel:
    region: Region
    nu: float = 0.5
    eta: float = 0.0
    theta: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValidationError("nu must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError("eta must lie in [0, 1]")
        if self.eta > 0:
            if self.theta is None:
                raise ValidationError("a signal (eta > 0) needs a location theta")
            if not bool(self.region.contains(*self.theta)):
                raise ValidationError(f"theta {self.theta} lies outside the region")


@dataclass(frozen=True, eq=False)
class EventSet:
    xy: np.ndarray  # (n, 2)

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValidationError("events must be an (n, 2) array")
        if not np.all(np.isfinite(xy)):
            raise ValidationError("event coordinates must be finite")
        xy = xy.copy()
        xy.setflags(write=False)
        object.__setattr__(self, "xy", xy)

    def __len__(self) -> int:
        return self.xy.shape[0]

    def check_inside(self, region: Region) -> None:
        inside = region.contains(self.xy[:, 0], self.xy[:, 1])
        if not inside.all():
            i = int(np.flatnonzero(~inside)[0])
            raise ValidationError(f"event {i} at {tuple(self.xy[i])} lies outside the region")


def simulate_events(model: BumpModel, n: int, seed: int | np.random.Generator) -> EventSet:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n < 1:
        raise ValidationError("need at least one event")
    n_sig = int(rng.binomial(n, model.eta)) if model.eta > 0 else 0
    bg = model.region.sample_uniform(rng, n - n_sig)
    if n_sig:
        mass = model.region.gaussian_mass(model.theta, model.nu)
        if mass < MIN_MASS:
            raise ModelError(f"Gaussian mass inside the region is {mass:.3g}; rejection sampling would stall")
        sig = np.empty((0, 2))
        while sig.shape[0] < n_sig:
            batch = int((n_sig - sig.shape[0]) / mass * 1.2) + 16
            pts = rng.normal(model.theta, model.nu, size=(batch, 2))
            sig = np.vstack([sig, pts[model.region.contains(pts[:, 0], pts[:, 1])]])
        xy = np.vstack([bg, sig[:n_sig]])
    else:
        xy = bg
    return EventSet(xy[rng.permutation(n)])


def format_events(ev: EventSet) -> str:
    lines = [EVENTS_HEADER] + [f"{x!r}\t{y!r}" for x, y in ev.xy.tolist()]
    return "\n".join(lines) + "\n"


def save_events(ev: EventSet, path: str | Path) -> None:
    Path(path).write_text(format_events(ev), encoding="utf-8")


def load_events(path: str | Path) -> EventSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != EVENTS_HEADER:
        raise FieldParseError(f"expected header {EVENTS_HEADER!r}", 1)
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 2:
            raise FieldParseError(f"expected two columns, found {len(parts)}", i)
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise FieldParseError(f"cannot parse {s!r}", i) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise FieldParseError("non-finite coordinate", i)
        rows.append((x, y))
    if not rows:
        raise FieldParseError("no events", len(lines))
    return EventSet(np.array(rows))


def bump_normalizers(region: Region, points: np.ndarray, nu: float) -> np.ndarray:
    """``k(theta)`` for every lattice point (Gaussian integral over the region)."""
    mass = np.array([region.gaussian_mass(p, nu) for p in points])
    return 2 * math.pi * nu * nu * mass


def _profile_eta(u_near: np.ndarray, n_far: np.ndarray, points: np.ndarray, idx0: int):
    """Maximise ``sum log(1 + eta u)`` over ``eta in [0, 1]`` for each row.

    ``n_far`` events per row have ``u = -1`` to machine precision and are
    folded in analytically. The objective is concave in ``eta``, so a
    bracketed Newton iteration on its derivative finds the unique maximiser.
    """
    m = u_near.shape[0]
    eta = np.zeros(m)
    f0 = u_near.sum(axis=1) - n_far
    active = np.flatnonzero(f0 > 0)
    if active.size == 0:
        return eta
    # eta = 1 is optimal when the derivative is still >= 0 there
    with np.errstate(divide="ignore", invalid="ignore"):
        one_plus = 1.0 + u_near[active]
        ok1 = (n_far[active] == 0) & np.all(one_plus > 0, axis=1)
        f1 = np.where(ok1, np.sum(u_near[active] / np.where(one_plus > 0, one_plus, 1.0), axis=1), -np.inf)
    at_one = f1 >= 0
    eta[active[at_one]] = 1.0
    active = active[~at_one]
    lo = np.zeros(active.size)
    hi = np.ones(active.size)
    x = np.full(active.size, 0.5)
    for _ in range(200):
        if active.size == 0:
            break
        u = u_near[active]
        nf = n_far[active]
        den = 1.0 + x[:, None] * u
        g = np.sum(u / den, axis=1) - nf / (1.0 - x)
        h = -np.sum((u / den) ** 2, axis=1) - nf / (1.0 - x) ** 2
        pos = g > 0
        lo = np.where(pos, x, lo)
        hi = np.where(pos, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - g / h
        inside = (newton > lo) & (newton < hi) & np.isfinite(newton)
        x_new = np.where(inside, newton, 0.5 * (lo + hi))
        done = (hi - lo < ETA_TOL) | (np.abs(x_new - x) < 1e-13) | (g == 0)
        eta[active[done]] = x_new[done]
        keep = ~done
        active, lo, hi, x = active[keep], lo[keep], hi[keep], x_new[keep]
    if active.size:
        j = int(active[0])
        raise FieldError(
            f"eta profile did not converge at lattice point {idx0 + j} (theta = {tuple(points[j])})"
        )
    return eta


def profile_lrt(
    events: EventSet,
    lattice: Lattice,
    nu: float,
    region: Region,
    normalizers: np.ndarray | None = None,
    chunk: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """LRT ``W(theta) = 2 [max_eta l(eta, theta) - l(0)]`` and ``eta_hat`` per point."""
    if len(events) == 0:
        raise ValidationError("need at least one event")
    pts = lattice.points()
    if pts.shape[1] != 2:
        raise ValidationError("the bump hunt needs a 2-D lattice")
    if not region.contains(pts[:, 0], pts[:, 1]).all():
        raise ValidationError("every lattice point must lie inside the region")
    k = bump_normalizers(region, pts, nu) if normalizers is None else np.asarray(normalizers)
    if np.any(k <= 0):
        bad = int(np.flatnonzero(k <= 0)[0])
        raise FieldError(f"zero Gaussian mass at lattice point {bad}")
    A = region.area
    xy = events.xy
    n = xy.shape[0]
    cut = FAR_CUTOFF * nu
    W = np.empty(lattice.R)
    eta_hat = np.empty(lattice.R)
    order = np.argsort(xy[:, 0], kind="stable")
    xs = xy[order, 0]
    for s in range(0, lattice.R, chunk):
        P = pts[s : s + chunk]
        # events that can matter for any point in this chunk
        a = np.searchsorted(xs, P[:, 0].min() - cut, side="left")
        b = np.searchsorted(xs, P[:, 0].max() + cut, side="right")
        sel = order[a:b]
        E = xy[sel]
        E = E[(E[:, 1] >= P[:, 1].min() - cut) & (E[:, 1] <= P[:, 1].max() + cut)]
        d2 = (P[:, 0, None] - E[None, :, 0]) ** 2 + (P[:, 1, None] - E[None, :, 1]) ** 2
        u = A * np.exp(-0.5 * d2 / nu**2) / k[s : s + chunk, None] - 1.0
        n_far = np.full(P.shape[0], float(n - E.shape[0]))
        e = _profile_eta(u, n_far, P, s)
        with np.errstate(divide="ignore"):
            ll = np.sum(np.log1p(e[:, None] * u), axis=1) + n_far * np.log1p(-e)
        W[s : s + chunk] = np.maximum(2.0 * np.where(e > 0, ll, 0.0), 0.0)
        eta_hat[s : s + chunk] = e
    return W, eta_hat


def lrt_field(events: EventSet, lattice: Lattice, nu: float, region: Region, normalizers=None) -> FieldSample:
    W, _ = profile_lrt(events, lattice, nu, region, normalizers)
    return FieldSample(lattice, W)


def matched_kernel(nu: float) -> SquaredExponentialKernel:
    """SE kernel matching the null correlation of the LRT score field.

    For a Gaussian bump of width ``nu`` on a large region the score field has
    correlation ``exp(-|t - t'|^2 / (4 nu^2))``, i.e. length scale ``sqrt(2) nu``.
    """
    return SquaredExponentialKernel(math.sqrt(2.0) * nu)


@dataclass(frozen=True)
class Calibration:
    thresholds: tuple[float, ...] = (1.0, 8.0)
    n_reps: int = 100
    L0: float = 1.0
    seed: int = 0
    kernel: SquaredExponentialKernel | None = None
    mode: str = "kernel"  # "kernel" | "exact"
    n_events: int | None = None
    threads: int = 1

    def __post_init__(self):
        th = tuple(float(c) for c in self.thresholds)
        object.__setattr__(self, "thresholds", th)
        if len(set(th)) != len(th):
            raise ValidationError(f"calibration thresholds must be distinct, got {list(th)}")
        if self.mode not in ("kernel", "exact"):
            raise ValidationError(f"calibration mode must be 'kernel' or 'exact', got {self.mode!r}")
        if self.n_reps < 2:
            raise ValidationError("calibration needs n_reps >= 2")


def calibrate_null(
    lattice: Lattice,
    region: Region,
    nu: float,
    calib: Calibration,
    n_events: int | None = None,
    normalizers: np.ndarray | None = None,
) -> LKCSolution:
    """LKCs of the null LRT field.

    ``kernel`` mode simulates chi-bar fields from a smooth Gaussian kernel
    (default :func:`matched_kernel`); ``exact`` mode re-simulates background
    events and recomputes the LRT field for every replicate (slow).
    """
    if calib.mode == "kernel":
        kernel = calib.kernel or matched_kernel(nu)
        sol, _ = calibrate_lkc(
            lattice, kernel, "chibar", CHIBAR01, calib.L0, calib.thresholds,
            calib.n_reps, calib.seed, calib.threads,
        )
        return sol
    n_ev = calib.n_events or n_events
    if not n_ev:
        raise ValidationError("exact calibration needs the number of events")
    k = bump_normalizers(region, lattice.points(), nu) if normalizers is None else normalizers
    model = BumpModel(region, nu, 0.0)
    table = np.empty((calib.n_reps, len(calib.thresholds)), dtype=np.int64)
    for i in range(calib.n_reps):
        ev = simulate_events(model, n_ev, replicate_rng(calib.seed, i, STREAM_EC))
        f = lrt_field(ev, lattice, nu, region, k)
        table[i] = [euler_characteristic(f, c) for c in calib.thresholds]
    est = summarize_ec_table(table, calib.thresholds, calib.seed)
    return solve_lkc(CHIBAR01, calib.L0, calib.thresholds, [e.mean for e in est], [e.se for e in est])


@dataclass(frozen=True, eq=False)
class BumpHuntResult:
    report: PValueReport
    argmax_index: int
    argmax: tuple[float, float]
    eta_hat: float
    field: FieldSample = field(repr=False)

    def format(self) -> str:
        return "\n".join(
            [
                f"argmax theta = ({self.argmax[0]:.6g}, {self.argmax[1]:.6g})",
                f"eta_hat = {self.eta_hat:.6g}",
                f"sup W = {self.report.c:.6g}",
                self.report.format(),
            ]
        )


def bump_hunt_pipeline(
    events: EventSet,
    lattice: Lattice,
    nu: float,
    region: Region,
    calib: Calibration,
    lkc: LKCSolution | None = None,
    normalizers: np.ndarray | None = None,
) -> BumpHuntResult:
    """Observed LRT field, its supremum and the calibrated global p-value.

    Pass a precomputed ``lkc`` to reuse one calibration across datasets.
    """
    events.check_inside(region)
    k = bump_normalizers(region, lattice.points(), nu) if normalizers is None else normalizers
    W, eta_hat = profile_lrt(events, lattice, nu, region, k)
    field_ = FieldSample(lattice, W)
    if lkc is None:
        lkc = calibrate_null(lattice, region, nu, calib, n_events=len(events), normalizers=k)
    r = field_.argmax()
    c = float(W[r])
    if c <= 0:
        # no evidence for a signal anywhere: sup W = 0 has global p-value 1
        rep = PValueReport(c, CHIBAR01, 1.0, 0.0, lkc, note="sup W = 0")
    else:
        rep = global_pvalue(c, lkc)
    xy = lattice.coordinates(r)
    return BumpHuntResult(rep, r, (xy[0], xy[1]), float(eta_hat[r]), field_)
