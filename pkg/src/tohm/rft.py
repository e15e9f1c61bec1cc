"""EC densities, Lipschitz-Killing curvature estimation and global p-values.

The expected EC of an excursion set above ``c`` expands as
``sum_d L_d * rho_d(c)``. Given Monte Carlo estimates of the expected EC at
``D`` distinct thresholds and a known ``L_0``, the remaining curvatures solve a
``D x D`` linear system; plugging them back in gives the global p-value
approximation at any ``c``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .errors import CapabilityError, DomainError, FieldParseError, SolveError, ValidationError

TWO_PI = 2.0 * math.pi
DEFAULT_COND_WARN = 1e8
COND_FAIL = 1e13

LKC_MAGIC = "tohm-lkc"
LKC_VERSION = "v1"


class ConditioningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DensityFamily:
    kind: str  # "gaussian" | "chisquare" | "chibar01"
    dof: int | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "chisquare", "chibar01"):
            raise ValidationError(f"unknown density family {self.kind!r}")
        if self.kind == "chisquare":
            if self.dof is None or int(self.dof) != self.dof or self.dof < 1:
                raise ValidationError("chi-square family needs an integer dof >= 1")
        elif self.dof is not None:
            raise ValidationError(f"{self.kind} family takes no degrees of freedom")

    @property
    def max_dim(self) -> int:
        return 5 if self.kind == "gaussian" else 3

    @property
    def name(self) -> str:
        return f"chisquare:{self.dof}" if self.kind == "chisquare" else self.kind

    @classmethod
    def parse(cls, text: str) -> "DensityFamily":
        t = text.strip().lower()
        if t in ("gaussian", "normal"):
            return cls("gaussian")
        if t in ("chibar01", "chibar"):
            return cls("chibar01")
        if t.startswith("chisquare"):
            _, _, s = t.partition(":")
            try:
                return cls("chisquare", int(s))
            except ValueError:
                raise ValidationError(f"bad chi-square family {text!r}; use chisquare:<dof>") from None
        raise ValidationError(f"unknown density family {text!r}")

    def check_threshold(self, c: float) -> None:
        if not math.isfinite(c):
            raise DomainError(f"threshold must be finite, got {c}")
        if self.kind != "gaussian" and c <= 0:
            raise DomainError(f"{self.name} EC densities need c > 0, got {c}")

    def __str__(self) -> str:
        return self.name


GAUSSIAN = DensityFamily("gaussian")
CHIBAR01 = DensityFamily("chibar01")


def chisquare(s: int) -> DensityFamily:
    return DensityFamily("chisquare", s)


# Hermite polynomials He_{d-1}(c) for the Gaussian densities, d = 1..5
_GAUSS_POLY = {
    1: lambda c: 1.0,
    2: lambda c: c,
    3: lambda c: c * c - 1.0,
    4: lambda c: c**3 - 3.0 * c,
    5: lambda c: c**4 - 6.0 * c * c + 3.0,
}


def normal_sf(c: float) -> float:
    """Upper standard-normal tail, accurate far into the tail (no ``1 - Phi``)."""
    return float(special.ndtr(-c))


def _gaussian_density(d: int, c: float) -> float:
    if d == 0:
        return normal_sf(c)
    return _GAUSS_POLY[d](c) * math.exp(-0.5 * c * c) / TWO_PI ** ((d + 1) / 2)


def _chisq_density(s: int, d: int, c: float) -> float:
    if d == 0:
        return float(special.chdtrc(s, c))
    # common factor c^{(s-d)/2} e^{-c/2} / ((2 pi)^{d/2} Gamma(s/2) 2^{(s-2)/2})
    log_base = (
        0.5 * (s - d) * math.log(c)
        - 0.5 * c
        - 0.5 * d * math.log(TWO_PI)
        - special.gammaln(0.5 * s)
        - 0.5 * (s - 2) * math.log(2.0)
    )
    if d == 1:
        poly = 1.0
    elif d == 2:
        poly = c - (s - 1) * (s >= 2)
    else:
        poly = (s - 1) * (s - 2) * (s >= 3) - 2 * (s - 1) * c * (s >= 2) + (c * c - c) * (s >= 1)
    return poly * math.exp(log_base)


def ec_density(family: DensityFamily, d: int, c: float) -> float:
    """EC density ``rho_d(c)``; ``rho_0`` is the marginal tail ``P(W > c)``."""
    if not 0 <= d <= family.max_dim:
        raise CapabilityError(
            f"{family.name} EC densities are available for d = 0..{family.max_dim}, got d = {d}"
        )
    c = float(c)
    family.check_threshold(c)
    if family.kind == "gaussian":
        return _gaussian_density(d, c)
    if family.kind == "chisquare":
        return _chisq_density(family.dof, d, c)
    # 50:50 mixture of a zero field and chi^2_1; the zero field adds nothing for c > 0
    return 0.5 * _chisq_density(1, d, c)


def ec_densities(family: DensityFamily, D: int, c: float) -> np.ndarray:
    return np.array([ec_density(family, d, c) for d in range(D + 1)])


def expected_ec(family: DensityFamily, L0: float, lkcs: Sequence[float], c: float) -> float:
    lk = np.asarray(lkcs, dtype=float).ravel()
    rho = ec_densities(family, lk.size, c)
    return float(L0 * rho[0] + np.dot(lk, rho[1:]))


@dataclass(frozen=True, eq=False)
class LKCSolution:
    family: DensityFamily
    L0: float
    thresholds: np.ndarray
    lkcs: np.ndarray
    covariance: np.ndarray
    ec_means: np.ndarray | None = None
    ec_se: np.ndarray | None = None
    condition: float = float("nan")

    @property
    def D(self) -> int:
        return int(self.lkcs.size)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_tsv(self) -> str:
        f = lambda xs: "\t".join(repr(float(x)) for x in np.ravel(xs))  # noqa: E731
        rows = [
            f"# {LKC_MAGIC} {LKC_VERSION}",
            f"family\t{self.family.name}",
            f"L0\t{float(self.L0)!r}",
            f"thresholds\t{f(self.thresholds)}",
            f"lkcs\t{f(self.lkcs)}",
            f"covariance\t{f(self.covariance)}",
        ]
        if self.ec_means is not None:
            rows.append(f"ec_means\t{f(self.ec_means)}")
        if self.ec_se is not None:
            rows.append(f"ec_se\t{f(self.ec_se)}")
        if math.isfinite(self.condition):
            rows.append(f"condition\t{float(self.condition)!r}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "LKCSolution":
        lines = text.splitlines()
        if not lines or lines[0].split() != ["#", LKC_MAGIC, LKC_VERSION]:
            raise FieldParseError(f"expected header '# {LKC_MAGIC} {LKC_VERSION}'", 1)
        rec: dict[str, list[str]] = {}
        where: dict[str, int] = {}
        for i, line in enumerate(lines[1:], start=2):
            if not line.strip() or line.startswith("#"):
                continue
            key, *vals = line.split("\t")
            rec[key.strip()] = vals
            where[key.strip()] = i
        for key in ("family", "L0", "thresholds", "lkcs", "covariance"):
            if key not in rec:
                raise FieldParseError(f"missing '{key}' row", len(lines))

        def nums(key):
            try:
                out = np.array([float(v) for v in rec[key]])
            except ValueError:
                raise FieldParseError(f"non-numeric entry in '{key}'", where[key]) from None
            if not np.all(np.isfinite(out)):
                raise FieldParseError(f"non-finite entry in '{key}'", where[key])
            return out

        try:
            family = DensityFamily.parse(rec["family"][0] if rec["family"] else "")
        except ValidationError as e:
            raise FieldParseError(str(e), where["family"]) from None
        L0 = nums("L0")
        if L0.size != 1:
            raise FieldParseError("'L0' must hold one number", where["L0"])
        th, lk, cov = nums("thresholds"), nums("lkcs"), nums("covariance")
        D = lk.size
        if D < 1 or th.size != D or cov.size != D * D:
            raise FieldParseError(
                f"inconsistent sizes: {th.size} thresholds, {D} lkcs, {cov.size} covariance entries",
                where["covariance"],
            )
        if D > family.max_dim:
            raise FieldParseError(f"{family.name} supports at most D = {family.max_dim}", where["lkcs"])
        extra = {}
        for key in ("ec_means", "ec_se"):
            if key in rec:
                extra[key] = nums(key)
        cond = float(nums("condition")[0]) if "condition" in rec else float("nan")
        return cls(family, float(L0[0]), th, lk, cov.reshape(D, D), condition=cond, **extra)


def write_lkc_record(sol: LKCSolution, path: str | Path) -> None:
    Path(path).write_text(sol.to_tsv(), encoding="utf-8")


def read_lkc_record(path: str | Path) -> LKCSolution:
    return LKCSolution.from_tsv(Path(path).read_text(encoding="utf-8"))


def density_matrix(family: DensityFamily, thresholds: Sequence[float]) -> np.ndarray:
    """``M[k, d-1] = rho_d(c_k)`` for ``d = 1..D``."""
    D = len(thresholds)
    return np.array([ec_densities(family, D, c)[1:] for c in thresholds])


def solve_lkc(
    family: DensityFamily,
    L0: float,
    thresholds: Sequence[float],
    ec_means: Sequence[float],
    ec_se: Sequence[float] | None = None,
    cond_warn: float = DEFAULT_COND_WARN,
) -> LKCSolution:
    """Solve ``M L = E[phi] - L0 rho_0`` for ``L_1..L_D``.

    Rows are equilibrated (scaled to unit max-abs) before solving, since
    densities at different thresholds can differ by many orders of magnitude;
    the reported condition number is that of the equilibrated matrix. The
    solution is linear in the EC estimates, so the covariance
    ``M^-1 diag(se^2) M^-T`` is exact under independent per-threshold errors.
    """
    th = np.asarray(thresholds, dtype=float).ravel()
    b_hat = np.asarray(ec_means, dtype=float).ravel()
    D = th.size
    if D < 1:
        raise ValidationError("need at least one threshold")
    if b_hat.size != D:
        raise ValidationError(f"{D} thresholds but {b_hat.size} EC estimates")
    if D > family.max_dim:
        raise CapabilityError(f"{family.name} densities only support D <= {family.max_dim}")
    if np.unique(th).size != D:
        raise ValidationError(f"thresholds must be pairwise distinct, got {th.tolist()}")
    se = np.zeros(D) if ec_se is None else np.asarray(ec_se, dtype=float).ravel()
    if se.size != D or np.any(se < 0):
        raise ValidationError("standard errors must be nonnegative, one per threshold")

    M = density_matrix(family, th)
    rho0 = np.array([ec_density(family, 0, c) for c in th])
    b = b_hat - L0 * rho0

    scale = np.max(np.abs(M), axis=1)
    if np.any(scale == 0):
        raise SolveError("density matrix has a zero row", float("inf"))
    Ms = M / scale[:, None]
    cond = float(np.linalg.cond(Ms))
    if not math.isfinite(cond) or cond > COND_FAIL:
        raise SolveError(f"density matrix is singular (condition number {cond:.3g})", cond)
    if cond > cond_warn:
        warnings.warn(
            f"density matrix is ill-conditioned (condition number {cond:.3g})",
            ConditioningWarning,
            stacklevel=2,
        )
    Minv = np.linalg.solve(Ms, np.diag(1.0 / scale))
    lkcs = Minv @ b
    cov = Minv @ np.diag(se**2) @ Minv.T
    cov = 0.5 * (cov + cov.T)
    return LKCSolution(family, float(L0), th, lkcs, cov, b_hat.copy(), se.copy(), cond)


def sigma_significance(pvalue: float) -> float:
    """``Phi^-1(1 - p)`` evaluated as ``-Phi^-1(p)`` to stay exact for tiny p."""
    p = float(pvalue)
    if not 0.0 < p < 1.0:
        raise DomainError(f"p-value must lie in (0, 1), got {pvalue}")
    return float(-special.ndtri(p))


def _sigma_or_inf(p: float) -> float:
    if p <= 0.0:
        return math.inf
    if p >= 1.0:
        return -math.inf
    return sigma_significance(p)


@dataclass(frozen=True, eq=False)
class PValueReport:
    c: float
    family: DensityFamily
    raw_pvalue: float
    se: float
    lkc: LKCSolution
    label: str = "approximation (EC heuristic); not an upper bound"
    note: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def pvalue(self) -> float:
        return min(max(self.raw_pvalue, 0.0), 1.0)

    @property
    def sigma(self) -> float:
        return _sigma_or_inf(self.pvalue)

    @property
    def mc_interval(self) -> tuple[float, float]:
        lo = min(max(self.raw_pvalue - self.se, 0.0), 1.0)
        hi = min(max(self.raw_pvalue + self.se, 0.0), 1.0)
        return lo, hi

    @property
    def sigma_interval(self) -> tuple[float, float]:
        lo, hi = self.mc_interval
        return _sigma_or_inf(hi), _sigma_or_inf(lo)

    def format(self) -> str:
        s_lo, s_hi = self.sigma_interval
        lines = [
            f"threshold c = {self.c:.6g}",
            f"family = {self.family.name}",
            f"p-value = {self.pvalue:.4g}" + ("" if self.pvalue == self.raw_pvalue else f" (raw {self.raw_pvalue:.4g})"),
            f"significance = {self.sigma:.3f}σ",
            f"MC error = {self.se:.4g}",
            f"significance interval = [{s_lo:.3f}σ, {s_hi:.3f}σ]",
            f"label = {self.label}",
        ]
        if self.note:
            lines.append(f"note = {self.note}")
        return "\n".join(lines)


def global_pvalue(c: float, lkc: LKCSolution, family: DensityFamily | None = None) -> PValueReport:
    """Plug-in p-value ``L0 rho_0(c) + sum_d L*_d rho_d(c)`` with its MC error.

    The standard error propagates the LKC covariance through the (linear in
    ``L``) formula.
    """
    fam = lkc.family if family is None else family
    if fam != lkc.family:
        raise ValidationError(f"LKC solution was computed for {lkc.family.name}, not {fam.name}")
    c = float(c)
    rho = ec_densities(fam, lkc.D, c)
    raw = float(lkc.L0 * rho[0] + np.dot(lkc.lkcs, rho[1:]))
    g = rho[1:]
    var = float(g @ lkc.covariance @ g)
    return PValueReport(c, fam, raw, math.sqrt(max(var, 0.0)), lkc)
