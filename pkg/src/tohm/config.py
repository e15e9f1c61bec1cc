"""INI-style run configuration shared by the CLI commands.

Numbers lists are comma separated; ranges may be written ``start:stop:num``
(inclusive, like ``numpy.linspace``). Lattice axes are separated by ``;``.

Example::

    [run]
    seed = 7
    threads = 4

    [lattice]
    axes = 0:49:50; 0:49:50
    mask = none

    [kernel]
    length_scale = 5

    [calibrate]
    family = chibar01
    transform = chibar
    thresholds = 1, 8
    n_reps = 100
    L0 = 1
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bumphunt import Calibration, Region
from .errors import ValidationError
from .lattice import Lattice, build_lattice
from .rft import DensityFamily
from .simulate import SquaredExponentialKernel


def parse_numbers(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    if ":" in text and "," not in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"range must be start:stop:num, got {text!r}")
        try:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ValidationError(f"bad range {text!r}") from None
        if n < 1:
            raise ValidationError(f"range needs num >= 1, got {text!r}")
        return np.linspace(a, b, n).tolist()
    out = []
    for tok in text.replace(",", " ").split():
        try:
            out.append(float(tok))
        except ValueError:
            raise ValidationError(f"not a number: {tok!r}") from None
    return out


@dataclass
class RunConfig:
    parser: configparser.ConfigParser = field(default_factory=configparser.ConfigParser)
    source: str = "<defaults>"

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        if path is None:
            return cls(cp)
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file not found: {p}")
        try:
            cp.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except configparser.Error as e:
            raise ValidationError(f"malformed config {p}: {e}") from None
        return cls(cp, str(p))

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cp.read_string(text)
        return cls(cp, "<string>")

    def set(self, section: str, key: str, value) -> None:
        if not self.parser.has_section(section):
            self.parser.add_section(section)
        self.parser.set(section, key, str(value))

    # typed getters -------------------------------------------------------

    def raw(self, section: str, key: str, default=None):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if default is None:
            raise ValidationError(f"[{section}] {key} is required ({self.source})")
        return default

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def get_int(self, section: str, key: str, default=None, minimum: int | None = None) -> int:
        v = self.raw(section, key, None if default is None else str(default))
        try:
            out = int(v)
        except ValueError:
            raise ValidationError(f"[{section}] {key} must be an integer, got {v!r}") from None
        if minimum is not None and out < minimum:
            raise ValidationError(f"[{section}] {key} must be >= {minimum}, got {out}")
        return out

    def get_float(self, section: str, key: str, default=None, positive: bool = False) -> float:
        v = self.raw(section, key, None if default is None else repr(float(default)))
        try:
            out = float(v)
        except ValueError:
            raise ValidationError(f"[{section}] {key} must be a number, got {v!r}") from None
        if not np.isfinite(out) or (positive and out <= 0):
            raise ValidationError(f"[{section}] {key} must be {'positive' if positive else 'finite'}, got {v!r}")
        return out

    def get_floats(self, section: str, key: str, default=None) -> list[float]:
        v = self.raw(section, key, default)
        try:
            return parse_numbers(v)
        except ValidationError as e:
            raise ValidationError(f"[{section}] {key}: {e}") from None

    # domain objects -------------------------------------------------------

    def seed(self) -> int:
        return self.get_int("run", "seed", 0, minimum=0)

    def threads(self) -> int:
        default = os.cpu_count() or 1
        return self.get_int("run", "threads", default, minimum=1)

    def lattice(self) -> Lattice:
        spec = self.raw("lattice", "axes")
        axes = [parse_numbers(a) for a in spec.split(";")]
        mask_kind = self.raw("lattice", "mask", "none").lower()
        if mask_kind == "none":
            return build_lattice(axes)
        if mask_kind == "disc":
            c = self.get_floats("lattice", "mask_center")
            r = self.get_float("lattice", "mask_radius", positive=True)
            if len(c) != len(axes):
                raise ValidationError("[lattice] mask_center needs one coordinate per axis")
            return build_lattice(
                axes, mask=lambda *g: sum((x - cc) ** 2 for x, cc in zip(g, c)) <= r * r * (1 + 1e-12)
            )
        raise ValidationError(f"[lattice] mask must be 'none' or 'disc', got {mask_kind!r}")

    def kernel(self, D: int) -> SquaredExponentialKernel:
        ls = self.get_floats("kernel", "length_scale")
        if len(ls) == 1:
            k = SquaredExponentialKernel(ls[0])
        else:
            k = SquaredExponentialKernel(tuple(ls))
        k.scales(D)
        return k

    def family(self, section: str = "calibrate") -> DensityFamily:
        return DensityFamily.parse(self.raw(section, "family", "chibar01"))

    def transform(self, section: str = "calibrate") -> str:
        t = self.raw(section, "transform", "chibar")
        if t not in ("identity", "chibar"):
            raise ValidationError(f"[{section}] transform must be identity or chibar, got {t!r}")
        return t

    def thresholds(self, section: str = "calibrate") -> list[float]:
        th = self.get_floats(section, "thresholds")
        if not th:
            raise ValidationError(f"[{section}] thresholds is empty")
        if len(set(th)) != len(th):
            raise ValidationError(f"[{section}] thresholds must be pairwise distinct, got {th}")
        return th

    def region(self) -> Region:
        kind = self.raw("bumphunt", "region", "disc").lower()
        if kind == "disc":
            c = self.get_floats("bumphunt", "center")
            if len(c) != 2:
                raise ValidationError("[bumphunt] center needs two coordinates")
            return Region.disc(c, self.get_float("bumphunt", "radius", positive=True))
        if kind == "rect":
            b = self.get_floats("bumphunt", "bounds")
            if len(b) != 4:
                raise ValidationError("[bumphunt] bounds needs x0, x1, y0, y1")
            return Region.rect(*b)
        raise ValidationError(f"[bumphunt] region must be disc or rect, got {kind!r}")

    def calibration(self, threads: int, seed: int) -> Calibration:
        kernel = None
        if self.has("kernel", "length_scale"):
            kernel = self.kernel(2)
        n_events = self.get_int("bumphunt", "n_events", 0, minimum=0) or None
        return Calibration(
            thresholds=tuple(self.thresholds()),
            n_reps=self.get_int("calibrate", "n_reps", 100, minimum=2),
            L0=self.get_float("calibrate", "L0", 1.0),
            seed=seed,
            kernel=kernel,
            mode=self.raw("calibrate", "mode", "kernel"),
            n_events=n_events,
            threads=threads,
        )
