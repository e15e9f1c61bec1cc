"""Cross-product evaluation lattices and scalar fields sampled on them.

A :class:`Lattice` is the grid ``axis_1 x ... x axis_D`` optionally restricted
by a boolean mask. Included points are numbered ``0..R-1`` in row-major order
of their index vectors. All topology downstream uses index vectors only; the
physical coordinates are kept for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .errors import EmptyDomainError, FieldParseError, ValidationError

MaskLike = Union[np.ndarray, Callable[..., np.ndarray], None]

FIELD_MAGIC = "tohm-field"
FIELD_VERSION = "v1"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Lattice:
    axes: tuple[np.ndarray, ...]
    mask: np.ndarray | None = None
    # derived
    index_vectors: np.ndarray = field(init=False, repr=False)
    _grid_to_flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes)
        if self.mask is None:
            included = np.ones(shape, dtype=bool)
        else:
            included = self.mask
        grid_to_flat = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        flat_incl = np.flatnonzero(included.ravel())
        grid_to_flat[flat_incl] = np.arange(flat_incl.size)
        ivec = np.stack(np.unravel_index(flat_incl, shape), axis=1).astype(np.int64)
        object.__setattr__(self, "index_vectors", _readonly(ivec))
        object.__setattr__(self, "_grid_to_flat", _readonly(grid_to_flat))

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def R(self) -> int:
        return self.index_vectors.shape[0]

    def __len__(self) -> int:
        return self.R

    @property
    def grid_to_flat(self) -> np.ndarray:
        """Full-grid (row-major) position -> flat index, ``-1`` if excluded."""
        return self._grid_to_flat

    def included_grid(self) -> np.ndarray:
        """Boolean array over the full cross product, True where included."""
        return (self._grid_to_flat >= 0).reshape(self.shape)

    def _check_index(self, r: int) -> int:
        r = int(r)
        if not 0 <= r < self.R:
            raise IndexError(f"flat index {r} out of range [0, {self.R})")
        return r

    def index_vector(self, r: int) -> tuple[int, ...]:
        return tuple(int(i) for i in self.index_vectors[self._check_index(r)])

    def flat_index(self, index_vector: Sequence[int]) -> int:
        iv = tuple(int(i) for i in index_vector)
        if len(iv) != self.dims or any(not 0 <= i < n for i, n in zip(iv, self.shape)):
            raise IndexError(f"index vector {iv} outside lattice of shape {self.shape}")
        r = int(self._grid_to_flat[np.ravel_multi_index(iv, self.shape)])
        if r < 0:
            raise IndexError(f"index vector {iv} is masked out")
        return r

    def coordinates(self, r: int) -> tuple[float, ...]:
        iv = self.index_vector(r)
        return tuple(float(ax[i]) for ax, i in zip(self.axes, iv))

    def points(self) -> np.ndarray:
        """Physical coordinates of included points, shape ``(R, D)``."""
        return np.stack(
            [ax[self.index_vectors[:, d]] for d, ax in enumerate(self.axes)], axis=1
        )

    def is_full(self) -> bool:
        return self.mask is None or bool(self.mask.all())


def build_lattice(axes: Sequence[Sequence[float]], mask: MaskLike = None) -> Lattice:
    """Build a lattice from per-dimension coordinate grids.

    ``mask`` may be a boolean array shaped like the cross product, or a
    vectorised predicate called with ``D`` coordinate arrays (``ij`` meshgrid)
    that returns such an array.
    """
    if len(axes) == 0:
        raise ValidationError("a lattice needs at least one axis")
    clean = []
    for d, ax in enumerate(axes, start=1):
        a = np.array(ax, dtype=float).ravel()
        if a.size == 0:
            raise ValidationError(f"axis {d} is empty")
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"axis {d} has non-finite coordinates")
        if a.size > 1 and not np.all(np.diff(a) > 0):
            raise ValidationError(f"axis {d} is not strictly increasing")
        clean.append(_readonly(a))
    shape = tuple(a.size for a in clean)

    m = None
    if mask is not None:
        if callable(mask):
            grids = np.meshgrid(*clean, indexing="ij")
            m = np.asarray(mask(*grids), dtype=bool)
        else:
            m = np.asarray(mask, dtype=bool)
        if m.shape != shape:
            raise ValidationError(f"mask shape {m.shape} does not match lattice shape {shape}")
        if not m.any():
            raise EmptyDomainError("mask excludes every lattice point")
        m = _readonly(m.copy())
    return Lattice(axes=tuple(clean), mask=m)


def index_distance(lattice: Lattice, r: int, s: int) -> float:
    """Euclidean distance between the index vectors of two included points."""
    a = lattice.index_vectors[lattice._check_index(r)]
    b = lattice.index_vectors[lattice._check_index(s)]
    return math.sqrt(float(np.sum((a - b) ** 2)))


@dataclass(frozen=True, eq=False)
class FieldSample:
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.lattice.R:
            raise ValidationError(
                f"field has {v.size} values but lattice has R = {self.lattice.R} points"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("field values must be finite")
        object.__setattr__(self, "values", _readonly(v))

    def argmax(self) -> int:
        return int(np.argmax(self.values))

    def max(self) -> float:
        return float(self.values.max())

    def as_grid(self, fill: float = np.nan) -> np.ndarray:
        out = np.full(self.lattice.shape, fill)
        out.ravel()[self.lattice.grid_to_flat >= 0] = self.values
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def format_field(f: FieldSample) -> str:
    lat = f.lattice
    lines = [f"# {FIELD_MAGIC} {FIELD_VERSION} dims={lat.dims}"]
    for d, ax in enumerate(lat.axes, start=1):
        lines.append(f"# axis {d} " + " ".join(_fmt(x) for x in ax))
    if lat.mask is not None:
        lines.append("# mask " + " ".join("1" if b else "0" for b in lat.mask.ravel()))
    lines.extend(_fmt(v) for v in f.values)
    return "\n".join(lines) + "\n"


def save_field(f: FieldSample, path: str | Path) -> None:
    Path(path).write_text(format_field(f), encoding="utf-8")


def parse_field(text: str) -> FieldSample:
    lines = text.splitlines()
    if not lines:
        raise FieldParseError("empty file", 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "#" or head[1] != FIELD_MAGIC or not head[3].startswith("dims="):
        raise FieldParseError(f"expected header '# {FIELD_MAGIC} {FIELD_VERSION} dims=D'", 1)
    if head[2] != FIELD_VERSION:
        raise FieldParseError(f"unsupported version {head[2]!r}", 1)
    try:
        dims = int(head[3][5:])
    except ValueError:
        raise FieldParseError(f"bad dims value {head[3]!r}", 1) from None
    if dims < 1:
        raise FieldParseError("dims must be >= 1", 1)

    axes: list[list[float]] = []
    mask_tokens = None
    lineno = 1
    for d in range(1, dims + 1):
        lineno += 1
        if lineno > len(lines):
            raise FieldParseError(f"missing axis {d} line", lineno)
        tok = lines[lineno - 1].split()
        if tok[:3] != ["#", "axis", str(d)]:
            raise FieldParseError(f"expected '# axis {d} ...'", lineno)
        try:
            coords = [float(t) for t in tok[3:]]
        except ValueError as e:
            raise FieldParseError(f"bad axis coordinate ({e})", lineno) from None
        axes.append(coords)
    body_start = lineno + 1
    if body_start <= len(lines) and lines[body_start - 1].split()[:2] == ["#", "mask"]:
        mask_tokens = lines[body_start - 1].split()[2:]
        if any(t not in ("0", "1") for t in mask_tokens):
            raise FieldParseError("mask tokens must be 0 or 1", body_start)
        body_start += 1

    try:
        if mask_tokens is not None:
            shape = tuple(len(a) for a in axes)
            if len(mask_tokens) != int(np.prod(shape)):
                raise FieldParseError(
                    f"mask has {len(mask_tokens)} tokens, expected {int(np.prod(shape))}",
                    body_start - 1,
                )
            mask = np.array([t == "1" for t in mask_tokens]).reshape(shape)
            lattice = build_lattice(axes, mask)
        else:
            lattice = build_lattice(axes)
    except (ValidationError, EmptyDomainError) as e:
        raise FieldParseError(str(e), body_start - 1) from None

    values = []
    for i in range(body_start, len(lines) + 1):
        s = lines[i - 1].strip()
        if not s or s.startswith("#"):
            continue
        try:
            v = float(s)
        except ValueError:
            raise FieldParseError(f"cannot parse value {s!r}", i) from None
        if not math.isfinite(v):
            raise FieldParseError(f"non-finite value {s!r}", i)
        values.append(v)
    if len(values) != lattice.R:
        raise FieldParseError(
            f"expected {lattice.R} values (R), found {len(values)}", len(lines)
        )
    return FieldSample(lattice, np.array(values))


def load_field(path: str | Path) -> FieldSample:
    return parse_field(Path(path).read_text(encoding="utf-8"))
