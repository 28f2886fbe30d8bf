"""Configurations, closed-form reference spectra and oscillator functions.

Units are hbar = 1, mass = 1/2, so the Landau levels are exactly B(2n+1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

import numpy as np

NEUMANN_WINDOW = "neumann_window"
DOUBLE_LAYER = "double_layer"
ONE_SIDED = "one_sided"
KINDS = (NEUMANN_WINDOW, DOUBLE_LAYER, ONE_SIDED)

# numerical coincidence threshold for merging catalog levels
COINCIDENCE_ATOL = 1e-9

GAUGE = "Landau, A = (0, Bx, 0)"


class EmptyCatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Width:
    """A layer width ``num/den * scale``.

    Two widths are commensurable iff they share the same ``scale``; their
    ratio is then the exact rational ``(num1/den1) / (num2/den2)``.
    """

    num: int
    den: int = 1
    scale: float = 1.0

    def __post_init__(self):
        if not isinstance(self.num, (int, np.integer)) or not isinstance(self.den, (int, np.integer)):
            raise ValueError("width num/den must be integers")
        if self.den == 0:
            raise ValueError("width den must be nonzero")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"width scale must be positive, got {self.scale!r}")
        if Fraction(int(self.num), int(self.den)) <= 0:
            raise ValueError(f"width must be positive, got {self.num}/{self.den}")

    @property
    def ratio(self) -> Fraction:
        return Fraction(int(self.num), int(self.den))

    @property
    def value(self) -> float:
        return float(self.ratio) * self.scale

    def __float__(self) -> float:
        return self.value

    def commensurate_with(self, other: "Width") -> bool:
        return self.scale == other.scale

    def scaled(self, factor: float) -> "Width":
        return Width(self.num, self.den, self.scale * factor)

    def to_dict(self) -> dict:
        return {"num": int(self.num), "den": int(self.den), "scale": self.scale}


WidthLike = Union[Width, int, Fraction, float, tuple]


def as_width(w: WidthLike) -> Width:
    """Coerce ``w`` to a :class:`Width`.

    Integers and fractions get scale 1. A bare float becomes its own scale
    tag, so it is commensurable only with widths carrying that same scale.
    """
    if isinstance(w, Width):
        return w
    if isinstance(w, (bool, np.bool_)):
        raise ValueError("width cannot be boolean")
    if isinstance(w, (int, np.integer)):
        return Width(int(w), 1, 1.0)
    if isinstance(w, Fraction):
        return Width(w.numerator, w.denominator, 1.0)
    if isinstance(w, tuple):
        return Width(*w)
    if isinstance(w, (float, np.floating)):
        return Width(1, 1, float(w))
    raise TypeError(f"cannot interpret {w!r} as a width")


@dataclass(frozen=True)
class PhysicalConfig:
    B: float
    gauge: str = GAUGE

    def __post_init__(self):
        if not (self.B > 0 and math.isfinite(self.B)):
            raise ValueError(f"field B must be positive, got {self.B!r}")


@dataclass(frozen=True)
class GeometryConfig:
    """Cross-section of one of the three layered geometries.

    ``neumann_window``: strip (0, d), Neumann on the top boundary for |x| < a.
    ``double_layer``: (-d2, d1) cut by a Dirichlet barrier at z = 0 except |x| < a.
    ``one_sided``: (-d2, d1) cut by a Dirichlet barrier at z = 0 for x <= 0.
    """

    kind: str
    d: Optional[Width] = None
    d1: Optional[Width] = None
    d2: Optional[Width] = None
    a: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.kind == NEUMANN_WINDOW:
            if self.d is None or self.d1 is not None or self.d2 is not None:
                raise ValueError("neumann_window needs d and no d1/d2")
        else:
            if self.d1 is None or self.d2 is None or self.d is not None:
                raise ValueError(f"{self.kind} needs d1, d2 and no d")
        if self.kind == ONE_SIDED:
            if self.a is not None:
                raise ValueError("one_sided geometry has no window half-width")
        else:
            if self.a is None or not (self.a >= 0 and math.isfinite(self.a)):
                raise ValueError(f"window half-width a must be >= 0, got {self.a!r}")

    @classmethod
    def neumann_window(cls, d: WidthLike, a: float) -> "GeometryConfig":
        return cls(NEUMANN_WINDOW, d=as_width(d), a=float(a))

    @classmethod
    def double_layer(cls, d1: WidthLike, d2: WidthLike, a: float) -> "GeometryConfig":
        return cls(DOUBLE_LAYER, d1=as_width(d1), d2=as_width(d2), a=float(a))

    @classmethod
    def one_sided(cls, d1: WidthLike, d2: WidthLike) -> "GeometryConfig":
        return cls(ONE_SIDED, d1=as_width(d1), d2=as_width(d2))

    @property
    def widths(self) -> tuple:
        if self.kind == NEUMANN_WINDOW:
            return (self.d,)
        return (self.d1, self.d2)

    @property
    def total_width(self) -> float:
        return sum(w.value for w in self.widths)

    @property
    def mirror_symmetric(self) -> bool:
        return self.kind != ONE_SIDED

    def replace(self, **changes) -> "GeometryConfig":
        fields = {"kind": self.kind, "d": self.d, "d1": self.d1, "d2": self.d2, "a": self.a}
        for key, val in changes.items():
            fields[key] = as_width(val) if key in ("d", "d1", "d2") else val
        return GeometryConfig(**fields)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("d", "d1", "d2"):
            w = getattr(self, name)
            if w is not None:
                out[name] = w.to_dict()
        if self.a is not None:
            out["a"] = self.a
        return out


@dataclass(frozen=True, order=True)
class ModeIndex:
    n: int
    m: int
    layer: Optional[int] = None
    k: Optional[int] = field(default=None, compare=False)

    def sort_key(self):
        return (self.n, self.m, self.layer or 0)

    def label(self) -> str:
        if self.layer is None:
            return f"({self.n},{self.m})"
        return f"({self.n},{self.m},{self.layer})"


@dataclass(frozen=True)
class LevelEntry:
    value: float
    indices: tuple

    @property
    def multiplicity(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class LevelCatalog:
    entries: tuple
    kind: str
    e_max: float

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([e.multiplicity for e in self.entries], dtype=int)

    def sequence(self) -> np.ndarray:
        """Values repeated by multiplicity: lambda_1 <= lambda_2 <= ..."""
        return np.repeat(self.values, self.multiplicities)

    def ranked(self) -> list:
        return [idx for e in self.entries for idx in e.indices]

    def kth(self, k: int) -> float:
        seq = self.sequence()
        if not 1 <= k <= len(seq):
            raise IndexError(f"rank {k} outside catalog of {len(seq)} levels below {self.e_max}")
        return float(seq[k - 1])

    def label(self, k: int) -> ModeIndex:
        return self.ranked()[k - 1]

    def index_of(self, idx: ModeIndex) -> int:
        for mi in self.ranked():
            if mi.sort_key() == idx.sort_key():
                return mi.k
        raise KeyError(idx)

    def nearest(self, value: float):
        """Return ``(entry, distance)`` of the catalog level closest to ``value``."""
        vals = self.values
        j = int(np.argmin(np.abs(vals - value)))
        return self.entries[j], float(abs(vals[j] - value))


def _check_indices(n, m):
    if int(n) != n or n < 0:
        raise ValueError(f"Landau index n must be >= 0, got {n!r}")
    if int(m) != m or m < 1:
        raise ValueError(f"transverse index m must be >= 1, got {m!r}")


def _check_positive(**kw):
    for name, val in kw.items():
        if not (float(val) > 0 and math.isfinite(float(val))):
            raise ValueError(f"{name} must be positive, got {val!r}")


def free_level(n: int, m: int, B: float, d) -> float:
    _check_indices(n, m)
    _check_positive(B=B, d=float(d))
    return B * (2 * n + 1) + (math.pi * m / float(d)) ** 2


def neumann_limit_level(n: int, m: int, B: float, d) -> float:
    """B(2n+1) + (pi m / 2d)^2; physical Dirichlet-Neumann modes have m odd."""
    _check_indices(n, m)
    _check_positive(B=B, d=float(d))
    return B * (2 * n + 1) + (math.pi * m / (2 * float(d))) ** 2


def merged_free_level(n: int, m: int, B: float, d1, d2) -> float:
    return free_level(n, m, B, float(d1) + float(d2))


def spectral_threshold(B: float, d1, d2) -> float:
    """inf of the spectrum with the barrier removed, B + (pi/(d1+d2))^2."""
    return merged_free_level(0, 1, B, d1, d2)


def _build_catalog(items: Iterable, kind: str, e_max: float) -> LevelCatalog:
    items = sorted(items, key=lambda t: (t[0], t[1].sort_key()))
    groups: list = []
    for value, idx in items:
        if groups and value - groups[-1][0] <= COINCIDENCE_ATOL:
            groups[-1][1].append(idx)
        else:
            groups.append([value, [idx]])
    if not groups:
        raise EmptyCatalogError(f"no {kind} level below E_max={e_max}")
    entries = []
    k = 1
    for value, idxs in groups:
        ranked = []
        for idx in sorted(idxs, key=ModeIndex.sort_key):
            ranked.append(ModeIndex(idx.n, idx.m, idx.layer, k))
            k += 1
        entries.append(LevelEntry(float(value), tuple(ranked)))
    return LevelCatalog(tuple(entries), kind, float(e_max))


def _ladder(B: float, e_max: float, transverse, layer=None, m_step: int = 1, m_start: int = 1):
    n = 0
    while B * (2 * n + 1) + transverse(m_start) <= e_max:
        m = m_start
        while True:
            val = B * (2 * n + 1) + transverse(m)
            if val > e_max:
                break
            yield val, ModeIndex(n, m, layer)
            m += m_step
        n += 1


def free_levels(B: float, d, e_max: float) -> LevelCatalog:
    """Single Dirichlet layer of width d: B(2n+1) + (pi m/d)^2."""
    _check_positive(B=B, d=float(d))
    dv = float(d)
    return _build_catalog(_ladder(B, e_max, lambda m: (math.pi * m / dv) ** 2), "free", e_max)


def neumann_limit_levels(B: float, d, e_max: float) -> LevelCatalog:
    """Layer Dirichlet at the bottom, Neumann on top (the window covering everything).

    Transverse energies (pi m / 2d)^2 with m odd, i.e. (pi(2j-1)/(2d))^2.
    """
    _check_positive(B=B, d=float(d))
    dv = float(d)
    items = _ladder(B, e_max, lambda m: (math.pi * m / (2 * dv)) ** 2, m_step=2)
    return _build_catalog(items, "neumann_limit", e_max)


def merged_free_levels(B: float, d1, d2, e_max: float) -> LevelCatalog:
    """Double layer with the barrier removed: width d1 + d2."""
    _check_positive(B=B, d1=float(d1), d2=float(d2))
    dv = float(d1) + float(d2)
    return _build_catalog(_ladder(B, e_max, lambda m: (math.pi * m / dv) ** 2), "merged_free", e_max)


def decoupled_double_levels(B: float, d1, d2, e_max: float) -> LevelCatalog:
    """Union of the two single-layer spectra, labeled (n, m, layer)."""
    _check_positive(B=B, d1=float(d1), d2=float(d2))
    if e_max <= B:
        raise EmptyCatalogError(f"E_max={e_max} is below the lowest Landau level {B}")
    items = []
    for layer, d in ((1, float(d1)), (2, float(d2))):
        items.extend(_ladder(B, e_max, lambda m, d=d: (math.pi * m / d) ** 2, layer=layer))
    return _build_catalog(items, "decoupled", e_max)


def upper_catalog(geometry: GeometryConfig, B: float, e_max: float) -> LevelCatalog:
    """Window-free levels: the asymptotes and upper band edges."""
    if geometry.kind == NEUMANN_WINDOW:
        return free_levels(B, geometry.d, e_max)
    return decoupled_double_levels(B, geometry.d1, geometry.d2, e_max)


def lower_catalog(geometry: GeometryConfig, B: float, e_max: float) -> LevelCatalog:
    """Levels of the fully opened geometry: certified lower bounds."""
    if geometry.kind == NEUMANN_WINDOW:
        return neumann_limit_levels(B, geometry.d, e_max)
    return merged_free_levels(B, geometry.d1, geometry.d2, e_max)


def lower_bound(geometry: GeometryConfig, B: float) -> float:
    if geometry.kind == NEUMANN_WINDOW:
        return neumann_limit_level(0, 1, B, geometry.d)
    return spectral_threshold(B, geometry.d1, geometry.d2)


def catalog_energy_for(geometry: GeometryConfig, B: float, count: int) -> float:
    """Smallest E such that the upper catalog holds at least ``count`` levels below E."""
    e = lower_bound(geometry, B) + 2 * B
    while True:
        try:
            seq = upper_catalog(geometry, B, e).sequence()
        except EmptyCatalogError:
            seq = ()
        if len(seq) >= count:
            return float(seq[count - 1])
        e *= 1.5


def commensurate_pairs(d1: WidthLike, d2: WidthLike, m_max: int) -> list:
    """All (m1, m2) with m1/m2 = d1/d2 and both <= m_max."""
    w1, w2 = as_width(d1), as_width(d2)
    if not w1.commensurate_with(w2):
        return []
    ratio = w1.ratio / w2.ratio
    p, q = ratio.numerator, ratio.denominator
    out = []
    k = 1
    while k * p <= m_max and k * q <= m_max:
        out.append((k * p, k * q))
        k += 1
    return out


def flat_band_value(n: int, m1: int, B: float, d1, m2: Optional[int] = None, d2=None) -> float:
    """Energy of the flat band from a commensurate pair (m1, m2).

    When ``m2`` and ``d2`` are given the pair is checked: exactly for
    :class:`Width` inputs with a shared scale, to 1e-12 relative otherwise.
    """
    if m2 is not None or d2 is not None:
        if m2 is None or d2 is None:
            raise ValueError("m2 and d2 must be given together")
        _check_indices(n, m2)
        if isinstance(d1, Width) and isinstance(d2, Width):
            ok = (m1, m2) in commensurate_pairs(d1, d2, max(m1, m2))
        else:
            ok = math.isclose(m1 / float(d1), m2 / float(d2), rel_tol=1e-12)
        if not ok:
            raise ValueError(f"pair ({m1},{m2}) is not commensurate with widths {d1}, {d2}")
    return free_level(n, m1, B, d1)


def hermite_mode(n: int, B: float, u) -> np.ndarray:
    """Normalized oscillator eigenfunction of -d^2/du^2 + B^2 u^2.

    h_n(u) = (B/pi)^(1/4) (2^n n!)^(-1/2) exp(-B u^2/2) H_n(sqrt(B) u),
    evaluated by the three-term recurrence on normalized functions.
    """
    _check_positive(B=B)
    if int(n) != n or n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    xi = np.sqrt(B) * np.asarray(u, dtype=float)
    prev = np.zeros_like(xi)
    cur = np.pi ** -0.25 * np.exp(-0.5 * xi * xi)
    for j in range(int(n)):
        nxt = np.sqrt(2.0 / (j + 1)) * xi * cur - np.sqrt(j / (j + 1)) * prev
        prev, cur = cur, nxt
    return B ** 0.25 * cur


@dataclass(frozen=True)
class ModeFunction:
    """Window-free eigenfunction sqrt(2/d_j) h_n(x + p/B) sin(pi m z / d_j).

    For double layers ``layer`` 1 lives on z in (0, d1), layer 2 on (-d2, 0).
    """

    n: int
    m: int
    B: float
    d: float
    p: float = 0.0
    layer: Optional[int] = None

    def x_part(self, x) -> np.ndarray:
        return hermite_mode(self.n, self.B, np.asarray(x, dtype=float) + self.p / self.B)

    def z_part(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        d = float(self.d)
        s = 1.0 if self.layer in (None, 1) else -1.0
        inside = (s * z > 0) & (s * z < d)
        return np.where(inside, np.sqrt(2.0 / d) * np.sin(np.pi * self.m * z / d), 0.0)

    def __call__(self, x, z) -> np.ndarray:
        x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
        return self.x_part(x) * self.z_part(z)

    def energy(self) -> float:
        return free_level(self.n, self.m, self.B, self.d)


def sign_changes(values: Sequence[float], atol: float = 1e-300) -> int:
    v = np.asarray(values, dtype=float)
    v = v[np.abs(v) > atol]
    return int(np.count_nonzero(np.signbit(v[1:]) != np.signbit(v[:-1])))
