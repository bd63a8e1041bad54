"""Far-field double-slit patterns at the signal-photon screen.

Every pattern shape is a member of the one-parameter family

    I_V(x) = sinc^2(theta_a) * (1 + V cos(2 theta_d)),

with ``theta_a = pi a x / (lambda f0)`` and ``theta_d = pi d x / (lambda f0)``.
Full two-slit interference is ``V = 1``, the bare single-slit envelope is
``V = 0`` and the equal-weight sum of the two is ``V = 1/3`` (using
``cos^2 t = (1 + cos 2t) / 2``).  Only the shape matters; absolute
intensity scales carry no meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegeneratePattern, InvalidConfig

__all__ = [
    "OpticalConfig",
    "ScreenConfig",
    "PatternKind",
    "INTERFERENCE",
    "ENVELOPE",
    "MIXED",
    "PatternPdf",
    "sinc",
    "fringe_phases",
    "pattern_value",
    "normalize_pdf",
    "sample_position",
    "family_bin_integrals",
]

DEFAULT_GRID_NODES = 2**15 + 1
MIN_GRID_NODES = 4096
_SINC_SERIES_CUTOFF = 1e-8
_DEGENERATE_MASS = 1e-300


@dataclass(frozen=True)
class OpticalConfig:
    """Slit geometry and lens; all lengths in meters."""

    slit_width_a: float
    slit_separation_d: float
    wavelength: float
    focal_length_f0: float

    def __post_init__(self):
        for name in ("slit_width_a", "slit_separation_d", "wavelength", "focal_length_f0"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidConfig(f"{name} must be a finite positive length, got {value!r}")
        if self.slit_separation_d < self.slit_width_a:
            raise InvalidConfig("slit_separation_d must be ≥ slit_width_a")

    @property
    def scale(self) -> float:
        """lambda * f0, the length that converts angles to screen positions."""
        return self.wavelength * self.focal_length_f0

    @property
    def envelope_null(self) -> float:
        """First zero of the single-slit envelope, ``lambda f0 / a``."""
        return self.scale / self.slit_width_a

    @property
    def fringe_null(self) -> float:
        """First zero of the two-slit fringe factor, ``lambda f0 / (2 d)``."""
        return self.scale / (2.0 * self.slit_separation_d)

    @property
    def fringe_period(self) -> float:
        return self.scale / self.slit_separation_d


@dataclass(frozen=True)
class ScreenConfig:
    """Screen ``[-x_max, x_max]`` divided into ``n_bins`` equal histogram bins."""

    x_max: float
    n_bins: int = 100

    def __post_init__(self):
        if not (isinstance(self.x_max, (int, float)) and math.isfinite(self.x_max) and self.x_max > 0):
            raise InvalidConfig(f"x_max must be a finite positive length, got {self.x_max!r}")
        if isinstance(self.n_bins, bool) or not isinstance(self.n_bins, (int, np.integer)) or self.n_bins < 2:
            raise InvalidConfig(f"n_bins must be an integer ≥ 2, got {self.n_bins!r}")

    @classmethod
    def default_for(cls, cfg: OpticalConfig, n_bins: int = 100) -> "ScreenConfig":
        """Three envelope lobes on each side of the optical axis."""
        return cls(x_max=3.0 * cfg.envelope_null, n_bins=n_bins)

    @property
    def bin_edges(self) -> np.ndarray:
        # integer numerators keep the edges exactly antisymmetric about 0
        k = 2 * np.arange(self.n_bins + 1) - self.n_bins
        return k * (self.x_max / self.n_bins)

    @property
    def bin_centers(self) -> np.ndarray:
        edges = self.bin_edges
        return 0.5 * (edges[:-1] + edges[1:])

    def bin_index(self, x) -> np.ndarray:
        """Bin of each position; edges belong to the right bin, ``+x_max`` to the last."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.bin_edges, x, side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def histogram(self, x) -> np.ndarray:
        return np.bincount(self.bin_index(x), minlength=self.n_bins).astype(np.int64)


@dataclass(frozen=True)
class PatternKind:
    """Named pattern or ``Family(V)``.

    The named kinds evaluate the printed closed forms directly; ``Family(V)``
    uses the double-angle form.  They agree up to a constant factor.
    """

    name: str
    visibility: float

    def __post_init__(self):
        if self.name not in ("interference", "envelope", "mixed", "family"):
            raise InvalidConfig(f"unknown pattern kind {self.name!r}")
        v = self.visibility
        if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
            raise InvalidConfig(f"visibility must lie in [0, 1], got {v!r}")

    @classmethod
    def family(cls, visibility: float) -> "PatternKind":
        return cls("family", float(visibility))

    @classmethod
    def parse(cls, text: str) -> "PatternKind":
        """Parse ``interference``, ``envelope``, ``mixed`` or ``family:V``."""
        text = text.strip().lower()
        named = {"interference": INTERFERENCE, "envelope": ENVELOPE, "mixed": MIXED}
        if text in named:
            return named[text]
        if text.startswith("family:"):
            try:
                v = float(text.split(":", 1)[1])
            except ValueError:
                raise InvalidConfig(f"cannot parse visibility in {text!r}") from None
            return cls.family(v)
        raise InvalidConfig(f"unknown pattern kind {text!r}; expected interference|envelope|mixed|family:V")

    def __str__(self):
        if self.name == "family":
            return f"family:{self.visibility!r}"
        return self.name


INTERFERENCE = PatternKind("interference", 1.0)
ENVELOPE = PatternKind("envelope", 0.0)
MIXED = PatternKind("mixed", 1.0 / 3.0)


def sinc(u):
    """Unnormalized sinc, ``sin(u) / u`` with the removable singularity filled."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < _SINC_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    out = np.where(small, 1.0 - u * u / 6.0, np.sin(safe) / safe)
    return out if out.ndim else float(out)


def fringe_phases(x, cfg: OpticalConfig):
    """Return ``(theta_a, theta_d)`` at screen position(s) ``x``."""
    x = np.asarray(x, dtype=float)
    theta_a = np.pi * cfg.slit_width_a * x / cfg.scale
    theta_d = np.pi * cfg.slit_separation_d * x / cfg.scale
    if theta_a.ndim == 0:
        return float(theta_a), float(theta_d)
    return theta_a, theta_d


def pattern_value(x, kind: PatternKind, cfg: OpticalConfig):
    """Unnormalized intensity of ``kind`` at ``x``."""
    theta_a, theta_d = fringe_phases(x, cfg)
    envelope = sinc(theta_a) ** 2
    if kind.name == "interference":
        out = 2.0 * envelope * np.cos(theta_d) ** 2
    elif kind.name == "envelope":
        out = envelope * np.ones_like(np.asarray(theta_d, dtype=float))
    elif kind.name == "mixed":
        out = envelope * (1.0 + np.cos(theta_d) ** 2)
    else:
        out = envelope * (1.0 + kind.visibility * np.cos(2.0 * theta_d))
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class PatternPdf:
    """Pattern tabulated on a symmetric uniform grid and normalized to unit mass.

    ``density`` integrates to one under the trapezoidal rule on ``x``; ``cdf``
    is the matching running integral and ``raw_mass`` the integral of the
    unnormalized pattern.  Arrays are read-only.
    """

    kind: PatternKind
    cfg: OpticalConfig
    screen: ScreenConfig
    x: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    raw_mass: float = 1.0

    def pdf(self, x):
        return np.interp(x, self.x, self.density, left=0.0, right=0.0)

    def cdf_at(self, x):
        return np.interp(x, self.x, self.cdf, left=0.0, right=1.0)

    def sample(self, rng: np.random.Generator, size=None):
        return sample_position(self, rng, size)

    def to_csv(self, path, extra_meta: dict | None = None) -> None:
        write_pattern_csv(path, self, extra_meta)


def _symmetric_grid(x_max: float, n_nodes: int) -> np.ndarray:
    if n_nodes % 2 == 0:
        n_nodes += 1
    k = 2 * np.arange(n_nodes) - (n_nodes - 1)
    return k * (x_max / (n_nodes - 1))


def normalize_pdf(
    kind: PatternKind,
    cfg: OpticalConfig,
    screen: ScreenConfig,
    n_nodes: int = DEFAULT_GRID_NODES,
) -> PatternPdf:
    """Tabulate ``kind`` over the screen and normalize it to a density."""
    if n_nodes < MIN_GRID_NODES:
        raise InvalidConfig(f"n_nodes must be ≥ {MIN_GRID_NODES}, got {n_nodes}")
    x = _symmetric_grid(screen.x_max, n_nodes)
    # evaluate on |x| so mirrored nodes get bit-identical values
    raw = pattern_value(np.abs(x), kind, cfg)
    dx = x[1] - x[0]
    cells = 0.5 * dx * (raw[1:] + raw[:-1])
    total = float(cells.sum())
    if not total >= _DEGENERATE_MASS:
        raise DegeneratePattern(f"{kind} integrates to {total!r} over [-{screen.x_max}, {screen.x_max}]")
    density = raw / total
    cdf = np.concatenate(([0.0], np.cumsum(cells) / total))
    cdf[-1] = 1.0
    for arr in (x, density, cdf):
        arr.flags.writeable = False
    return PatternPdf(kind, cfg, screen, x, density, cdf, total)


def sample_position(pdf: PatternPdf, rng: np.random.Generator, size=None):
    """Draw screen positions by linear interpolation of the inverse CDF."""
    u = rng.random(size)
    return np.interp(u, pdf.cdf, pdf.x)


def _gauss_legendre_panels(lo, hi, width, n_points=16):
    """Nodes/weights covering each interval [lo_i, hi_i] with panels no wider than ``width``."""
    t, w = np.polynomial.legendre.leggauss(n_points)
    span = hi - lo
    n_panels = np.maximum(1, np.ceil(span / width).astype(int))
    nodes, weights, owner = [], [], []
    for i, (a, s, m) in enumerate(zip(lo, span, n_panels)):
        h = s / m
        starts = a + h * np.arange(m)
        xs = (starts[:, None] + 0.5 * h * (t[None, :] + 1.0)).ravel()
        nodes.append(xs)
        weights.append(np.tile(0.5 * h * w, m))
        owner.append(np.full(xs.size, i))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(owner)


def family_bin_integrals(cfg: OpticalConfig, edges):
    """Integrals over each ``[edges[i], edges[i+1]]`` of ``sinc^2`` and ``sinc^2 cos(2 theta_d)``.

    The ``Family(V)`` mass of a bin is ``A + V B``.  Gauss-Legendre panels
    span at most an eighth of a fringe period, which keeps the quadrature
    accurate to near machine precision.
    """
    edges = np.asarray(edges, dtype=float)
    width = min(cfg.fringe_period, cfg.envelope_null) / 8.0
    nodes, weights, owner = _gauss_legendre_panels(edges[:-1], edges[1:], width)
    theta_a, theta_d = fringe_phases(nodes, cfg)
    env = sinc(theta_a) ** 2
    n = edges.size - 1
    a = np.bincount(owner, weights=weights * env, minlength=n)
    b = np.bincount(owner, weights=weights * env * np.cos(2.0 * theta_d), minlength=n)
    return a, b


def _config_items(cfg: OpticalConfig, screen: ScreenConfig) -> dict:
    return {
        "a_m": cfg.slit_width_a,
        "d_m": cfg.slit_separation_d,
        "lambda_m": cfg.wavelength,
        "f0_m": cfg.focal_length_f0,
        "x_max_m": screen.x_max,
        "n_bins": screen.n_bins,
    }


def write_pattern_csv(path, pdf: PatternPdf, extra_meta: dict | None = None) -> None:
    meta = {"kind": str(pdf.kind), **_config_items(pdf.cfg, pdf.screen), **(extra_meta or {})}
    lines = ["# " + " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in meta.items())]
    lines.append("x_m,density")
    lines.extend(f"{x!r},{d!r}" for x, d in zip(pdf.x.tolist(), pdf.density.tolist()))
    Path(path).write_text("\n".join(lines) + "\n")
