"""Grid text format, covariate conversion, normalization and toy data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, ParseError
from .grid import Dataset, as_grid
from .linalg import cg
from .model import matern_layers


# ----------------------------------------------------------------------------
# grid files


def format_grid(t, mask=None):
    """Text form: header ``H W C`` then one grid row per line; NaN marks missing."""
    a = np.array(as_grid(t))
    if mask is not None:
        a[~np.asarray(mask, dtype=bool)] = np.nan
    h, w, c = a.shape
    lines = [f"{h} {w} {c}"]
    for row in a.reshape(h, w * c):
        lines.append(" ".join("NaN" if math.isnan(v) else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_grid(text):
    """Parse grid text into an ``(H, W, C)`` array with NaN at missing entries."""
    lines = text.splitlines()
    if not lines:
        raise ParseError("line 1: empty grid file")
    head = lines[0].split()
    try:
        h, w, c = (int(t) for t in head)
    except ValueError:
        raise ParseError(f"line 1: malformed header {lines[0]!r}, expected 'H W C'")
    if min(h, w, c) < 1:
        raise ParseError("line 1: grid dimensions must be positive")
    values = []
    for no, line in enumerate(lines[1:], start=2):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"line {no}: non-numeric token {tok!r}")
    if len(values) != h * w * c:
        raise ParseError(f"line {len(lines)}: expected {h * w * c} values, found {len(values)}")
    return np.array(values).reshape(h, w, c)


def save_grid(path, t, mask=None):
    with open(path, "w") as fh:
        fh.write(format_grid(t, mask))


def load_grid(path, F=None):
    """Load a grid file as a ``Dataset`` (mask from NaN positions)."""
    with open(path) as fh:
        return Dataset.from_array(parse_grid(fh.read()), F)


def load_array(path):
    with open(path) as fh:
        return parse_grid(fh.read())


def covariates_from_grid(a):
    """``(H, W, p)`` covariate grid to the ``(H*W, p)`` matrix."""
    a = as_grid(a)
    if np.isnan(a).any():
        raise ParseError("covariate grids may not contain NaN")
    return a.reshape(-1, a.shape[2])


# ----------------------------------------------------------------------------
# external CSV


def convert_csv(path, height, width):
    """Read ``lon,lat,value`` rows in row-major grid order.

    Empty values mark missing pixels.  Returns ``(grid, covariates)`` where
    ``grid`` is ``(H, W, 1)`` with NaN at missing pixels and ``covariates`` is
    the ``(H, W, 3)`` grid of (constant, longitude, latitude).
    """
    rows = []
    with open(path, newline="") as fh:
        for no, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip():
                continue
            if len(rec) != 3:
                raise ParseError(f"line {no}: expected lon,lat,value")
            try:
                lon, lat = float(rec[0]), float(rec[1])
            except ValueError:
                if no == 1:
                    continue  # header row
                raise ParseError(f"line {no}: non-numeric coordinate")
            val = rec[2].strip()
            try:
                value = float(val) if val and val.lower() != "na" else math.nan
            except ValueError:
                raise ParseError(f"line {no}: non-numeric value {val!r}")
            rows.append((lon, lat, value))
    if len(rows) != height * width:
        raise ParseError(f"expected {height * width} data rows, found {len(rows)}")
    arr = np.array(rows)
    grid = arr[:, 2].reshape(height, width, 1)
    cov = np.column_stack([np.ones(len(rows)), arr[:, 0], arr[:, 1]]).reshape(height, width, 3)
    return grid, cov


# ----------------------------------------------------------------------------
# normalization


def normalization_scale(data):
    """Scale that maps the largest observed magnitude to 1."""
    if not data.n_observed:
        return 1.0
    peak = float(np.max(np.abs(data.y[data.mask])))
    return peak if peak > 0 else 1.0


def scale_dataset(data, scale):
    return Dataset(np.asarray(data.y) / scale, data.mask, data.F)


# ----------------------------------------------------------------------------
# toy data


@dataclass
class Edge:
    """Offset ``amplitude`` added on one side of a line.

    A vertical edge at ``position`` raises columns ``>= position`` for rows in
    ``[start, stop)``; a horizontal edge raises rows ``>= position`` for
    columns in ``[start, stop)``.
    """

    orientation: str
    position: int
    amplitude: float
    start: int = 0
    stop: Optional[int] = None


@dataclass
class ToyConfig:
    height: int = 160
    width: int = 120
    kappa2: float = 8.0 / 50.0 ** 2
    tau: float = 1.0
    gamma: int = 1
    seed: int = 0
    edges: Sequence[Edge] = field(default_factory=list)
    missing_fraction: float = 0.0
    holes: Sequence[tuple] = field(default_factory=list)  # (row0, row1, col0, col1)

    def __post_init__(self):
        if self.kappa2 < 0 or self.tau <= 0 or self.gamma < 1:
            raise ConfigError("need kappa2 >= 0, tau > 0 and gamma >= 1")
        if not 0.0 <= self.missing_fraction <= 1.0:
            raise ConfigError("missing_fraction must lie in [0, 1]")


def gen_matern(config):
    """Sample the lattice Matérn field by solving ``tau (kappa^2 I + G)^gamma x = z``."""
    model = matern_layers(config.kappa2, config.tau, config.gamma)
    shape = (config.height, config.width, 1)
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(shape[0] * shape[1])
    # the composite operator is symmetric positive definite (w_G is symmetric)
    res = cg(lambda v: model.apply_linear(v.reshape(shape)).reshape(v.shape), z, tol=1e-7)
    return res.x.reshape(shape)


def add_edges(field_, edges):
    out = np.array(as_grid(field_))
    h, w, _ = out.shape
    for e in edges:
        if e.orientation not in ("v", "h"):
            raise ConfigError(f"edge orientation must be 'v' or 'h', got {e.orientation!r}")
        span = h if e.orientation == "v" else w
        limit = w if e.orientation == "v" else h
        stop = span if e.stop is None else e.stop
        if not (0 <= e.position <= limit and 0 <= e.start <= stop <= span):
            raise DimensionError(f"edge {e} lies outside the {h} x {w} grid")
        if e.orientation == "v":
            out[e.start:stop, e.position:] += e.amplitude
        else:
            out[e.position:, e.start:stop] += e.amplitude
    return out


def make_mask(height, width, missing_fraction=0.0, holes=(), rng=None):
    """Observation mask with a random missing fraction and rectangular holes."""
    rng = np.random.default_rng(0) if rng is None else rng
    mask = np.ones((height, width), dtype=bool)
    if missing_fraction > 0:
        n_missing = int(round(missing_fraction * height * width))
        idx = rng.choice(height * width, size=n_missing, replace=False)
        mask.reshape(-1)[idx] = False
    for r0, r1, c0, c1 in holes:
        if not (0 <= r0 <= r1 <= height and 0 <= c0 <= c1 <= width):
            raise DimensionError(f"hole {(r0, r1, c0, c1)} lies outside the grid")
        mask[r0:r1, c0:c1] = False
    return mask


def make_toy(config):
    """Return ``(truth, observed_dataset)`` for a toy configuration."""
    truth = add_edges(gen_matern(config), config.edges)
    rng = np.random.default_rng([config.seed, 1])
    mask = make_mask(config.height, config.width, config.missing_fraction, config.holes, rng)
    return truth, Dataset(truth, mask)


def parse_edges(spec):
    """``"v:col:amp[:start:stop];h:row:amp"`` to a list of ``Edge``."""
    edges = []
    for item in filter(None, (s.strip() for s in (spec or "").split(";"))):
        parts = item.split(":")
        try:
            kind, pos, amp = parts[0], int(parts[1]), float(parts[2])
            start = int(parts[3]) if len(parts) > 3 else 0
            stop = int(parts[4]) if len(parts) > 4 else None
        except (IndexError, ValueError):
            raise ConfigError(f"malformed edge spec {item!r}")
        edges.append(Edge(kind, pos, amp, start, stop))
    return edges


def parse_holes(spec):
    """``"r0:r1:c0:c1;..."`` to a list of tuples."""
    holes = []
    for item in filter(None, (s.strip() for s in (spec or "").split(";"))):
        try:
            r0, r1, c0, c1 = (int(v) for v in item.split(":"))
        except ValueError:
            raise ConfigError(f"malformed hole spec {item!r}")
        holes.append((r0, r1, c0, c1))
    return holes
