"""2-D multipath scene geometry.

A base station (BS) at a fixed position serves an area containing point
scatterers. Every one-way propagation path between the BS and a location is
either the direct line-of-sight path or a single bounce off one scatterer.
Round-trip sensing paths are formed by pairing a forward (transmit) one-way
path with a reverse (receive) one-way path, so ``L'`` one-way paths yield
``L'**2`` composite paths.

Scene files are plain text, versioned by their first line::

    # ckm-scene v1
    bs <x> <y>
    bounds <width> <height>
    los_blocked <0|1>
    scatterers <count>
    <x> <y> <reflectivity>     one row per scatterer

All angles are radians in (-pi, pi], all delays are seconds, all positions
are meters with the scene occupying [0, width] x [0, height].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact by definition

SCENE_MAGIC = "# ckm-scene v1"

# Positions closer than this are treated as coincident.
_COINCIDENT_TOL = 1e-12


class GeometryError(ValueError):
    """Degenerate geometry, e.g. coincident BS and target."""


class InvalidObservationError(ValueError):
    """Observation outside its physical domain, e.g. non-positive delay."""


class SceneFormatError(ValueError):
    """Malformed or version-mismatched scene file."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.mod(-np.asarray(angle) + np.pi, 2.0 * np.pi)
    return np.pi - wrapped


@dataclass(frozen=True)
class Point2:
    """Planar position in meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Scatterer:
    """Point scatterer with a reflection strength in (0, 1]."""

    position: Point2
    reflectivity: float

    def __post_init__(self):
        if not (0.0 < self.reflectivity <= 1.0):
            raise ValueError(f"reflectivity {self.reflectivity} outside (0, 1]")


@dataclass(frozen=True)
class Environment:
    """Static scene: BS, scatterers, area bounds, and LoS blockage flag.

    ``bounds`` is (width, height); valid positions live in
    [0, width] x [0, height].
    """

    bs: Point2
    scatterers: tuple[Scatterer, ...]
    bounds: tuple[float, float]
    los_blocked: bool

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        w, h = self.bounds
        if w <= 0 or h <= 0:
            raise ValueError(f"bounds must be positive, got {self.bounds}")
        if not self.contains(self.bs):
            raise ValueError(f"BS {self.bs} outside bounds {self.bounds}")
        for s in self.scatterers:
            if not self.contains(s.position):
                raise ValueError(f"scatterer {s.position} outside bounds {self.bounds}")

    def contains(self, p: Point2) -> bool:
        w, h = self.bounds
        return 0.0 <= p.x <= w and 0.0 <= p.y <= h

    def n_candidate_paths(self) -> int:
        return len(self.scatterers) + (0 if self.los_blocked else 1)

    def scatterer_positions(self) -> np.ndarray:
        """Scatterer coordinates as an (m, 2) array."""
        return np.array([[s.position.x, s.position.y] for s in self.scatterers],
                        dtype=float).reshape(len(self.scatterers), 2)

    def reflectivities(self) -> np.ndarray:
        return np.array([s.reflectivity for s in self.scatterers], dtype=float)

    def with_los_blocked(self, blocked: bool) -> "Environment":
        return replace(self, los_blocked=blocked)


@dataclass(frozen=True)
class CommPath:
    """One-way path summary: departure angle at the BS, delay, and gain."""

    aod_rad: float
    delay_s: float
    gain: float

    def __post_init__(self):
        if self.delay_s <= 0:
            raise ValueError(f"delay must be positive, got {self.delay_s}")
        if self.gain <= 0:
            raise ValueError(f"gain must be positive, got {self.gain}")


@dataclass(frozen=True)
class CommChannelKnowledge:
    """The dominant one-way paths at a location, strongest first."""

    paths: tuple[CommPath, ...]

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        for a, b in zip(self.paths, self.paths[1:]):
            if (-a.gain, a.delay_s) > (-b.gain, b.delay_s):
                raise ValueError("paths must be sorted by descending gain, "
                                 "ties by ascending delay")

    @property
    def l_prime(self) -> int:
        return len(self.paths)

    def aod_array(self) -> np.ndarray:
        return np.array([p.aod_rad for p in self.paths], dtype=float)

    def delay_array(self) -> np.ndarray:
        return np.array([p.delay_s for p in self.paths], dtype=float)

    def gain_array(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=float)


@dataclass(frozen=True)
class CompositePath:
    """Round-trip path: departure angle, arrival angle, total delay."""

    aod_rad: float
    aoa_rad: float
    delay_s: float


def los_angle_delay(bs: Point2, target: Point2) -> tuple[float, float]:
    """Direction from the BS to the target and the round-trip delay.

    Returns ``(angle_rad, delay_s)`` with the angle resolved over the full
    quadrant range and ``delay_s = 2 * distance / c``.

    Raises ``GeometryError`` when the points coincide.
    """
    dx = target.x - bs.x
    dy = target.y - bs.y
    dist = math.hypot(dx, dy)
    if dist <= _COINCIDENT_TOL:
        raise GeometryError(f"BS and target coincide at ({bs.x}, {bs.y})")
    angle = math.atan2(dy, dx)
    return angle, 2.0 * dist / SPEED_OF_LIGHT


def invert_los(angle_rad: float, delay_s: float, bs: Point2) -> Point2:
    """Position implied by a round-trip LoS observation; inverse of
    :func:`los_angle_delay`.

    Raises ``InvalidObservationError`` for non-positive delay.
    """
    if delay_s <= 0:
        raise InvalidObservationError(f"delay must be positive, got {delay_s}")
    r = delay_s * SPEED_OF_LIGHT / 2.0
    return Point2(bs.x + r * math.cos(angle_rad), bs.y + r * math.sin(angle_rad))


def candidate_paths(env: Environment, loc: Point2) -> list[CommPath]:
    """All one-way paths from the BS to ``loc``: one per scatterer, plus the
    direct path when LoS is not blocked.

    Bounce paths depart toward the scatterer, with delay
    ``(|bs - s| + |s - loc|) / c`` and gain ``reflectivity / (|bs - s| * |s - loc|)``.
    The direct path has delay ``|bs - loc| / c`` and gain ``1 / |bs - loc|**2``.
    """
    out: list[CommPath] = []
    for s in env.scatterers:
        d_bs = env.bs.distance_to(s.position)
        d_loc = s.position.distance_to(loc)
        if d_bs <= _COINCIDENT_TOL or d_loc <= _COINCIDENT_TOL:
            raise GeometryError(f"location coincides with scatterer at "
                                f"({s.position.x}, {s.position.y})")
        aod = math.atan2(s.position.y - env.bs.y, s.position.x - env.bs.x)
        out.append(CommPath(aod_rad=aod,
                            delay_s=(d_bs + d_loc) / SPEED_OF_LIGHT,
                            gain=s.reflectivity / (d_bs * d_loc)))
    if not env.los_blocked:
        d = env.bs.distance_to(loc)
        if d <= _COINCIDENT_TOL:
            raise GeometryError("location coincides with the BS")
        aod = math.atan2(loc.y - env.bs.y, loc.x - env.bs.x)
        out.append(CommPath(aod_rad=aod, delay_s=d / SPEED_OF_LIGHT, gain=1.0 / d ** 2))
    return out


def single_bounce_paths(env: Environment, loc: Point2, l_prime: int) -> CommChannelKnowledge:
    """The ``l_prime`` strongest one-way paths at ``loc``, strongest first.

    Ties in gain break toward ascending delay, then candidate order
    (scatterer list order, direct path last).
    """
    cands = candidate_paths(env, loc)
    if len(cands) < l_prime:
        raise GeometryError(f"only {len(cands)} candidate paths, need {l_prime}")
    order = sorted(range(len(cands)),
                   key=lambda i: (-cands[i].gain, cands[i].delay_s, i))
    return CommChannelKnowledge(paths=tuple(cands[i] for i in order[:l_prime]))


def composite_index(l: int, l_prime: int) -> tuple[int, int]:
    """Split a 1-based composite path index into its (forward, reverse)
    constituent indices, each in 1..l_prime."""
    if not (1 <= l <= l_prime * l_prime):
        raise ValueError(f"composite index {l} outside 1..{l_prime ** 2}")
    l_t = (l - 1) // l_prime + 1
    l_r = (l - 1) % l_prime + 1
    return l_t, l_r


def composite_pair_to_index(l_t: int, l_r: int, l_prime: int) -> int:
    """Inverse of :func:`composite_index`."""
    if not (1 <= l_t <= l_prime and 1 <= l_r <= l_prime):
        raise ValueError(f"constituent indices ({l_t}, {l_r}) outside 1..{l_prime}")
    return l_prime * (l_t - 1) + l_r


def composite_pair_arrays(l_prime: int, reciprocal_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """0-based (forward, reverse) constituent indices for every composite
    path, in composite-index order. Diagonal pairs only in reciprocal mode."""
    if reciprocal_only:
        idx = np.arange(l_prime)
        return idx, idx.copy()
    idx_t = np.repeat(np.arange(l_prime), l_prime)
    idx_r = np.tile(np.arange(l_prime), l_prime)
    return idx_t, idx_r


def enumerate_composite_paths(w: CommChannelKnowledge,
                              reciprocal_only: bool = False) -> list[CompositePath]:
    """All round-trip paths formed from the one-way paths in ``w``.

    Composite ``l`` pairs forward path ``l_T`` with reverse path ``l_R``:
    its AoD is the forward path's angle, its AoA the reverse path's angle,
    and its delay the sum of the two one-way delays. In reciprocal mode only
    the ``l_T == l_R`` diagonal is returned.
    """
    idx_t, idx_r = composite_pair_arrays(w.l_prime, reciprocal_only)
    return [CompositePath(aod_rad=w.paths[t].aod_rad,
                          aoa_rad=w.paths[r].aod_rad,
                          delay_s=w.paths[t].delay_s + w.paths[r].delay_s)
            for t, r in zip(idx_t, idx_r)]


def save_scene(env: Environment, path) -> None:
    """Write ``env`` to a scene file (format documented in the module
    docstring)."""
    f17 = lambda v: format(v, ".17g")
    lines = [SCENE_MAGIC,
             f"bs {f17(env.bs.x)} {f17(env.bs.y)}",
             f"bounds {f17(env.bounds[0])} {f17(env.bounds[1])}",
             f"los_blocked {int(env.los_blocked)}",
             f"scatterers {len(env.scatterers)}"]
    for s in env.scatterers:
        lines.append(f"{f17(s.position.x)} {f17(s.position.y)} {f17(s.reflectivity)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> Environment:
    """Read a scene file written by :func:`save_scene`.

    Raises ``SceneFormatError`` on version mismatch or malformed content.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != SCENE_MAGIC:
        raise SceneFormatError(f"expected scene header {SCENE_MAGIC!r}")

    def field(idx, name, count):
        parts = lines[idx].split()
        if parts[0] != name or len(parts) != count + 1:
            raise SceneFormatError(f"line {idx + 1}: expected '{name}' with "
                                   f"{count} values, got {lines[idx]!r}")
        return parts[1:]

    try:
        bx, by = map(float, field(1, "bs", 2))
        w, h = map(float, field(2, "bounds", 2))
        blocked = bool(int(field(3, "los_blocked", 1)[0]))
        n = int(field(4, "scatterers", 1)[0])
        rows = lines[5:]
        if len(rows) != n:
            raise SceneFormatError(f"expected {n} scatterer rows, found {len(rows)}")
        scats = []
        for i, row in enumerate(rows):
            parts = row.split()
            if len(parts) != 3:
                raise SceneFormatError(f"line {6 + i}: expected 'x y reflectivity'")
            x, y, refl = map(float, parts)
            scats.append(Scatterer(position=Point2(x, y), reflectivity=refl))
    except SceneFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise SceneFormatError(f"malformed scene file: {exc}") from exc
    return Environment(bs=Point2(bx, by), scatterers=tuple(scats),
                       bounds=(w, h), los_blocked=blocked)
