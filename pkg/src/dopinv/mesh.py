"""Structured triangulations of the unit-square device domain.

The device occupies the unit square.  Its boundary is partitioned into
three kinds of segments:

* ``"gamma1"``    -- the measurement contact, an interval on the top edge
  (default ``(0, 1/2)``).  Outflow currents are read off here.
* ``"dirichlet"`` -- further ohmic contacts where voltages are applied
  (default: the whole bottom edge).
* ``"neumann"``   -- insulating segments (everything else).

Meshes are uniform right-triangle grids: ``n`` cells per side, each cell
split along its lower-left to upper-right diagonal.  This keeps the
stiffness matrix an M-matrix (all triangles are non-obtuse), which the
solvers and several maximum-principle checks rely on.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GAMMA1 = "gamma1"
DIRICHLET = "dirichlet"
NEUMANN = "neumann"

_EDGE_NAMES = ("bottom", "right", "top", "left")


@dataclass(frozen=True)
class GeometryConfig:
    """Boundary tagging for the unit square.

    Parameters
    ----------
    gamma1 : (float, float)
        Interval on the top edge (in the x coordinate) carrying the
        measurement contact.
    dirichlet_other : tuple of (edge, lo, hi)
        Further Dirichlet intervals.  ``edge`` is one of ``"bottom"``,
        ``"right"``, ``"top"``, ``"left"``; ``lo``/``hi`` refer to the
        coordinate that varies along that edge.  Default: the whole
        bottom edge.
    """

    gamma1: tuple[float, float] = (0.0, 0.5)
    dirichlet_other: tuple[tuple[str, float, float], ...] = (("bottom", 0.0, 1.0),)

    def __post_init__(self) -> None:
        lo, hi = self.gamma1
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"gamma1 interval {self.gamma1} is not a valid sub-interval of [0, 1]")
        for edge, a, b in self.dirichlet_other:
            if edge not in _EDGE_NAMES:
                raise ValueError(f"unknown edge name {edge!r}; expected one of {_EDGE_NAMES}")
            if not (0.0 <= a < b <= 1.0):
                raise ValueError(f"dirichlet interval ({a}, {b}) on edge {edge!r} is invalid")


def _snap(value: float, n: int) -> float:
    """Round a coordinate to the nearest grid line k/n (half away from zero)."""
    return float(np.floor(value * n + 0.5)) / n


def _snap_interval(lo: float, hi: float, n: int, what: str) -> tuple[float, float]:
    slo, shi = _snap(lo, n), _snap(hi, n)
    if shi - slo < 0.5 / n:
        raise ValueError(
            f"{what} interval ({lo}, {hi}) collapses on the n={n} grid; "
            "endpoints must be at least one cell apart"
        )
    return slo, shi


@dataclass(eq=False)
class Mesh:
    """Uniform right-triangle mesh of the unit square with tagged boundary."""

    n: int
    config: GeometryConfig
    nodes: np.ndarray          # (num_nodes, 2) coordinates
    triangles: np.ndarray      # (num_triangles, 3) node ids, counter-clockwise
    boundary_edges: np.ndarray  # (num_edges, 2) node ids along the ccw loop
    boundary_tags: np.ndarray  # (num_edges,) strings from {GAMMA1, DIRICHLET, NEUMANN}
    _bnode_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    # -- boundary queries -------------------------------------------------

    def boundary_nodes(self, tag: str) -> np.ndarray:
        """Node ids on edges carrying ``tag``, ordered along the ccw loop.

        Corner nodes shared between a Dirichlet-type segment (gamma1 or
        dirichlet) and a Neumann segment belong to the Dirichlet side:
        they are omitted from the Neumann set.
        """
        if tag not in (GAMMA1, DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary tag {tag!r}")
        if tag in self._bnode_cache:
            return self._bnode_cache[tag]
        order: list[int] = []
        seen: set[int] = set()
        for (a, b), t in zip(self.boundary_edges, self.boundary_tags):
            if t != tag:
                continue
            for node in (int(a), int(b)):
                if node not in seen:
                    seen.add(node)
                    order.append(node)
        if tag == NEUMANN:
            owned = set()
            for (a, b), t in zip(self.boundary_edges, self.boundary_tags):
                if t != NEUMANN:
                    owned.update((int(a), int(b)))
            order = [i for i in order if i not in owned]
        out = np.asarray(order, dtype=int)
        self._bnode_cache[tag] = out
        return out

    def dirichlet_nodes(self) -> np.ndarray:
        """All nodes on gamma1 or other Dirichlet segments (sorted by id)."""
        ids = np.union1d(self.boundary_nodes(GAMMA1), self.boundary_nodes(DIRICHLET))
        return ids.astype(int)

    def gamma1_nodes(self) -> np.ndarray:
        """Gamma1 node ids sorted by ascending x (the trace parameterization)."""
        ids = self.boundary_nodes(GAMMA1)
        return ids[np.argsort(self.nodes[ids, 0], kind="stable")]

    def interior_mask(self, margin: float) -> np.ndarray:
        """Boolean mask of nodes farther than ``margin`` from the boundary.

        Distance is measured in the max norm, so on the unit square a node
        (x, y) is inside exactly when min(x, 1-x, y, 1-y) > margin.  Warns
        when no node qualifies (mesh too coarse for the requested margin).
        """
        if not (0.0 <= margin < 0.5):
            raise ValueError(f"margin must lie in [0, 0.5), got {margin}")
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        dist = np.minimum.reduce([x, 1.0 - x, y, 1.0 - y])
        mask = dist > margin + 1e-12
        if not mask.any():
            warnings.warn(
                f"interior mask is empty for margin={margin} on an n={self.n} mesh",
                stacklevel=2,
            )
        return mask

    # -- export ------------------------------------------------------------

    def export_csv(self, directory: str | Path) -> None:
        """Write nodes.csv (id,x,y), triangles.csv (n0,n1,n2), boundary.csv (n0,n1,tag)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "nodes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y"])
            for i, (x, y) in enumerate(self.nodes):
                w.writerow([i, repr(float(x)), repr(float(y))])
        with open(directory / "triangles.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n0", "n1", "n2"])
            for tri in self.triangles:
                w.writerow([int(tri[0]), int(tri[1]), int(tri[2])])
        with open(directory / "boundary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n0", "n1", "tag"])
            for (a, b), t in zip(self.boundary_edges, self.boundary_tags):
                w.writerow([int(a), int(b), str(t)])


def _interval_tag(mid: float, intervals: list[tuple[float, float]]) -> bool:
    return any(lo < mid < hi for lo, hi in intervals)


def build_unit_square(n: int, config: GeometryConfig | None = None) -> Mesh:
    """Build the structured mesh with ``n`` cells per side.

    Parameters
    ----------
    n : int
        Subdivisions per side, at least 2.  The mesh has (n+1)^2 nodes and
        2 n^2 triangles.
    config : GeometryConfig, optional
        Boundary tagging; defaults to the standard device layout (gamma1
        on the left half of the top edge, Dirichlet bottom edge).

    Raises
    ------
    ValueError
        If tagged intervals overlap after snapping to the grid, or an
        interval cannot be represented on the grid.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 subdivisions, got {n}")
    config = config or GeometryConfig()

    # nodes on a uniform grid, id = iy * (n + 1) + ix
    coords = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(ix: int, iy: int) -> int:
        return iy * (n + 1) + ix

    tris = np.empty((2 * n * n, 3), dtype=int)
    k = 0
    for iy in range(n):
        for ix in range(n):
            a = nid(ix, iy)
            b = nid(ix + 1, iy)
            c = nid(ix + 1, iy + 1)
            d = nid(ix, iy + 1)
            tris[k] = (a, b, c)
            tris[k + 1] = (a, c, d)
            k += 2

    # boundary edges along the ccw loop starting at the origin
    edges: list[tuple[int, int]] = []
    edge_of: list[str] = []   # which side of the square
    mids: list[float] = []    # varying coordinate at the edge midpoint
    for ix in range(n):
        edges.append((nid(ix, 0), nid(ix + 1, 0)))
        edge_of.append("bottom")
        mids.append((ix + 0.5) / n)
    for iy in range(n):
        edges.append((nid(n, iy), nid(n, iy + 1)))
        edge_of.append("right")
        mids.append((iy + 0.5) / n)
    for ix in range(n, 0, -1):
        edges.append((nid(ix, n), nid(ix - 1, n)))
        edge_of.append("top")
        mids.append((ix - 0.5) / n)
    for iy in range(n, 0, -1):
        edges.append((nid(0, iy), nid(0, iy - 1)))
        edge_of.append("left")
        mids.append((iy - 0.5) / n)

    g1 = _snap_interval(*config.gamma1, n, "gamma1")
    other: dict[str, list[tuple[float, float]]] = {name: [] for name in _EDGE_NAMES}
    for edge, lo, hi in config.dirichlet_other:
        other[edge].append(_snap_interval(lo, hi, n, f"dirichlet ({edge})"))

    # reject overlaps after snapping: check interval pairs sharing an edge
    tagged: dict[str, list[tuple[float, float]]] = {name: list(v) for name, v in other.items()}
    tagged["top"] = tagged["top"] + [g1]
    for name, ivs in tagged.items():
        ivs = sorted(ivs)
        for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
            if a1 < b0 - 1e-12:
                raise ValueError(
                    f"tagged intervals ({a0}, {b0}) and ({a1}, {b1}) overlap on edge {name!r}"
                )

    tags = np.empty(len(edges), dtype=object)
    for i, (side, mid) in enumerate(zip(edge_of, mids)):
        if side == "top" and g1[0] < mid < g1[1]:
            tags[i] = GAMMA1
        elif _interval_tag(mid, other[side]):
            tags[i] = DIRICHLET
        else:
            tags[i] = NEUMANN

    return Mesh(
        n=n,
        config=config,
        nodes=nodes,
        triangles=tris,
        boundary_edges=np.asarray(edges, dtype=int),
        boundary_tags=tags.astype(str),
    )
