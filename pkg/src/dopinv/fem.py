"""Piecewise-linear finite elements on the structured device mesh.

Conventions used throughout the package:

* diffusion coefficients and coupling fields live at the nodes; element
  integrals evaluate them at the triangle centroid (one-point quadrature),
* zeroth-order terms (reactions, coupling blocks, sources) are assembled
  with the lumped element mass (one third of the triangle area per
  vertex), which keeps the reduced systems M-matrices for nonnegative
  reactions and makes discrete maximum principles hold exactly,
* Dirichlet conditions are imposed by row/column elimination with the
  symmetric right-hand-side correction,
* boundary fluxes are recovered variationally: the weak residual tested
  with boundary hat functions, divided by the lumped boundary mass.

Linear systems are solved by sparse LU with a conjugate-gradient fallback;
both paths verify the relative residual against ``SOLVE_TOL``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GAMMA1, Mesh

SOLVE_TOL = 1e-10


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# cached per-mesh geometry
# ---------------------------------------------------------------------------

class _TriGeometry:
    def __init__(self, mesh: Mesh):
        tris = mesh.triangles
        p = mesh.nodes[tris]                       # (T, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(area2 <= 0):
            raise ValueError("mesh contains degenerate or inverted triangles")
        self.area = 0.5 * area2                    # (T,)
        # gradients of the three barycentric functions
        b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                      p[:, 2, 1] - p[:, 0, 1],
                      p[:, 0, 1] - p[:, 1, 1]], axis=1)
        c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                      p[:, 0, 0] - p[:, 2, 0],
                      p[:, 1, 0] - p[:, 0, 0]], axis=1)
        self.grads = np.stack([b, c], axis=2) / area2[:, None, None]   # (T, 3, 2)
        # geometric element stiffness, coefficient-free
        self.gstiff = np.einsum("tid,tjd,t->tij", self.grads, self.grads, self.area)
        self.rows = np.repeat(tris, 3, axis=1).ravel()
        self.cols = np.tile(tris, (1, 3)).ravel()
        self.centroid_cols = tris                  # nodal average = centroid value
        num = mesh.num_nodes
        # consistent P1 mass matrix
        pattern = (np.ones((3, 3)) + np.eye(3)) / 12.0
        mdata = (self.area[:, None, None] * pattern).ravel()
        self.mass = sp.coo_matrix((mdata, (self.rows, self.cols)), shape=(num, num)).tocsr()
        self.lumped = np.zeros(num)
        np.add.at(self.lumped, tris.ravel(), np.repeat(self.area / 3.0, 3))
        self._mass_lu = None

    def mass_solve(self, b: np.ndarray) -> np.ndarray:
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass.tocsc())
        return self._mass_lu.solve(b)


_geom_cache: "weakref.WeakKeyDictionary[Mesh, _TriGeometry]" = weakref.WeakKeyDictionary()


def _geom(mesh: Mesh) -> _TriGeometry:
    g = _geom_cache.get(mesh)
    if g is None:
        g = _TriGeometry(mesh)
        _geom_cache[mesh] = g
    return g


def _check_field(mesh: Mesh, values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.num_nodes,):
        raise ValueError(f"{name} has shape {values.shape}, expected ({mesh.num_nodes},)")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite entries")
    return values


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def stiffness_matrix(mesh: Mesh, a: np.ndarray) -> sp.csr_matrix:
    """Assemble the stiffness matrix for nodal diffusion coefficient ``a``."""
    g = _geom(mesh)
    a = _check_field(mesh, a, "diffusion coefficient")
    a_mid = a[g.centroid_cols].mean(axis=1)
    data = (a_mid[:, None, None] * g.gstiff).ravel()
    n = mesh.num_nodes
    return sp.coo_matrix((data, (g.rows, g.cols)), shape=(n, n)).tocsr()


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    return _geom(mesh).mass


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Diagonal (row-sum) mass vector; entries are positive and sum to 1."""
    return _geom(mesh).lumped.copy()


def lumped_reaction(mesh: Mesh, q: np.ndarray) -> np.ndarray:
    """Diagonal of the lumped reaction term for nodal coefficient ``q``.

    Element contributions use the centroid value of ``q`` spread evenly
    over the three vertices.
    """
    g = _geom(mesh)
    q = _check_field(mesh, q, "reaction coefficient")
    q_mid = q[g.centroid_cols].mean(axis=1)
    diag = np.zeros(mesh.num_nodes)
    np.add.at(diag, mesh.triangles.ravel(), np.repeat(q_mid * g.area / 3.0, 3))
    return diag


def load_vector(mesh: Mesh, f: np.ndarray) -> np.ndarray:
    """Lumped load vector for a nodal source ``f``."""
    return lumped_reaction(mesh, f)


def tri_gradients(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    """Per-triangle gradient of a nodal field, shape (num_triangles, 2)."""
    g = _geom(mesh)
    field = _check_field(mesh, field, "field")
    return np.einsum("tid,ti->td", g.grads, field[mesh.triangles])


def gradient_pairing(mesh: Mesh, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Nodal vector b with b_i = integral of phi_i * (grad u . grad w).

    The integrand is piecewise constant, so each triangle contributes a
    third of its area times the gradient product to each vertex.
    """
    g = _geom(mesh)
    prod = np.einsum("td,td->t", tri_gradients(mesh, u), tri_gradients(mesh, w))
    b = np.zeros(mesh.num_nodes)
    np.add.at(b, mesh.triangles.ravel(), np.repeat(prod * g.area / 3.0, 3))
    return b


def mass_solve(mesh: Mesh, b: np.ndarray) -> np.ndarray:
    """Solve M x = b with the consistent mass matrix (cached factorization)."""
    return _geom(mesh).mass_solve(np.asarray(b, dtype=float))


# ---------------------------------------------------------------------------
# Dirichlet elimination and linear solves
# ---------------------------------------------------------------------------

class DirichletSystem:
    """Reduced linear system after eliminating Dirichlet rows and columns.

    Factors the free-free block once; ``solve`` can then be called for
    several right-hand sides and Dirichlet data (the iterative loop of the
    reconstruction reuses one factorization for the forward and adjoint
    solves of a step).
    """

    def __init__(self, mesh: Mesh, matrix: sp.spmatrix, dirichlet_ids: np.ndarray):
        self.mesh = mesh
        self.num = matrix.shape[0]
        dirichlet_ids = np.asarray(dirichlet_ids, dtype=int)
        self.free = np.ones(self.num, dtype=bool)
        self.free[dirichlet_ids] = False
        matrix = matrix.tocsr()
        self._a_ff = matrix[self.free][:, self.free].tocsc()
        self._a_fd = matrix[self.free][:, ~self.free].tocsr()
        if self._a_ff.shape[0] == 0:
            self._lu = None
        else:
            diag = self._a_ff.diagonal()
            if np.all(diag == 0) and self._a_ff.nnz == 0:
                raise SolverError("singular system: no Dirichlet nodes and zero reaction")
            try:
                self._lu = spla.splu(self._a_ff)
            except RuntimeError:
                self._lu = None

    def solve(self, rhs: np.ndarray, dirichlet_values: np.ndarray) -> np.ndarray:
        """Return the full nodal solution for lumped rhs and Dirichlet data.

        ``dirichlet_values`` is a full-length vector; only entries at the
        constrained nodes are read.
        """
        u = np.array(dirichlet_values, dtype=float)
        u[self.free] = 0.0
        if self._a_ff.shape[0] == 0:
            return u
        b = rhs[self.free] - self._a_fd @ u[~self.free]
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            x = None
        bnorm = np.linalg.norm(b)
        if x is None or not np.all(np.isfinite(x)) or (
            np.linalg.norm(self._a_ff @ x - b) > SOLVE_TOL * max(bnorm, 1e-300)
        ):
            x, info = spla.cg(self._a_ff, b, rtol=SOLVE_TOL, atol=0.0,
                              maxiter=20 * self._a_ff.shape[0])
            if info != 0:
                raise SolverError(
                    f"linear solve failed: CG fallback did not converge (info={info})"
                )
        u[self.free] = x
        return u


# ---------------------------------------------------------------------------
# scalar and coupled boundary value problems
# ---------------------------------------------------------------------------

@dataclass
class MixedBvp:
    """-div(a grad u) + c u = f with Dirichlet data on tagged nodes.

    ``dirichlet_ids``/``dirichlet_values`` list the constrained nodes; all
    remaining boundary nodes get the natural zero-flux condition.
    """

    a: np.ndarray
    dirichlet_ids: np.ndarray
    dirichlet_values: np.ndarray
    c: np.ndarray | None = None
    f: np.ndarray | None = None


def _full_dirichlet_vector(mesh: Mesh, ids: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.zeros(mesh.num_nodes)
    out[np.asarray(ids, dtype=int)] = np.asarray(values, dtype=float)
    return out


def assemble_mixed(mesh: Mesh, bvp: MixedBvp) -> tuple[sp.csr_matrix, np.ndarray]:
    a = _check_field(mesh, bvp.a, "diffusion coefficient")
    if np.any(a <= 0):
        raise ValueError("diffusion coefficient must be strictly positive")
    A = stiffness_matrix(mesh, a)
    if bvp.c is not None:
        c = _check_field(mesh, bvp.c, "reaction coefficient")
        if np.any(c < 0):
            raise ValueError("reaction coefficient must be nonnegative")
        A = A + sp.diags(lumped_reaction(mesh, c))
    rhs = np.zeros(mesh.num_nodes)
    if bvp.f is not None:
        rhs = load_vector(mesh, bvp.f)
    return A.tocsr(), rhs


def solve_mixed_bvp(mesh: Mesh, bvp: MixedBvp) -> np.ndarray:
    """Solve the scalar problem, returning the full nodal solution."""
    ids = np.asarray(bvp.dirichlet_ids, dtype=int)
    if ids.size == 0 and (bvp.c is None or not np.any(np.asarray(bvp.c) > 0)):
        raise SolverError("singular system: no Dirichlet nodes and zero reaction")
    A, rhs = assemble_mixed(mesh, bvp)
    system = DirichletSystem(mesh, A, ids)
    dvals = _full_dirichlet_vector(mesh, ids, bvp.dirichlet_values)
    return system.solve(rhs, dvals)


@dataclass
class CoupledBvp:
    """Two diffusion equations tied by a sign-coupled reaction block.

        -div(a_u grad u) + q (u + sigma v) = 0
        -div(a_v grad v) + q (v + sigma u) = 0

    with sigma in {+1, -1} and q >= 0.  Each unknown carries its own
    Dirichlet data on the same constrained node set.
    """

    a_u: np.ndarray
    a_v: np.ndarray
    q: np.ndarray
    dirichlet_ids: np.ndarray
    dirichlet_u: np.ndarray
    dirichlet_v: np.ndarray
    sigma: int = 1


def solve_coupled_bvp(mesh: Mesh, bvp: CoupledBvp) -> tuple[np.ndarray, np.ndarray]:
    """Solve the coupled pair, returning full nodal solutions (u, v)."""
    if bvp.sigma not in (1, -1):
        raise ValueError(f"sigma must be +1 or -1, got {bvp.sigma}")
    q = _check_field(mesh, bvp.q, "coupling field")
    if np.any(q < 0):
        raise ValueError("coupling field must be nonnegative")
    for name, a in (("a_u", bvp.a_u), ("a_v", bvp.a_v)):
        av = _check_field(mesh, a, name)
        if np.any(av <= 0):
            raise ValueError(f"{name} must be strictly positive")
    n = mesh.num_nodes
    dq = sp.diags(lumped_reaction(mesh, q))
    K_u = stiffness_matrix(mesh, bvp.a_u) + dq
    K_v = stiffness_matrix(mesh, bvp.a_v) + dq
    off = bvp.sigma * dq
    A = sp.bmat([[K_u, off], [off, K_v]], format="csr")
    ids = np.asarray(bvp.dirichlet_ids, dtype=int)
    ids2 = np.concatenate([ids, ids + n])
    system = DirichletSystem(mesh, A, ids2)
    dvals = np.concatenate([
        _full_dirichlet_vector(mesh, ids, bvp.dirichlet_u),
        _full_dirichlet_vector(mesh, ids, bvp.dirichlet_v),
    ])
    sol = system.solve(np.zeros(2 * n), dvals)
    return sol[:n], sol[n:]


def coupled_residual(mesh: Mesh, bvp: CoupledBvp, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weak residuals of both equations for flux recovery."""
    dq = lumped_reaction(mesh, bvp.q)
    r_u = stiffness_matrix(mesh, bvp.a_u) @ u + dq * (u + bvp.sigma * v)
    r_v = stiffness_matrix(mesh, bvp.a_v) @ v + dq * (v + bvp.sigma * u)
    return r_u, r_v


# ---------------------------------------------------------------------------
# boundary fluxes and norms
# ---------------------------------------------------------------------------

@dataclass
class FluxTrace:
    """Nodal flux values on a tagged boundary segment.

    ``s`` is the coordinate that varies along the segment (x on horizontal
    segments); ``weights`` are the lumped boundary masses, positive and
    summing to the segment length.  Squared norms and inner products are
    the weighted sums, a trapezoid-exact quadrature for nodal traces.
    """

    mesh: Mesh
    tag: str
    node_ids: np.ndarray
    s: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def with_values(self, values: np.ndarray) -> "FluxTrace":
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ValueError("trace values have the wrong length")
        return replace(self, values=values)

    def _compatible(self, other: "FluxTrace") -> None:
        if other.mesh is not self.mesh or other.tag != self.tag:
            raise ValueError("traces live on different meshes or segments")

    def inner(self, other: "FluxTrace") -> float:
        self._compatible(other)
        return float(np.sum(self.weights * self.values * other.values))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.weights * self.values**2)))


def trace_layout(mesh: Mesh, tag: str = GAMMA1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Node ids, arc coordinates and lumped weights of a tagged segment."""
    sel = mesh.boundary_tags == tag
    if not sel.any():
        raise ValueError(f"mesh has no boundary edges tagged {tag!r}")
    edges = mesh.boundary_edges[sel]
    ids = np.unique(edges)
    pts = mesh.nodes[ids]
    axis = 0 if np.ptp(pts[:, 0]) >= np.ptp(pts[:, 1]) else 1
    order = np.argsort(pts[:, axis], kind="stable")
    ids = ids[order]
    s = mesh.nodes[ids, axis]
    weights = np.zeros(mesh.num_nodes)
    lengths = np.linalg.norm(mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]], axis=1)
    np.add.at(weights, edges[:, 0], 0.5 * lengths)
    np.add.at(weights, edges[:, 1], 0.5 * lengths)
    return ids, s, weights[ids]


def flux_from_residual(mesh: Mesh, residual: np.ndarray, tag: str = GAMMA1) -> FluxTrace:
    """Turn a weak residual vector into a nodal flux trace on ``tag``."""
    ids, s, w = trace_layout(mesh, tag)
    return FluxTrace(mesh=mesh, tag=tag, node_ids=ids, s=s,
                     values=residual[ids] / w, weights=w)


def boundary_flux(mesh: Mesh, u: np.ndarray, a: np.ndarray, tag: str = GAMMA1,
                  c: np.ndarray | None = None, f: np.ndarray | None = None) -> FluxTrace:
    """Variationally consistent flux a du/dnu of a solved field on ``tag``.

    ``u`` must solve the mixed problem with the given coefficients; the
    recovery is exact (in the weak pairing sense) because it reuses the
    assembled operator.
    """
    A, rhs = assemble_mixed(mesh, MixedBvp(
        a=a, c=c, f=f,
        dirichlet_ids=np.empty(0, dtype=int), dirichlet_values=np.empty(0)))
    return flux_from_residual(mesh, A @ u - rhs, tag)


def l2_norm(mesh: Mesh, field: np.ndarray) -> float:
    """L2 norm over the square, consistent-mass weighted."""
    field = _check_field(mesh, field, "field")
    return float(np.sqrt(field @ (mass_matrix(mesh) @ field)))


def l2_error_vs(mesh: Mesh, u: np.ndarray, exact) -> float:
    """L2 distance between a nodal field and a callable exact(x, y).

    Uses the edge-midpoint rule (exact for quadratics), so interpolation
    error is resolved even when the discrete solution hits the exact
    values at the nodes.
    """
    u = _check_field(mesh, u, "field")
    g = _geom(mesh)
    p = mesh.nodes[mesh.triangles]           # (T, 3, 2)
    uv = u[mesh.triangles]                   # (T, 3)
    total = 0.0
    for i, j in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (p[:, i] + p[:, j])
        u_mid = 0.5 * (uv[:, i] + uv[:, j])
        diff = u_mid - exact(mid[:, 0], mid[:, 1])
        total += np.sum(g.area / 3.0 * diff**2)
    return float(np.sqrt(total))


def inner_l2(mesh: Mesh, f: np.ndarray, g: np.ndarray) -> float:
    f = _check_field(mesh, f, "field")
    g = _check_field(mesh, g, "field")
    return float(f @ (mass_matrix(mesh) @ g))


def masked_l2(mesh: Mesh, field: np.ndarray, mask: np.ndarray) -> float:
    """L2 norm restricted to masked nodes (lumped quadrature)."""
    field = _check_field(mesh, field, "field")
    w = lumped_mass(mesh)
    return float(np.sqrt(np.sum(w[mask] * field[mask] ** 2)))


def l2_gamma1(trace: FluxTrace) -> float:
    """L2 norm of a trace along its segment."""
    return trace.norm()
