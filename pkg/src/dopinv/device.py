"""Device physics: parameters, equilibrium potentials, recombination.

Works in the scaled variables of the stationary van Roosbroeck system:
potentials in units of U_T, densities in units of n_i, so that carrier
densities at equilibrium are n = e^V and p = e^{-V}.  The equilibrium
potential solves

    lambda^2 Lap(V) = e^V - e^{-V} - C      (bipolar)
    lambda^2 Lap(V) = e^V - C               (unipolar)

with Dirichlet data (the built-in potential at ohmic contacts) and zero
Neumann flux on insulating segments.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import Mesh

EPS0 = 8.85e-14  # vacuum permittivity, As / (V cm)


class NewtonError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass
class PhysicalParameters:
    """Room-temperature silicon constants (CGS-style semiconductor units)."""

    eps_s: float = 11.9 * EPS0       # semiconductor permittivity, As/(V cm)
    q: float = 1.6e-19               # elementary charge, As
    mu_n: float = 1500.0             # electron mobility, cm^2/(V s)
    mu_p: float = 450.0              # hole mobility, cm^2/(V s)
    tau_n: float = 1e-6              # electron lifetime, s
    tau_p: float = 1e-5              # hole lifetime, s
    c_n: float = 2.8e-31             # electron Auger coefficient, cm^6/s
    c_p: float = 9.9e-32             # hole Auger coefficient, cm^6/s
    u_t: float = 0.0259              # thermal voltage, V (room temperature)
    n_i: float = 1.45e10             # intrinsic density of silicon, cm^-3

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def from_json(cls, path: str | Path) -> "PhysicalParameters":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown parameter fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ScaledParameters:
    """Dimensionless groups entering the scaled system."""

    lambda2: float   # eps_s / (q u_t)
    delta2: float    # n_i
    mu_n: float      # q u_t mu_n
    mu_p: float      # q u_t mu_p


def scale_parameters(phys: PhysicalParameters) -> ScaledParameters:
    """Collapse the physical constants into the scaled groups."""
    return ScaledParameters(
        lambda2=phys.eps_s / (phys.q * phys.u_t),
        delta2=phys.n_i,
        mu_n=phys.q * phys.u_t * phys.mu_n,
        mu_p=phys.q * phys.u_t * phys.mu_p,
    )


def built_in_potential(C: np.ndarray, phys: PhysicalParameters) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equilibrium contact densities and built-in potential for a doping C.

    Returns (v_bi, n_d, p_d) with n_d p_d = n_i^2 and v_bi in volts.  The
    stable branch is used for either doping sign.
    """
    C = np.asarray(C, dtype=float)
    root = np.sqrt(C**2 + 4.0 * phys.n_i**2)
    # Evaluate the majority density by addition and recover the minority one
    # from the mass-action product; the direct subtraction loses ~|C|/n_i
    # digits once the doping dwarfs the intrinsic density.
    majority = 0.5 * (np.abs(C) + root)
    minority = phys.n_i**2 / majority
    n_d = np.where(C >= 0.0, majority, minority)
    p_d = np.where(C >= 0.0, minority, majority)
    v_bi = phys.u_t * np.log(n_d / phys.n_i)
    return v_bi, n_d, p_d


# ---------------------------------------------------------------------------
# recombination
# ---------------------------------------------------------------------------

@dataclass
class RecombinationModel:
    """Shockley-Read-Hall or Auger recombination, R = coeff(n, p) (np - n_i^2).

    ``srh_variant`` selects the lifetime placement in the SRH denominator:
    ``"corrected"`` uses tau_n (p + n_i) + tau_p (n + n_i); ``"printed"``
    uses tau_p in both terms, reproducing a commonly transcribed variant.
    The corrected form is the default for physical runs.
    """

    variant: str = "srh"             # "srh", "auger" or "none"
    tau_n: float = 1.0
    tau_p: float = 1.0
    c_n: float = 1.0
    c_p: float = 1.0
    n_i: float = 1.0
    srh_variant: str = "corrected"

    def __post_init__(self) -> None:
        if self.variant not in ("srh", "auger", "none"):
            raise ValueError(f"unknown recombination variant {self.variant!r}")
        if self.srh_variant not in ("corrected", "printed"):
            raise ValueError(f"unknown srh_variant {self.srh_variant!r}")

    def coefficient(self, n: np.ndarray, p: np.ndarray) -> np.ndarray:
        """The positive factor multiplying (np - n_i^2)."""
        n = np.asarray(n, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.variant == "none":
            return np.zeros(np.broadcast(n, p).shape)
        if self.variant == "auger":
            return self.c_n * n + self.c_p * p
        tau_first = self.tau_n if self.srh_variant == "corrected" else self.tau_p
        denom = tau_first * (p + self.n_i) + self.tau_p * (n + self.n_i)
        if np.any(denom <= 0):
            raise ValueError("SRH denominator is nonpositive; check densities and lifetimes")
        return 1.0 / denom

    def q0(self, V0: np.ndarray) -> np.ndarray:
        """Coupling field at equilibrium, coefficient evaluated at n=e^V, p=e^-V."""
        V0 = np.asarray(V0, dtype=float)
        return self.coefficient(self.n_i * np.exp(V0), self.n_i * np.exp(-V0))


def recombination_rate(n: np.ndarray, p: np.ndarray, model: RecombinationModel) -> np.ndarray:
    """Net recombination R(n, p); zero whenever np = n_i^2."""
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    return model.coefficient(n, p) * (n * p - model.n_i**2)


# ---------------------------------------------------------------------------
# equilibrium Newton solver
# ---------------------------------------------------------------------------

def _nl_terms(V: np.ndarray, C: np.ndarray, polarity: str):
    if polarity == "bipolar":
        return np.exp(V) - np.exp(-V) - C, np.exp(V) + np.exp(-V)
    return np.exp(V) - C, np.exp(V)


def equilibrium_dirichlet(C: np.ndarray, polarity: str, floor: float = 1e-6) -> np.ndarray:
    """Scaled built-in potential used as default contact data and warm start."""
    C = np.asarray(C, dtype=float)
    if polarity == "bipolar":
        return np.arcsinh(0.5 * C)
    return np.log(np.maximum(C, floor))


def solve_equilibrium(
    mesh: Mesh,
    C: np.ndarray,
    lambda2: float,
    polarity: str = "bipolar",
    dirichlet_values: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 60,
    max_halvings: int = 30,
    return_history: bool = False,
):
    """Damped-Newton solve of the scaled equilibrium Poisson problem.

    Parameters
    ----------
    C : nodal doping values (scaled by n_i).
    lambda2 : scaled Debye coefficient, must be positive.
    polarity : "bipolar" (both carriers) or "unipolar" (electrons only).
    dirichlet_values : full nodal vector; entries at Dirichlet nodes are
        used as contact data.  Defaults to the scaled built-in potential
        of the local doping.

    Returns the nodal potential, plus the residual-norm history when
    ``return_history`` is set.  The history is strictly decreasing; the
    step is halved (up to ``max_halvings`` times) until it decreases.
    """
    if polarity not in ("bipolar", "unipolar"):
        raise ValueError(f"polarity must be 'bipolar' or 'unipolar', got {polarity!r}")
    if lambda2 <= 0:
        raise ValueError("lambda2 must be positive")
    C = np.asarray(C, dtype=float)
    if C.shape != (mesh.num_nodes,):
        raise ValueError(f"C must have shape ({mesh.num_nodes},), got {C.shape}")
    ids = mesh.dirichlet_nodes()
    if dirichlet_values is None:
        dirichlet_values = equilibrium_dirichlet(C, polarity)
    V = equilibrium_dirichlet(C, polarity)
    V[ids] = np.asarray(dirichlet_values, dtype=float)[ids]

    K = fem.stiffness_matrix(mesh, np.ones(mesh.num_nodes))
    m = fem.lumped_mass(mesh)
    free = np.ones(mesh.num_nodes, dtype=bool)
    free[ids] = False
    scale = 1.0 / np.sqrt(max(free.sum(), 1))

    def residual(V):
        g, _ = _nl_terms(V, C, polarity)
        return (lambda2 * (K @ V) + m * g)[free]

    r = residual(V)
    rnorm = np.linalg.norm(r) * scale
    history = [rnorm]
    for _ in range(max_iter):
        if rnorm < tol:
            break
        _, gprime = _nl_terms(V, C, polarity)
        J = (lambda2 * K + sp.diags(m * gprime)).tocsr()
        system = fem.DirichletSystem(mesh, J, ids)
        full_r = np.zeros(mesh.num_nodes)
        full_r[free] = r
        step = system.solve(full_r, np.zeros(mesh.num_nodes))
        t = 1.0
        for _ in range(max_halvings + 1):
            V_new = V - t * step
            r_new = residual(V_new)
            rnorm_new = np.linalg.norm(r_new) * scale
            if rnorm_new < rnorm:
                break
            t *= 0.5
        else:
            raise NewtonError(
                "equilibrium Newton stalled: no damping step decreased the residual "
                f"(residual {rnorm:.3e}); consider a better warm start",
                history,
            )
        V, r, rnorm = V_new, r_new, rnorm_new
        history.append(rnorm)
    else:
        raise NewtonError(
            f"equilibrium Newton did not reach tolerance {tol:.1e} in {max_iter} "
            f"iterations (residual {rnorm:.3e})",
            history,
        )
    if return_history:
        return V, history
    return V


# ---------------------------------------------------------------------------
# vanishing space charge transforms
# ---------------------------------------------------------------------------

def zsc_conductivity(C: np.ndarray) -> np.ndarray:
    """Doping to equilibrium conductivity in the zero-space-charge limit."""
    return np.exp(np.arcsinh(2.0 * np.asarray(C, dtype=float)))


def zsc_doping(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`zsc_conductivity`; requires a strictly positive input."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("conductivity must be strictly positive")
    return 0.5 * np.sinh(np.log(a))
