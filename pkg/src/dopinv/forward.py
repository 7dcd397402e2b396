"""Forward measurement maps: contact voltages in, contact currents out.

All maps share the device geometry: excitations are applied on the
Dirichlet contacts away from the measurement segment gamma1, and the
resulting flux is read off on gamma1 with the variationally consistent
recovery from :mod:`dopinv.fem`.

The maps implemented here:

* :func:`unipolar_forward` -- conductivity-to-current map of the linearized
  unipolar device, gamma = e^{V0},
* :func:`bipolar_vc_derivative` -- current response of the bipolar device
  to a voltage perturbation at equilibrium (sign-coupled system, +1),
* :func:`capacitance_measurement` -- normal derivative of the potential
  perturbation, from the screened Poisson problem driven by the carrier
  responses,
* :func:`lbic_image_2d` -- interior photocurrent image of the sign-flipped
  (-1) system excited uniformly on gamma1.

:func:`synthesize_dataset` generates measurement sets on a fine mesh and
restricts them to the inversion mesh, so discrete data never come from
the operator that inverts them unless a test explicitly asks for it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .device import RecombinationModel, ScaledParameters
from .mesh import GAMMA1, GeometryConfig, Mesh, build_unit_square


@dataclass(frozen=True)
class InputProfile:
    """Hat-shaped contact voltage, centered at ``center`` with half-width
    ``half_width``, applied on the Dirichlet contacts away from gamma1."""

    center: float
    half_width: float
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.center < 1.0):
            raise ValueError(f"profile center {self.center} must lie in (0, 1)")
        if self.half_width <= 0:
            raise ValueError("profile half-width must be positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.maximum(0.0, 1.0 - np.abs(x - self.center) / self.half_width)

    def dirichlet_data(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Constrained node ids and values: the hat on the driven contacts,
        zero on gamma1."""
        ids = mesh.dirichlet_nodes()
        values = self(mesh.nodes[ids, 0])
        on_gamma1 = np.isin(ids, mesh.boundary_nodes(GAMMA1))
        values[on_gamma1] = 0.0
        return ids, values


def equally_spaced_profiles(count: int, half_width: float | None = None,
                            amplitude: float = 1.0) -> list[InputProfile]:
    """``count`` hat profiles centered at j/(count+1), j = 1..count."""
    if count < 1:
        raise ValueError("need at least one profile")
    if half_width is None:
        half_width = 1.0 / (count + 1)
    return [InputProfile(center=j / (count + 1), half_width=half_width, amplitude=amplitude)
            for j in range(1, count + 1)]


# ---------------------------------------------------------------------------
# individual measurement maps
# ---------------------------------------------------------------------------

def unipolar_forward(mesh: Mesh, gamma: np.ndarray, profile: InputProfile
                     ) -> tuple[np.ndarray, fem.FluxTrace]:
    """Solve div(gamma grad u) = 0 for a hat excitation and return
    (potential, gamma du/dnu on gamma1)."""
    ids, values = profile.dirichlet_data(mesh)
    u = fem.solve_mixed_bvp(mesh, fem.MixedBvp(
        a=gamma, dirichlet_ids=ids, dirichlet_values=values))
    return u, fem.boundary_flux(mesh, u, gamma)


def _carrier_coefficients(V0: np.ndarray, params: ScaledParameters
                          ) -> tuple[np.ndarray, np.ndarray]:
    V0 = np.asarray(V0, dtype=float)
    return params.mu_n * np.exp(V0), params.mu_p * np.exp(-V0)


def bipolar_linearized(mesh: Mesh, V0: np.ndarray, q0: np.ndarray,
                       params: ScaledParameters, profile: InputProfile
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Carrier responses (u_hat, v_hat) to a contact voltage perturbation.

    The electron unknown gets -phi and the hole unknown +phi on the
    Dirichlet contacts, with the +1 sign coupling through q0.
    """
    a_u, a_v = _carrier_coefficients(V0, params)
    ids, values = profile.dirichlet_data(mesh)
    return fem.solve_coupled_bvp(mesh, fem.CoupledBvp(
        a_u=a_u, a_v=a_v, q=q0, sigma=1,
        dirichlet_ids=ids, dirichlet_u=-values, dirichlet_v=values))


def bipolar_vc_derivative(mesh: Mesh, V0: np.ndarray, q0: np.ndarray,
                          params: ScaledParameters, profile: InputProfile,
                          return_fields: bool = False):
    """Current response on gamma1 of the bipolar device at equilibrium.

    Returns mu_n e^{V0} du/dnu - mu_p e^{-V0} dv/dnu on gamma1; with
    ``return_fields`` also the carrier responses (u_hat, v_hat).
    """
    u_hat, v_hat = bipolar_linearized(mesh, V0, q0, params, profile)
    a_u, a_v = _carrier_coefficients(V0, params)
    bvp = fem.CoupledBvp(a_u=a_u, a_v=a_v, q=np.asarray(q0, dtype=float), sigma=1,
                         dirichlet_ids=np.empty(0, dtype=int),
                         dirichlet_u=np.empty(0), dirichlet_v=np.empty(0))
    r_u, r_v = fem.coupled_residual(mesh, bvp, u_hat, v_hat)
    trace = fem.flux_from_residual(mesh, r_u - r_v)
    if return_fields:
        return trace, (u_hat, v_hat)
    return trace


def capacitance_measurement(mesh: Mesh, V0: np.ndarray, u_hat: np.ndarray,
                            v_hat: np.ndarray, lambda2: float,
                            profile: InputProfile) -> fem.FluxTrace:
    """Normal derivative on gamma1 of the potential perturbation.

    Solves lambda^2 Lap(V) = (e^{V0} + e^{-V0}) V + e^{V0} u + e^{-V0} v
    with the applied voltage as Dirichlet data, and returns dV/dnu (the
    recovered flux divided by lambda^2).
    """
    if lambda2 <= 0:
        raise ValueError("lambda2 must be positive")
    V0 = np.asarray(V0, dtype=float)
    en, ep = np.exp(V0), np.exp(-V0)
    a = np.full(mesh.num_nodes, lambda2)
    c = en + ep
    f = -(en * u_hat + ep * v_hat)
    ids, values = profile.dirichlet_data(mesh)
    V = fem.solve_mixed_bvp(mesh, fem.MixedBvp(
        a=a, c=c, f=f, dirichlet_ids=ids, dirichlet_values=values))
    trace = fem.boundary_flux(mesh, V, a, c=c, f=f)
    return trace.with_values(trace.values / lambda2)


def lbic_image_2d(mesh: Mesh, V0: np.ndarray, q0: np.ndarray,
                  params: ScaledParameters) -> np.ndarray:
    """Interior image i = v - u of the sign-flipped system excited on gamma1.

    Both carriers are held at 1 on gamma1 and 0 on the other Dirichlet
    contacts; the -1 coupling drives the difference.
    """
    a_u, a_v = _carrier_coefficients(V0, params)
    ids = mesh.dirichlet_nodes()
    values = np.zeros(ids.size)
    values[np.isin(ids, mesh.boundary_nodes(GAMMA1))] = 1.0
    u, v = fem.solve_coupled_bvp(mesh, fem.CoupledBvp(
        a_u=a_u, a_v=a_v, q=q0, sigma=-1,
        dirichlet_ids=ids, dirichlet_u=values, dirichlet_v=values))
    return v - u


# ---------------------------------------------------------------------------
# measurement sets and the two-mesh synthesis protocol
# ---------------------------------------------------------------------------

@dataclass
class MeasurementSet:
    """Flux traces on the inversion mesh for a list of input profiles."""

    mesh: Mesh
    profiles: list[InputProfile]
    traces: list[fem.FluxTrace]
    noise_level: float = 0.0
    noise_norm: float = 0.0       # absolute size of the injected perturbation
    clean_norm: float = 0.0       # stacked norm of the unperturbed data
    seed: int | None = None
    source_n: int | None = None   # mesh resolution the data came from
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.traces)

    def stacked_norm(self) -> float:
        return float(np.sqrt(sum(t.norm() ** 2 for t in self.traces)))

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {
            "profiles": [
                {"center": p.center, "half_width": p.half_width, "amplitude": p.amplitude}
                for p in self.profiles
            ],
            "noise_level": self.noise_level,
            "noise_norm": self.noise_norm,
            "clean_norm": self.clean_norm,
            "seed": self.seed,
            "mesh_n": self.mesh.n,
            "source_n": self.source_n,
        }
        (directory / "measurements.json").write_text(json.dumps(header, indent=2, sort_keys=True))
        with open(directory / "traces.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["profile_id", "arclength_s", "flux_value"])
            for j, t in enumerate(self.traces):
                for s, val in zip(t.s, t.values):
                    w.writerow([j, repr(float(s)), repr(float(val))])

    @classmethod
    def load(cls, directory: str | Path, mesh: Mesh | None = None,
             config: GeometryConfig | None = None) -> "MeasurementSet":
        directory = Path(directory)
        header = json.loads((directory / "measurements.json").read_text())
        if mesh is None:
            mesh = build_unit_square(header["mesh_n"], config)
        ids, s, w = fem.trace_layout(mesh, GAMMA1)
        rows: dict[int, dict[float, float]] = {}
        with open(directory / "traces.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                rows.setdefault(int(row["profile_id"]), {})[float(row["arclength_s"])] = \
                    float(row["flux_value"])
        profiles = [InputProfile(**p) for p in header["profiles"]]
        traces = []
        for j in range(len(profiles)):
            vals = np.array([rows[j][float(si)] for si in s])
            traces.append(fem.FluxTrace(mesh=mesh, tag=GAMMA1, node_ids=ids, s=s,
                                        values=vals, weights=w))
        return cls(mesh=mesh, profiles=profiles, traces=traces,
                   noise_level=header["noise_level"], noise_norm=header["noise_norm"],
                   clean_norm=header["clean_norm"], seed=header["seed"],
                   source_n=header["source_n"])


def restrict_trace(fine_trace: fem.FluxTrace, coarse_mesh: Mesh) -> fem.FluxTrace:
    """Linear interpolation of a fine-mesh trace onto the coarse gamma1 nodes.

    The endpoint samples get zero quadrature weight: the measured current
    density lives on the open arc, and at the free end of the contact
    (where Dirichlet meets Neumann boundary) the continuum density is
    unbounded, so the nodal value there scales like h^{-1/2} and carries
    no transferable information.  Zero-weight samples drop out of misfit
    norms and of the data term of the reconstruction.
    """
    ids, s, w = fem.trace_layout(coarse_mesh, GAMMA1)
    values = np.interp(s, fine_trace.s, fine_trace.values)
    w = w.copy()
    w[0] = 0.0
    w[-1] = 0.0
    return fem.FluxTrace(mesh=coarse_mesh, tag=GAMMA1, node_ids=ids, s=s,
                         values=values, weights=w)


def synthesize_dataset(
    gamma_true,
    profiles: list[InputProfile],
    fine_n: int,
    coarse_n: int,
    noise_level: float = 0.0,
    seed: int = 0,
    config: GeometryConfig | None = None,
    allow_same_mesh: bool = False,
) -> MeasurementSet:
    """Generate measurements on a fine mesh and restrict to the coarse one.

    Parameters
    ----------
    gamma_true : callable (x, y) -> value, or nodal array on the fine mesh.
    fine_n, coarse_n : data and inversion resolutions.  ``fine_n`` must
        exceed ``coarse_n`` unless ``allow_same_mesh`` is set (reserved
        for consistency tests that need data from the inversion operator
        itself).
    noise_level : relative size of the additive Gaussian perturbation;
        the perturbed data satisfy |Y - Yd| = noise_level |Y| exactly in
        the stacked trace norm.
    """
    if fine_n < coarse_n or (fine_n == coarse_n and not allow_same_mesh):
        raise ValueError(
            "data must be generated on a strictly finer mesh than the inversion mesh "
            f"(got fine_n={fine_n}, coarse_n={coarse_n})")
    fine = build_unit_square(fine_n, config)
    coarse = fine if fine_n == coarse_n else build_unit_square(coarse_n, config)
    if callable(gamma_true):
        gamma_f = gamma_true(fine.nodes[:, 0], fine.nodes[:, 1])
    else:
        gamma_f = np.asarray(gamma_true, dtype=float)
        if gamma_f.shape != (fine.num_nodes,):
            raise ValueError("gamma_true array must be nodal on the fine mesh")
    traces = []
    for profile in profiles:
        _, t_fine = unipolar_forward(fine, gamma_f, profile)
        traces.append(t_fine if coarse is fine else restrict_trace(t_fine, coarse))
    clean_norm = float(np.sqrt(sum(t.norm() ** 2 for t in traces)))
    noise_norm = 0.0
    if noise_level > 0.0:
        rng = np.random.default_rng(seed)
        raw = [rng.standard_normal(t.values.shape) for t in traces]
        raw_norm = np.sqrt(sum(float(np.sum(t.weights * r**2)) for t, r in zip(traces, raw)))
        scale = noise_level * clean_norm / raw_norm
        traces = [t.with_values(t.values + scale * r) for t, r in zip(traces, raw)]
        noise_norm = noise_level * clean_norm
    return MeasurementSet(mesh=coarse, profiles=list(profiles), traces=traces,
                          noise_level=noise_level, noise_norm=noise_norm,
                          clean_norm=clean_norm, seed=seed, source_n=fine_n)
