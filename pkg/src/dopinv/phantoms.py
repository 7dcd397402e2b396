"""Named analytic fields for experiments: conductivity phantoms, doping
profiles, and 1D potentials.

Everything here is a plain callable of nodal coordinates.  The bump
building blocks are compactly supported and infinitely smooth, so the
phantoms stay strictly inside any stated support box and never introduce
discretization kinks of their own.

The reconstruction experiments hold the conductivity at its known values
in a strip near the boundary and iterate only in the interior; use
``strip_initial_guess`` to build the matching starting field.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def bump_1d(x, center: float, radius: float) -> np.ndarray:
    """C-infinity bump in one variable, 1 at the center, support
    (center - radius, center + radius)."""
    x = np.asarray(x, dtype=float)
    r2 = ((x - center) / radius) ** 2
    out = np.zeros_like(x)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def bump_2d(x, y, center: tuple[float, float], radius: float) -> np.ndarray:
    """Radial C-infinity bump in the plane."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = ((x - center[0]) ** 2 + (y - center[1]) ** 2) / radius ** 2
    out = np.zeros_like(x)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def cosine_ramp(t) -> np.ndarray:
    """Monotone C^1 step from 0 to 1 on [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * t)


# ---------------------------------------------------------------------------
# conductivity phantoms gamma(x, y) > 0


def gamma_uniform(x, y):
    return np.ones_like(np.asarray(x, dtype=float))


def gamma_ridge(x, y):
    """Background 1 with a single smooth ridge in x, constant in depth.

    The ridge is centered under the measured contact where the input
    currents actually pass, which is the part of the domain the boundary
    data resolve well.
    """
    return 1.0 + 1.5 * bump_1d(x, 0.35, 0.3) + 0.0 * np.asarray(y, dtype=float)


def gamma_two_ridges(x, y):
    """Symmetric pair of ridges, one in each lateral half; used for the
    single-source locality experiments."""
    gx = bump_1d(x, 0.25, 0.2) + bump_1d(x, 0.75, 0.2)
    return 1.0 + 1.0 * gx + 0.0 * np.asarray(y, dtype=float)


def gamma_two_bumps(x, y):
    """Two isolated smooth inclusions at mid depth."""
    return (1.0 + 0.75 * bump_2d(x, y, (0.3, 0.5), 0.18)
            + 0.75 * bump_2d(x, y, (0.7, 0.5), 0.18))


GAMMA_PHANTOMS = {
    "uniform": gamma_uniform,
    "ridge": gamma_ridge,
    "two_ridges": gamma_two_ridges,
    "two_bumps": gamma_two_bumps,
}


def gamma_phantom(name: str):
    try:
        return GAMMA_PHANTOMS[name]
    except KeyError:
        raise KeyError(f"unknown conductivity phantom {name!r}; "
                       f"choose from {sorted(GAMMA_PHANTOMS)}") from None


def strip_initial_guess(mesh: Mesh, gamma_fn, margin: float = 0.1,
                        interior_value: float = 1.0) -> np.ndarray:
    """Starting conductivity: the true (known) values in the boundary
    strip, a flat guess in the interior that the iteration updates."""
    truth = np.asarray(gamma_fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)
    mask = mesh.interior_mask(margin)
    return np.where(mask, interior_value, truth)


# ---------------------------------------------------------------------------
# doping profiles C(x, y) (sign changes mark junctions)


def doping_constant(x, y, level: float = 1.0):
    return np.full_like(np.asarray(x, dtype=float), level)


def doping_pn_vertical(x, y, level: float = 5.0, width: float = 0.15):
    """N region on top, P region below; smooth sign change at y = 0.5."""
    y = np.asarray(y, dtype=float)
    return level * np.tanh((y - 0.5) / width) + 0.0 * np.asarray(x, dtype=float)

def doping_island(x, y, level: float = 5.0):
    """P-type island implanted in an N-type background."""
    return level * (1.0 - 2.0 * bump_2d(x, y, (0.5, 0.5), 0.3))


DOPING_PHANTOMS = {
    "constant": doping_constant,
    "pn_vertical": doping_pn_vertical,
    "island": doping_island,
}


def doping_phantom(name: str):
    try:
        return DOPING_PHANTOMS[name]
    except KeyError:
        raise KeyError(f"unknown doping phantom {name!r}; "
                       f"choose from {sorted(DOPING_PHANTOMS)}") from None


# ---------------------------------------------------------------------------
# 1D potentials for the LBIC experiments


def potential_cosine(x, amplitude: float = 0.3):
    return amplitude * np.cos(np.pi * np.asarray(x, dtype=float))


def potential_junction(x, v0: float = 0.4, width: float = 0.12):
    """Smooth potential drop across a junction at the midpoint."""
    x = np.asarray(x, dtype=float)
    return v0 * np.tanh((0.5 - x) / width)


POTENTIALS_1D = {
    "cosine": potential_cosine,
    "junction": potential_junction,
}


def potential_1d(name: str):
    try:
        return POTENTIALS_1D[name]
    except KeyError:
        raise KeyError(f"unknown 1D potential {name!r}; "
                       f"choose from {sorted(POTENTIALS_1D)}") from None
