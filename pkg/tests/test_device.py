import numpy as np
import pytest

from dopinv import device
from dopinv.device import (
    NewtonError,
    PhysicalParameters,
    RecombinationModel,
    built_in_potential,
    equilibrium_dirichlet,
    recombination_rate,
    scale_parameters,
    solve_equilibrium,
    zsc_conductivity,
    zsc_doping,
)
from dopinv.mesh import build_unit_square


def test_scaled_groups_frozen_values():
    s = scale_parameters(PhysicalParameters())
    assert s.lambda2 == pytest.approx(254138513.51351354, rel=1e-12)
    assert s.delta2 == pytest.approx(1.45e10)
    assert s.mu_n == pytest.approx(1.6e-19 * 0.0259 * 1500.0, rel=1e-12)
    assert s.mu_p == pytest.approx(1.6e-19 * 0.0259 * 450.0, rel=1e-12)


def test_physical_parameters_json_roundtrip(tmp_path):
    phys = PhysicalParameters(mu_n=1234.0)
    path = tmp_path / "phys.json"
    phys.to_json(path)
    assert PhysicalParameters.from_json(path) == phys
    path.write_text('{"mu_n": 1.0, "bogus": 2.0}')
    with pytest.raises(ValueError, match="bogus"):
        PhysicalParameters.from_json(path)


def test_built_in_potential_charge_neutral():
    phys = PhysicalParameters()
    C = np.array([-1e17, -1e10, 0.0, 1e10, 1e17])
    v_bi, n_d, p_d = built_in_potential(C, phys)
    np.testing.assert_allclose(n_d * p_d, phys.n_i**2, rtol=1e-10)
    np.testing.assert_allclose(n_d - p_d, C, rtol=1e-10, atol=1e-3)
    # sign of the potential follows the doping sign
    assert v_bi[0] < 0 < v_bi[-1]
    assert v_bi[2] == pytest.approx(0.0, abs=1e-15)


def test_srh_variants_differ():
    n = np.array([2.0])
    p = np.array([3.0])
    corrected = RecombinationModel(variant="srh", tau_n=1.0, tau_p=2.0,
                                   n_i=1.0, srh_variant="corrected")
    printed = RecombinationModel(variant="srh", tau_n=1.0, tau_p=2.0,
                                 n_i=1.0, srh_variant="printed")
    # corrected: 1/(tau_n (p+1) + tau_p (n+1)); printed uses tau_p twice
    assert corrected.coefficient(n, p)[0] == pytest.approx(1.0 / (4.0 + 6.0))
    assert printed.coefficient(n, p)[0] == pytest.approx(1.0 / (8.0 + 6.0))


def test_recombination_rate_sign_and_zero():
    model = RecombinationModel(variant="srh", tau_n=1.0, tau_p=1.0, n_i=1.0)
    # np = n_i^2 is equilibrium: no net recombination
    assert recombination_rate(np.array([2.0]), np.array([0.5]), model)[0] \
        == pytest.approx(0.0)
    assert recombination_rate(np.array([2.0]), np.array([2.0]), model)[0] > 0


def test_auger_and_none_variants():
    auger = RecombinationModel(variant="auger", c_n=2.0, c_p=3.0, n_i=1.0)
    # Auger multiplies (np - n_i^2) by c_n n + c_p p directly, no reciprocal
    assert auger.coefficient(np.array([1.0]), np.array([1.0]))[0] \
        == pytest.approx(5.0)
    off = RecombinationModel(variant="none")
    assert recombination_rate(np.array([5.0]), np.array([7.0]), off)[0] == 0.0


def test_q0_from_equilibrium_potential():
    model = RecombinationModel(variant="srh", tau_n=2.0, tau_p=2.0, n_i=1.0)
    q0 = model.q0(np.array([0.0]))
    # V = 0 gives n = p = n_i = 1: denominator 2(2 + 2) = 8
    assert q0[0] == pytest.approx(1.0 / 8.0)


def test_equilibrium_constant_doping_exact():
    mesh = build_unit_square(8)
    for c0 in (-3.0, 0.7, 12.0):
        C = np.full(mesh.num_nodes, c0)
        V, history = solve_equilibrium(mesh, C, lambda2=1.0,
                                       polarity="bipolar",
                                       return_history=True)
        np.testing.assert_allclose(V, np.arcsinh(0.5 * c0), atol=1e-8)
        assert history[-1] < 1e-10


def test_equilibrium_newton_decreases_and_bounds():
    mesh = build_unit_square(10)
    rng = np.random.default_rng(4)
    C = rng.uniform(-5.0, 8.0, mesh.num_nodes)
    V, history = solve_equilibrium(mesh, C, lambda2=0.05,
                                   polarity="bipolar", return_history=True)
    assert all(b < a for a, b in zip(history, history[1:]))
    lo = np.arcsinh(0.5 * C.min())
    hi = np.arcsinh(0.5 * C.max())
    assert V.min() >= lo - 1e-6
    assert V.max() <= hi + 1e-6


def test_equilibrium_unipolar_constant():
    mesh = build_unit_square(6)
    C = np.full(mesh.num_nodes, 4.0)
    V = solve_equilibrium(mesh, C, lambda2=0.3, polarity="unipolar")
    np.testing.assert_allclose(V, np.log(4.0), atol=1e-9)


def test_equilibrium_custom_dirichlet():
    mesh = build_unit_square(6)
    C = np.full(mesh.num_nodes, 1.0)
    ids = mesh.dirichlet_nodes()
    vals = equilibrium_dirichlet(C, "bipolar")
    vals[ids[: len(ids) // 2]] += 0.2  # biased contact
    V = solve_equilibrium(mesh, C, lambda2=0.1, polarity="bipolar",
                          dirichlet_values=vals)
    assert V.max() > np.arcsinh(0.5) + 1e-3


def test_newton_failure_carries_history():
    mesh = build_unit_square(6)
    C = np.linspace(-50.0, 50.0, mesh.num_nodes)
    with pytest.raises(NewtonError) as excinfo:
        solve_equilibrium(mesh, C, lambda2=1e-6, polarity="bipolar",
                          max_iter=1)
    assert len(excinfo.value.history) >= 1


def test_zero_space_charge_roundtrip():
    C = np.array([-7.0, -0.1, 0.0, 2.5, 40.0])
    a = zsc_conductivity(C)
    assert np.all(a > 0)
    np.testing.assert_allclose(zsc_doping(a), C, atol=1e-12)
    with pytest.raises(ValueError):
        zsc_doping(np.array([1.0, -2.0]))


def test_equilibrium_rejects_bad_shapes():
    mesh = build_unit_square(4)
    with pytest.raises(ValueError):
        solve_equilibrium(mesh, np.ones(3), lambda2=1.0)
    with pytest.raises(ValueError):
        solve_equilibrium(mesh, np.ones(mesh.num_nodes), lambda2=-1.0)
