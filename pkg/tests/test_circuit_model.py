import math

import numpy as np
import pytest
from scipy.linalg import expm

from scramblesim.circuit_model import (
    ISWAP_PARAMS, PX, PY, SQRT_ISWAP_PARAMS, CircuitInstance, CircuitSpec, CouplingGraph, Ensemble, FsimParams, Gate,
    InversionMode, build_ensemble, build_random_instance, chain_graph, fsim_matrix, grid_graph, invert_gate,
    invert_moments, ladder_graph, lightcone_filter, lightcone_profile, pauli_error_rate, reference_clifford_instance,
)
from scramblesim.errors import CircuitSpecError, InversionError, ManifestError
from scramblesim.statevector_engine import apply_gate, otoc_exact


def _compose(gates, n_qubits=2):
    '''Dense matrix of a gate sequence in time order.'''
    u = np.eye(2 ** n_qubits, dtype=complex)
    for g in gates:
        u = apply_gate(u, g, n_qubits)
    return u


def test_fsim_zero_angles_is_identity():
    assert np.allclose(fsim_matrix(FsimParams(0.0)), np.eye(4), atol=1e-12)


def test_fsim_half_pi_is_iswap():
    u = fsim_matrix(ISWAP_PARAMS)
    expected = np.array([[1, 0, 0, 0], [0, 0, -1j, 0], [0, -1j, 0, 0], [0, 0, 0, 1]])
    assert np.allclose(u, expected, atol=1e-12)
    generator = np.kron(PX, PX) + np.kron(PY, PY)
    assert np.allclose(u, expm(-1j * math.pi / 4 * generator), atol=1e-12)


def test_sqrt_iswap_squares_to_iswap():
    root = fsim_matrix(SQRT_ISWAP_PARAMS)
    assert np.allclose(root @ root, fsim_matrix(ISWAP_PARAMS), atol=1e-12)


@pytest.mark.parametrize('params', [
    FsimParams(0.3, 0.1, 0.2, -0.4, 0.7),
    FsimParams(math.pi / 2, 0.136, 0.068),
    FsimParams(-1.2, 2.0),
])
def test_fsim_is_unitary(params):
    u = fsim_matrix(params)
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


def test_fsim_params_reject_non_finite():
    with pytest.raises(ValueError):
        FsimParams(float('nan'))


@pytest.mark.parametrize('name', ['SQRT_X', 'SQRT_X_INV', 'SQRT_Y', 'SQRT_Y_INV', 'SQRT_W', 'SQRT_W_INV', 'SQRT_V', 'SQRT_V_INV'])
def test_single_qubit_roots_square_to_their_axis(name):
    axis = {'X': PX, 'Y': PY, 'W': (PX + PY) / math.sqrt(2), 'V': (PX - PY) / math.sqrt(2)}[name[5]]
    m = Gate(name, (0,)).matrix
    assert np.allclose(m.conj().T @ m, np.eye(2), atol=1e-12)
    # sqrt(A)^2 = -i A for the forward root
    sign = -1 if name.endswith('_INV') else 1
    assert np.allclose(m @ m, -1j * sign * axis, atol=1e-12)


def test_iswap_z_sandwich_inverts():
    g = Gate('ISWAP', (0, 1))
    seq = invert_gate(g)
    assert [s.name for s in seq] == ['RZ', 'RZ', 'ISWAP', 'RZ', 'RZ']
    assert np.allclose(_compose((g,) + seq), np.eye(4), atol=1e-12)


def test_sqrt_iswap_z_sandwich_inverts():
    g = Gate('SQRT_ISWAP', (2, 0))
    assert np.allclose(_compose((g,) + invert_gate(g), 3), np.eye(8), atol=1e-12)


def test_single_qubit_inverses():
    assert invert_gate(Gate('SQRT_X', (0,))) == (Gate('SQRT_X_INV', (0,)),)
    assert invert_gate(Gate('SQRT_W_INV', (1,))) == (Gate('SQRT_W', (1,)),)
    assert invert_gate(Gate('RZ', (0,), 0.3)) == (Gate('RZ', (0,), -0.3),)


def test_conditional_phase_has_no_strict_inverse():
    g = Gate('FSIM', (0, 1), fsim=FsimParams(math.pi / 2, 0.1))
    with pytest.raises(InversionError):
        invert_gate(g)
    ideal = invert_gate(g, InversionMode.IDEAL)
    assert np.allclose(_compose((g,) + ideal), np.eye(4), atol=1e-12)
    physical = invert_gate(g, InversionMode.PHYSICAL)
    assert not np.allclose(_compose((g,) + physical), np.eye(4), atol=1e-6)


def test_pauli_error_rate_identical_is_zero():
    u = fsim_matrix(ISWAP_PARAMS)
    assert pauli_error_rate(u, u) == pytest.approx(0.0, abs=1e-15)


def test_pauli_error_rate_conditional_phase():
    phi = 0.136
    actual = fsim_matrix(FsimParams(math.pi / 2, phi, phi / 2))
    assert pauli_error_rate(actual, fsim_matrix(ISWAP_PARAMS)) == pytest.approx(0.0012, abs=1e-4)


@pytest.mark.parametrize('phi', [0.05, 0.01, 0.002])
def test_pauli_error_rate_symmetric_phase_is_three_times_smaller(phi):
    ideal = fsim_matrix(ISWAP_PARAMS)
    shifted = pauli_error_rate(fsim_matrix(FsimParams(math.pi / 2, phi, phi / 2)), ideal)
    plain = pauli_error_rate(fsim_matrix(FsimParams(math.pi / 2, phi)), ideal)
    assert shifted / plain == pytest.approx(1 / 3, abs=0.01)


@pytest.mark.parametrize('gate, expected', [
    (Gate('SQRT_X', (0,)), True),
    (Gate('SQRT_Y_INV', (0,)), True),
    (Gate('SQRT_W', (0,)), False),
    (Gate('SQRT_V_INV', (0,)), False),
    (Gate('RZ', (0,), math.pi / 2), True),
    (Gate('RZ', (0,), 0.3), False),
    (Gate('ISWAP', (0, 1)), True),
    (Gate('CZ', (0, 1)), True),
    (Gate('SQRT_ISWAP', (0, 1)), False),
])
def test_clifford_classification(gate, expected):
    assert gate.is_clifford is expected


def test_gate_rejects_bad_targets():
    with pytest.raises(ValueError):
        Gate('ISWAP', (0, 0))
    with pytest.raises(ValueError):
        Gate('SQRT_X', (0, 1))
    with pytest.raises(ValueError):
        Gate('RZ', (0,))


def test_schedule_phases_are_disjoint():
    for graph in (chain_graph(9), ladder_graph(8, 5), grid_graph(3, 4)):
        for k in range(len(graph.schedule)):
            used = [q for pair in graph.phase_pairs(k) for q in pair]
            assert len(used) == len(set(used))


def test_ladder_has_three_phases():
    graph = ladder_graph(6, 3)
    assert graph.n_qubits == 12
    assert len(graph.schedule) == 3
    assert all(b - a == 6 for a, b in graph.phase_pairs(2))


def test_spec_validation_errors():
    graph = chain_graph(4)
    with pytest.raises(CircuitSpecError):
        CircuitSpec(graph, 3, butterfly_qubit=0, measurement_qubit=0).validate()
    with pytest.raises(CircuitSpecError):
        CircuitSpec(graph, 2, n_nonclifford=9, butterfly_qubit=3).validate()
    with pytest.raises(CircuitSpecError):
        CircuitSpec(graph, 2, ensemble=Ensemble.CLIFFORD4, n_nonclifford=1, butterfly_qubit=3).validate()
    with pytest.raises(CircuitSpecError):
        CircuitSpec(graph, 2, two_qubit='FSIM', butterfly_qubit=3).validate()


def test_disconnected_butterfly_is_rejected():
    graph = CouplingGraph(4, [(0, 1), (2, 3)], [[0, 1]])
    with pytest.raises(CircuitSpecError):
        CircuitSpec(graph, 2, butterfly_qubit=3).validate()


def test_build_is_deterministic(chain6_spec):
    assert build_random_instance(chain6_spec).to_json() == build_random_instance(chain6_spec).to_json()


def test_instance_json_restores_the_same_instance(chain6_spec):
    inst = build_random_instance(chain6_spec)
    again = CircuitInstance.from_json(inst.to_json())
    assert again.to_json() == inst.to_json()
    assert otoc_exact(again).value == otoc_exact(inst).value


def test_clifford4_has_no_nonclifford_gates(clifford_spec):
    assert all(inst.n_d == 0 for inst in build_ensemble(clifford_spec, 5))


def test_fixed_nd_count_is_exact_and_mirrored():
    spec = CircuitSpec(chain_graph(8), 5, n_nonclifford=8, butterfly_qubit=7, seed=1).validate()
    inst = build_random_instance(spec)
    assert inst.n_d == 8
    backward_nd = sum(not g.is_two_qubit and not g.is_clifford for m in inst.backward for g in m)
    assert backward_nd == 8


def test_forward_then_backward_is_identity(small_instance, random_state):
    n = small_instance.n_qubits
    psi = random_state(n)
    out = psi.copy()
    for moment in small_instance.forward + small_instance.backward:
        for g in moment:
            out = apply_gate(out, g, n)
    assert np.allclose(out, psi, atol=1e-10)


def test_ensemble_members_have_distinct_seeds(chain6_spec):
    seeds = [inst.seed for inst in build_ensemble(chain6_spec, 20)]
    assert len(set(seeds)) == 20


def test_invert_moments_splits_sandwich_layers():
    forward = ((Gate('ISWAP', (0, 1)), Gate('ISWAP', (2, 3))),)
    backward = invert_moments(forward)
    assert [len(m) for m in backward] == [4, 2, 4]


def test_from_dict_names_the_bad_field(chain6_spec):
    data = chain6_spec.to_dict()
    data['cycles'] = 'many'
    with pytest.raises(ManifestError) as info:
        CircuitSpec.from_dict(data)
    assert info.value.field == 'cycles'


def test_lightcone_filter_keeps_the_otoc_and_drops_gates():
    spec = CircuitSpec(chain_graph(8), 4, butterfly_qubit=7, seed=2).validate()
    for inst in build_ensemble(spec, 10):
        filtered = lightcone_filter(inst)
        assert filtered.n_s < inst.n_s
        assert otoc_exact(filtered).value == pytest.approx(otoc_exact(inst).value, abs=1e-12)


def test_lightcone_filter_without_measurement_cone_stays_mirrored(nd_instances):
    for inst in nd_instances:
        filtered = lightcone_filter(inst, measurement_cone=False)
        assert filtered.mirrored
        assert otoc_exact(filtered).value == pytest.approx(otoc_exact(inst).value, abs=1e-12)


def test_lightcone_profile_grows_one_site_per_cycle_on_a_chain():
    reach = lightcone_profile(chain_graph(8), 0, 6)
    sizes = [len(r) for r in reach]
    assert sizes[0] == 1
    assert sizes == sorted(sizes)
    assert all(b - a <= 1 for a, b in zip(sizes, sizes[1:]))


def test_lightcone_profile_on_a_ladder_follows_the_phase_order():
    graph = ladder_graph(4, 2)
    forward = [{0}, {0, 1}, {0, 1, 2}, {0, 1, 2, 4}, {0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5, 6}, set(range(8))]
    assert [set(r) for r in lightcone_profile(graph, 0, 6)] == forward
    backward = [{7}, {3, 7}, {3, 7}, {2, 3, 6, 7}, {2, 3, 6, 7}, {1, 2, 3, 5, 6, 7}, set(range(8))]
    assert [set(r) for r in lightcone_profile(graph, 7, 6, reverse=True)] == backward


def test_reference_clifford_instance_is_clifford(nd_instances):
    ref = reference_clifford_instance(nd_instances[0], seed=4)
    assert ref.n_d == 0
    assert ref.butterfly == nd_instances[0].butterfly
    assert abs(otoc_exact(ref).value) == pytest.approx(1.0, abs=1e-9)
