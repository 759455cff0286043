import numpy as np
import pytest

from scramblesim.circuit_model import CircuitSpec, Gate, build_ensemble, chain_graph, lightcone_profile
from scramblesim.config import Settings
from scramblesim.errors import ResourceLimitError
from scramblesim.statevector_engine import (
    RESULT_COLUMNS, OtocValue, StateVector, apply_circuit, ensemble_stats, evaluate_row, otoc_ancilla_protocol,
    otoc_exact, otoc_partial, run_ensemble,
)


def test_plus_state_is_normalized():
    state = StateVector.plus(5)
    assert state.norm == pytest.approx(1.0)
    assert np.allclose(state.amplitudes, 2 ** -2.5)


def test_apply_circuit_rejects_gates_outside_the_register():
    with pytest.raises(ValueError):
        apply_circuit(StateVector.zeros(2), [[Gate('SQRT_X', (3,))]])


def test_apply_circuit_flips_a_qubit():
    state = apply_circuit(StateVector.zeros(3), [[Gate('X', (1,))]])
    assert abs(state.amplitudes[0b010]) == pytest.approx(1.0)


def test_otoc_value_rejects_out_of_range():
    with pytest.raises(ValueError):
        OtocValue(1.5)


def test_ancilla_protocol_matches_exact(nd_instances):
    exact = [otoc_exact(inst).value for inst in nd_instances]
    assert any(abs(value - 1.0) > 1e-3 for value in exact)
    for inst, value in zip(nd_instances, exact):
        assert otoc_ancilla_protocol(inst).value == pytest.approx(value, abs=1e-9)


@pytest.mark.parametrize('two_qubit', ['ISWAP', 'SQRT_ISWAP'])
def test_otoc_is_one_until_the_light_cone_reaches_the_measured_qubit(two_qubit):
    graph = chain_graph(8)
    for depth in range(1, 9):
        spec = CircuitSpec(graph, depth, two_qubit, butterfly_qubit=7, seed=depth).validate()
        values = [otoc_exact(inst).value for inst in build_ensemble(spec, 10)]
        if 0 in lightcone_profile(graph, 7, depth, reverse=True)[depth]:
            assert any(abs(v - 1.0) > 1e-9 for v in values)
        else:
            assert np.allclose(values, 1.0, rtol=0, atol=1e-12)


def test_empty_circuit_commuting_butterfly_gives_one():
    spec = CircuitSpec(chain_graph(4), 0, butterfly_qubit=3).validate()
    inst = build_ensemble(spec, 1)[0]
    assert otoc_exact(inst).value == pytest.approx(1.0, abs=1e-12)


def test_full_kappa_partial_projection_is_exact(small_instance):
    estimate, batch = otoc_partial(small_instance, (small_instance.measurement_qubit,), None)
    assert len(batch.kappas) == 2 ** (small_instance.n_qubits - 1)
    assert batch.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert estimate == pytest.approx(otoc_exact(small_instance).value, abs=1e-12)


def test_partial_projection_validates_arguments(small_instance):
    with pytest.raises(ValueError):
        otoc_partial(small_instance, (), None)
    with pytest.raises(ValueError):
        otoc_partial(small_instance, range(small_instance.n_qubits), None)
    with pytest.raises(ValueError):
        otoc_partial(small_instance, (0,), 10 ** 6)


def test_bootstrap_over_every_kappa_collapses(small_instance):
    estimate, batch = otoc_partial(small_instance, (0, 1), 8, seed=3)
    low, high = batch.bootstrap_interval(n_resamples=50, subset=8)
    assert low == pytest.approx(estimate, abs=1e-12)
    assert high == pytest.approx(estimate, abs=1e-12)


@pytest.mark.slow
def test_bootstrap_interval_covers_the_exact_value():
    spec = CircuitSpec(chain_graph(10), 16, n_nonclifford=12, butterfly_qubit=9, seed=8).validate()
    covered = 0
    for inst in build_ensemble(spec, 100):
        _, batch = otoc_partial(inst, range(6), 8, seed=inst.instance_id)
        low, high = batch.bootstrap_interval(n_resamples=1000, seed=inst.instance_id)
        covered += low - 1e-12 <= otoc_exact(inst).value <= high + 1e-12
    assert covered >= 90


def test_ceiling_raises_before_allocating(small_instance):
    with pytest.raises(ResourceLimitError):
        otoc_exact(small_instance, settings=Settings(max_statevector_qubits=4))


def test_ancilla_needs_one_more_qubit(small_instance):
    tight = Settings(max_statevector_qubits=small_instance.n_qubits)
    otoc_exact(small_instance, settings=tight)
    with pytest.raises(ResourceLimitError):
        otoc_ancilla_protocol(small_instance, settings=tight)


def test_clifford_ensemble_stats(clifford_spec):
    values = [otoc_exact(inst) for inst in build_ensemble(clifford_spec, 8)]
    assert all(abs(v.value) == pytest.approx(1.0, abs=1e-9) for v in values)
    result = ensemble_stats(values)
    assert result.rms == pytest.approx(1.0, abs=1e-9)
    assert result.n_instances == 8


def test_ensemble_stats_of_constant_values_has_no_spread():
    result = ensemble_stats([0.5, 0.5, 0.5])
    assert result.mean == pytest.approx(0.5)
    assert result.mean_stderr == 0.0
    assert result.to_dict()['c_bar'] == pytest.approx(0.5)


def test_ensemble_stats_rejects_empty():
    with pytest.raises(ValueError):
        ensemble_stats([])


def test_evaluate_row_has_result_columns(small_instance):
    row = evaluate_row(small_instance, 'ancilla')
    assert list(row) == RESULT_COLUMNS
    assert row['engine'] == 'ancilla'
    assert row['n_s'] == small_instance.n_s


@pytest.mark.parametrize('workers', [1, 2])
def test_run_ensemble_is_ordered_and_deterministic(chain6_spec, workers):
    frame = run_ensemble(chain6_spec, 4, workers=workers)
    assert list(frame.columns) == RESULT_COLUMNS
    assert frame['instance_id'].tolist() == [0, 1, 2, 3]
    expected = [otoc_exact(inst).value for inst in build_ensemble(chain6_spec, 4)]
    assert np.allclose(frame['otoc'], expected, atol=1e-12)
