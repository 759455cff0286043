import dataclasses
import math

import numpy as np
import pytest

from scramblesim.circuit_model import CircuitSpec, Gate, build_ensemble, build_random_instance, chain_graph
from scramblesim.config import Settings
from scramblesim.errors import BranchCapExceeded, CircuitSpecError, NonCliffordGateError
from scramblesim.pauli_branching import (
    PauliTerm, branch_nonclifford, conjugate_clifford, dump_sparse_state, heisenberg_terms, np_count,
    otoc_from_strings, run_branching,
)
from scramblesim.statevector_engine import otoc_exact, otoc_infinite_temperature

I, X, Y, Z = range(4)


def test_iswap_forward_image_of_x():
    image = conjugate_clifford(PauliTerm.from_labels({0: 'X'}), Gate('ISWAP', (0, 1)), adjoint=True)
    assert (image.label(0), image.label(1)) == (Z, Y)
    assert image.weight == pytest.approx(-1.0)


@pytest.mark.parametrize('adjoint', [False, True])
def test_iswap_moves_z_to_the_partner(adjoint):
    image = conjugate_clifford(PauliTerm.from_labels({0: 'Z'}), Gate('ISWAP', (0, 1)), adjoint=adjoint)
    assert (image.label(0), image.label(1)) == (I, Z)
    assert image.weight == pytest.approx(1.0)


@pytest.mark.parametrize('gate', [Gate('ISWAP', (2, 5)), Gate('SQRT_X', (3,)), Gate('CZ', (0, 1))])
def test_identity_is_a_fixed_point(gate):
    identity = PauliTerm(0, 0, 0, 1.0)
    assert conjugate_clifford(identity, gate) == identity


def test_non_clifford_gate_cannot_be_conjugated():
    with pytest.raises(NonCliffordGateError):
        conjugate_clifford(PauliTerm.from_labels({0: 'Z'}), Gate('SQRT_W', (0,)))


@pytest.mark.parametrize('label, n_terms', [('Z', 2), ('X', 3), ('Y', 3)])
def test_sqrt_w_branching_preserves_norm(label, n_terms):
    children = branch_nonclifford(PauliTerm.from_labels({0: label}), Gate('SQRT_W', (0,)))
    assert len(children) == n_terms
    assert sum(c.weight ** 2 for c in children) == pytest.approx(1.0)


def test_prune_tolerance_drops_small_children():
    children = branch_nonclifford(PauliTerm.from_labels({0: 'X'}, 1e-3), Gate('SQRT_W', (0,)), prune_tol=6e-4)
    assert len(children) == 1
    assert abs(children[0].weight) == pytest.approx(1e-3 / math.sqrt(2))


def test_term_weight_sign_survives_y_phases():
    term = PauliTerm.from_labels({0: 'Y', 1: 'Y'}, -0.25)
    assert term.weight == pytest.approx(-0.25)
    assert (term.label(0), term.label(1), term.label(2)) == (Y, Y, I)


@pytest.mark.parametrize('mode', ['depth', 'breadth'])
def test_branching_matches_the_state_vector(nd_instances, mode):
    for inst in nd_instances:
        result = run_branching(inst, mode)
        assert otoc_from_strings(result).value == pytest.approx(otoc_exact(inst).value, abs=1e-9)
        assert result.stats.n_p <= result.stats.n_b


def test_depth_and_breadth_count_the_same_branches(nd_instances):
    for inst in nd_instances[:4]:
        assert run_branching(inst, 'depth').stats.n_b == run_branching(inst, 'breadth').stats.n_b
        assert np_count(inst, 'depth') == np_count(inst, 'breadth')


def test_trace_path_is_the_infinite_temperature_value(nd_instances):
    for inst in nd_instances[:4]:
        result = run_branching(inst)
        assert otoc_from_strings(result, path='trace').value == pytest.approx(otoc_infinite_temperature(inst), abs=1e-9)


def test_heisenberg_terms_keep_unit_norm(small_instance):
    terms = heisenberg_terms(small_instance)
    assert sum(t.weight ** 2 for t in terms) == pytest.approx(1.0, abs=1e-9)


def test_clifford_circuit_has_a_single_branch(clifford_spec):
    for inst in build_ensemble(clifford_spec, 4):
        result = run_branching(inst)
        assert (result.stats.n_b, result.stats.n_p) == (1, 1)
        assert abs(otoc_from_strings(result).value) == pytest.approx(1.0, abs=1e-9)


def test_zero_nonclifford_count_has_a_single_branch():
    spec = CircuitSpec(chain_graph(6), 4, n_nonclifford=0, butterfly_qubit=5, seed=8).validate()
    result = run_branching(build_random_instance(spec), 'depth')
    assert (result.stats.n_b, result.stats.n_p) == (1, 1)


@pytest.mark.parametrize('mode', ['depth', 'breadth'])
def test_branch_cap_reports_partial_stats(small_instance, mode):
    with pytest.raises(BranchCapExceeded) as info:
        run_branching(small_instance, mode, Settings(branch_cap=2))
    assert 'stats' in info.value.to_dict()


def test_unmirrored_instance_is_rejected(small_instance):
    with pytest.raises(CircuitSpecError):
        run_branching(dataclasses.replace(small_instance, mirrored=False))


def test_unknown_mode_is_rejected(small_instance):
    with pytest.raises(ValueError):
        run_branching(small_instance, 'sideways')


@pytest.mark.parametrize('path', ['state', 'trace'])
@pytest.mark.parametrize('labels, expected', [({}, 1.0), ({0: 'X'}, -1.0), ({0: 'Z'}, 1.0), ({1: 'Y'}, 1.0)])
def test_single_string_otoc(labels, expected, path):
    term = PauliTerm.from_labels(labels) if labels else PauliTerm(0, 0, 0, 1.0)
    assert otoc_from_strings([term], measurement_qubit=0, path=path).value == pytest.approx(expected)


def test_trace_path_needs_terms(small_instance):
    result = run_branching(small_instance)
    with pytest.raises(ValueError):
        otoc_from_strings((result.psi0, result.psi1), path='trace')


def test_dump_sparse_state_writes_one_line_per_amplitude(nd_instances, tmp_path):
    result = run_branching(nd_instances[0])
    out = tmp_path / 'psi0.txt'
    dump_sparse_state(result.psi0, out)
    assert len(out.read_text().splitlines()) == len(result.psi0.amplitudes)


def test_operator_norm_holds_after_every_layer(small_instance):
    butterfly = small_instance.butterfly
    start = PauliTerm.from_labels({butterfly.targets[0]: butterfly.name})
    terms = {(start.x_mask, start.z_mask): start.weight}
    for moment in reversed(small_instance.forward):
        for g in moment:
            merged = {}
            for (x, z), w in terms.items():
                for child in branch_nonclifford(PauliTerm.from_weight(x, z, w), g):
                    key = (child.x_mask, child.z_mask)
                    merged[key] = merged.get(key, 0.0) + child.weight
            terms = merged
        assert sum(w ** 2 for w in terms.values()) == pytest.approx(1.0, abs=1e-9)
    final = {(t.x_mask, t.z_mask): t.weight for t in heisenberg_terms(small_instance)}
    assert set(final) <= set(terms)
    for key, w in final.items():
        assert terms[key] == pytest.approx(w, abs=1e-9)


def test_branch_and_path_counts_grow_exponentially_in_nd():
    nds = (0, 4, 8, 12)
    log_b, log_p = [], []
    for n_d in nds:
        spec = CircuitSpec(chain_graph(8), 16, n_nonclifford=n_d, butterfly_qubit=7, seed=30 + n_d).validate()
        counts = []
        for inst in build_ensemble(spec, 12):
            stats = run_branching(inst).stats
            assert 1 <= stats.n_p <= stats.n_b <= 3 ** n_d
            counts.append((stats.n_b, stats.n_p))
        n_b, n_p = np.median(np.array(counts, dtype=float), axis=0)
        log_b.append(math.log2(n_b))
        log_p.append(math.log2(n_p))
    slope_b = np.polyfit(nds, log_b, 1)[0]
    slope_p = np.polyfit(nds, log_p, 1)[0]
    assert 0.1 < slope_b <= math.log2(3)
    assert 0.0 < slope_p <= math.log2(3)
