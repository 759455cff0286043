import math

import numpy as np
import pytest

from scramblesim.circuit_model import CircuitSpec, Ensemble, build_ensemble, chain_graph
from scramblesim.config import Settings
from scramblesim.errors import ResourceLimitError
from scramblesim.noise_models import (
    NOISELESS, SWEEP_COLUMNS, ErrorInsertion, NoiseModel, apply_depolarizing, enumerate_insertions,
    exact_channel_otoc, insertion_sum, log_log_slope, n_two_qubit, normalize_reference_clifford,
    perturbative_otoc, perturbative_sweep, phi_error_sweep, plain_normalized_otoc, relative_error,
    sweep_summary, trajectory_sample_otoc,
)
from scramblesim.statevector_engine import otoc_exact


def test_noise_model_rates():
    assert NoiseModel(0.016).pauli_probability == pytest.approx(0.015)
    assert NoiseModel.from_pauli_error(0.0075).p == pytest.approx(0.008)
    with pytest.raises(ValueError):
        NoiseModel(1.5)
    with pytest.raises(ValueError):
        NoiseModel(0.1, p1=-0.1)


def test_error_insertion_needs_a_nontrivial_pair():
    with pytest.raises(ValueError):
        ErrorInsertion(0, (0, 1), (0, 0))
    assert ErrorInsertion(0, (0, 1), (1, 3)).matrix.shape == (4, 4)


def test_insertions_cover_every_two_qubit_gate(noise_instance):
    assert n_two_qubit(noise_instance) == 10
    assert len(list(enumerate_insertions(noise_instance))) == 150
    assert len(list(enumerate_insertions(noise_instance, forward_only=True))) == 75


def test_full_single_qubit_depolarizing_leaves_the_identity():
    rho = np.zeros((2, 2, 1), dtype=complex)
    rho[0, 0, 0] = 1.0
    out = apply_depolarizing(rho, (0,), 0.75, 1)
    assert np.allclose(out[..., 0], np.eye(2) / 2)


def test_channel_preserves_the_trace(noise_instance):
    assert exact_channel_otoc(noise_instance, NoiseModel(0.05)).trace_drift < 1e-12


def test_noiseless_channel_is_the_ideal_otoc(noise_instance):
    out = exact_channel_otoc(noise_instance, NOISELESS)
    assert out.butterfly == pytest.approx(otoc_exact(noise_instance).value, abs=1e-10)
    assert out.identity == pytest.approx(1.0, abs=1e-10)
    assert out.normalized == pytest.approx(out.butterfly, abs=1e-10)


def test_full_depolarizing_kills_the_normalization(noise_instance):
    out = exact_channel_otoc(noise_instance, NoiseModel(1.0))
    assert out.identity == pytest.approx(0.0, abs=1e-9)
    assert math.isnan(out.normalized)


def test_channel_respects_the_density_limit(noise_instance):
    with pytest.raises(ResourceLimitError):
        exact_channel_otoc(noise_instance, NOISELESS, Settings(max_density_qubits=3))


@pytest.mark.parametrize('p', [0.004, 0.01, 0.02])
def test_first_order_error_is_bounded_by_pairs_of_errors(noise_instance, p):
    noise = NoiseModel(p)
    r = noise.pauli_probability
    exact = exact_channel_otoc(noise_instance, noise).butterfly
    approx = perturbative_otoc(noise_instance, noise, order=1).value
    assert abs(approx - exact) <= math.comb(10, 2) * r ** 2


def test_perturbative_error_slopes(noise_instance):
    frame = perturbative_sweep(noise_instance, np.geomspace(0.002, 0.02, 5))
    assert list(frame.columns) == SWEEP_COLUMNS
    slopes = {
        engine: log_log_slope(group['p'], group['abs_err'])
        for engine, group in frame.groupby('engine')
    }
    assert 0.7 < slopes['order0'] < 1.3
    assert 1.7 < slopes['order1'] < 2.3


def test_symmetry_reduction_matches_the_full_sum(noise_instance):
    bare = noise_instance.without_butterfly()
    full = insertion_sum(bare)
    reduced = insertion_sum(bare, symmetry_reduced=True)
    assert reduced.total == pytest.approx(full.total, abs=1e-9)
    assert reduced.n_runs == full.n_runs // 2


def test_symmetry_reduction_needs_a_butterfly_free_circuit(noise_instance):
    with pytest.raises(ValueError):
        insertion_sum(noise_instance, symmetry_reduced=True)


def test_perturbative_argument_checks(noise_instance):
    with pytest.raises(ValueError):
        perturbative_otoc(noise_instance, NoiseModel(0.01, p1=0.001))
    with pytest.raises(ValueError):
        perturbative_otoc(noise_instance, NoiseModel(0.01), order=2)


def test_order_zero_is_the_damped_ideal_value(noise_instance):
    noise = NoiseModel(0.02)
    result = perturbative_otoc(noise_instance, noise, order=0)
    expected = (1 - noise.pauli_probability) ** 10 * otoc_exact(noise_instance).value
    assert result.value == pytest.approx(expected)
    assert result.n_runs == 0


def test_relative_error_guard():
    assert math.isnan(relative_error(1e-8, 0.1))
    assert relative_error(0.5, 0.4) == pytest.approx(0.2)


def test_log_log_slope_needs_two_points():
    with pytest.raises(ValueError):
        log_log_slope([1.0, 2.0], [0.0, 1.0])


def test_noiseless_normalizations_return_the_ideal_value(noise_instance):
    exact = otoc_exact(noise_instance).value
    assert plain_normalized_otoc(noise_instance, NOISELESS) == pytest.approx(exact, abs=1e-10)
    assert normalize_reference_clifford(noise_instance, NOISELESS, n_refs=3) == pytest.approx(exact, abs=1e-9)


def test_normalization_argument_checks(noise_instance):
    with pytest.raises(ValueError):
        plain_normalized_otoc(noise_instance, NOISELESS, engine='density')
    with pytest.raises(ValueError):
        normalize_reference_clifford(noise_instance, NOISELESS, n_refs=0)


def test_noiseless_trajectories_have_no_spread(noise_instance):
    out = trajectory_sample_otoc(noise_instance, NOISELESS, n_shots=8, block=4)
    assert out.butterfly == pytest.approx(otoc_exact(noise_instance).value, abs=1e-10)
    assert out.identity == pytest.approx(1.0, abs=1e-10)
    assert out.stderr == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        trajectory_sample_otoc(noise_instance, NOISELESS, n_shots=1)


@pytest.mark.slow
def test_trajectories_agree_with_the_channel(noise_instance):
    noise = NoiseModel(0.05)
    channel = exact_channel_otoc(noise_instance, noise)
    sampled = trajectory_sample_otoc(noise_instance, noise, n_shots=4000, seed=5, workers=2)
    assert abs(sampled.normalized - channel.normalized) <= 4 * sampled.stderr


def test_phi_sweep_is_exact_without_a_phase():
    spec = CircuitSpec(chain_graph(5), 4, butterfly_qubit=4, seed=12).validate()
    frame = phi_error_sweep(spec, [0.0, 0.3], n_instances=4)
    assert len(frame) == 8
    assert frame.loc[frame['phi'] == 0.0, 'abs_err'].max() <= 1e-10
    summary = sweep_summary(frame)
    assert list(summary.columns) == ['phi', 'rms_error', 'rms_signal', 'n_instances']
    assert summary['n_instances'].tolist() == [4, 4]
    assert summary['rms_error'].iloc[1] > summary['rms_error'].iloc[0]


def test_reference_normalization_recovers_clifford_signs_that_plain_normalization_damps():
    spec = CircuitSpec(chain_graph(4), 4, ensemble=Ensemble.CLIFFORD4, butterfly_qubit=3, seed=9).validate()
    noise = NoiseModel(0.05)
    plain, reference = [], []
    for inst in build_ensemble(spec, 6):
        exact = otoc_exact(inst).value
        assert abs(exact) == pytest.approx(1.0, abs=1e-10)
        plain.append(plain_normalized_otoc(inst, noise) - exact)
        reference.append(normalize_reference_clifford(inst, noise, n_refs=2) - exact)
    assert np.sqrt(np.mean(np.square(reference))) < 1e-9
    assert np.sqrt(np.mean(np.square(plain))) > 1e-3
