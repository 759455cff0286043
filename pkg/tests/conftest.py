'''Shared fixtures: small chains and seeded instances.'''

import numpy as np
import pytest

from scramblesim.circuit_model import CircuitSpec, Ensemble, build_ensemble, build_random_instance, chain_graph
from scramblesim.config import Settings


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def chain6_spec():
    '''Six-qubit brickwork chain, butterfly on the far end, all eight roots i.i.d.'''
    return CircuitSpec(chain_graph(6), 5, butterfly_qubit=5, seed=11).validate()


@pytest.fixture
def nd_spec():
    '''Eight-qubit chain with exactly six non-Clifford roots in U, deep enough to reach the measured qubit.'''
    return CircuitSpec(chain_graph(8), 12, n_nonclifford=6, butterfly_qubit=7, seed=3).validate()


@pytest.fixture
def small_instance(chain6_spec):
    return build_random_instance(chain6_spec)


@pytest.fixture
def nd_instances(nd_spec):
    return build_ensemble(nd_spec, 12)


@pytest.fixture
def clifford_spec():
    return CircuitSpec(chain_graph(6), 6, ensemble=Ensemble.CLIFFORD4, butterfly_qubit=5, seed=5).validate()


@pytest.fixture
def noise_instance():
    '''Four qubits, three cycles: ten two-qubit gates across U and U^dag.'''
    return build_random_instance(CircuitSpec(chain_graph(4), 3, butterfly_qubit=3, seed=21).validate())


@pytest.fixture
def random_state():
    def make(n_qubits, seed=0):
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=2 ** n_qubits) + 1j * rng.normal(size=2 ** n_qubits)
        return psi / np.linalg.norm(psi)
    return make
