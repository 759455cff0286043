'''OTOC simulation toolkit for random quantum circuits.

Four engines evaluate the same quantity: dense state vectors, Pauli-string branching,
classical population dynamics for circuit averages and depolarizing-noise models.
'''

from .circuit_model import (
    CircuitInstance, CircuitSpec, CouplingGraph, Ensemble, FsimParams, Gate, InversionMode, build_ensemble,
    build_random_instance, chain_graph, fsim_matrix, grid_graph, invert_gate, ladder_graph, lightcone_filter,
    pauli_error_rate, pauli_transfer_matrix,
)
from .config import Settings, configure_logging, get_settings
from .errors import ScrambleSimError
from .noise_models import NoiseModel, exact_channel_otoc, perturbative_otoc, trajectory_sample_otoc
from .pauli_branching import PauliTerm, SparseState, otoc_from_strings, run_branching
from .population_dynamics import binary_chain, omega_theta, refined_chain, simulate
from .statevector_engine import OtocEnsembleResult, otoc_ancilla_protocol, otoc_exact, otoc_partial

__version__ = '0.1.0'
