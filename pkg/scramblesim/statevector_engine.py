'''Dense state-vector OTOC engine.

Amplitude layout: qubit 0 is the least significant bit of the basis index.
Arrays handled by the kernels have shape ``(2**n, *batch)``, so a pair of states
(psi_0, psi_1) or the rows of an operator can share one pass through a circuit.
'''

import dataclasses
import logging
import time

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from . import config
from .circuit_model import PZ, CircuitInstance, CircuitSpec, Gate, build_ensemble, pauli_string_matrix
from .errors import ResourceLimitError

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ['instance_id', 'seed', 'n_qubits', 'n_cycles', 'n_s', 'n_d', 'engine', 'otoc', 'wall_time_ms']


# ------------------------------------------------------------------
# Kernels
# ------------------------------------------------------------------
@dataclasses.dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    @classmethod
    def zeros(cls, n_qubits: int) -> 'StateVector':
        amps = np.zeros(2 ** n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def plus(cls, n_qubits: int) -> 'StateVector':
        return cls(n_qubits, np.full(2 ** n_qubits, 2 ** (-n_qubits / 2), dtype=complex))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def check_ceiling(n_qubits: int, settings: config.Settings | None = None) -> None:
    limit = config.resolve(settings).max_statevector_qubits
    if n_qubits > limit:
        raise ResourceLimitError(
            f'{n_qubits} qubits exceed the state-vector ceiling of {limit} '
            f'(raise SCRAMBLESIM_MAX_STATEVECTOR_QUBITS if memory allows)'
        )


def apply_matrix(psi: np.ndarray, matrix: np.ndarray, targets, n_qubits: int) -> np.ndarray:
    '''Apply a 2^k x 2^k matrix to ``targets`` (first target on the matrix's MSB).'''
    k = len(targets)
    batch = psi.shape[1:]
    tensor = psi.reshape((2,) * n_qubits + batch)
    axes = [n_qubits - 1 - t for t in targets]
    gate = matrix.reshape((2,) * (2 * k))
    out = np.tensordot(gate, tensor, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return out.reshape(psi.shape)


def apply_gate(psi: np.ndarray, gate: Gate, n_qubits: int) -> np.ndarray:
    return apply_matrix(psi, gate.matrix, gate.targets, n_qubits)


def apply_circuit(state: StateVector, moments) -> StateVector:
    n = state.n_qubits
    amps = state.amplitudes
    if amps.shape[0] != 2 ** n:
        raise ValueError(f'state has {amps.shape[0]} amplitudes, expected {2 ** n}')
    for moment in moments:
        for g in moment:
            if max(g.targets) >= n:
                raise ValueError(f'gate {g.name} targets {g.targets} outside {n} qubits')
            amps = apply_gate(amps, g, n)
    state.amplitudes = amps
    return state


# ------------------------------------------------------------------
# OTOC evaluation
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class OtocValue:
    value: float
    instance_id: int = 0
    n_s: int = 0
    n_d: int = 0

    def __post_init__(self):
        if abs(self.value) > 1 + 1e-9:
            raise ValueError(f'OTOC value {self.value} outside [-1, 1]')


def _otoc_value(inst: CircuitInstance, value: float) -> OtocValue:
    return OtocValue(float(np.clip(value, -1.0, 1.0)), inst.instance_id, inst.n_s, inst.n_d)


def run_protocol(inst: CircuitInstance, errors: dict | None = None, settings: config.Settings | None = None) -> tuple:
    '''Return (psi_0, psi_1) for the instance.

    ``errors`` maps a gate index (position in the flattened ``inst.moments()``) to a
    Pauli matrix acting on that gate's targets, inserted right after the gate.
    '''
    n = inst.n_qubits
    check_ceiling(n, settings)
    q1 = inst.measurement_qubit
    psi = np.empty((2 ** n, 2), dtype=complex)
    psi[:, 0] = 2 ** (-n / 2)
    psi[:, 1] = psi[:, 0]
    psi[:, 1] = apply_matrix(psi[:, 1:], PZ, (q1,), n)[:, 0]

    for index, g in enumerate(g for moment in inst.moments() for g in moment):
        psi = apply_gate(psi, g, n)
        if errors and index in errors:
            psi = apply_matrix(psi, errors[index], g.targets, n)
    psi[:, 1] = apply_matrix(psi[:, 1:], PZ, (q1,), n)[:, 0]
    return psi[:, 0], psi[:, 1]


def otoc_exact(inst: CircuitInstance, settings: config.Settings | None = None) -> OtocValue:
    psi0, psi1 = run_protocol(inst, settings=settings)
    return _otoc_value(inst, np.vdot(psi1, psi0).real)


def otoc_ancilla_protocol(inst: CircuitInstance, settings: config.Settings | None = None) -> OtocValue:
    '''Full protocol with an explicit ancilla (index n) prepared along +y.'''
    n = inst.n_qubits
    check_ceiling(n + 1, settings)
    anc, q1 = n, inst.measurement_qubit
    total = n + 1
    cz = Gate('CZ', (anc, q1))

    plus = np.full(2 ** n, 2 ** (-n / 2), dtype=complex)
    y_plus = np.array([1, 1j]) / np.sqrt(2)
    psi = np.kron(y_plus, plus)

    psi = apply_gate(psi, cz, total)
    for moment in inst.moments():
        for g in moment:
            psi = apply_gate(psi, g, total)
    psi = apply_gate(psi, cz, total)

    sigma_y = apply_matrix(psi, np.array([[0, -1j], [1j, 0]]), (anc,), total)
    return _otoc_value(inst, np.vdot(psi, sigma_y).real)


def otoc_infinite_temperature(inst: CircuitInstance, settings: config.Settings | None = None) -> float:
    '''tr(Z1 O(t) Z1 O(t)) / 2^n from the dense unitary of the protocol (small n only).'''
    n = inst.n_qubits
    check_ceiling(2 * n, settings)
    c = np.eye(2 ** n, dtype=complex)
    for moment in inst.moments():
        for g in moment:
            c = apply_gate(c, g, n)
    z1 = np.ones(1)
    for q in reversed(range(n)):
        z1 = np.kron(z1, [1, -1] if q == inst.measurement_qubit else [1, 1])
    zc = z1[:, None] * c
    return float(np.trace(zc.conj().T @ (c * z1[None, :])).real / 2 ** n)


# ------------------------------------------------------------------
# Partial projections
# ------------------------------------------------------------------
@dataclasses.dataclass
class ProjectionBatch:
    open_qubits: tuple
    kappas: np.ndarray
    weights: np.ndarray
    partial_values: np.ndarray
    overlaps: np.ndarray

    @property
    def estimate(self) -> float:
        total = self.weights.sum()
        return float(self.overlaps.sum() / total) if total > 0 else float('nan')

    def bootstrap_interval(self, n_resamples: int = 1000, subset: int | None = None, seed: int = 0, level: float = 0.95) -> tuple:
        '''Percentile interval of the weighted estimate over random subsets of the recorded kappas.

        ``subset`` kappas are drawn without replacement per resample; the default of half
        the batch follows the 10-of-20 scheme.
        '''
        k = len(self.kappas)
        subset = max(1, k // 2) if subset is None else subset
        if not 1 <= subset <= k:
            raise ValueError(f"'subset' must lie in [1, {k}], got {subset}")
        rng = np.random.default_rng(seed)
        picks = np.array([rng.choice(k, size=subset, replace=False) for _ in range(n_resamples)])
        num = self.overlaps[picks].sum(axis=1)
        den = self.weights[picks].sum(axis=1)
        samples = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        alpha = (1 - level) / 2
        return float(np.quantile(samples, alpha)), float(np.quantile(samples, 1 - alpha))


def otoc_partial(inst: CircuitInstance, open_qubits, kappa_samples: int | None, seed: int = 0,
                 settings: config.Settings | None = None) -> tuple:
    '''Estimate the OTOC from projections of the non-open qubits onto bitstrings kappa.

    ``kappa_samples=None`` enumerates every kappa.
    '''
    n = inst.n_qubits
    open_qubits = tuple(sorted(set(int(q) for q in open_qubits)))
    if not open_qubits or len(open_qubits) >= n or min(open_qubits) < 0 or max(open_qubits) >= n:
        raise ValueError(f"'open_qubits' must be a nonempty proper subset of 0..{n - 1}, got {open_qubits}")
    closed = tuple(q for q in range(n) if q not in open_qubits)
    n_kappa = 2 ** len(closed)

    psi0, psi1 = run_protocol(inst, settings=settings)
    # rows indexed by the closed-qubit bitstring (closed[0] is its least significant bit)
    order = [n - 1 - q for q in reversed(closed)] + [n - 1 - q for q in reversed(open_qubits)]
    rows0 = np.transpose(psi0.reshape((2,) * n), order).reshape(n_kappa, -1)
    rows1 = np.transpose(psi1.reshape((2,) * n), order).reshape(n_kappa, -1)

    if kappa_samples is None:
        kappas = np.arange(n_kappa)
    else:
        if not 1 <= kappa_samples <= n_kappa:
            raise ValueError(f"'kappa_samples' must lie in [1, {n_kappa}], got {kappa_samples}")
        kappas = np.sort(np.random.default_rng(seed).choice(n_kappa, size=kappa_samples, replace=False))

    weights = 0.5 * ((np.abs(rows0[kappas]) ** 2).sum(axis=1) + (np.abs(rows1[kappas]) ** 2).sum(axis=1))
    overlaps = np.einsum('ij,ij->i', rows1[kappas].conj(), rows0[kappas]).real
    partial = np.divide(overlaps, weights, out=np.zeros_like(overlaps), where=weights > 0)
    batch = ProjectionBatch(open_qubits, kappas, weights, partial, overlaps)
    return batch.estimate, batch


# ------------------------------------------------------------------
# Ensembles
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class OtocEnsembleResult:
    values: tuple
    mean: float
    rms: float
    mean_stderr: float
    rms_stderr: float

    @property
    def n_instances(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        return {
            'n_instances': self.n_instances,
            'c_bar': self.mean,
            'delta_c': self.rms,
            'c_bar_stderr': self.mean_stderr,
            'delta_c_stderr': self.rms_stderr,
        }


def _rms(x, axis=-1):
    return np.sqrt(np.mean(np.square(x), axis=axis))


def ensemble_stats(values, n_resamples: int | None = None, seed: int = 0,
                   settings: config.Settings | None = None) -> OtocEnsembleResult:
    '''Mean, RMS about zero and their bootstrap standard errors.'''
    values = tuple(values)
    if not values:
        raise ValueError("'values' must be nonempty")
    data = np.array([v.value if isinstance(v, OtocValue) else float(v) for v in values])
    mean, rms = float(data.mean()), float(_rms(data))
    mean_se = rms_se = 0.0
    if len(data) > 1 and np.ptp(data) > 0:
        n_resamples = config.resolve(settings).bootstrap_resamples if n_resamples is None else n_resamples
        rng = np.random.default_rng(seed)
        mean_se = float(stats.bootstrap((data,), np.mean, n_resamples=n_resamples, method='percentile',
                                        vectorized=True, random_state=rng).standard_error)
        rms_se = float(stats.bootstrap((data,), _rms, n_resamples=n_resamples, method='percentile',
                                       vectorized=True, random_state=rng).standard_error)
    return OtocEnsembleResult(values, mean, rms, mean_se, rms_se)


ENGINES = {
    'exact': otoc_exact,
    'ancilla': otoc_ancilla_protocol,
}


def evaluate_row(inst: CircuitInstance, engine: str = 'exact', settings: config.Settings | None = None) -> dict:
    start = time.perf_counter()
    value = ENGINES[engine](inst, settings=settings)
    return {
        'instance_id': inst.instance_id,
        'seed': inst.seed,
        'n_qubits': inst.n_qubits,
        'n_cycles': inst.spec.n_cycles,
        'n_s': inst.n_s,
        'n_d': inst.n_d,
        'engine': engine,
        'otoc': value.value,
        'wall_time_ms': 1e3 * (time.perf_counter() - start),
    }


def run_ensemble(spec: CircuitSpec, n_instances: int, engine: str = 'exact', workers: int = 1,
                 settings: config.Settings | None = None) -> pd.DataFrame:
    instances = build_ensemble(spec, n_instances)
    logger.info('running %d instances with engine %s on %d workers', n_instances, engine, workers)
    rows = Parallel(n_jobs=workers)(delayed(evaluate_row)(inst, engine, settings) for inst in instances)
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)
