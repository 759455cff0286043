'''Depolarizing noise: quantum-jump trajectories, an exact channel oracle, the
single-error expansion and the normalization procedures built on them.

``NoiseModel.p`` is the depolarizing probability of rho -> (1-p) rho + p I/d on the
two qubits of every two-qubit gate. The probability of a nontrivial Pauli pair is
``pauli_probability`` = 15p/16; everything below is written in terms of it.
'''

import dataclasses
import itertools
import logging
import math
import typing

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import config
from .circuit_model import (
    PAULI_MATRICES, PZ, CircuitInstance, CircuitSpec, FsimParams, InversionMode, build_ensemble, derive_seed,
    reference_clifford_instance,
)
from .errors import NormalizationError, ResourceLimitError
from .statevector_engine import apply_gate, apply_matrix, otoc_exact, run_protocol

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['p', 'phi', 'engine', 'instance_id', 'value', 'exact', 'abs_err', 'rel_err', 'shots']

PAULI_PAIRS = tuple(pair for pair in itertools.product(range(4), repeat=2) if pair != (0, 0))
_PAIR_MATRICES = tuple(
    np.kron(PAULI_MATRICES['IXYZ'[m1]], PAULI_MATRICES['IXYZ'[m2]]) for m1, m2 in PAULI_PAIRS
)
_SINGLE_MATRICES = tuple(PAULI_MATRICES[p] for p in 'XYZ')


@dataclasses.dataclass(frozen=True)
class NoiseModel:
    '''Two-qubit depolarizing probability ``p``; ``p1`` is the Pauli probability of an
    optional single-qubit channel after every single-qubit gate (off by default).'''

    p: float
    p1: float = 0.0

    def __post_init__(self):
        for name in ('p', 'p1'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"'{name}' must lie in [0, 1], got {value}")

    @property
    def pauli_probability(self) -> float:
        return 15.0 * self.p / 16.0

    @classmethod
    def from_pauli_error(cls, r_p: float, p1: float = 0.0) -> 'NoiseModel':
        return cls(16.0 * r_p / 15.0, p1)


NOISELESS = NoiseModel(0.0)


@dataclasses.dataclass(frozen=True)
class ErrorInsertion:
    layer: int
    pair: tuple
    paulis: tuple

    def __post_init__(self):
        if tuple(self.paulis) == (0, 0):
            raise ValueError('an error insertion needs a nontrivial Pauli pair')

    @property
    def matrix(self) -> np.ndarray:
        return _PAIR_MATRICES[PAULI_PAIRS.index(tuple(self.paulis))]


class _Slot(typing.NamedTuple):
    index: int
    targets: tuple
    two_qubit: bool
    butterfly: bool
    forward: bool


def _gate_slots(inst: CircuitInstance) -> list:
    slots, index = [], 0
    for half, moments in (('forward', inst.forward), ('butterfly', ((inst.butterfly,),) if inst.butterfly else ()),
                          ('backward', inst.backward)):
        for moment in moments:
            for g in moment:
                slots.append(_Slot(index, g.targets, g.is_two_qubit, half == 'butterfly', half == 'forward'))
                index += 1
    return slots


def enumerate_insertions(inst: CircuitInstance, forward_only: bool = False):
    '''Every single Pauli-pair error after a two-qubit gate, in execution order.'''
    for slot in _gate_slots(inst):
        if slot.two_qubit and (slot.forward or not forward_only):
            for paulis in PAULI_PAIRS:
                yield ErrorInsertion(slot.index, slot.targets, paulis)


def n_two_qubit(inst: CircuitInstance) -> int:
    return sum(s.two_qubit for s in _gate_slots(inst))


# ------------------------------------------------------------------
# Exact channel
# ------------------------------------------------------------------
def apply_depolarizing(operator: np.ndarray, qubits, r: float, n_qubits: int) -> np.ndarray:
    '''A -> (1-r) A + r/(4^k-1) sum_{P != I} P A P on ``qubits`` (k = 1 or 2).

    ``operator`` has shape (2**n, 2**n, *batch).
    '''
    if r == 0:
        return operator
    k, n = len(qubits), n_qubits
    batch = operator.shape[2:]
    rows = [n - 1 - q for q in qubits]
    cols = [2 * n - 1 - q for q in qubits]
    t = np.moveaxis(operator.reshape((2,) * (2 * n) + batch), rows + cols, list(range(2 * k)))
    reduced = sum(t[idx + idx] for idx in itertools.product((0, 1), repeat=k)) / 2 ** k
    mixed = np.zeros_like(t)
    for idx in itertools.product((0, 1), repeat=k):
        mixed[idx + idx] = reduced
    full = 4 ** k * r / (4 ** k - 1)
    out = (1 - full) * t + full * mixed
    return np.moveaxis(out, list(range(2 * k)), rows + cols).reshape(operator.shape)


class ChannelOtoc(typing.NamedTuple):
    butterfly: float
    identity: float
    normalized: float
    trace_drift: float


def _channel_value(inst: CircuitInstance, noise: NoiseModel) -> tuple:
    n = inst.n_qubits
    q1 = inst.measurement_qubit
    r = noise.pauli_probability
    plus = np.full(2 ** n, 2 ** (-n / 2), dtype=complex)
    ops = np.empty((2 ** n, 2 ** n, 2), dtype=complex)
    ops[..., 1] = np.outer(plus, plus)
    ops[..., 0] = apply_matrix(ops[..., 1], PZ, (q1,), n)
    drift = 0.0
    gates = [g for moment in inst.moments() for g in moment]
    for slot, g in zip(_gate_slots(inst), gates):
        ops = apply_gate(ops, g, n)
        ops = apply_gate(ops.transpose(1, 0, 2).conj(), g, n).transpose(1, 0, 2).conj()
        if slot.two_qubit:
            ops = apply_depolarizing(ops, g.targets, r, n)
        elif noise.p1 and not slot.butterfly:
            ops = apply_depolarizing(ops, g.targets, noise.p1, n)
        drift = max(drift, abs(np.trace(ops[..., 1]) - 1.0))
    value = np.trace(apply_matrix(ops[..., 0], PZ, (q1,), n)).real
    return float(value), float(drift)


def exact_channel_otoc(inst: CircuitInstance, noise: NoiseModel, settings: config.Settings | None = None) -> ChannelOtoc:
    '''Noisy ancilla signal with and without the butterfly from mixed-state evolution.

    The ancilla reads Re tr(Z1 A) where A starts as Z1 |+><+| and follows the noisy
    circuit; |+><+| is carried along to monitor trace preservation.
    '''
    settings = config.resolve(settings)
    limit = settings.max_density_qubits
    if inst.n_qubits > limit:
        raise ResourceLimitError(
            f'{inst.n_qubits} qubits exceed the density-matrix limit of {limit} '
            f'(raise SCRAMBLESIM_MAX_DENSITY_QUBITS if memory allows)'
        )
    butterfly, drift_b = _channel_value(inst, noise)
    identity, drift_i = _channel_value(inst.without_butterfly(), noise)
    if abs(identity) < settings.normalization_floor:
        logger.warning('instance %d: normalization signal %.3g below floor', inst.instance_id, identity)
        normalized = float('nan')
    else:
        normalized = butterfly / identity
    return ChannelOtoc(butterfly, identity, normalized, max(drift_b, drift_i))


# ------------------------------------------------------------------
# Trajectories
# ------------------------------------------------------------------
def _sample_errors(slots, noise: NoiseModel, rng: np.random.Generator) -> dict:
    r = noise.pauli_probability
    errors = {}
    for slot in slots:
        if slot.two_qubit:
            if r and rng.random() < r:
                errors[slot.index] = _PAIR_MATRICES[int(rng.integers(15))]
        elif noise.p1 and not slot.butterfly and rng.random() < noise.p1:
            errors[slot.index] = _SINGLE_MATRICES[int(rng.integers(3))]
    return errors


def _shot_block(inst: CircuitInstance, noise: NoiseModel, n_shots: int, seed_seq, settings) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    runs = (inst, inst.without_butterfly())
    slots = [_gate_slots(run) for run in runs]
    out = np.empty((n_shots, 2))
    for shot in range(n_shots):
        for k, run in enumerate(runs):
            psi0, psi1 = run_protocol(run, _sample_errors(slots[k], noise, rng), settings)
            out[shot, k] = np.vdot(psi1, psi0).real
    return out


class TrajectoryOtoc(typing.NamedTuple):
    butterfly: float
    identity: float
    normalized: float
    stderr: float
    butterfly_stderr: float
    identity_stderr: float
    n_shots: int


def trajectory_sample_otoc(inst: CircuitInstance, noise: NoiseModel, n_shots: int = 1000, seed: int = 0,
                           workers: int = 1, block: int = 64, settings: config.Settings | None = None) -> TrajectoryOtoc:
    '''Sample Pauli errors after every two-qubit gate, run the protocol with and without
    the butterfly (independent samples) and normalize the two means.'''
    settings = config.resolve(settings)
    if n_shots < 2:
        raise ValueError(f"'n_shots' must be at least 2, got {n_shots}")
    sizes = [min(block, n_shots - start) for start in range(0, n_shots, block)]
    parts = Parallel(n_jobs=workers)(
        delayed(_shot_block)(inst, noise, size, np.random.SeedSequence(seed, spawn_key=(k,)), settings)
        for k, size in enumerate(sizes)
    )
    values = np.concatenate(parts)
    mean_b, mean_i = values.mean(axis=0)
    se_b, se_i = values.std(axis=0, ddof=1) / math.sqrt(n_shots)
    if abs(mean_i) < max(3 * se_i, settings.normalization_floor):
        raise NormalizationError(
            f'normalization signal {mean_i:.3g} +/- {se_i:.2g} is consistent with zero; '
            f'more shots or a shallower circuit are needed'
        )
    ratio = mean_b / mean_i
    stderr = math.sqrt(se_b ** 2 + ratio ** 2 * se_i ** 2) / abs(mean_i)
    logger.debug('instance %d: %d shots, ratio %.4f +/- %.4f', inst.instance_id, n_shots, ratio, stderr)
    return TrajectoryOtoc(float(mean_b), float(mean_i), float(ratio), float(stderr), float(se_b), float(se_i), n_shots)


# ------------------------------------------------------------------
# Single-error expansion
# ------------------------------------------------------------------
class InsertionSum(typing.NamedTuple):
    ideal: float
    total: float
    n_two_qubit: int
    n_runs: int


class PerturbativeResult(typing.NamedTuple):
    value: float
    order: int
    n_runs: int


def _insertion_value(inst: CircuitInstance, insertion: ErrorInsertion, settings) -> float:
    psi0, psi1 = run_protocol(inst, {insertion.layer: insertion.matrix}, settings)
    return float(np.vdot(psi1, psi0).real)


def insertion_sum(inst: CircuitInstance, symmetry_reduced: bool = False, workers: int = 1,
                  settings: config.Settings | None = None) -> InsertionSum:
    '''Ideal value and the sum of C over all single Pauli-pair insertions.

    ``symmetry_reduced`` evaluates the insertions in U only and doubles them. That is
    exact for a butterfly-free mirrored circuit whose two-qubit gates are Clifford:
    an error after a gate of U^dag equals, after relabelling the 15 pairs, an error
    around the mirrored gate of U.
    '''
    if symmetry_reduced:
        clifford = all(g.is_clifford for m in inst.forward for g in m if g.is_two_qubit)
        if inst.butterfly is not None or not (inst.mirrored and inst.exact_inverse) or not clifford:
            raise ValueError('symmetry reduction needs a butterfly-free, mirrored circuit with Clifford two-qubit gates')
    insertions = list(enumerate_insertions(inst, forward_only=symmetry_reduced))
    values = Parallel(n_jobs=workers)(delayed(_insertion_value)(inst, ins, settings) for ins in insertions)
    total = math.fsum(values)
    if symmetry_reduced:
        total *= 2
    return InsertionSum(otoc_exact(inst, settings).value, total, n_two_qubit(inst), len(insertions))


def perturbative_otoc(inst: CircuitInstance, noise: NoiseModel, order: int = 1, symmetry_reduced: bool = False,
                      terms: InsertionSum | None = None, workers: int = 1,
                      settings: config.Settings | None = None) -> PerturbativeResult:
    '''(1-r)^n2 C_ideal, plus (r/15)(1-r)^(n2-1) sum_insertions C[insertion] at order 1.

    ``terms`` reuses a precomputed :func:`insertion_sum` (it does not depend on p).
    '''
    if order not in (0, 1):
        raise ValueError(f"'order' must be 0 or 1, got {order}")
    if noise.p1:
        raise ValueError('the single-error expansion covers two-qubit noise only')
    r = noise.pauli_probability
    if terms is None:
        if order == 0:
            terms = InsertionSum(otoc_exact(inst, settings).value, 0.0, n_two_qubit(inst), 0)
        else:
            terms = insertion_sum(inst, symmetry_reduced, workers, settings)
    n2 = terms.n_two_qubit
    value = (1 - r) ** n2 * terms.ideal
    if order == 1 and n2:
        value += r / 15 * (1 - r) ** (n2 - 1) * terms.total
    return PerturbativeResult(float(value), order, terms.n_runs if order == 1 else 0)


def relative_error(exact: float, approx: float, guard: float = 1e-6) -> float:
    '''|exact - approx| / |exact|; NaN when |exact| < guard.'''
    if abs(exact) < guard:
        return float('nan')
    return abs(exact - approx) / abs(exact)


def log_log_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0) & np.isfinite(ys)
    if keep.sum() < 2:
        raise ValueError('need at least two positive points for a log-log fit')
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])


def perturbative_sweep(inst: CircuitInstance, ps, workers: int = 1, settings: config.Settings | None = None) -> pd.DataFrame:
    '''Order-0 and order-1 values against the exact channel for each p (butterfly signal).'''
    terms = insertion_sum(inst, workers=workers, settings=settings)
    rows = []
    for p in ps:
        noise = NoiseModel(float(p))
        exact = exact_channel_otoc(inst, noise, settings).butterfly
        for order in (0, 1):
            value = perturbative_otoc(inst, noise, order, terms=terms).value
            rows.append({
                'p': float(p), 'phi': 0.0, 'engine': f'order{order}', 'instance_id': inst.instance_id,
                'value': value, 'exact': exact, 'abs_err': abs(value - exact),
                'rel_err': relative_error(exact, value), 'shots': 0,
            })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


# ------------------------------------------------------------------
# Normalization
# ------------------------------------------------------------------
def _noisy_signal(inst: CircuitInstance, noise: NoiseModel, engine: str, n_shots: int, seed: int, settings) -> tuple:
    if engine == 'exact':
        out = exact_channel_otoc(inst, noise, settings)
        return out.butterfly, out.identity
    if engine == 'trajectory':
        out = trajectory_sample_otoc(inst, noise, n_shots, seed, settings=settings)
        return out.butterfly, out.identity
    raise ValueError(f"'engine' must be 'exact' or 'trajectory', got {engine!r}")


def plain_normalized_otoc(inst: CircuitInstance, noise: NoiseModel, engine: str = 'exact', n_shots: int = 1000,
                          seed: int = 0, settings: config.Settings | None = None) -> float:
    '''Noisy signal divided by the noisy butterfly-free signal.'''
    settings = config.resolve(settings)
    butterfly, identity = _noisy_signal(inst, noise, engine, n_shots, seed, settings)
    if abs(identity) < settings.normalization_floor:
        raise NormalizationError(f'normalization signal {identity:.3g} below floor {settings.normalization_floor:g}')
    return butterfly / identity


def normalize_reference_clifford(inst: CircuitInstance, noise: NoiseModel, n_refs: int = 10, seed: int = 0,
                                 engine: str = 'exact', n_shots: int = 1000,
                                 settings: config.Settings | None = None) -> float:
    '''Noisy signal divided by the mean |signal| of reference circuits whose W/V roots are
    replaced by random Clifford roots (same butterfly).'''
    settings = config.resolve(settings)
    if n_refs < 1:
        raise ValueError(f"'n_refs' must be positive, got {n_refs}")
    target, _ = _noisy_signal(inst, noise, engine, n_shots, seed, settings)
    refs = []
    for k in range(n_refs):
        ref = reference_clifford_instance(inst, derive_seed(seed, k))
        refs.append(abs(_noisy_signal(ref, noise, engine, n_shots, derive_seed(seed, n_refs + k), settings)[0]))
    scale = float(np.mean(refs))
    if scale < settings.normalization_floor:
        raise NormalizationError(f'reference magnitude {scale:.3g} below floor {settings.normalization_floor:g}')
    return target / scale


# ------------------------------------------------------------------
# Coherent conditional-phase errors
# ------------------------------------------------------------------
def _phi_spec(spec: CircuitSpec, phi: float) -> CircuitSpec:
    theta = spec.fsim.theta if spec.fsim is not None else (math.pi / 4 if spec.two_qubit == 'SQRT_ISWAP' else math.pi / 2)
    return dataclasses.replace(spec, two_qubit='FSIM', fsim=FsimParams(theta, phi), inversion=InversionMode.PHYSICAL)


def _phi_row(ideal: CircuitInstance, noisy: CircuitInstance, phi: float, settings) -> dict:
    exact = otoc_exact(ideal, settings).value
    value = otoc_exact(noisy, settings).value
    return {
        'p': 0.0, 'phi': float(phi), 'engine': 'exact', 'instance_id': ideal.instance_id,
        'value': value, 'exact': exact, 'abs_err': abs(value - exact),
        'rel_err': relative_error(exact, value), 'shots': 0,
    }


def phi_error_sweep(spec: CircuitSpec, phis, n_instances: int, workers: int = 1,
                    settings: config.Settings | None = None) -> pd.DataFrame:
    '''OTOC error from a conditional phase phi on every two-qubit gate, which the Z-sandwich
    inversion cannot undo. Instance k of every phi shares its single-qubit gates.'''
    ideal = build_ensemble(_phi_spec(spec, 0.0), n_instances)
    jobs = []
    for phi in phis:
        noisy = build_ensemble(_phi_spec(spec, float(phi)), n_instances)
        jobs.extend(delayed(_phi_row)(a, b, phi, settings) for a, b in zip(ideal, noisy))
    rows = Parallel(n_jobs=workers)(jobs)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def sweep_summary(frame: pd.DataFrame, by: str = 'phi') -> pd.DataFrame:
    '''RMS error and RMS signal per sweep value.'''
    grouped = frame.groupby(by)
    return pd.DataFrame({
        'rms_error': grouped['abs_err'].apply(lambda s: float(np.sqrt(np.mean(np.square(s))))),
        'rms_signal': grouped['exact'].apply(lambda s: float(np.sqrt(np.mean(np.square(s))))),
        'n_instances': grouped.size(),
    }).reset_index()
