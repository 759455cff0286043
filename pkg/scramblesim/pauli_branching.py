'''Heisenberg-picture Pauli expansion of the butterfly operator.

The butterfly is conjugated through the gates of U in reverse time order,
P -> g^dag P g. Clifford gates map a string to a single string; every other gate
branches it into the terms of its Pauli transfer matrix. At the end each string is
applied to |+>^n: it lands on the X-basis bitstring of its Z/Y positions with phase
(-i)^{#Y}.

A Hermitian string with real weight w is stored as
``coeff * i**phase * X^x_mask Z^z_mask`` with ``coeff = |w|``.
'''

import dataclasses
import logging
import time
import typing

import numpy as np

from . import config
from .circuit_model import CircuitInstance, Gate, pauli_transfer_matrix
from .errors import BranchCapExceeded, CircuitSpecError, NonCliffordGateError
from .statevector_engine import OtocValue

logger = logging.getLogger(__name__)

# label order I, X, Y, Z; code = x + 2 z
LABEL_OF_CODE = np.array([0, 1, 3, 2])
X_OF_LABEL = np.array([0, 1, 1, 0])
Z_OF_LABEL = np.array([0, 0, 1, 1])
KAPPA_OF_LABEL = (1, -1, -1, 1)
_MINUS_I_POWERS = np.array([1, -1j, -1, 1j])


def _popcount(v: int) -> int:
    return bin(v).count('1')


def _popcount_array(v: np.ndarray, n_bits: int) -> np.ndarray:
    total = np.zeros(v.shape, dtype=np.int64)
    for k in range(n_bits):
        total += (v >> k) & 1
    return total


# ------------------------------------------------------------------
# Terms and states
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class PauliTerm:
    x_mask: int
    z_mask: int
    phase: int
    coeff: float

    @classmethod
    def from_weight(cls, x_mask: int, z_mask: int, weight: float) -> 'PauliTerm':
        phase = (_popcount(x_mask & z_mask) + (2 if weight < 0 else 0)) % 4
        return cls(int(x_mask), int(z_mask), phase, abs(float(weight)))

    @classmethod
    def from_labels(cls, labels: dict, weight: float = 1.0) -> 'PauliTerm':
        '''Build from {qubit: 'X'|'Y'|'Z'}.'''
        x = z = 0
        for q, label in labels.items():
            code = 'IXYZ'.index(label)
            x |= int(X_OF_LABEL[code]) << q
            z |= int(Z_OF_LABEL[code]) << q
        return cls.from_weight(x, z, weight)

    @property
    def weight(self) -> float:
        '''Signed real coefficient of the Hermitian string.'''
        rel = (self.phase - _popcount(self.x_mask & self.z_mask)) % 4
        if rel not in (0, 2):
            raise ValueError(f'term with phase {self.phase} is not Hermitian')
        return self.coeff if rel == 0 else -self.coeff

    def label(self, q: int) -> int:
        return int(LABEL_OF_CODE[((self.x_mask >> q) & 1) + 2 * ((self.z_mask >> q) & 1)])

    def with_labels(self, targets, labels, weight: float) -> 'PauliTerm':
        x, z = self.x_mask, self.z_mask
        for q, lab in zip(targets, labels):
            x = (x & ~(1 << q)) | (int(X_OF_LABEL[lab]) << q)
            z = (z & ~(1 << q)) | (int(Z_OF_LABEL[lab]) << q)
        return PauliTerm.from_weight(x, z, weight)


@dataclasses.dataclass
class SparseState:
    n_qubits: int
    amplitudes: dict

    def inner(self, other: 'SparseState') -> complex:
        '''<self|other>.'''
        return sum((a.conjugate() * other.amplitudes[b] for b, a in self.amplitudes.items() if b in other.amplitudes), 0j)

    @property
    def norm_squared(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def nonzero_count(self, tol: float = 1e-12) -> int:
        return sum(abs(a) > tol for a in self.amplitudes.values())


@dataclasses.dataclass
class BranchStats:
    n_b: int = 0
    n_p: int = 0
    max_live_terms: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            'n_b': int(self.n_b),
            'n_p': int(self.n_p),
            'max_live_terms': int(self.max_live_terms),
            'wall_ms': 1e3 * self.wall_time,
        }


class BranchResult(typing.NamedTuple):
    psi0: SparseState
    psi1: SparseState
    stats: BranchStats
    terms: list
    measurement_qubit: int


# ------------------------------------------------------------------
# Single-gate rules
# ------------------------------------------------------------------
def _local_index(term: PauliTerm, targets) -> int:
    index = 0
    for q in targets:
        index = 4 * index + term.label(q)
    return index


def _local_labels(index: int, k: int) -> tuple:
    return tuple((index >> (2 * (k - 1 - j))) & 3 for j in range(k))


def branch_nonclifford(term: PauliTerm, gate: Gate, prune_tol: float = 0.0, adjoint: bool = False) -> list:
    '''All terms of g^dag P g (or g P g^dag with ``adjoint``), weights from the exact transfer matrix.'''
    r = pauli_transfer_matrix(gate)
    if adjoint:
        r = r.T
    k = len(gate.targets)
    b = _local_index(term, gate.targets)
    w = term.weight
    out = []
    for a in np.flatnonzero(r[:, b]):
        child = w * r[a, b]
        if abs(child) > prune_tol:
            out.append(term.with_labels(gate.targets, _local_labels(int(a), k), child))
    return out


def conjugate_clifford(term: PauliTerm, gate: Gate, adjoint: bool = False) -> PauliTerm:
    '''Single-string image g^dag P g, the Heisenberg step.

    ``adjoint=True`` gives the forward image g P g^dag; with the FSIM sign convention
    used here that is the orientation of the usual iSWAP table (X1 -> -Z Y, ...).
    '''
    if not gate.is_clifford:
        raise NonCliffordGateError(f'{gate.name} is not Clifford; branch it instead')
    (image,) = branch_nonclifford(term, gate, adjoint=adjoint)
    return image


# ------------------------------------------------------------------
# Propagation
# ------------------------------------------------------------------
def _check_branchable(inst: CircuitInstance) -> None:
    if not (inst.exact_inverse and inst.mirrored):
        raise CircuitSpecError('branching needs a U^dag that mirrors U exactly (filter with measurement_cone=False)')


def _gate_sequence(inst: CircuitInstance) -> list:
    return [g for moment in reversed(inst.forward) for g in moment]


def _initial_term(inst: CircuitInstance) -> PauliTerm:
    if inst.butterfly is None:
        return PauliTerm(0, 0, 0, 1.0)
    return PauliTerm.from_labels({inst.butterfly.targets[0]: inst.butterfly.name})


def _depth_first(inst: CircuitInstance, settings: config.Settings, stats: BranchStats) -> dict:
    sequence = []
    for g in _gate_sequence(inst):
        r = pauli_transfer_matrix(g)
        k = len(g.targets)
        images = [[(_local_labels(int(a), k), float(r[a, b])) for a in np.flatnonzero(r[:, b])] for b in range(4 ** k)]
        sequence.append((g.targets, images))

    strings = {}
    start = _initial_term(inst)
    stack = [(0, start.x_mask, start.z_mask, start.weight)]
    while stack:
        i, x, z, w = stack.pop()
        while i < len(sequence):
            targets, images = sequence[i]
            b = 0
            for q in targets:
                b = 4 * b + int(LABEL_OF_CODE[((x >> q) & 1) + 2 * ((z >> q) & 1)])
            i += 1
            if b == 0:
                continue
            children = [(labels, w * c) for labels, c in images[b] if abs(w * c) > settings.prune_tol]
            if not children:
                w = 0.0
                break
            for labels, cw in children[1:]:
                cx, cz = x, z
                for q, lab in zip(targets, labels):
                    cx = (cx & ~(1 << q)) | (int(X_OF_LABEL[lab]) << q)
                    cz = (cz & ~(1 << q)) | (int(Z_OF_LABEL[lab]) << q)
                stack.append((i, cx, cz, cw))
            stats.max_live_terms = max(stats.max_live_terms, len(stack) + 1)
            labels, w = children[0]
            for q, lab in zip(targets, labels):
                x = (x & ~(1 << q)) | (int(X_OF_LABEL[lab]) << q)
                z = (z & ~(1 << q)) | (int(Z_OF_LABEL[lab]) << q)
        if w == 0.0:
            continue
        stats.n_b += 1
        if stats.n_b > settings.branch_cap:
            raise BranchCapExceeded(f'branch cap {settings.branch_cap} exceeded', stats)
        strings[(x, z)] = strings.get((x, z), 0.0) + w
    return strings


def _breadth_first(inst: CircuitInstance, settings: config.Settings, stats: BranchStats) -> dict:
    n = inst.n_qubits
    start = _initial_term(inst)
    xs = np.array([start.x_mask], dtype=np.int64)
    zs = np.array([start.z_mask], dtype=np.int64)
    ws = np.array([start.weight])
    counts = np.ones(1)
    one = np.int64(1)

    for g in _gate_sequence(inst):
        r = pauli_transfer_matrix(g)
        k = len(g.targets)
        b = np.zeros(xs.shape, dtype=np.int64)
        for q in g.targets:
            b = 4 * b + LABEL_OF_CODE[((xs >> q) & 1) + 2 * ((zs >> q) & 1)]
        if g.is_clifford:
            parent = np.arange(len(xs))
            a = np.argmax(np.abs(r), axis=0)[b]
        else:
            parent, a = np.nonzero((r[:, b] != 0).T)
        coeff = r[a, b[parent]]
        xs, zs = xs[parent], zs[parent]
        for j, q in enumerate(g.targets):
            lab = (a >> (2 * (k - 1 - j))) & 3
            mask = ~(one << q)
            xs = (xs & mask) | (X_OF_LABEL[lab].astype(np.int64) << q)
            zs = (zs & mask) | (Z_OF_LABEL[lab].astype(np.int64) << q)
        ws = ws[parent] * coeff
        counts = counts[parent]
        if not g.is_clifford:
            keys = np.stack([xs, zs], axis=1)
            keys, inverse = np.unique(keys, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            ws = np.bincount(inverse, weights=ws, minlength=len(keys))
            counts = np.bincount(inverse, weights=counts, minlength=len(keys))
            xs, zs = keys[:, 0].copy(), keys[:, 1].copy()
        stats.max_live_terms = max(stats.max_live_terms, len(xs))
        if len(xs) > settings.branch_cap:
            stats.n_b = int(counts.sum())
            raise BranchCapExceeded(f'live set of {len(xs)} terms exceeds branch cap {settings.branch_cap}', stats)

    stats.n_b = int(round(counts.sum()))
    keep = np.abs(ws) > settings.prune_tol
    return {(int(x), int(z)): float(w) for x, z, w in zip(xs[keep], zs[keep], ws[keep])}


def _states_from_strings(strings: dict, n: int, q1: int, tol: float) -> tuple:
    psi0, psi1 = {}, {}
    for (x, z), w in strings.items():
        amp = w * _MINUS_I_POWERS[_popcount(x & z) % 4]
        psi0[z] = psi0.get(z, 0j) + amp
        psi1[z] = psi1.get(z, 0j) + (-amp if (x >> q1) & 1 else amp)
    psi0 = {b: a for b, a in psi0.items() if abs(a) > tol}
    psi1 = {b: a for b, a in psi1.items() if abs(a) > tol}
    return SparseState(n, psi0), SparseState(n, psi1)


def run_branching(inst: CircuitInstance, mode: str = 'breadth', settings: config.Settings | None = None) -> BranchResult:
    '''Expand O(t) = U^dag O U into Pauli strings and map them onto psi_0 and psi_1.

    ``mode='depth'`` explores branches one at a time and merges only at the end.
    ``mode='breadth'`` keeps the live set as numpy arrays and merges identical strings
    after every branching gate, carrying path counts so that ``n_b`` agrees with the
    depth-first count. Cancelled strings stay in the live set for the same reason.
    '''
    settings = config.resolve(settings)
    _check_branchable(inst)
    if mode not in ('depth', 'breadth'):
        raise ValueError(f"'mode' must be 'depth' or 'breadth', got {mode!r}")
    stats = BranchStats()
    start = time.perf_counter()
    explore = _depth_first if mode == 'depth' else _breadth_first
    strings = explore(inst, settings, stats)
    psi0, psi1 = _states_from_strings(strings, inst.n_qubits, inst.measurement_qubit, settings.amplitude_tol)
    stats.n_p = len(psi0.amplitudes)
    stats.wall_time = time.perf_counter() - start
    terms = [PauliTerm.from_weight(x, z, w) for (x, z), w in sorted(strings.items())]
    logger.debug('instance %d: n_b=%d n_p=%d live=%d', inst.instance_id, stats.n_b, stats.n_p, stats.max_live_terms)
    return BranchResult(psi0, psi1, stats, terms, inst.measurement_qubit)


def heisenberg_terms(inst: CircuitInstance, settings: config.Settings | None = None) -> list:
    return run_branching(inst, 'breadth', settings).terms


def otoc_from_strings(source, measurement_qubit: int | None = None, path: str = 'state') -> OtocValue:
    '''OTOC from a branching result, a (psi_0, psi_1) pair or a list of terms.

    ``path='state'`` evaluates Re<psi_1|psi_0>. ``path='trace'`` evaluates
    sum_s w_s^2 kappa(op of s on Q1), the infinite-temperature value; the two agree
    when no two strings share a Z mask with equal kappa, in particular for a single
    string.
    '''
    if isinstance(source, BranchResult):
        terms, states, measurement_qubit = source.terms, (source.psi0, source.psi1), source.measurement_qubit
    elif isinstance(source, tuple) and len(source) == 2 and isinstance(source[0], SparseState):
        terms, states = None, source
    else:
        terms, states = list(source), None

    if path == 'trace':
        if terms is None or measurement_qubit is None:
            raise ValueError("path='trace' needs Pauli terms and 'measurement_qubit'")
        value = sum(t.coeff ** 2 * KAPPA_OF_LABEL[t.label(measurement_qubit)] for t in terms)
    elif path == 'state':
        if states is None:
            if measurement_qubit is None:
                raise ValueError("'measurement_qubit' is required to build states from terms")
            strings = {(t.x_mask, t.z_mask): t.weight for t in terms}
            states = _states_from_strings(strings, 0, measurement_qubit, 0.0)
        psi0, psi1 = states
        value = psi1.inner(psi0).real
    else:
        raise ValueError(f"'path' must be 'state' or 'trace', got {path!r}")
    return OtocValue(float(np.clip(value, -1.0, 1.0)))


def np_count(inst: CircuitInstance, mode: str = 'breadth', settings: config.Settings | None = None) -> int:
    return run_branching(inst, mode, settings).stats.n_p


def dump_sparse_state(state: SparseState, path) -> None:
    with open(path, 'w', encoding='utf-8') as fh:
        for b in sorted(state.amplitudes):
            a = state.amplitudes[b]
            fh.write(f'{b:x} {a.real!r} {a.imag!r}\n')
