'''Gates, coupling graphs, random circuit ensembles, inversion and light-cone filtering.

Conventions
-----------
* Basis index of an n-qubit state: qubit 0 is the least significant bit.
* Two-qubit gate matrices use the basis {00, 01, 10, 11} where the left bit is
  ``targets[0]``.
* Square roots of Pauli axes: sqrt(A) = exp(-i pi/4 A), with W = (X+Y)/sqrt2 and
  V = (X-Y)/sqrt2.
* Z(phi) = exp(-i phi/2 Z), serialized as ``RZ``.
'''

import dataclasses
import enum
import json
import logging
import math
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .errors import CircuitSpecError, InversionError, ManifestError

logger = logging.getLogger(__name__)

# ------------------------------------------------------------------
# Pauli algebra
# ------------------------------------------------------------------
I2 = np.eye(2, dtype=complex)
PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
PZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_MATRICES = {'I': I2, 'X': PX, 'Y': PY, 'Z': PZ}
PAULI_LABELS = ('I', 'X', 'Y', 'Z')

AXES = {
    'X': PX,
    'Y': PY,
    'W': (PX + PY) / math.sqrt(2),
    'V': (PX - PY) / math.sqrt(2),
}

CLIFFORD_ROOTS = ('SQRT_X', 'SQRT_X_INV', 'SQRT_Y', 'SQRT_Y_INV')
NON_CLIFFORD_ROOTS = ('SQRT_W', 'SQRT_W_INV', 'SQRT_V', 'SQRT_V_INV')
UNIVERSAL_ROOTS = CLIFFORD_ROOTS + NON_CLIFFORD_ROOTS
PAULI_GATES = ('X', 'Y', 'Z')
TWO_QUBIT_NAMES = ('ISWAP', 'SQRT_ISWAP', 'FSIM', 'CZ')
SINGLE_QUBIT_NAMES = UNIVERSAL_ROOTS + PAULI_GATES + ('RZ',)

_INVERSE_ROOT = {}
for _name in UNIVERSAL_ROOTS:
    _INVERSE_ROOT[_name] = _name[:-4] if _name.endswith('_INV') else _name + '_INV'


def pauli_string_matrix(labels) -> np.ndarray:
    '''Kronecker product of Pauli labels, first label on the most significant bit.'''
    out = np.ones((1, 1), dtype=complex)
    for label in labels:
        out = np.kron(out, PAULI_MATRICES[PAULI_LABELS[label] if isinstance(label, (int, np.integer)) else label])
    return out


# ------------------------------------------------------------------
# FSIM family
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class FsimParams:
    theta: float
    phi: float = 0.0
    delta_plus: float = 0.0
    delta_minus: float = 0.0
    delta_minus_off: float = 0.0

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not math.isfinite(value):
                raise ValueError(f"'{field.name}' must be finite, got {value!r}")
            object.__setattr__(self, field.name, float(value))

    @property
    def theta_only(self) -> bool:
        return self.phi == 0 and self.delta_plus == 0 and self.delta_minus == 0 and self.delta_minus_off == 0

    def conjugate(self) -> 'FsimParams':
        '''Parameters of the exact inverse (conjugate transpose).'''
        return FsimParams(-self.theta, -self.phi, -self.delta_plus, -self.delta_minus, self.delta_minus_off)

    def to_dict(self) -> dict:
        return {
            'theta': self.theta,
            'phi': self.phi,
            'dp': self.delta_plus,
            'dm': self.delta_minus,
            'dmo': self.delta_minus_off,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'FsimParams':
        return cls(
            float(data['theta']),
            float(data.get('phi', 0.0)),
            float(data.get('dp', 0.0)),
            float(data.get('dm', 0.0)),
            float(data.get('dmo', 0.0)),
        )


ISWAP_PARAMS = FsimParams(math.pi / 2)
SQRT_ISWAP_PARAMS = FsimParams(math.pi / 4)


def fsim_matrix(p: FsimParams) -> np.ndarray:
    c, s = math.cos(p.theta), math.sin(p.theta)
    dp, dm, dmo = p.delta_plus, p.delta_minus, p.delta_minus_off
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = 1.0
    u[1, 1] = np.exp(1j * (dp + dm)) * c
    u[1, 2] = -1j * np.exp(1j * (dp - dmo)) * s
    u[2, 1] = -1j * np.exp(1j * (dp + dmo)) * s
    u[2, 2] = np.exp(1j * (dp - dm)) * c
    u[3, 3] = np.exp(1j * (2 * dp - p.phi))
    return u


def pauli_error_rate(u_actual: np.ndarray, u_target: np.ndarray) -> float:
    '''Pauli error rate 1 - |tr(Ua^dag Ut)|^2 / d^2 between two unitaries.'''
    u_actual = np.asarray(u_actual)
    u_target = np.asarray(u_target)
    if u_actual.shape != u_target.shape or u_actual.shape[0] != u_actual.shape[1]:
        raise ValueError(f"'u_actual' and 'u_target' must be equal square matrices, got {u_actual.shape} and {u_target.shape}")
    d = u_actual.shape[0]
    overlap = np.trace(u_actual.conj().T @ u_target)
    return float(min(1.0, max(0.0, 1.0 - abs(overlap) ** 2 / d ** 2)))


# ------------------------------------------------------------------
# Gates
# ------------------------------------------------------------------
@lru_cache(maxsize=None)
def _gate_matrix(name: str, angle: float | None, fsim: FsimParams | None) -> np.ndarray:
    if name in UNIVERSAL_ROOTS:
        axis = AXES[name[5]]
        sign = -1.0 if name.endswith('_INV') else 1.0
        m = expm(-1j * sign * math.pi / 4 * axis)
    elif name == 'RZ':
        m = np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])
    elif name in PAULI_GATES:
        m = PAULI_MATRICES[name].copy()
    elif name == 'CZ':
        m = np.diag([1, 1, 1, -1]).astype(complex)
    elif name == 'ISWAP':
        m = fsim_matrix(ISWAP_PARAMS)
    elif name == 'SQRT_ISWAP':
        m = fsim_matrix(SQRT_ISWAP_PARAMS)
    else:
        m = fsim_matrix(fsim)
    m.flags.writeable = False
    return m


@dataclasses.dataclass(frozen=True)
class Gate:
    name: str
    targets: tuple
    angle: float | None = None
    fsim: FsimParams | None = None

    def __post_init__(self):
        object.__setattr__(self, 'targets', tuple(int(t) for t in self.targets))
        if self.name in SINGLE_QUBIT_NAMES:
            arity = 1
        elif self.name in TWO_QUBIT_NAMES:
            arity = 2
        else:
            raise ValueError(f"unknown gate name {self.name!r}")
        if len(self.targets) != arity or len(set(self.targets)) != arity:
            raise ValueError(f"gate {self.name} needs {arity} distinct targets, got {self.targets}")
        if self.name == 'RZ':
            if self.angle is None or not math.isfinite(self.angle):
                raise ValueError("'angle' is required for RZ")
            object.__setattr__(self, 'angle', float(self.angle))
        if self.name == 'FSIM' and self.fsim is None:
            raise ValueError("'fsim' params are required for FSIM")

    @property
    def matrix(self) -> np.ndarray:
        return _gate_matrix(self.name, self.angle, self.fsim)

    @property
    def is_two_qubit(self) -> bool:
        return len(self.targets) == 2

    @property
    def params(self) -> FsimParams | None:
        if self.name == 'ISWAP':
            return ISWAP_PARAMS
        if self.name == 'SQRT_ISWAP':
            return SQRT_ISWAP_PARAMS
        return self.fsim

    @property
    def is_clifford(self) -> bool:
        return _is_clifford(self.name, self.angle, self.fsim)

    def to_dict(self) -> dict:
        out = {'name': self.name, 'targets': list(self.targets)}
        if self.angle is not None:
            out['angle'] = self.angle
        if self.fsim is not None:
            out['fsim'] = self.fsim.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> 'Gate':
        fsim = FsimParams.from_dict(data['fsim']) if data.get('fsim') is not None else None
        return cls(data['name'], tuple(data['targets']), data.get('angle'), fsim)


@lru_cache(maxsize=None)
def _transfer_matrix(name: str, angle: float | None, fsim: FsimParams | None) -> np.ndarray:
    g = _gate_matrix(name, angle, fsim)
    k = 1 if g.shape[0] == 2 else 2
    basis = [pauli_string_matrix(labels) for labels in np.ndindex(*(4,) * k)]
    d = 2 ** k
    r = np.empty((4 ** k, 4 ** k))
    for b, pb in enumerate(basis):
        image = g.conj().T @ pb @ g
        for a, pa in enumerate(basis):
            r[a, b] = np.trace(pa @ image).real / d
    r[np.abs(r) < 1e-13] = 0.0
    r.flags.writeable = False
    return r


def pauli_transfer_matrix(gate: Gate) -> np.ndarray:
    '''Real matrix R with g^dag P_b g = sum_a R[a, b] P_a over the local Pauli basis.

    Local index of a two-qubit Pauli is 4 * label(targets[0]) + label(targets[1])
    with labels I=0, X=1, Y=2, Z=3.
    '''
    return _transfer_matrix(gate.name, gate.angle, gate.fsim)


@lru_cache(maxsize=None)
def _is_clifford(name: str, angle: float | None, fsim: FsimParams | None) -> bool:
    r = _transfer_matrix(name, angle, fsim)
    nonzero = np.abs(r) > 1e-9
    return bool(np.all(nonzero.sum(axis=0) == 1) and np.allclose(np.abs(r[nonzero]), 1.0, atol=1e-9))


# ------------------------------------------------------------------
# Inversion
# ------------------------------------------------------------------
class InversionMode(str, enum.Enum):
    STRICT = 'strict'
    IDEAL = 'ideal'
    PHYSICAL = 'physical'


def invert_gate(g: Gate, mode: InversionMode = InversionMode.STRICT) -> tuple:
    '''Gates, in time order, that compose to the inverse of ``g``.

    Theta-only FSIM gates use the Z-sandwich
    Z1(pi/2) Z2(-pi/2) G Z1(-pi/2) Z2(pi/2). In PHYSICAL mode the sandwich is applied
    to any FSIM, which realizes U(-theta, phi) instead of the inverse when phi != 0.
    '''
    mode = InversionMode(mode)
    if g.name in UNIVERSAL_ROOTS:
        return (Gate(_INVERSE_ROOT[g.name], g.targets),)
    if g.name == 'RZ':
        return (Gate('RZ', g.targets, -g.angle),)
    if g.name in PAULI_GATES or g.name == 'CZ':
        return (g,)

    params = g.params
    if mode is InversionMode.IDEAL and not params.theta_only:
        return (Gate('FSIM', g.targets, fsim=params.conjugate()),)
    if mode is InversionMode.STRICT and not params.theta_only:
        raise InversionError(
            f'{g.name} on {g.targets} has phi={params.phi:g} or nonzero single-qubit phases; '
            'no Z-sandwich inverse exists (use ideal or physical inversion)'
        )
    q1, q2 = g.targets
    return (
        Gate('RZ', (q1,), -math.pi / 2),
        Gate('RZ', (q2,), math.pi / 2),
        g,
        Gate('RZ', (q1,), math.pi / 2),
        Gate('RZ', (q2,), -math.pi / 2),
    )


def invert_moments(moments, mode: InversionMode = InversionMode.STRICT) -> tuple:
    '''Reverse a moment list and invert every gate; sandwiches split into three layers.'''
    out = []
    for moment in reversed(moments):
        pre, core, post = [], [], []
        for g in moment:
            seq = invert_gate(g, mode)
            if len(seq) == 1:
                core.append(seq[0])
            else:
                pre.extend(seq[:2])
                core.append(seq[2])
                post.extend(seq[3:])
        out.extend(tuple(layer) for layer in (pre, core, post) if layer)
    return tuple(out)


def inverse_is_exact(moments, mode: InversionMode) -> bool:
    if InversionMode(mode) is not InversionMode.PHYSICAL:
        return True
    return all(g.params.theta_only for moment in moments for g in moment if g.is_two_qubit and g.name != 'CZ')


# ------------------------------------------------------------------
# Coupling graphs
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class CouplingGraph:
    n_qubits: int
    edges: tuple
    schedule: tuple

    def __post_init__(self):
        object.__setattr__(self, 'edges', tuple(tuple(int(q) for q in e) for e in self.edges))
        object.__setattr__(self, 'schedule', tuple(tuple(int(i) for i in phase) for phase in self.schedule))
        if self.n_qubits < 1:
            raise CircuitSpecError(f"'n_qubits' must be positive, got {self.n_qubits}")
        for a, b in self.edges:
            if a == b or not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise CircuitSpecError(f'invalid edge ({a}, {b}) for {self.n_qubits} qubits')
        for k, phase in enumerate(self.schedule):
            used = set()
            for i in phase:
                if not 0 <= i < len(self.edges):
                    raise CircuitSpecError(f'schedule phase {k} references missing edge {i}')
                pair = set(self.edges[i])
                if used & pair:
                    raise CircuitSpecError(f'schedule phase {k} uses a qubit twice')
                used |= pair

    def phase_pairs(self, cycle: int) -> tuple:
        if not self.schedule:
            return ()
        return tuple(self.edges[i] for i in self.schedule[cycle % len(self.schedule)])

    def connected(self, a: int, b: int) -> bool:
        adjacency = {q: set() for q in range(self.n_qubits)}
        for i, j in self.edges:
            adjacency[i].add(j)
            adjacency[j].add(i)
        seen, frontier = {a}, [a]
        while frontier:
            q = frontier.pop()
            for nxt in adjacency[q] - seen:
                seen.add(nxt)
                frontier.append(nxt)
        return b in seen

    def to_dict(self) -> dict:
        return {
            'n_qubits': self.n_qubits,
            'edges': [list(e) for e in self.edges],
            'schedule': [list(p) for p in self.schedule],
        }


def chain_graph(n_qubits: int) -> CouplingGraph:
    '''1D brickwork: pairs (j, j+1) with even j in the first phase, odd j in the second.'''
    edges = [(j, j + 1) for j in range(n_qubits - 1)]
    even = [k for k, (j, _) in enumerate(edges) if j % 2 == 0]
    odd = [k for k, (j, _) in enumerate(edges) if j % 2 == 1]
    return CouplingGraph(n_qubits, edges, [p for p in (even, odd) if p])


def ladder_graph(leg_length: int = 8, n_rungs: int = 5) -> CouplingGraph:
    '''Two chains of ``leg_length`` qubits joined by ``n_rungs`` cross links.

    Qubits 0..L-1 form the first leg, L..2L-1 the second. Phases: even leg bonds,
    odd leg bonds, rungs.
    '''
    if not 1 <= n_rungs <= leg_length:
        raise CircuitSpecError(f"'n_rungs' must lie in [1, {leg_length}], got {n_rungs}")
    L = leg_length
    edges, even, odd, rungs = [], [], [], []
    for offset in (0, L):
        for j in range(L - 1):
            (even if j % 2 == 0 else odd).append(len(edges))
            edges.append((offset + j, offset + j + 1))
    for pos in sorted(set(np.round(np.linspace(0, L - 1, n_rungs)).astype(int).tolist())):
        rungs.append(len(edges))
        edges.append((pos, L + pos))
    return CouplingGraph(2 * L, edges, [p for p in (even, odd, rungs) if p])


def grid_graph(rows: int, cols: int) -> CouplingGraph:
    '''Square grid, row-major numbering, four phases (horizontal even/odd, vertical even/odd).'''
    edges, phases = [], [[], [], [], []]
    for r in range(rows):
        for c in range(cols):
            q = r * cols + c
            if c + 1 < cols:
                phases[c % 2].append(len(edges))
                edges.append((q, q + 1))
            if r + 1 < rows:
                phases[2 + r % 2].append(len(edges))
                edges.append((q, q + cols))
    return CouplingGraph(rows * cols, edges, [p for p in phases if p])


# ------------------------------------------------------------------
# Circuit specifications and instances
# ------------------------------------------------------------------
class Ensemble(str, enum.Enum):
    UNIVERSAL8 = 'universal8'
    CLIFFORD4 = 'clifford4'
    RANDOM_Z = 'random_z'


_TWO_QUBIT_JSON = {'ISWAP': 'ISWAP', 'SQRT_ISWAP': 'SQISWAP', 'CZ': 'CZ'}
_TWO_QUBIT_FROM_JSON = {v: k for k, v in _TWO_QUBIT_JSON.items()}


@dataclasses.dataclass(frozen=True)
class CircuitSpec:
    graph: CouplingGraph
    n_cycles: int
    two_qubit: str = 'ISWAP'
    fsim: FsimParams | None = None
    ensemble: Ensemble = Ensemble.UNIVERSAL8
    n_nonclifford: int | None = None
    butterfly_qubit: int = 1
    butterfly_pauli: str = 'X'
    measurement_qubit: int = 0
    seed: int = 0
    inversion: InversionMode = InversionMode.STRICT

    def __post_init__(self):
        object.__setattr__(self, 'ensemble', Ensemble(self.ensemble))
        object.__setattr__(self, 'inversion', InversionMode(self.inversion))

    @property
    def n_qubits(self) -> int:
        return self.graph.n_qubits

    def validate(self) -> 'CircuitSpec':
        n = self.graph.n_qubits
        if self.n_cycles < 0:
            raise CircuitSpecError(f"'n_cycles' must be non-negative, got {self.n_cycles}")
        for field in ('butterfly_qubit', 'measurement_qubit'):
            q = getattr(self, field)
            if not 0 <= q < n:
                raise CircuitSpecError(f"'{field}'={q} outside 0..{n - 1}")
        if self.butterfly_qubit == self.measurement_qubit:
            raise CircuitSpecError('butterfly and measurement qubits must differ')
        if self.butterfly_pauli not in PAULI_GATES:
            raise CircuitSpecError(f"'butterfly_pauli' must be X, Y or Z, got {self.butterfly_pauli!r}")
        if self.two_qubit not in TWO_QUBIT_NAMES:
            raise CircuitSpecError(f"unknown two-qubit kind {self.two_qubit!r}")
        if self.two_qubit == 'FSIM' and self.fsim is None:
            raise CircuitSpecError("two_qubit='FSIM' needs 'fsim' params")
        if self.n_nonclifford is not None:
            if self.ensemble is Ensemble.CLIFFORD4 and self.n_nonclifford != 0:
                raise CircuitSpecError('the Clifford4 ensemble has no non-Clifford gates')
            if self.ensemble is Ensemble.RANDOM_Z:
                raise CircuitSpecError("'n_nonclifford' applies to the Universal8 ensemble only")
            slots = n * self.n_cycles
            if not 0 <= self.n_nonclifford <= slots:
                raise CircuitSpecError(f'N_D={self.n_nonclifford} exceeds the {slots} single-qubit slots of U')
        if not self.graph.connected(self.butterfly_qubit, self.measurement_qubit):
            raise CircuitSpecError(
                f'butterfly qubit {self.butterfly_qubit} and measurement qubit {self.measurement_qubit} are disconnected'
            )
        if not 0 <= self.seed < 2 ** 64:
            raise CircuitSpecError(f"'seed' must be a 64-bit unsigned integer, got {self.seed}")
        return self

    def with_seed(self, seed: int) -> 'CircuitSpec':
        return dataclasses.replace(self, seed=int(seed))

    def two_qubit_gate(self, a: int, b: int) -> Gate:
        return Gate(self.two_qubit, (a, b), fsim=self.fsim if self.two_qubit == 'FSIM' else None)

    def to_dict(self) -> dict:
        two_qubit = {'fsim': self.fsim.to_dict()} if self.two_qubit == 'FSIM' else _TWO_QUBIT_JSON[self.two_qubit]
        out = self.graph.to_dict()
        out.update({
            'cycles': self.n_cycles,
            'two_qubit': two_qubit,
            'ensemble': self.ensemble.value,
            'n_d': self.n_nonclifford,
            'butterfly': {'qubit': self.butterfly_qubit, 'pauli': self.butterfly_pauli},
            'measure': {'qubit': self.measurement_qubit},
            'seed': self.seed,
            'inversion': self.inversion.value,
        })
        return out

    @classmethod
    def from_dict(cls, data: dict) -> 'CircuitSpec':
        field = None
        try:
            field = 'n_qubits'
            n_qubits = int(data['n_qubits'])
            field = 'edges'
            edges = [tuple(e) for e in data['edges']]
            field = 'schedule'
            schedule = data.get('schedule')
            if schedule is None:
                schedule = [list(range(len(edges)))]
            graph = CouplingGraph(n_qubits, edges, schedule)
            field = 'two_qubit'
            raw = data.get('two_qubit', 'ISWAP')
            if isinstance(raw, dict):
                two_qubit, fsim = 'FSIM', FsimParams.from_dict(raw['fsim'])
            else:
                two_qubit, fsim = _TWO_QUBIT_FROM_JSON[raw], None
            field = 'cycles'
            n_cycles = int(data['cycles'])
            field = 'ensemble'
            ensemble = Ensemble(data.get('ensemble', 'universal8'))
            field = 'n_d'
            n_d = data.get('n_d')
            n_d = None if n_d is None else int(n_d)
            field = 'butterfly'
            butterfly = data.get('butterfly', {})
            field = 'measure'
            measure = data.get('measure', {})
            field = 'seed'
            seed = int(data.get('seed', 0))
            field = 'inversion'
            inversion = InversionMode(data.get('inversion', 'strict'))
            spec = cls(
                graph, n_cycles, two_qubit, fsim, ensemble, n_d,
                int(butterfly.get('qubit', 1)), str(butterfly.get('pauli', 'X')),
                int(measure.get('qubit', 0)), seed, inversion,
            )
        except CircuitSpecError as e:
            raise ManifestError(str(e), field=field) from e
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f'invalid circuit field {field!r}: {e}', field=field) from e
        return spec


def derive_seed(seed: int, index: int) -> int:
    '''Independent 64-bit child seed for ensemble member ``index``.'''
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(index),)).generate_state(1, dtype=np.uint64)[0])


@dataclasses.dataclass(frozen=True)
class CircuitInstance:
    spec: CircuitSpec
    forward: tuple
    backward: tuple
    butterfly: Gate | None
    instance_id: int = 0
    exact_inverse: bool = True
    mirrored: bool = True
    filtered: bool = False

    @property
    def n_qubits(self) -> int:
        return self.spec.n_qubits

    @property
    def seed(self) -> int:
        return self.spec.seed

    @property
    def measurement_qubit(self) -> int:
        return self.spec.measurement_qubit

    @property
    def n_s(self) -> int:
        return sum(g.is_two_qubit for moment in self.forward + self.backward for g in moment)

    @property
    def n_d(self) -> int:
        return sum(not g.is_two_qubit and not g.is_clifford for moment in self.forward for g in moment)

    def without_butterfly(self) -> 'CircuitInstance':
        return dataclasses.replace(self, butterfly=None)

    def moments(self) -> tuple:
        middle = ((self.butterfly,),) if self.butterfly is not None else ()
        return self.forward + middle + self.backward

    def to_dict(self) -> dict:
        return {
            'spec': self.spec.to_dict(),
            'instance_id': self.instance_id,
            'forward': [[g.to_dict() for g in m] for m in self.forward],
            'backward': [[g.to_dict() for g in m] for m in self.backward],
            'butterfly': None if self.butterfly is None else self.butterfly.to_dict(),
            'exact_inverse': self.exact_inverse,
            'mirrored': self.mirrored,
            'filtered': self.filtered,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))

    @classmethod
    def from_dict(cls, data: dict) -> 'CircuitInstance':
        field = 'spec'
        try:
            spec = CircuitSpec.from_dict(data['spec'])
            field = 'forward'
            forward = tuple(tuple(Gate.from_dict(g) for g in m) for m in data['forward'])
            field = 'backward'
            backward = tuple(tuple(Gate.from_dict(g) for g in m) for m in data['backward'])
            field = 'butterfly'
            butterfly = None if data.get('butterfly') is None else Gate.from_dict(data['butterfly'])
        except ManifestError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f'invalid instance field {field!r}: {e}', field=field) from e
        return cls(
            spec, forward, backward, butterfly,
            int(data.get('instance_id', 0)),
            bool(data.get('exact_inverse', True)),
            bool(data.get('mirrored', True)),
            bool(data.get('filtered', False)),
        )

    @classmethod
    def from_json(cls, text: str) -> 'CircuitInstance':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ManifestError(f'malformed instance JSON: {e.msg}', offset=e.pos) from e
        return cls.from_dict(data)


def _single_qubit_layers(spec: CircuitSpec, rng: np.random.Generator) -> list:
    n, k = spec.n_qubits, spec.n_cycles
    if spec.ensemble is Ensemble.RANDOM_Z:
        angles = rng.uniform(-math.pi, math.pi, size=(k, n))
        return [[Gate('RZ', (q,), float(angles[c, q])) for q in range(n)] for c in range(k)]

    if spec.ensemble is Ensemble.CLIFFORD4:
        picks = rng.integers(0, 4, size=(k, n))
        names = np.array(CLIFFORD_ROOTS, dtype=object)[picks]
    elif spec.n_nonclifford is None:
        picks = rng.integers(0, 8, size=(k, n))
        names = np.array(UNIVERSAL_ROOTS, dtype=object)[picks]
    else:
        picks = rng.integers(0, 4, size=(k, n))
        names = np.array(CLIFFORD_ROOTS, dtype=object)[picks]
        slots = rng.choice(k * n, size=spec.n_nonclifford, replace=False)
        flat = names.reshape(-1)
        flat[slots] = np.array(NON_CLIFFORD_ROOTS, dtype=object)[rng.integers(0, 4, size=len(slots))]
    return [[Gate(str(names[c, q]), (q,)) for q in range(n)] for c in range(k)]


def assemble_instance(spec: CircuitSpec, forward, instance_id: int = 0) -> CircuitInstance:
    '''Instance from explicit U moments; U is inverted according to ``spec.inversion``.'''
    forward = tuple(tuple(m) for m in forward if m)
    backward = invert_moments(forward, spec.inversion)
    return CircuitInstance(
        spec=spec,
        forward=forward,
        backward=backward,
        butterfly=Gate(spec.butterfly_pauli, (spec.butterfly_qubit,)),
        instance_id=instance_id,
        exact_inverse=inverse_is_exact(forward, spec.inversion),
    )


def build_random_instance(spec: CircuitSpec, instance_id: int = 0) -> CircuitInstance:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    singles = _single_qubit_layers(spec, rng)
    forward = []
    for cycle in range(spec.n_cycles):
        forward.append(tuple(singles[cycle]))
        forward.append(tuple(spec.two_qubit_gate(a, b) for a, b in spec.graph.phase_pairs(cycle)))
    inst = assemble_instance(spec, forward, instance_id)
    logger.debug('built instance %d: %d qubits, %d cycles, n_d=%d', instance_id, spec.n_qubits, spec.n_cycles, inst.n_d)
    return inst


def build_ensemble(spec: CircuitSpec, n_instances: int) -> list:
    return [build_random_instance(spec.with_seed(derive_seed(spec.seed, i)), instance_id=i) for i in range(n_instances)]


def reference_clifford_instance(inst: CircuitInstance, seed: int) -> CircuitInstance:
    '''Same circuit with every W/V root replaced by a random Clifford root.'''
    rng = np.random.default_rng(seed)
    forward = []
    for moment in inst.forward:
        forward.append(tuple(
            Gate(CLIFFORD_ROOTS[int(rng.integers(0, 4))], g.targets) if g.name in NON_CLIFFORD_ROOTS else g
            for g in moment
        ))
    ref = assemble_instance(inst.spec, forward, inst.instance_id)
    return dataclasses.replace(ref, butterfly=inst.butterfly)


# ------------------------------------------------------------------
# Light cones
# ------------------------------------------------------------------
def _cone_pass(moments, seed_qubits) -> tuple:
    '''Keep gates touching the growing support, walking ``moments`` in the given order.'''
    support = set(seed_qubits)
    kept = []
    for moment in moments:
        layer = []
        for g in moment:
            if support.intersection(g.targets):
                layer.append(g)
        for g in layer:
            support.update(g.targets)
        kept.append(tuple(layer))
    return kept


def _flatten(moments) -> tuple:
    return tuple(g for m in moments for g in m)


def lightcone_filter(inst: CircuitInstance, measurement_cone: bool = True) -> CircuitInstance:
    '''Drop gates that cannot influence the OTOC.

    First the gates of U outside the butterfly's backward cone, together with their
    mirror images in U^dag (only when U^dag inverts U exactly). Then, if
    ``measurement_cone``, every gate outside the backward cone of the measured qubit
    taken from the end of U^dag. The butterfly itself is always kept.
    '''
    forward, backward = inst.forward, inst.backward
    mirrored = inst.mirrored
    if inst.butterfly is not None and inst.exact_inverse and inst.mirrored:
        kept = _cone_pass(reversed(forward), inst.butterfly.targets)
        forward = tuple(m for m in reversed(kept) if m)
        backward = invert_moments(forward, inst.spec.inversion)

    if measurement_cone:
        middle = ((inst.butterfly,),) if inst.butterfly is not None else ()
        sequence = forward + middle + backward
        kept = list(reversed(_cone_pass(reversed(sequence), (inst.measurement_qubit,))))
        if middle:
            kept[len(forward)] = middle[0]
        new_forward = tuple(m for m in kept[:len(forward)] if m)
        new_backward = tuple(m for m in kept[len(forward) + len(middle):] if m)
        mirrored = mirrored and _flatten(new_backward) == _flatten(invert_moments(new_forward, inst.spec.inversion))
        forward, backward = new_forward, new_backward

    out = dataclasses.replace(inst, forward=forward, backward=backward, mirrored=mirrored, filtered=True)
    logger.debug('light-cone filter on instance %d: n_s %d -> %d', inst.instance_id, inst.n_s, out.n_s)
    return out


def lightcone_profile(graph: CouplingGraph, source: int, n_cycles: int, reverse: bool = False) -> list:
    '''Reachable qubit sets after 0..n_cycles cycles of the schedule.

    With ``reverse`` the schedule phases are walked from cycle n_cycles-1 down to 0,
    the order in which a butterfly placed after U sees them.
    '''
    reach = {source}
    out = [frozenset(reach)]
    for step in range(n_cycles):
        cycle = n_cycles - 1 - step if reverse else step
        for a, b in graph.phase_pairs(cycle):
            if a in reach or b in reach:
                reach.update((a, b))
        out.append(frozenset(reach))
    return out
