'''Classical population dynamics for circuit-averaged OTOCs.

Each site carries the averaged two-copy state of the Heisenberg-evolved butterfly
operator. Cycles are processed in Heisenberg order, last cycle first: every step
applies the two-qubit layer of that cycle to the scheduled pairs and then the
single-qubit averaging to every site. The OTOC at depth t is read off the
measurement site after t steps.

Bases
-----
* BINARY: vacuum and bond, bond = (XX + YY + ZZ)/3. Pair updates follow Omega(theta),
  single-qubit averaging is already folded into it.
* LAMBDA: {II, XX, YY, ZZ}. Exact for iSWAP circuits with i.i.d. single-qubit layers;
  other swap gates move a pair to each Pauli image with weight |R[a, b]|^2.
* XI: {II, (YY+ZZ)/2, (XX+ZZ)/2, (XX+YY)/2}, the images of the Lambda states under
  one Clifford averaging.
'''

import dataclasses
import enum
import logging
import math
import typing

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import config
from .circuit_model import (
    CLIFFORD_ROOTS, PAULI_LABELS, PAULI_MATRICES, UNIVERSAL_ROOTS, CircuitSpec, CouplingGraph, Ensemble, FsimParams,
    Gate, InversionMode, pauli_transfer_matrix,
)
from .errors import CircuitSpecError

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['cycle', 'F_vacuum', 'F_bond', 'c_bar_0z', 'c_bar_zz', 'normalized', 'stderr_0z', 'stderr_zz']

# quadrature points for the uniform Z-rotation ensemble; exact for the degree-2 averages used here
_RANDOM_Z_POINTS = 8


# ------------------------------------------------------------------
# Matrices
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class TransitionMatrix:
    '''Row-stochastic matrix over pair states (or single-site states).'''

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f'transition matrix must be square, got shape {m.shape}')
        if np.any(m < -1e-15):
            raise ValueError('transition matrix has negative entries')
        sums = m.sum(axis=1)
        if not np.allclose(sums, 1.0, rtol=0, atol=1e-12):
            raise ValueError(f'rows must sum to 1, worst row sums to {sums[np.argmax(np.abs(sums - 1))]:.15g}')
        m = np.clip(m, 0.0, None)
        m.setflags(write=False)
        object.__setattr__(self, 'entries', m)

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    @property
    def cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.entries, axis=1)
        cum[:, -1] = 1.0
        return cum

    def __matmul__(self, other: 'TransitionMatrix') -> 'TransitionMatrix':
        return TransitionMatrix(self.entries @ other.entries)


def _swap_rates(theta: float) -> tuple:
    s2 = math.sin(theta) ** 2
    b = (0.5 * math.sin(2 * theta) ** 2 + 2 * s2) / 3
    return s2, b


def omega_theta(theta: float) -> TransitionMatrix:
    '''Binary pair update for swap angle theta; states (00), (01), (10), (11), 1 = bond.'''
    s2, b = _swap_rates(theta)
    a = s2 ** 2 / 3
    return TransitionMatrix([
        [1, 0, 0, 0],
        [0, 1 - a - b, a, b],
        [0, a, 1 - a - b, b],
        [0, b / 3, b / 3, 1 - 2 * b / 3],
    ])


def omega_inversion_error(theta: float, phi: float) -> TransitionMatrix:
    '''Binary pair update when U(-theta, phi) stands in for the inverse of U(theta, phi).'''
    _, b = _swap_rates(theta)
    c2, s2 = math.cos(phi) ** 2, math.sin(phi) ** 2
    a = (c2 * math.sin(theta) ** 4 + s2 * math.cos(theta) ** 4) / 3
    return TransitionMatrix([
        [c2, 0, 0, s2],
        [0, 1 - a - b, a, b],
        [0, a, 1 - a - b, b],
        [s2 / 9, b / 3, b / 3, (8 + c2) / 9 - 2 * b / 3],
    ])


# ------------------------------------------------------------------
# Site bases
# ------------------------------------------------------------------
class SiteBasis(str, enum.Enum):
    BINARY = 'binary'
    XI = 'xi'
    LAMBDA = 'lambda'

    @property
    def labels(self) -> tuple:
        return {
            SiteBasis.BINARY: ('vacuum', 'bond'),
            SiteBasis.XI: ('1', 'YY+ZZ', 'XX+ZZ', 'XX+YY'),
            SiteBasis.LAMBDA: ('II', 'XX', 'YY', 'ZZ'),
        }[self]

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def expansion(self) -> np.ndarray:
        '''Rows: each basis state as a probability vector over {II, XX, YY, ZZ}.'''
        if self is SiteBasis.BINARY:
            return np.array([[1, 0, 0, 0], [0, 1 / 3, 1 / 3, 1 / 3]])
        if self is SiteBasis.XI:
            return np.array([[1, 0, 0, 0], [0, 0, 0.5, 0.5], [0, 0.5, 0, 0.5], [0, 0.5, 0.5, 0]])
        return np.eye(4)


def _ensemble_gates(ensemble: Ensemble) -> list:
    ensemble = Ensemble(ensemble)
    if ensemble is Ensemble.UNIVERSAL8:
        return [Gate(name, (0,)) for name in UNIVERSAL_ROOTS]
    if ensemble is Ensemble.CLIFFORD4:
        return [Gate(name, (0,)) for name in CLIFFORD_ROOTS]
    angles = np.linspace(-math.pi, math.pi, _RANDOM_Z_POINTS, endpoint=False)
    return [Gate('RZ', (0,), float(phi)) for phi in angles]


def site_average_matrix(ensemble: Ensemble) -> TransitionMatrix:
    '''Average of (g^dag a g) x (g^dag a g) over the ensemble, on the Lambda basis.

    Raises ValueError if the average leaves the Lambda span.
    '''
    rs = np.array([pauli_transfer_matrix(g) for g in _ensemble_gates(ensemble)])
    # second[b] = mean_g outer(R[:, b], R[:, b])
    second = np.einsum('gab,gcb->bac', rs, rs) / len(rs)
    off = second - np.einsum('bac,ac->bac', second, np.eye(4))
    if np.max(np.abs(off)) > 1e-12:
        raise ValueError(f'{Ensemble(ensemble).value} averaging does not close on the Lambda basis')
    return TransitionMatrix(np.einsum('baa->ba', second))


def _lambda_kappas() -> np.ndarray:
    z = PAULI_MATRICES['Z']
    return np.array([np.trace(z @ PAULI_MATRICES[p] @ z @ PAULI_MATRICES[p]).real / 2 for p in PAULI_LABELS])


def kappa_values(basis: SiteBasis) -> np.ndarray:
    '''Contribution of each site state on the measured qubit, tr(Z a Z a)/2 averaged over the state.'''
    return SiteBasis(basis).expansion @ _lambda_kappas()


def _reduction(basis: SiteBasis, ensemble: Ensemble) -> np.ndarray:
    '''Lambda state -> basis-state probabilities after one single-qubit averaging.'''
    m = site_average_matrix(ensemble).entries
    if basis is SiteBasis.LAMBDA:
        return m
    expansion = basis.expansion
    out = np.zeros((4, basis.size))
    for a in range(4):
        match = [k for k in range(basis.size) if np.allclose(expansion[k], m[a], atol=1e-12)]
        if not match:
            raise CircuitSpecError(f'{Ensemble(ensemble).value} averaging does not close on the {basis.value} basis')
        out[a, match[0]] = 1.0
    return out


def _swap_gate(two_qubit: str, fsim: FsimParams | None = None) -> Gate:
    if two_qubit == 'CZ':
        raise CircuitSpecError('population dynamics needs a swap-type two-qubit gate, got CZ')
    if two_qubit == 'FSIM' and fsim is None:
        raise CircuitSpecError("two_qubit='FSIM' needs 'fsim' params")
    return Gate(two_qubit, (0, 1), fsim=fsim if two_qubit == 'FSIM' else None)


def _pair_weights(gate: Gate) -> np.ndarray:
    '''Lambda pair -> Lambda pair probabilities |R[a, b]|^2; a permutation for Clifford gates.'''
    r = pauli_transfer_matrix(gate)
    return np.square(r).T


def refined_pair_matrix(basis: SiteBasis, ensemble: Ensemble = Ensemble.UNIVERSAL8, two_qubit: str = 'ISWAP',
                        fsim: FsimParams | None = None) -> TransitionMatrix:
    '''16x16 pair update: expand to Lambda pairs, conjugate through the gate, average both sites.

    Non-Clifford swap gates split a Pauli pair over several images with weights |R[a, b]|^2.
    '''
    basis, ensemble = SiteBasis(basis), Ensemble(ensemble)
    gate = _swap_gate(two_qubit, fsim)
    if basis is SiteBasis.BINARY:
        raise CircuitSpecError('the binary basis uses omega_theta, not a refined pair matrix')
    if basis is SiteBasis.XI and ensemble is not Ensemble.CLIFFORD4:
        raise CircuitSpecError(f'the xi basis describes the clifford4 ensemble, got {ensemble.value}')
    e = basis.expansion
    r = _reduction(basis, ensemble)
    return TransitionMatrix(np.kron(e, e) @ _pair_weights(gate) @ np.kron(r, r))


# ------------------------------------------------------------------
# Chains
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class PopulationChain:
    '''Pair update, idle-site update (None for identity), kappa and the butterfly's start state.'''

    basis: SiteBasis
    pair: TransitionMatrix
    idle: TransitionMatrix | None
    kappa: np.ndarray
    start_labels: dict

    def __post_init__(self):
        m = self.basis.size
        if self.pair.dimension != m * m:
            raise ValueError(f'pair matrix of dimension {self.pair.dimension} does not fit a {m}-state basis')
        if self.idle is not None and self.idle.dimension != m:
            raise ValueError(f'idle matrix of dimension {self.idle.dimension} does not fit a {m}-state basis')

    @property
    def n_states(self) -> int:
        return self.basis.size

    def initial_label(self, pauli: str) -> int:
        try:
            return self.start_labels[pauli]
        except KeyError:
            raise ValueError(f"butterfly Pauli must be X, Y or Z, got {pauli!r}") from None


def binary_chain(theta: float, phi: float = 0.0) -> PopulationChain:
    pair = omega_theta(theta) if phi == 0 else omega_inversion_error(theta, phi)
    return PopulationChain(SiteBasis.BINARY, pair, None, kappa_values(SiteBasis.BINARY), {'X': 1, 'Y': 1, 'Z': 1})


def refined_chain(basis: SiteBasis, ensemble: Ensemble = Ensemble.UNIVERSAL8, two_qubit: str = 'ISWAP',
                  fsim: FsimParams | None = None) -> PopulationChain:
    basis = SiteBasis(basis)
    pair = refined_pair_matrix(basis, ensemble, two_qubit, fsim)
    r = _reduction(basis, ensemble)
    idle = TransitionMatrix(basis.expansion @ r)
    if basis is SiteBasis.LAMBDA:
        start = {p: PAULI_LABELS.index(p) for p in 'XYZ'}
    else:
        start = {p: int(np.argmax(r[PAULI_LABELS.index(p)])) for p in 'XYZ'}
    return PopulationChain(basis, pair, idle, kappa_values(basis), start)


def chain_for_spec(spec: CircuitSpec) -> PopulationChain:
    '''The Lambda chain for i.i.d. single-qubit layers, else Omega(theta).

    Physical inversion of an FSIM with a conditional phase switches to the inversion-error matrix.
    '''
    gate = _swap_gate(spec.two_qubit, spec.fsim)
    params = gate.params
    if spec.two_qubit == 'FSIM' and spec.inversion is InversionMode.PHYSICAL and params.phi != 0:
        return binary_chain(params.theta, params.phi)
    iid = spec.ensemble is not Ensemble.UNIVERSAL8 or spec.n_nonclifford is None
    if iid:
        return refined_chain(SiteBasis.LAMBDA, spec.ensemble, spec.two_qubit, spec.fsim)
    return binary_chain(params.theta)


@dataclasses.dataclass(frozen=True)
class NoiseRates:
    '''Depolarizing probabilities: p1 per site per cycle, p2 per two-qubit gate.'''

    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for name in ('p1', 'p2'):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"'{name}' must lie in [0, 1], got {p}")

    @property
    def log_site(self) -> float:
        return -4.0 * self.p1 / 3.0

    @property
    def log_gate(self) -> float:
        return -16.0 * self.p2 / 15.0

    @property
    def active(self) -> bool:
        return self.p1 > 0 or self.p2 > 0


# ------------------------------------------------------------------
# Trajectories
# ------------------------------------------------------------------
def _sample(cumulative: np.ndarray, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = 1.0 - rng.random(states.shape)
    return (u[..., None] > cumulative[states]).sum(axis=-1).astype(np.int8)


@dataclasses.dataclass
class OccupancyTrajectory:
    '''A block of trajectories advanced in lockstep.'''

    sites: np.ndarray
    log_weight: np.ndarray
    rng_stream: np.random.Generator

    @classmethod
    def start(cls, n_trajectories: int, n_sites: int, butterfly_site: int, label: int,
              rng: np.random.Generator) -> 'OccupancyTrajectory':
        sites = np.zeros((n_trajectories, n_sites), dtype=np.int8)
        sites[:, butterfly_site] = label
        return cls(sites, np.zeros(n_trajectories), rng)

    @property
    def weight(self) -> np.ndarray:
        return np.exp(self.log_weight)

    def advance(self, chain: PopulationChain, pairs, noise: NoiseRates | None = None,
                pair_cum: np.ndarray | None = None, idle_cum: np.ndarray | None = None) -> None:
        '''One Heisenberg step: noise weights on the current configuration, then the updates.'''
        pair_cum = chain.pair.cumulative if pair_cum is None else pair_cum
        m = chain.n_states
        a = np.array([p[0] for p in pairs], dtype=int)
        b = np.array([p[1] for p in pairs], dtype=int)

        if noise is not None and noise.active:
            occupied = self.sites != 0
            self.log_weight += noise.log_site * occupied.sum(axis=1)
            if len(a):
                self.log_weight += noise.log_gate * (occupied[:, a] | occupied[:, b]).sum(axis=1)

        if len(a):
            nxt = _sample(pair_cum, m * self.sites[:, a].astype(int) + self.sites[:, b], self.rng_stream)
            self.sites[:, a] = nxt // m
            self.sites[:, b] = nxt % m
        if chain.idle is not None:
            idle_cum = chain.idle.cumulative if idle_cum is None else idle_cum
            busy = set(a.tolist()) | set(b.tolist())
            idle = np.array([q for q in range(self.sites.shape[1]) if q not in busy], dtype=int)
            if len(idle):
                self.sites[:, idle] = _sample(idle_cum, self.sites[:, idle].astype(int), self.rng_stream)


class _BlockTally(typing.NamedTuple):
    states: np.ndarray      # (steps, m) weighted occupancy of the measured site
    sum_0z: np.ndarray
    sq_0z: np.ndarray
    sum_zz: np.ndarray
    sq_zz: np.ndarray
    occupancy: np.ndarray   # (steps, n_sites) unweighted non-vacuum counts
    first_passage: np.ndarray | None


def _run_block(graph: CouplingGraph, n_steps: int, start_phase: int, chain: PopulationChain,
               butterfly_site: int, butterfly_pauli: str, measurement_site: int, size: int,
               seed_seq: np.random.SeedSequence, noise: NoiseRates | None,
               first_passage_site: int | None) -> _BlockTally:
    m, n = chain.n_states, graph.n_qubits
    traj = OccupancyTrajectory.start(size, n, butterfly_site, chain.initial_label(butterfly_pauli),
                                     np.random.default_rng(seed_seq))
    pair_cum = chain.pair.cumulative
    idle_cum = None if chain.idle is None else chain.idle.cumulative
    kappa = np.asarray(chain.kappa)

    states = np.zeros((n_steps + 1, m))
    sums = np.zeros((4, n_steps + 1))
    occupancy = np.zeros((n_steps + 1, n))
    passage = None
    if first_passage_site is not None:
        passage = np.where(traj.sites[:, first_passage_site] != 0, 0, -1)

    for j in range(n_steps + 1):
        if j:
            traj.advance(chain, graph.phase_pairs(start_phase - (j - 1)), noise, pair_cum, idle_cum)
            if passage is not None:
                hit = (passage < 0) & (traj.sites[:, first_passage_site] != 0)
                passage[hit] = j
        w = traj.weight
        at_q1 = traj.sites[:, measurement_site].astype(int)
        states[j] = np.bincount(at_q1, weights=w, minlength=m)
        zz = w * kappa[at_q1]
        sums[:, j] = w.sum(), np.square(w).sum(), zz.sum(), np.square(zz).sum()
        occupancy[j] = (traj.sites != 0).sum(axis=0)
    return _BlockTally(states, sums[0], sums[1], sums[2], sums[3], occupancy, passage)


def _merge(group) -> _BlockTally:
    '''Sum the tallies of consecutive blocks; first passages are concatenated in block order.'''
    passages = [t.first_passage for t in group]
    return _BlockTally(
        *(sum(getattr(t, name) for t in group) for name in _BlockTally._fields[:-1]),
        None if passages[0] is None else np.concatenate(passages),
    )


@dataclasses.dataclass(frozen=True)
class PopDynResult:
    cycles: np.ndarray
    f_states: np.ndarray
    c_bar_0z: np.ndarray
    c_bar_zz: np.ndarray
    stderr_0z: np.ndarray
    stderr_zz: np.ndarray
    n_trajectories: int
    occupancy: np.ndarray
    first_passage: np.ndarray | None = None

    @property
    def f_vacuum(self) -> np.ndarray:
        return self.f_states[:, 0]

    @property
    def f_bond(self) -> np.ndarray:
        return self.f_states[:, 1:].sum(axis=1)

    def to_frame(self, settings: config.Settings | None = None) -> pd.DataFrame:
        averages = average_otoc(self, settings=settings)
        return pd.DataFrame({
            'cycle': self.cycles,
            'F_vacuum': self.f_vacuum,
            'F_bond': self.f_bond,
            'c_bar_0z': self.c_bar_0z,
            'c_bar_zz': self.c_bar_zz,
            'normalized': averages.normalized,
            'stderr_0z': self.stderr_0z,
            'stderr_zz': self.stderr_zz,
        }, columns=CURVE_COLUMNS)


def _stderr(total: np.ndarray, squares: np.ndarray, n: int) -> np.ndarray:
    if n < 2:
        return np.zeros_like(total)
    mean = total / n
    var = np.clip(squares / n - mean ** 2, 0.0, None) * n / (n - 1)
    return np.sqrt(var / n)


def simulate(graph: CouplingGraph, n_cycles: int, chain: PopulationChain | TransitionMatrix,
             butterfly_site: int, measurement_site: int = 0, n_trajectories: int = 10000, seed: int = 0,
             noise: NoiseRates | None = None, butterfly_pauli: str = 'X', first_passage_site: int | None = None,
             workers: int = 1, settings: config.Settings | None = None) -> PopDynResult:
    '''Monte Carlo estimate of the averaged OTOC for depths 0..n_cycles.

    Depth t reads the measured site after t Heisenberg steps, starting from the schedule
    phase of cycle t-1; one trajectory family is run per distinct starting phase.
    ``first_passage_site`` records, for the depth-``n_cycles`` family, the first step at
    which that site leaves the vacuum (-1 if never).
    '''
    settings = config.resolve(settings)
    if isinstance(chain, TransitionMatrix):
        if chain.dimension != 4:
            raise ValueError('a bare transition matrix must be a 4x4 binary pair matrix')
        chain = PopulationChain(SiteBasis.BINARY, chain, None, kappa_values(SiteBasis.BINARY), {'X': 1, 'Y': 1, 'Z': 1})
    n = graph.n_qubits
    for name, q in (('butterfly_site', butterfly_site), ('measurement_site', measurement_site)):
        if not 0 <= q < n:
            raise ValueError(f"'{name}'={q} outside 0..{n - 1}")
    if first_passage_site is not None and not 0 <= first_passage_site < n:
        raise ValueError(f"'first_passage_site'={first_passage_site} outside 0..{n - 1}")
    if n_trajectories < 1:
        raise ValueError(f"'n_trajectories' must be positive, got {n_trajectories}")
    if n_cycles < 0:
        raise ValueError(f"'n_cycles' must be non-negative, got {n_cycles}")

    n_phases = max(1, len(graph.schedule))
    final_phase = (n_cycles - 1) % n_phases
    phases = sorted({(t - 1) % n_phases for t in range(1, n_cycles + 1)} | {final_phase})
    block = settings.trajectory_block
    sizes = [min(block, n_trajectories - start) for start in range(0, n_trajectories, block)]
    logger.info('population dynamics: %d sites, %d cycles, %d trajectories x %d phase families, basis %s',
                n, n_cycles, n_trajectories, len(phases), chain.basis.value)

    jobs = [
        delayed(_run_block)(
            graph, n_cycles, phase, chain, butterfly_site, butterfly_pauli, measurement_site, size,
            np.random.SeedSequence(seed, spawn_key=(phase, k)), noise,
            first_passage_site if phase == final_phase else None,
        )
        for phase in phases for k, size in enumerate(sizes)
    ]
    tallies = Parallel(n_jobs=workers)(jobs)
    totals = {
        phase: _merge(tallies[i * len(sizes):(i + 1) * len(sizes)])
        for i, phase in enumerate(phases)
    }

    def pick(t):
        return totals[(t - 1) % n_phases if t else final_phase]

    depth = np.arange(n_cycles + 1)
    f_states = np.array([pick(t).states[t] for t in depth]) / n_trajectories
    s0 = np.array([pick(t).sum_0z[t] for t in depth])
    q0 = np.array([pick(t).sq_0z[t] for t in depth])
    szz = np.array([pick(t).sum_zz[t] for t in depth])
    qzz = np.array([pick(t).sq_zz[t] for t in depth])
    return PopDynResult(
        cycles=depth,
        f_states=f_states,
        c_bar_0z=s0 / n_trajectories,
        c_bar_zz=szz / n_trajectories,
        stderr_0z=_stderr(s0, q0, n_trajectories),
        stderr_zz=_stderr(szz, qzz, n_trajectories),
        n_trajectories=n_trajectories,
        occupancy=totals[final_phase].occupancy[n_cycles] / n_trajectories,
        first_passage=totals[final_phase].first_passage,
    )


class AverageOtoc(typing.NamedTuple):
    c_bar_0z: np.ndarray
    c_bar_zz: np.ndarray
    normalized: np.ndarray
    unnormalizable: np.ndarray


def average_otoc(result: PopDynResult, floor: float | None = None,
                 settings: config.Settings | None = None) -> AverageOtoc:
    '''C_0z, C_zz and their ratio; the ratio is NaN where C_0z falls below ``floor``
    (default: the normalization floor of ``settings``).'''
    floor = config.resolve(settings).normalization_floor if floor is None else floor
    low = np.asarray(result.c_bar_0z) < floor
    if np.any(low):
        logger.warning('C_0z below %g at cycles %s; ratio left undefined', floor, np.flatnonzero(low).tolist())
    ratio = np.divide(result.c_bar_zz, result.c_bar_0z, out=np.full(len(low), np.nan), where=~low)
    return AverageOtoc(np.asarray(result.c_bar_0z), np.asarray(result.c_bar_zz), ratio, low)


def simulate_curve(graph: CouplingGraph, n_cycles: int, chain: PopulationChain | TransitionMatrix,
                   butterfly_site: int, measurement_site: int = 0, n_trajectories: int = 10000, seed: int = 0,
                   noise: NoiseRates | None = None, workers: int = 1, path=None,
                   settings: config.Settings | None = None) -> pd.DataFrame:
    '''Per-cycle table of the averaged OTOC; written to ``path`` as CSV when given.'''
    result = simulate(graph, n_cycles, chain, butterfly_site, measurement_site, n_trajectories, seed,
                      noise=noise, workers=workers, settings=settings)
    frame = result.to_frame(settings)
    if path is not None:
        frame.to_csv(path, index=False, encoding='utf-8')
    return frame
