'''Named experiment presets.

Each preset builds its circuits from a small set of options, runs the engines it needs
and returns a dict of result tables plus a flat summary. Defaults are desk scale; larger
runs come from overriding the options on the command line.
'''

import dataclasses
import logging
import math
import typing

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import config
from .circuit_model import (
    CircuitSpec, Ensemble, FsimParams, build_ensemble, chain_graph, grid_graph, ladder_graph, lightcone_filter,
)
from .errors import CircuitSpecError
from .noise_models import (
    NoiseModel, exact_channel_otoc, log_log_slope, perturbative_sweep, phi_error_sweep, sweep_summary,
)
from .pauli_branching import otoc_from_strings, run_branching
from .population_dynamics import chain_for_spec, simulate
from .statevector_engine import ensemble_stats, otoc_exact

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class PresetOptions:
    qubits: int | None = None
    cycles: int | None = None
    instances: int | None = None
    seed: int = 0
    nd: tuple | None = None
    theta: float | None = None
    phi: float | None = None
    p: float | None = None
    workers: int = 1
    trajectories: int | None = None

    def pick(self, field: str, default):
        value = getattr(self, field)
        return default if value is None else value


class PresetOutput(typing.NamedTuple):
    tables: dict
    summary: dict


class Preset(typing.NamedTuple):
    name: str
    description: str
    run: typing.Callable


PRESETS = {}


def preset(name: str, description: str):
    def register(func):
        PRESETS[name] = Preset(name, description, func)
        return func
    return register


def run_preset(name: str, options: PresetOptions | None = None,
               settings: config.Settings | None = None) -> PresetOutput:
    if name not in PRESETS:
        raise CircuitSpecError(f'unknown preset {name!r}; choose from {sorted(PRESETS)}')
    options = options or PresetOptions()
    logger.info('running preset %s with %s', name, options)
    return PRESETS[name].run(options, config.resolve(settings))


# ------------------------------------------------------------------
# Shared pieces
# ------------------------------------------------------------------
def _two_qubit(theta: float | None) -> dict:
    '''Gate kind for a swap angle; None or pi/2 is iSWAP.'''
    if theta is None or math.isclose(theta, math.pi / 2):
        return {'two_qubit': 'ISWAP'}
    if math.isclose(theta, math.pi / 4):
        return {'two_qubit': 'SQRT_ISWAP'}
    return {'two_qubit': 'FSIM', 'fsim': FsimParams(theta)}


def _depths(n_cycles: int, step: int = 1) -> list:
    return sorted(set(range(step, n_cycles + 1, step)) | {n_cycles})


def _exact_values(spec: CircuitSpec, n_instances: int, workers: int, settings) -> list:
    instances = build_ensemble(spec, n_instances)
    return Parallel(n_jobs=workers)(delayed(otoc_exact)(inst, settings) for inst in instances)


def statevector_curve(spec: CircuitSpec, depths, n_instances: int, workers: int = 1,
                      settings: config.Settings | None = None) -> pd.DataFrame:
    '''Ensemble mean and RMS of the exact OTOC at each depth; instance k keeps its seed across depths.'''
    rows = []
    for t in depths:
        stats = ensemble_stats(_exact_values(dataclasses.replace(spec, n_cycles=t), n_instances, workers, settings),
                               settings=settings)
        rows.append({'cycle': t, **stats.to_dict()})
    return pd.DataFrame(rows)


def _popdyn_curve(spec: CircuitSpec, n_cycles: int, trajectories: int, workers: int, settings) -> pd.DataFrame:
    chain = chain_for_spec(spec)
    result = simulate(spec.graph, n_cycles, chain, spec.butterfly_qubit, spec.measurement_qubit,
                      n_trajectories=trajectories, seed=spec.seed, butterfly_pauli=spec.butterfly_pauli,
                      workers=workers, settings=settings)
    frame = result.to_frame(settings)
    frame.insert(1, 'basis', chain.basis.value)
    return frame


def _wavefront(spec: CircuitSpec, options: PresetOptions, instances: int, trajectories: int, settings) -> PresetOutput:
    depths = _depths(spec.n_cycles)
    curve = statevector_curve(spec, depths, instances, options.workers, settings)
    popdyn = _popdyn_curve(spec, spec.n_cycles, trajectories, options.workers, settings)
    merged = curve.merge(popdyn[['cycle', 'c_bar_zz', 'stderr_zz']], on='cycle', how='left')
    gap = (merged['c_bar'] - merged['c_bar_zz']).abs()
    summary = {
        'n_qubits': spec.n_qubits,
        'n_cycles': spec.n_cycles,
        'n_instances': instances,
        'n_trajectories': trajectories,
        'max_abs_gap': float(gap.max()),
        'final_c_bar': float(curve['c_bar'].iloc[-1]),
        'final_popdyn': float(popdyn['c_bar_zz'].iloc[-1]),
    }
    return PresetOutput({'curve': merged, 'popdyn': popdyn}, summary)


# ------------------------------------------------------------------
# Presets
# ------------------------------------------------------------------
@preset('wavefront-1d', 'Averaged OTOC on a chain: statevector ensemble against population dynamics')
def wavefront_1d(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    n = options.pick('qubits', 8)
    spec = CircuitSpec(chain_graph(n), options.pick('cycles', 12), butterfly_qubit=n - 1,
                       seed=options.seed, **_two_qubit(options.theta)).validate()
    return _wavefront(spec, options, options.pick('instances', 100), options.pick('trajectories', 20000), settings)


@preset('wavefront-2d', 'Averaged OTOC on a square grid: statevector ensemble against population dynamics')
def wavefront_2d(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    side = max(2, math.isqrt(options.pick('qubits', 9)))
    spec = CircuitSpec(grid_graph(side, side), options.pick('cycles', 10), butterfly_qubit=side * side - 1,
                       seed=options.seed, **_two_qubit(options.theta)).validate()
    return _wavefront(spec, options, options.pick('instances', 60), options.pick('trajectories', 20000), settings)


@preset('clifford-fluct', 'Clifford circuits: every OTOC is +1 or -1 and the RMS stays at 1')
def clifford_fluct(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    n = options.pick('qubits', 10)
    spec = CircuitSpec(chain_graph(n), options.pick('cycles', 12), butterfly_qubit=n - 1,
                       ensemble=Ensemble.CLIFFORD4, seed=options.seed).validate()
    rows = []
    for inst in build_ensemble(spec, options.pick('instances', 200)):
        result = run_branching(lightcone_filter(inst, measurement_cone=False), settings=settings)
        rows.append({'instance_id': inst.instance_id, 'seed': inst.seed,
                     'otoc': otoc_from_strings(result).value, **result.stats.to_dict()})
    frame = pd.DataFrame(rows)
    stats = ensemble_stats(frame['otoc'], settings=settings)
    summary = {
        'n_instances': len(frame),
        'all_unit': bool(np.allclose(frame['otoc'].abs(), 1.0, atol=1e-9)),
        'max_n_p': int(frame['n_p'].max()),
        **stats.to_dict(),
    }
    return PresetOutput({'instances': frame}, summary)


def _branch_row(inst, n_d: int, settings) -> dict:
    result = run_branching(lightcone_filter(inst, measurement_cone=False), settings=settings)
    return {'N_D': n_d, 'instance_id': inst.instance_id, 'seed': inst.seed,
            'otoc': otoc_from_strings(result).value, **result.stats.to_dict()}


def _branch_sweep(spec: CircuitSpec, nds, n_instances: int, workers: int, settings) -> pd.DataFrame:
    jobs = [
        delayed(_branch_row)(inst, n_d, settings)
        for n_d in nds
        for inst in build_ensemble(dataclasses.replace(spec, n_nonclifford=int(n_d)).validate(), n_instances)
    ]
    return pd.DataFrame(Parallel(n_jobs=workers)(jobs))


def _log2_slope(nds, counts) -> float:
    nds, counts = np.asarray(nds, dtype=float), np.asarray(counts, dtype=float)
    keep = counts > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(nds[keep], np.log2(counts[keep]), 1)[0])


@preset('nd-sweep', 'OTOC fluctuations and Pauli-path counts against the number of non-Clifford gates')
def nd_sweep(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    n = options.pick('qubits', 12)
    spec = CircuitSpec(chain_graph(n), options.pick('cycles', 16), butterfly_qubit=n - 1, seed=options.seed)
    nds = options.pick('nd', tuple(range(0, 21, 2)))
    frame = _branch_sweep(spec, nds, options.pick('instances', 40), options.workers, settings)
    rows = []
    for n_d, group in frame.groupby('N_D'):
        stats = ensemble_stats(group['otoc'], settings=settings)
        rows.append({'N_D': int(n_d), 'c_bar': stats.mean, 'delta_c': stats.rms,
                     'delta_c_stderr': stats.rms_stderr, 'n_p_median': float(group['n_p'].median()),
                     'n_b_median': float(group['n_b'].median())})
    table = pd.DataFrame(rows)
    summary = {
        'n_qubits': n,
        'log2_n_p_slope': _log2_slope(table['N_D'], table['n_p_median']),
        'delta_c_first': float(table['delta_c'].iloc[0]),
        'delta_c_last': float(table['delta_c'].iloc[-1]),
    }
    return PresetOutput({'nd_sweep': table, 'instances': frame}, summary)


@preset('branch-scaling', 'Growth of branch and path counts with N_D')
def branch_scaling(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    n = options.pick('qubits', 12)
    spec = CircuitSpec(chain_graph(n), options.pick('cycles', 16), butterfly_qubit=n - 1, seed=options.seed)
    nds = options.pick('nd', (8, 12, 16, 20, 24))
    frame = _branch_sweep(spec, nds, options.pick('instances', 20), options.workers, settings)
    medians = frame.groupby('N_D')[['n_b', 'n_p', 'max_live_terms', 'wall_ms']].median().reset_index()
    summary = {
        'log2_n_b_slope': _log2_slope(medians['N_D'], medians['n_b']),
        'log2_n_p_slope': _log2_slope(medians['N_D'], medians['n_p']),
    }
    return PresetOutput({'scaling': medians, 'instances': frame}, summary)


def _integrability(graph, options: PresetOptions, settings: config.Settings, default_cycles: int) -> PresetOutput:
    n_cycles = options.pick('cycles', default_cycles)
    depths = _depths(n_cycles, 5)
    curves = []
    for ensemble in (Ensemble.RANDOM_Z, Ensemble.UNIVERSAL8):
        spec = CircuitSpec(graph, n_cycles, 'SQRT_ISWAP', ensemble=ensemble, butterfly_qubit=graph.n_qubits - 1,
                           seed=options.seed).validate()
        curve = statevector_curve(spec, depths, options.pick('instances', 40), options.workers, settings)
        curve.insert(0, 'ensemble', ensemble.value)
        curves.append(curve)
    frame = pd.concat(curves, ignore_index=True)
    late = frame[frame['cycle'] == depths[-1]].set_index('ensemble')
    summary = {
        'n_qubits': graph.n_qubits,
        'late_c_bar_random_z': float(late.loc[Ensemble.RANDOM_Z.value, 'c_bar']),
        'late_c_bar_universal8': float(late.loc[Ensemble.UNIVERSAL8.value, 'c_bar']),
    }
    return PresetOutput({'curve': frame}, summary)


@preset('xy-integrable', 'Random-Z (integrable XY) against universal single-qubit gates on a chain')
def xy_integrable(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    return _integrability(chain_graph(options.pick('qubits', 12)), options, settings, 50)


@preset('xy-ladder', 'Random-Z against universal single-qubit gates on a two-leg ladder')
def xy_ladder(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    leg = max(2, options.pick('qubits', 12) // 2)
    return _integrability(ladder_graph(leg, (leg + 1) // 2), options, settings, 30)


@preset('noise-sweep', 'Perturbative expansion, normalization bias and conditional-phase errors on a small chain')
def noise_sweep(options: PresetOptions, settings: config.Settings) -> PresetOutput:
    n = options.pick('qubits', 6)
    n_cycles = options.pick('cycles', 6)
    n_instances = options.pick('instances', 10)
    p = options.pick('p', 0.016)
    phi = options.pick('phi', 0.136)

    spec = CircuitSpec(chain_graph(n), n_cycles, butterfly_qubit=n - 1, seed=options.seed).validate()
    first = build_ensemble(spec, 1)[0]
    perturbative = perturbative_sweep(first, np.geomspace(p / 8, 2 * p, 6), options.workers, settings)

    sqrt_spec = dataclasses.replace(spec, two_qubit='SQRT_ISWAP')
    noise = NoiseModel(p)
    rows = []
    for inst in build_ensemble(sqrt_spec, n_instances):
        ideal = otoc_exact(inst, settings).value
        channel = exact_channel_otoc(inst, noise, settings)
        rows.append({'instance_id': inst.instance_id, 'ideal': ideal, 'noisy': channel.butterfly,
                     'normalized': channel.normalized, 'bias': channel.normalized - ideal})
    normalization = pd.DataFrame(rows)

    phis = (phi / 4, phi / 2, phi)
    phi_frame = phi_error_sweep(spec, phis, n_instances, options.workers, settings)
    phi_table = sweep_summary(phi_frame, by='phi')

    slopes = {}
    for order in (0, 1):
        part = perturbative[perturbative['engine'] == f'order{order}']
        try:
            slopes[f'order{order}_slope'] = log_log_slope(part['p'], part['abs_err'])
        except ValueError:
            slopes[f'order{order}_slope'] = math.nan
    summary = {
        'p': p,
        'phi': phi,
        **slopes,
        'mean_bias': float(normalization['bias'].mean()),
        'rms_bias': float(np.sqrt(np.mean(np.square(normalization['bias'])))),
        'phi_rms_error': float(phi_table['rms_error'].iloc[-1]),
    }
    tables = {'perturbative': perturbative, 'normalization': normalization, 'phi': phi_frame, 'phi_summary': phi_table}
    return PresetOutput(tables, summary)
