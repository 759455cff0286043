'''Command-line front end.

    scramblesim gen     --out DIR [--spec FILE | --qubits N --cycles K ...]
    scramblesim run     --out DIR --engine ENGINE [--p P --shots S ...]
    scramblesim report  --out DIR
    scramblesim verify  [--qubits N --cycles K --instances M]
    scramblesim preset  NAME --out DIR [overrides]

A result directory holds manifest.json, instances/NNNN.json, rows.csv (or one CSV per
preset table) and summary.json. Errors go to stderr as one JSON object; the exit code
is 2 for bad input and 1 for everything else.
'''

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import config
from .circuit_model import (
    CircuitInstance, CircuitSpec, Ensemble, FsimParams, InversionMode, build_ensemble, chain_graph, lightcone_filter,
)
from .errors import CircuitSpecError, EmptyResultError, ManifestError, ScrambleSimError, VerificationError
from .noise_models import NoiseModel, exact_channel_otoc, perturbative_otoc, trajectory_sample_otoc
from .pauli_branching import otoc_from_strings, run_branching
from .population_dynamics import NoiseRates, chain_for_spec, simulate
from .presets import PRESETS, PresetOptions, run_preset, statevector_curve
from .statevector_engine import RESULT_COLUMNS, ensemble_stats, evaluate_row, otoc_ancilla_protocol, otoc_exact, otoc_partial

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENGINES = ('exact', 'ancilla', 'branch', 'partial', 'noisy', 'perturbative', 'popdyn')
COMMANDS = ('gen', 'run', 'report', 'verify', 'preset')


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + '\n', encoding='utf-8')


def _read_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError as e:
        raise ManifestError(f'missing file {path}') from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f'malformed JSON in {path.name}: {e.msg}', offset=e.pos) from e


# ------------------------------------------------------------------
# Manifests and records
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class RunManifest:
    '''What was run. ``out`` is recorded but kept out of the hash, so the same run written
    to two directories hashes the same.'''

    command: str
    spec: dict | None = None
    preset: str | None = None
    engine: str | None = None
    n_instances: int = 0
    seed: int = 0
    overrides: dict = dataclasses.field(default_factory=dict)
    out: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ManifestError(f'unknown command {self.command!r}', field='command')
        if self.engine is not None and self.engine not in ENGINES:
            raise ManifestError(f'unknown engine {self.engine!r}; choose from {list(ENGINES)}', field='engine')
        if self.n_instances < 0:
            raise ManifestError(f"'n_instances' must be non-negative, got {self.n_instances}", field='n_instances')

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'RunManifest':
        if not isinstance(data, dict):
            raise ManifestError('manifest must be a JSON object')
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ManifestError(f'unknown manifest fields {unknown}', field=unknown[0])
        if 'command' not in data:
            raise ManifestError('manifest has no command', field='command')
        for name, kind in (('n_instances', int), ('seed', int), ('schema_version', int)):
            if name in data and not isinstance(data[name], kind):
                raise ManifestError(f'{name!r} must be an integer, got {data[name]!r}', field=name)
        return cls(**data)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> 'RunManifest':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ManifestError(f'malformed manifest JSON: {e.msg}', offset=e.pos) from e
        return cls.from_dict(data)

    @property
    def hash(self) -> str:
        body = self.to_dict()
        body.pop('out')
        return hashlib.sha256(canonical_json(body).encode('utf-8')).hexdigest()

    def circuit_spec(self) -> CircuitSpec:
        if self.spec is None:
            raise ManifestError('manifest carries no circuit spec', field='spec')
        return CircuitSpec.from_dict(self.spec).validate()


@dataclasses.dataclass
class ResultRecord:
    manifest: RunManifest | None
    summary: dict
    tables: dict

    @property
    def manifest_hash(self) -> str | None:
        return None if self.manifest is None else self.manifest.hash

    @property
    def rows(self) -> pd.DataFrame | None:
        return self.tables.get('rows')


def load_result_dir(path) -> ResultRecord:
    '''Manifest, summary and every CSV table of a result directory (tables keyed by file stem).'''
    path = Path(path)
    if not path.is_dir():
        raise ManifestError(f'{path} is not a result directory')
    manifest_path = path / 'manifest.json'
    manifest = RunManifest.from_dict(_read_json(manifest_path)) if manifest_path.exists() else None
    summary_path = path / 'summary.json'
    summary = _read_json(summary_path) if summary_path.exists() else {}
    tables = {csv.stem: pd.read_csv(csv, encoding='utf-8') for csv in sorted(path.glob('*.csv'))}
    return ResultRecord(manifest, summary, tables)


def write_instances(instances, out: Path) -> None:
    folder = out / 'instances'
    folder.mkdir(parents=True, exist_ok=True)
    for stale in folder.glob('*.json'):
        stale.unlink()
    for inst in instances:
        (folder / f'{inst.instance_id:04d}.json').write_text(inst.to_json() + '\n', encoding='utf-8')


def load_instances(out: Path) -> list:
    files = sorted((out / 'instances').glob('*.json'))
    instances = []
    for f in files:
        try:
            instances.append(CircuitInstance.from_json(f.read_text(encoding='utf-8')))
        except ManifestError as e:
            raise ManifestError(f'{f.name}: {e}', field=e.field, offset=e.offset) from e
    return instances


# ------------------------------------------------------------------
# Engine rows
# ------------------------------------------------------------------
@dataclasses.dataclass(frozen=True)
class RunOptions:
    p: float = 0.0
    shots: int = 1000
    kappas: int | None = None
    order: int = 1
    trajectories: int = 10000


def _row(inst: CircuitInstance, engine: str, value: float, start: float, **extra) -> dict:
    row = {
        'instance_id': inst.instance_id,
        'seed': inst.seed,
        'n_qubits': inst.n_qubits,
        'n_cycles': inst.spec.n_cycles,
        'n_s': inst.n_s,
        'n_d': inst.n_d,
        'engine': engine,
        'otoc': float(value),
        'wall_time_ms': 1e3 * (time.perf_counter() - start),
    }
    row.update(extra)
    return row


def engine_row(inst: CircuitInstance, engine: str, options: RunOptions, settings: config.Settings) -> dict:
    '''One result row; ``otoc`` is the raw signal, extra columns depend on the engine.'''
    if engine in ('exact', 'ancilla'):
        return evaluate_row(inst, engine, settings)
    start = time.perf_counter()
    if engine == 'branch':
        result = run_branching(lightcone_filter(inst, measurement_cone=False), settings=settings)
        stats = result.stats.to_dict()
        stats.pop('wall_ms')
        return _row(inst, engine, otoc_from_strings(result).value, start, **stats)
    if engine == 'partial':
        estimate, batch = otoc_partial(inst, (inst.measurement_qubit,), options.kappas, inst.seed, settings)
        low = high = estimate
        if options.kappas is not None:
            low, high = batch.bootstrap_interval(settings.bootstrap_resamples, seed=inst.seed)
        return _row(inst, engine, estimate, start, n_kappa=len(batch.kappas), ci_low=low, ci_high=high)
    if engine == 'noisy':
        noise = NoiseModel(options.p)
        if inst.n_qubits <= settings.max_density_qubits:
            out = exact_channel_otoc(inst, noise, settings)
            return _row(inst, engine, out.butterfly, start, identity=out.identity, normalized=out.normalized,
                        stderr=0.0, method='channel')
        out = trajectory_sample_otoc(inst, noise, options.shots, inst.seed, settings=settings)
        return _row(inst, engine, out.butterfly, start, identity=out.identity, normalized=out.normalized,
                    stderr=out.stderr, method='trajectory')
    if engine == 'perturbative':
        result = perturbative_otoc(inst, NoiseModel(options.p), options.order, settings=settings)
        return _row(inst, engine, result.value, start, order=result.order, n_runs=result.n_runs)
    raise ManifestError(f'engine {engine!r} has no per-instance rows', field='engine')


def run_instances(instances, engine: str, options: RunOptions, workers: int = 1,
                  settings: config.Settings | None = None) -> pd.DataFrame:
    settings = config.resolve(settings)
    rows = Parallel(n_jobs=workers)(delayed(engine_row)(inst, engine, options, settings) for inst in instances)
    frame = pd.DataFrame(rows)
    if frame.empty:
        return pd.DataFrame(columns=RESULT_COLUMNS)
    return frame.sort_values('instance_id', kind='stable').reset_index(drop=True)


def run_popdyn(spec: CircuitSpec, options: RunOptions, workers: int = 1,
               settings: config.Settings | None = None) -> pd.DataFrame:
    noise = NoiseRates(0.0, options.p) if options.p else None
    result = simulate(spec.graph, spec.n_cycles, chain_for_spec(spec), spec.butterfly_qubit, spec.measurement_qubit,
                      n_trajectories=options.trajectories, seed=spec.seed, noise=noise,
                      butterfly_pauli=spec.butterfly_pauli, workers=workers, settings=settings)
    return result.to_frame(settings)


def summarize(rows: pd.DataFrame, settings: config.Settings | None = None) -> dict:
    if rows is None or rows.empty:
        raise EmptyResultError('no result rows to summarize')
    if 'cycle' in rows.columns:
        last = rows.iloc[-1]
        return {
            'n_cycles': int(last['cycle']),
            'final_c_bar_0z': float(last['c_bar_0z']),
            'final_c_bar_zz': float(last['c_bar_zz']),
            'final_F_bond': float(last['F_bond']),
        }
    values = rows['otoc'].to_numpy(dtype=float)
    summary = {'engine': str(rows['engine'].iloc[0]), **ensemble_stats(values, settings=settings).to_dict()}
    for column in ('n_b', 'n_p', 'max_live_terms', 'n_s'):
        if column in rows.columns:
            summary[f'{column}_median'] = float(rows[column].median())
    if 'normalized' in rows.columns:
        summary['normalized_mean'] = float(rows['normalized'].mean())
    return summary


# ------------------------------------------------------------------
# Subcommands
# ------------------------------------------------------------------
def _spec_from_args(args) -> CircuitSpec:
    if args.spec:
        data = _read_json(Path(args.spec))
        if args.seed is not None:
            data['seed'] = args.seed
        return CircuitSpec.from_dict(data).validate()
    n = args.qubits or 8
    kind = {'two_qubit': 'ISWAP'}
    if args.theta is not None or args.phi is not None:
        theta = math.pi / 2 if args.theta is None else args.theta
        phi = args.phi or 0.0
        kind = {'two_qubit': 'FSIM', 'fsim': FsimParams(theta, phi),
                'inversion': InversionMode.PHYSICAL if phi else InversionMode.STRICT}
    if args.nd and len(args.nd) > 1:
        raise CircuitSpecError(f'gen takes a single --nd value, got {args.nd}; N_D sweeps belong to the nd-sweep preset')
    n_d = args.nd[0] if args.nd else None
    return CircuitSpec(chain_graph(n), args.cycles or 8, n_nonclifford=n_d, butterfly_qubit=n - 1,
                       seed=args.seed or 0, **kind).validate()


def cmd_gen(args, settings: config.Settings) -> dict:
    out = Path(args.out)
    spec = _spec_from_args(args)
    n_instances = args.instances or 10
    manifest = RunManifest('gen', spec=spec.to_dict(), n_instances=n_instances, seed=spec.seed, out=str(out))
    out.mkdir(parents=True, exist_ok=True)
    write_instances(build_ensemble(spec, n_instances), out)
    _write_json(out / 'manifest.json', manifest.to_dict())
    logger.info('wrote %d instances to %s', n_instances, out)
    return {'out': str(out), 'n_instances': n_instances, 'manifest_hash': manifest.hash}


def _run_options(args) -> RunOptions:
    return RunOptions(
        p=args.p or 0.0,
        shots=args.shots or 1000,
        kappas=args.kappas,
        order=1 if args.order is None else args.order,
        trajectories=args.trajectories or 10000,
    )


def cmd_run(args, settings: config.Settings) -> dict:
    out = Path(args.out)
    engine = args.engine or 'exact'
    previous = RunManifest.from_dict(_read_json(out / 'manifest.json'))
    options = _run_options(args)
    manifest = dataclasses.replace(previous, command='run', engine=engine, out=str(out),
                                   overrides=dataclasses.asdict(options))
    if engine == 'popdyn':
        rows = run_popdyn(manifest.circuit_spec(), options, args.workers, settings)
    else:
        instances = load_instances(out)
        if not instances:
            raise EmptyResultError(f'no instance files under {out / "instances"}; run gen first')
        rows = run_instances(instances, engine, options, args.workers, settings)
    rows.to_csv(out / 'rows.csv', index=False, encoding='utf-8')
    _write_json(out / 'manifest.json', manifest.to_dict())
    return {'out': str(out), 'engine': engine, 'n_rows': len(rows), 'manifest_hash': manifest.hash}


def cmd_report(args, settings: config.Settings) -> dict:
    record = load_result_dir(args.out)
    if record.rows is None:
        raise EmptyResultError(f'no rows.csv under {args.out}')
    summary = {
        'schema_version': SCHEMA_VERSION,
        'manifest_hash': record.manifest_hash,
        'n_rows': len(record.rows),
        **summarize(record.rows, settings),
    }
    _write_json(Path(args.out) / 'summary.json', summary)
    return summary


def _check(name: str, errors, tolerance: float) -> dict:
    worst = float(np.max(errors)) if len(errors) else 0.0
    return {'check': name, 'max_error': worst, 'tolerance': tolerance, 'passed': bool(worst <= tolerance)}


def verify(n_qubits: int = 6, n_cycles: int = 6, n_instances: int = 30, n_trajectories: int = 20000,
           seed: int = 0, workers: int = 1, settings: config.Settings | None = None) -> list:
    '''Cross-check the engines on a shared small ensemble. Raises VerificationError on any failure.'''
    settings = config.resolve(settings)
    graph = chain_graph(n_qubits)
    spec = CircuitSpec(graph, n_cycles, n_nonclifford=min(8, n_qubits * n_cycles), butterfly_qubit=n_qubits - 1,
                       seed=seed).validate()
    instances = build_ensemble(spec, n_instances)
    exact = np.array([otoc_exact(inst, settings).value for inst in instances])
    ancilla = np.array([otoc_ancilla_protocol(inst, settings).value for inst in instances])
    branch = np.array([otoc_from_strings(run_branching(inst, settings=settings)).value for inst in instances])
    filtered = np.array([otoc_exact(lightcone_filter(inst), settings).value for inst in instances])
    checks = [
        _check('ancilla_vs_exact', np.abs(ancilla - exact), 1e-9),
        _check('branch_vs_exact', np.abs(branch - exact), 1e-9),
        _check('lightcone_filter', np.abs(filtered - exact), 1e-12),
    ]

    clifford = dataclasses.replace(spec, ensemble=Ensemble.CLIFFORD4, n_nonclifford=None)
    signs = [otoc_from_strings(run_branching(inst, settings=settings)).value
             for inst in build_ensemble(clifford, n_instances)]
    checks.append(_check('clifford_unit_magnitude', np.abs(np.abs(signs) - 1.0), 1e-9))

    for two_qubit in ('ISWAP', 'SQRT_ISWAP'):
        iid = dataclasses.replace(spec, n_nonclifford=None, two_qubit=two_qubit)
        curve = statevector_curve(iid, range(1, n_cycles + 1), n_instances, workers, settings)
        popdyn = simulate(graph, n_cycles, chain_for_spec(iid), iid.butterfly_qubit, iid.measurement_qubit,
                          n_trajectories=n_trajectories, seed=seed, workers=workers, settings=settings)
        gap = np.abs(curve['c_bar'].to_numpy() - popdyn.c_bar_zz[1:])
        sigma = np.sqrt(curve['c_bar_stderr'].to_numpy() ** 2 + popdyn.stderr_zz[1:] ** 2)
        checks.append(_check(f'popdyn_{two_qubit.lower()}_sigma', gap / np.maximum(sigma, 1e-9), 5.0))

    failed = [c['check'] for c in checks if not c['passed']]
    for c in checks:
        logger.info('verify %s: max error %.3g (tolerance %g)', c['check'], c['max_error'], c['tolerance'])
    if failed:
        raise VerificationError(f'engine cross-checks failed: {failed}', checks)
    return checks


def cmd_verify(args, settings: config.Settings) -> dict:
    checks = verify(args.qubits or 6, args.cycles or 6, args.instances or 30, args.trajectories or 20000,
                    args.seed or 0, args.workers, settings)
    report = {'schema_version': SCHEMA_VERSION, 'checks': checks, 'passed': True}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / 'verify.json', report)
    return report


def _preset_options(args) -> PresetOptions:
    return PresetOptions(
        qubits=args.qubits, cycles=args.cycles, instances=args.instances, seed=args.seed or 0,
        nd=tuple(args.nd) if args.nd else None, theta=args.theta, phi=args.phi, p=args.p,
        workers=args.workers, trajectories=args.trajectories,
    )


def cmd_preset(args, settings: config.Settings) -> dict:
    options = _preset_options(args)
    output = run_preset(args.name, options, settings)
    out = Path(args.out or Path('results') / args.name)
    out.mkdir(parents=True, exist_ok=True)
    overrides = {k: v for k, v in dataclasses.asdict(options).items() if v is not None and k not in ('seed', 'workers')}
    manifest = RunManifest('preset', preset=args.name, seed=options.seed,
                           n_instances=options.instances or 0, overrides=overrides, out=str(out))
    for name, table in output.tables.items():
        table.to_csv(out / f'{name}.csv', index=False, encoding='utf-8')
    _write_json(out / 'manifest.json', manifest.to_dict())
    summary = {'schema_version': SCHEMA_VERSION, 'manifest_hash': manifest.hash, 'preset': args.name, **output.summary}
    _write_json(out / 'summary.json', summary)
    return summary


HANDLERS = {'gen': cmd_gen, 'run': cmd_run, 'report': cmd_report, 'verify': cmd_verify, 'preset': cmd_preset}


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog='scramblesim',
        description='Simulate OTOCs of random circuits: generate ensembles, run engines, report summaries.',
    )
    parser.add_argument('--log-level', default='WARNING', help='Logging level (default: WARNING)')
    sub = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Master seed (default: 0)')
    common.add_argument('--instances', type=int, default=None, help='Number of circuit instances')
    common.add_argument('--engine', default=None, help=f'One of {", ".join(ENGINES)} (default: exact)')
    common.add_argument('--out', default=None, help='Result directory')
    common.add_argument('--workers', type=int, default=1, help='Parallel workers (default: 1)')
    common.add_argument('--qubits', type=int, default=None, help='Chain length')
    common.add_argument('--cycles', type=int, default=None, help='Number of cycles K')
    common.add_argument('--nd', type=int, nargs='+', default=None, help='Non-Clifford gate count(s) N_D')
    common.add_argument('--theta', type=float, default=None, help='FSIM swap angle in radians')
    common.add_argument('--phi', type=float, default=None, help='FSIM conditional phase in radians')
    common.add_argument('--p', type=float, default=None, help='Two-qubit depolarizing probability')
    common.add_argument('--shots', type=int, default=None, help='Trajectory shots per instance (noisy engine)')
    common.add_argument('--kappas', type=int, default=None, help='Sampled projections (partial engine; default: all)')
    common.add_argument('--order', type=int, default=None, help='Expansion order 0 or 1 (perturbative engine)')
    common.add_argument('--trajectories', type=int, default=None, help='Population-dynamics trajectories')
    common.add_argument('--spec', default=None, help='Circuit spec JSON file (gen)')

    sub.add_parser('gen', parents=[common], help='Generate instance files')
    sub.add_parser('run', parents=[common], help='Run one engine over the instances')
    sub.add_parser('report', parents=[common], help='Aggregate rows into summary.json')
    sub.add_parser('verify', parents=[common], help='Cross-check the engines on a small ensemble')
    preset = sub.add_parser('preset', parents=[common], help='Run a named experiment preset')
    preset.add_argument('name', help=f'One of {", ".join(sorted(PRESETS))}')
    return parser.parse_args(argv)


def _emit_error(payload: dict) -> None:
    sys.stderr.write(canonical_json(payload) + '\n')


def main(argv=None) -> int:
    args = parse_args(argv)
    config.configure_logging(args.log_level)
    if args.command in ('gen', 'run', 'report') and not args.out:
        _emit_error({'error': 'UsageError', 'message': f'{args.command} needs --out', 'field': 'out', 'offset': None})
        return 2
    try:
        settings = config.get_settings()
        result = HANDLERS[args.command](args, settings)
    except ScrambleSimError as e:
        _emit_error(e.to_dict())
        return e.exit_code
    except ValueError as e:
        _emit_error({'error': type(e).__name__, 'message': str(e)})
        return 2
    except (OSError, MemoryError, ArithmeticError) as e:
        _emit_error({'error': type(e).__name__, 'message': str(e)})
        return 1
    sys.stdout.write(canonical_json(result) + '\n')
    return 0


if __name__ == '__main__':
    sys.exit(main())
