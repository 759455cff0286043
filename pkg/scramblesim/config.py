'''Runtime settings and logging setup.

Every field of `Settings` can be overridden from the environment as
``SCRAMBLESIM_<FIELD>`` (upper case), e.g. ``SCRAMBLESIM_MAX_STATEVECTOR_QUBITS=20``.
'''

import dataclasses
import logging
import os
import sys
from functools import lru_cache

ENV_PREFIX = 'SCRAMBLESIM_'
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Settings:
    max_statevector_qubits: int = 28
    max_density_qubits: int = 8
    branch_cap: int = 2 ** 26
    prune_tol: float = 1e-14
    amplitude_tol: float = 1e-12
    bootstrap_resamples: int = 1000
    trajectory_block: int = 8192
    normalization_floor: float = 1e-6


def settings_from_env(environ=None) -> Settings:
    environ = os.environ if environ is None else environ
    overrides = {}
    for field in dataclasses.fields(Settings):
        raw = environ.get(ENV_PREFIX + field.name.upper())
        if raw is None:
            continue
        cast = int if field.type in (int, 'int') else float
        try:
            overrides[field.name] = cast(raw)
        except ValueError as e:
            raise ValueError(f"invalid value {raw!r} for '{ENV_PREFIX + field.name.upper()}'") from e
    return Settings(**overrides)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return settings_from_env()


def resolve(settings: Settings | None) -> Settings:
    return get_settings() if settings is None else settings


def configure_logging(level: str | int = 'WARNING') -> None:
    '''Install a single stream handler on the package logger.'''
    root = logging.getLogger('scramblesim')
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
