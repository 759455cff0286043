import logging

import pytest

from scramblesim.config import Settings, configure_logging, settings_from_env


def test_defaults_without_environment():
    assert settings_from_env({}) == Settings()


def test_environment_overrides_fields():
    settings = settings_from_env({'SCRAMBLESIM_MAX_STATEVECTOR_QUBITS': '20', 'SCRAMBLESIM_PRUNE_TOL': '1e-10'})
    assert settings.max_statevector_qubits == 20
    assert settings.prune_tol == pytest.approx(1e-10)


def test_invalid_environment_value_names_the_variable():
    with pytest.raises(ValueError, match='SCRAMBLESIM_BRANCH_CAP'):
        settings_from_env({'SCRAMBLESIM_BRANCH_CAP': 'lots'})


def test_configure_logging_installs_one_handler():
    configure_logging('debug')
    configure_logging('info')
    root = logging.getLogger('scramblesim')
    assert len(root.handlers) == 1
    assert root.level == logging.INFO
