from pathlib import Path

import pytest
from streamlit.testing.v1 import AppTest

from scramblesim.cli_harness import main

APP = str(Path(__file__).resolve().parents[1] / 'dashboard' / 'OTOC-Results-Browser-App.py')


@pytest.fixture
def app(monkeypatch, tmp_path):
    root = tmp_path / 'results'
    monkeypatch.setenv('SCRAMBLESIM_RESULTS_ROOT', str(root))
    return root, AppTest.from_file(APP, default_timeout=60)


def test_empty_results_root_shows_an_error(app):
    _, at = app
    at.run()
    assert not at.exception
    assert at.title[0].value == 'OTOC Results Browser'
    assert 'No result directories' in at.error[0].value


def test_browses_a_preset_run(app):
    root, at = app
    args = ['preset', 'clifford-fluct', '--out', str(root / 'cliff'), '--qubits', '6', '--cycles', '3',
            '--instances', '4']
    assert main(args) == 0
    at.run()
    assert not at.exception
    assert at.sidebar.selectbox[0].options == ['cliff']
    assert len(at.dataframe) == 1
    assert any(m.label == 'n_instances' for m in at.metric)
    assert not at.warning


def test_browses_a_generated_run(app):
    root, at = app
    out = root / 'chain'
    assert main(['gen', '--out', str(out), '--qubits', '4', '--cycles', '2', '--instances', '3']) == 0
    assert main(['run', '--out', str(out)]) == 0
    assert main(['report', '--out', str(out)]) == 0
    at.run()
    assert not at.exception
    assert at.main.selectbox[0].options == ['rows']
    assert at.dataframe[0].value['instance_id'].tolist() == [0, 1, 2]
