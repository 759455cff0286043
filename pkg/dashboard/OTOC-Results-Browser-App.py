import os
from pathlib import Path

import pandas as pd
import streamlit as st

from scramblesim.cli_harness import load_result_dir
from scramblesim.errors import ScrambleSimError

st.set_page_config(page_title='OTOC Results Browser', layout='wide')
st.title('OTOC Results Browser')
st.write('''
Browse result directories written by `scramblesim gen/run/report` and `scramblesim preset`.
Pick a run in the sidebar to see its manifest, summary metrics and tables.
''')

results_root = Path(os.environ.get('SCRAMBLESIM_RESULTS_ROOT', 'results'))


@st.cache_data(ttl=600)
def list_runs(root: str):
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(str(m.parent.relative_to(root)) for m in root.rglob('manifest.json'))


@st.cache_data(ttl=600)
def load_run(path: str):
    record = load_result_dir(path)
    manifest = None if record.manifest is None else record.manifest.to_dict()
    return manifest, record.manifest_hash, record.summary, record.tables


runs = list_runs(str(results_root))
if not runs:
    st.error(f'No result directories under {results_root}. Run scramblesim first or set SCRAMBLESIM_RESULTS_ROOT.')
    st.stop()

st.sidebar.header('Result directory')
run_name = st.sidebar.selectbox('Run', runs)
try:
    manifest, manifest_hash, summary, tables = load_run(str(results_root / run_name))
except ScrambleSimError as e:
    st.error(f'Could not load {run_name}: {e}')
    st.stop()

st.sidebar.header('Manifest')
if manifest is not None:
    st.sidebar.write('**Command**: ', manifest['command'])
    st.sidebar.write('**Engine**: ', str(manifest.get('engine') or manifest.get('preset') or '-'))
    st.sidebar.write('**Instances**: ', str(manifest['n_instances']))
    st.sidebar.write('**Seed**: ', str(manifest['seed']))
    st.sidebar.write('**Hash**: ', manifest_hash[:12])

if summary:
    if manifest_hash is not None and summary.get('manifest_hash') not in (None, manifest_hash):
        st.warning('summary.json was written for a different manifest; rerun `scramblesim report`.')
    numeric = {k: v for k, v in summary.items() if isinstance(v, (int, float)) and not isinstance(v, bool)
               and k != 'schema_version'}
    metric_cols = st.columns(min(4, max(1, len(numeric))))
    for i, (key, value) in enumerate(numeric.items()):
        metric_cols[i % len(metric_cols)].metric(key, f'{value:.4g}' if isinstance(value, float) else value)
    with st.expander('Full summary'):
        st.json(summary)
else:
    st.info('No summary.json yet.')

if not tables:
    st.info('This run has no tables yet.')
    st.stop()

table_name = st.selectbox('Table', list(tables))
table = pd.DataFrame(tables[table_name])
st.write(f'**Rows**: {len(table)}  **Columns**: {len(table.columns)}')
st.dataframe(table, use_container_width=True)

if manifest is not None and manifest['spec'] is not None:
    with st.expander('Circuit spec'):
        st.json(manifest['spec'])

st.download_button(
    label='Download CSV',
    data=table.to_csv(index=False).encode('utf-8'),
    file_name=f'{Path(run_name).name}-{table_name}.csv',
    mime='text/csv',
)
