"""命令行端到端测试：synth → preprocess → compare → behave"""

import argparse

import pandas as pd
import pytest
import yaml

from core.processor import derive_seed, load_set
from scripts.main import main, parse_band
from utils.file import OUTPUT_DIR_ENV, load_config, write_manifest


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / 'out'


@pytest.fixture
def config_path(tmp_path, out_dir, monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    config = load_config()
    config['synth']['n_subjects'] = 4
    config['synth']['repetitions'] = 1
    config['synth']['sphere'].update({
        'azimuth_step_deg': 30.0,
        'elevation_step_deg': 30.0,
        'elevation_min_deg': -30.0,
    })
    config['output']['output_dir'] = str(out_dir)
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(config, allow_unicode=True), encoding='utf-8')
    return path


def _run(config_path, *argv) -> int:
    command, *rest = argv
    return main([command, '--config', str(config_path), '--quiet', *rest])


def _outputs(path):
    record = yaml.safe_load(path.read_text(encoding='utf-8'))
    return {o['path']: o['sha256'] for o in record['outputs']}


def test_full_pipeline(config_path, out_dir):
    assert _run(config_path, 'synth') == 0
    synth_manifest = out_dir / 'synth' / 'manifest.yaml'
    assert synth_manifest.exists()
    assert (out_dir / 'synth' / 'bundles' / 'S04' / 'random.hrirb').exists()

    assert _run(config_path, 'preprocess', '--manifest', str(synth_manifest)) == 0
    pre_manifest = out_dir / 'preprocessed' / 'manifest.yaml'
    assert pre_manifest.exists()
    processed = load_set(out_dir / 'preprocessed' / 'S01' / 'pr_synthetic.hrirb', 'S01', 'pr_synthetic')
    assert processed.is_no_itd

    assert _run(config_path, 'compare', '--manifest', str(pre_manifest), '--n-perm', '99') == 0
    compare_dir = out_dir / 'compare'
    for name in ('cue_aggregates.csv', 'cue_summary.csv', 'lsd_curves.csv', 'lsd_clusters.csv',
                 'lsd_clusters.svg', 'lsd_table.csv', 'spatial/pr_synthetic_ild.svg',
                 'spatial/random_lsd.csv', 'magnitude/measured_median_left.svg', 'run_record.yaml'):
        assert (compare_dir / name).exists(), name
    aggregates = pd.read_csv(compare_dir / 'cue_aggregates.csv')
    assert len(aggregates) == 8
    assert set(aggregates['condition']) == {'pr_synthetic', 'random'}
    assert (aggregates['mean_lsd_db'] > 0).all()
    lsd_table = pd.read_csv(compare_dir / 'lsd_table.csv')
    assert list(lsd_table.columns) == ['participant', 'condition', 'lsd_db']

    first = _outputs(compare_dir / 'run_record.yaml')
    assert _run(config_path, 'compare', '--manifest', str(pre_manifest), '--n-perm', '99') == 0
    assert _outputs(compare_dir / 'run_record.yaml') == first

    assert _run(config_path, 'behave', '--manifest', str(pre_manifest),
                '--lsd-table', str(compare_dir / 'lsd_table.csv')) == 0
    behave_dir = out_dir / 'behave'
    participants = pd.read_csv(behave_dir / 'participants.csv')
    assert len(participants) == 4 * 3
    assert (participants['n_locations'] == 33).all()
    for name in ('trials.csv', 'group.csv', 'condition_tests.csv', 'plane_correlation.csv', 'lsd_correlation.csv'):
        assert (behave_dir / name).exists(), name


def test_synth_is_reproducible(config_path, out_dir):
    assert _run(config_path, 'synth') == 0
    first = _outputs(out_dir / 'synth' / 'run_record.yaml')
    assert _run(config_path, 'synth') == 0
    assert _outputs(out_dir / 'synth' / 'run_record.yaml') == first
    assert _run(config_path, 'synth', '--seed', '1') == 0
    assert _outputs(out_dir / 'synth' / 'run_record.yaml') != first


def test_self_comparison_is_zero(config_path, out_dir, tmp_path):
    assert _run(config_path, 'synth') == 0
    bundle = out_dir / 'synth' / 'bundles' / 'S01' / 'measured.hrirb'
    manifest = write_manifest({
        'reference_label': 'measured',
        'subjects': [{'id': 'S01', 'reference': str(bundle), 'conditions': [{'name': 'self', 'path': str(bundle)}]}],
    }, tmp_path / 'self.yaml')
    assert _run(config_path, 'compare', '--manifest', str(manifest), '--n-perm', '9') == 0
    row = pd.read_csv(out_dir / 'compare' / 'cue_aggregates.csv').iloc[0]
    assert row['mean_abs_itd_us'] == 0.0
    assert row['mean_abs_ild_db'] == 0.0
    assert row['mean_lsd_db'] == 0.0


def test_missing_input_exits_2(config_path, tmp_path, capsys):
    manifest = write_manifest({
        'subjects': [{'id': 'S01', 'reference': str(tmp_path / 'gone.hrirb')}],
    }, tmp_path / 'missing.yaml')
    assert _run(config_path, 'preprocess', '--manifest', str(manifest)) == 2
    assert 'MissingInput' in capsys.readouterr().err


def test_delay_exceeding_length_exits_2(config_path):
    config = yaml.safe_load(config_path.read_text(encoding='utf-8'))
    config['synth']['sphere']['base_delay_samples'] = 250
    config_path.write_text(yaml.safe_dump(config, allow_unicode=True), encoding='utf-8')
    assert _run(config_path, 'synth') == 2


def test_behave_needs_a_log(config_path):
    assert _run(config_path, 'behave') == 2


def test_env_output_dir_wins(config_path, tmp_path, monkeypatch):
    env_dir = tmp_path / 'env'
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(env_dir))
    assert _run(config_path, 'synth', '--out', str(tmp_path / 'cli')) == 0
    assert (env_dir / 'synth' / 'manifest.yaml').exists()
    assert not (tmp_path / 'cli').exists()


def test_parse_band():
    assert parse_band('1000:16000') == [1000.0, 16000.0]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_band('16000:1000')


def test_derive_seed_is_stable():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
