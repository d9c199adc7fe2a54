"""Tests for the experiment commands."""

import csv
from unittest.mock import patch

import numpy as np
import pytest

from overlap_registration.bench.config import ConfigurationError, ExperimentConfig
from overlap_registration.bench.runner import (
    EXIT_CELL_FAILURES,
    EXIT_OK,
    WEIGHT_DUMP_FIELDS,
    cmd_register,
    cmd_synth,
    cmd_timing,
    cmd_weights,
    load_dataset,
    resolve_fovs,
)
from overlap_registration.dataset_io import DatasetManifest, read_result, write_kitti_poses, write_ply
from overlap_registration.errors import RankDeficientError
from overlap_registration.geometry import RigidTransform, SensorFov
from overlap_registration.registration import RegistrationResult

SMALL_SUITE = {'n_points': 3000, 'views': 3}


def small_config(tmp_path, **overrides):
    settings = {
        'dataset': {'synthetic': dict(SMALL_SUITE)},
        'algorithms': [{'name': 'icp'}],
        'icp': {'max_iterations': 30},
        'eoe': {'mode': 'both', 'schedule': {'max_outer_iterations': 5}},
        'base_dir': tmp_path,
    }
    settings.update(overrides)
    config = ExperimentConfig(**settings)
    config.validate()
    return config


def without_timing(document):
    document = dict(document)
    document.pop('timing')
    document['results'] = [{k: v for k, v in e.items() if k != 'time_s'} for e in document['results']]
    return document


@pytest.fixture
def identical_pair(tmp_path, box_cloud):
    """Manifest whose two frames are the same cloud at the same pose."""
    frame = tmp_path / 'data' / 'frame.ply'
    write_ply(frame, box_cloud)
    write_kitti_poses(tmp_path / 'data' / 'poses.txt', [RigidTransform.identity()] * 2)
    manifest = tmp_path / 'data' / 'manifest.json'
    DatasetManifest((frame, frame), poses=tmp_path / 'data' / 'poses.txt').save(manifest)
    return manifest


def test_synth_writes_suite(clean_env, tmp_path, capsys):
    config = small_config(tmp_path)
    output = tmp_path / 'suite.json'

    assert cmd_synth(config, output) == EXIT_OK

    dataset_dir = tmp_path / 'suite'
    assert sorted(p.name for p in (dataset_dir / 'frames').iterdir()) == [
        'frame_000.ply', 'frame_001.ply', 'frame_002.ply']
    assert len((dataset_dir / 'poses.txt').read_text().splitlines()) == 3

    document = read_result(output)
    assert document['command'] == 'synth'
    assert [e['pair'] for e in document['results']] == [[0, 1], [1, 2]]
    assert all(0.0 < e['overlap'] < 1.0 for e in document['results'])

    with open(dataset_dir / 'overlap.csv', newline='') as f:
        rows = list(csv.DictReader(f))
    assert [(r['target'], r['source']) for r in rows] == [('0', '1'), ('1', '2')]

    manifest = DatasetManifest.load(dataset_dir / 'manifest.json')
    assert manifest.fov == SensorFov.from_degrees(60.0, 60.0, psi_min=0.01, psi_max=10.0)
    assert 'Dataset written to' in capsys.readouterr().out


def test_synth_is_reproducible(clean_env, tmp_path):
    config = small_config(tmp_path)
    cmd_synth(config, tmp_path / 'a' / 'suite.json')
    cmd_synth(config, tmp_path / 'b' / 'suite.json')

    for name in ('frames/frame_000.ply', 'frames/frame_002.ply', 'poses.txt', 'manifest.json'):
        assert (tmp_path / 'a' / 'suite' / name).read_bytes() == (tmp_path / 'b' / 'suite' / name).read_bytes()
    first = read_result(tmp_path / 'a' / 'suite.json')
    second = read_result(tmp_path / 'b' / 'suite.json')
    assert first['results'] == second['results']


def test_synth_needs_a_file_suffix(clean_env, tmp_path):
    with pytest.raises(ConfigurationError, match='--output'):
        cmd_synth(small_config(tmp_path), tmp_path / 'suite')


def test_synthetic_dataset_carries_sensor_fov(clean_env, tmp_path):
    config = small_config(tmp_path)
    dataset = load_dataset(config)
    assert len(dataset.frames) == 3
    fov_source, fov_target = resolve_fovs(config, dataset)
    assert fov_source == fov_target == dataset.fov

    wide = small_config(tmp_path, eoe={'fov_source': {}})
    assert resolve_fovs(wide, dataset)[0].is_full_sphere
    assert resolve_fovs(wide, dataset)[1] == dataset.fov


def test_register_identical_frames_has_zero_error(clean_env, tmp_path, identical_pair):
    config = small_config(tmp_path, dataset={'manifest': str(identical_pair)}, timing_log='timing.log')
    output = tmp_path / 'results.json'

    assert cmd_register(config, output) == EXIT_OK

    document = read_result(output)
    assert [(e['display_name'], e['eoe']) for e in document['results']] == [('ICP', False), ('ICP', True)]
    for entry in document['results']:
        assert entry['status'] == 'converged'
        assert entry['rotation_error_deg'] < 1e-6
        assert entry['translation_error_m'] < 1e-9
        assert entry['time_s'] >= 0.0
    # No sensor FOV anywhere: EOE runs a single outer pass
    assert document['results'][1]['outer_iterations'] == 1
    assert document['dataset'] == {'frames': 2, 'ground_truth': True, 'dropped_records': 0}
    assert [row['cell'] for row in document['summary']] == ['ICP', 'ICP+EOE']
    assert document['summary'][0]['drift_rotation_deg'] < 1e-6
    assert set(document['timing']) == {'ICP', 'ICP+EOE', 'total'}

    assert output.with_suffix('.csv').exists()
    assert 'Pair: 0->1' in (tmp_path / 'timing.log').read_text()


def test_register_is_deterministic_across_thread_counts(clean_env, tmp_path):
    algorithms = [{'name': 'icp'}, {'name': 'gmm'}]
    serial = small_config(tmp_path, algorithms=algorithms, gmm={'n_components': 8})
    parallel = small_config(tmp_path, algorithms=algorithms, gmm={'n_components': 8}, threads=3)

    cmd_register(serial, tmp_path / 'one.json', single_thread=True)
    cmd_register(serial, tmp_path / 'two.json', single_thread=True)
    cmd_register(parallel, tmp_path / 'three.json')

    one = without_timing(read_result(tmp_path / 'one.json'))
    two = without_timing(read_result(tmp_path / 'two.json'))
    three = without_timing(read_result(tmp_path / 'three.json'))
    assert one == two
    three['config']['threads'] = one['config']['threads']
    assert one == three
    assert [(e['algorithm'], e['eoe']) for e in one['results']][::2] == [
        ('icp', False), ('icp', True), ('gmm', False), ('gmm', True)]


def test_register_records_failures(clean_env, tmp_path, identical_pair, capsys):
    config = small_config(tmp_path, dataset={'manifest': str(identical_pair)}, eoe={'mode': 'off'})
    output = tmp_path / 'results.json'

    with patch('overlap_registration.bench.runner._register_pair',
               side_effect=RankDeficientError('weighted source points are collinear')):
        assert cmd_register(config, output) == EXIT_CELL_FAILURES

    entry = read_result(output)['results'][0]
    assert entry['status'] == 'failed'
    assert entry['error']['type'] == 'RankDeficientError'
    assert entry['error']['outer_iteration'] is None
    assert 'transform' not in entry
    summary = read_result(output)['summary'][0]
    assert summary['failures'] == 1
    assert summary['drift_rotation_deg'] is None
    assert '❌' in capsys.readouterr().out


def test_prior_pose_chain_seeds_the_next_pair(clean_env, tmp_path):
    config = small_config(tmp_path, eoe={'mode': 'off'}, init='prior-pose-chain',
                          dataset={'synthetic': {'n_points': 3000, 'views': 4}})
    first = RigidTransform.from_euler_zyx(0.1, 0.0, 0.0)
    second = RigidTransform.from_euler_zyx(0.2, 0.0, 0.0)
    outcomes = [
        RegistrationResult(first, 0, True, 0.0),
        RankDeficientError('collinear'),
        RegistrationResult(second, 0, True, 0.0),
    ]

    with patch('overlap_registration.bench.runner._register_pair', side_effect=outcomes) as fake:
        cmd_register(config, tmp_path / 'results.json')

    inits = [call.args[5] for call in fake.call_args_list]
    assert inits[0] is None
    assert inits[1] is first
    # A failure resets the chain
    assert inits[2] is None


def test_register_rejects_single_frame_dataset(clean_env, tmp_path, box_cloud):
    frame = tmp_path / 'frame.ply'
    write_ply(frame, box_cloud)
    manifest = tmp_path / 'manifest.json'
    DatasetManifest((frame,)).save(manifest)
    config = small_config(tmp_path, dataset={'manifest': str(manifest)})
    with pytest.raises(ConfigurationError, match='at least two frames'):
        cmd_register(config, tmp_path / 'results.json')


def test_timing_writes_csv_and_fit(clean_env, tmp_path):
    config = small_config(tmp_path, timing={'sizes': [100, 1000, 5000], 'trials': 1})
    output = tmp_path / 'timing.json'

    assert cmd_timing(config, output) == EXIT_OK

    with open(output.with_suffix('.csv'), newline='') as f:
        rows = list(csv.DictReader(f))
    assert [int(r['n']) for r in rows] == [100, 1000, 5000]
    document = read_result(output)
    assert set(document['fit']) == {'slope_ms_per_point', 'intercept_ms', 'r_squared'}


def test_timing_single_size_has_no_fit(clean_env, tmp_path):
    config = small_config(tmp_path, timing={'sizes': [200], 'trials': 1})
    cmd_timing(config, tmp_path / 'timing.json')
    assert read_result(tmp_path / 'timing.json')['fit'] is None


def test_weights_full_sphere_are_all_ones(clean_env, tmp_path, identical_pair):
    config = small_config(tmp_path, dataset={'manifest': str(identical_pair)})
    output = tmp_path / 'weights.json'

    assert cmd_weights(config, output) == EXIT_OK

    with open(output.with_suffix('.csv'), newline='') as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == WEIGHT_DUMP_FIELDS
        rows = list(reader)
    assert len(rows) == 2 * 400
    assert all(float(r['weight']) == 1.0 for r in rows)
    assert {r['cloud'] for r in rows} == {'source', 'target'}

    entry = read_result(output)['results'][0]
    assert entry['pair'] == [0, 1]
    assert entry['outer_iterations'] == 1
    assert entry['source_weights']['fraction_downweighted'] == 0.0


def test_weights_with_sensor_fov_and_preview(clean_env, tmp_path):
    config = small_config(tmp_path, weights={'pair': [0, 1], 'algorithm': 'trimmed'})
    output = tmp_path / 'weights.json'
    preview = tmp_path / 'omega.png'

    assert cmd_weights(config, output, preview=preview) == EXIT_OK

    entry = read_result(output)['results'][0]
    assert entry['display_name'] == 'TrICP'
    assert 0.0 < entry['source_weights']['fraction_downweighted'] < 1.0
    assert preview.exists()

    with open(output.with_suffix('.csv'), newline='') as f:
        weights = np.array([float(r['weight']) for r in csv.DictReader(f)])
    assert np.all((weights > 0.0) & (weights <= 1.0))


@pytest.mark.parametrize('pair,message', [((0, 5), 'out of range'), ((1, 1), 'two different frames')])
def test_weights_rejects_bad_pairs(clean_env, tmp_path, pair, message):
    with pytest.raises(ConfigurationError, match=message):
        cmd_weights(small_config(tmp_path), tmp_path / 'weights.json', pair=pair)
