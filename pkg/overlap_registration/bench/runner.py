"""Experiment commands: synthesize a suite, run the registration matrix, time weights, dump weights."""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..dataset_io import DatasetManifest, load_frames, write_kitti_poses, write_ply, write_result
from ..eoe import calc_omega_weights, eoe_register, weight_timing_probe
from ..errors import OverlapRegError
from ..geometry import (
    PointCloud,
    RigidTransform,
    SensorFov,
    compound_poses,
    pose_error_euler,
    transform_compose,
    transform_inverse,
)
from ..registration import BaseRegistrar, RegistrationResult
from ..view_sim import ViewSequence, load_world, make_sequence, orbit_views, overlap_fraction
from .config import ConfigurationError, ExperimentConfig
from .preview import render_weights_preview
from .report import avg_median_table, cell_label, rotation_table, summary_rows, write_csv
from .timing import TimingTracker, linear_fit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_CELL_FAILURES = 2

WEIGHT_DUMP_FIELDS = ['cloud', 'index', 'x', 'y', 'z', 'weight', 'penalty']


@dataclass(frozen=True)
class Dataset:
    """Frames in sequence order with optional absolute ground-truth poses and the sensor FOV.

    `dropped_records` counts file records skipped for non-finite coordinates.
    """

    frames: List[PointCloud]
    poses: Optional[List[RigidTransform]]
    fov: Optional[SensorFov]
    dropped_records: int = 0

    def relative_pose(self, target: int, source: int) -> Optional[RigidTransform]:
        """Ground truth mapping frame `source` into frame `target`, if poses are known."""
        if self.poses is None:
            return None
        return transform_compose(transform_inverse(self.poses[target]), self.poses[source])


def synthetic_sequence(config: ExperimentConfig) -> ViewSequence:
    preset = config.synthetic_preset()
    world = load_world(preset['world'], preset['up_axis'], int(preset['n_points']), config.seed,
                       relief=float(preset['relief']))
    psi_max = math.inf if preset['psi_max'] is None else float(preset['psi_max'])
    views = orbit_views(
        count=int(preset['views']),
        yaw_step_deg=float(preset['yaw_step_deg']),
        h_fov_deg=float(preset['h_fov_deg']),
        v_fov_deg=float(preset['v_fov_deg']),
        psi_min=float(preset['psi_min']),
        psi_max=psi_max,
        radius=float(preset['radius']),
        heading_offset_deg=float(preset['heading_offset_deg']),
        noise_sigma=float(preset['noise_sigma']),
        seed=config.seed,
    )
    return make_sequence(world, views)


def load_dataset(config: ExperimentConfig, workers: int = 1) -> Dataset:
    """Frames from the configured manifest, or the synthetic suite generated in memory."""
    if 'manifest' in config.dataset:
        manifest = DatasetManifest.load(config.resolve_path(config.dataset['manifest']))
        loaded = load_frames(manifest, workers)
        return Dataset(loaded.clouds, loaded.poses, manifest.fov, sum(loaded.dropped))
    sequence = synthetic_sequence(config)
    return Dataset(list(sequence.frames), list(sequence.poses), sequence.fovs[0])


def resolve_fovs(config: ExperimentConfig, dataset: Dataset) -> Tuple[SensorFov, SensorFov]:
    """Config FOVs first, then the dataset's own, then an unrestricted sensor."""
    fallback = dataset.fov or SensorFov.full_sphere()
    return config.fov_source() or fallback, config.fov_target() or fallback


def _register_pair(config: ExperimentConfig, registrar: BaseRegistrar, use_eoe: bool,
                   source: PointCloud, target: PointCloud, init: Optional[RigidTransform],
                   fovs: Tuple[SensorFov, SensorFov], workers: int) -> RegistrationResult:
    if not use_eoe:
        return registrar.register(source, target, init=init)
    fov_source, fov_target = fovs
    return eoe_register(
        source, target, registrar, fov_source, fov_target,
        penalties=config.penalties(),
        schedule=config.schedule(),
        init=init,
        corrected_vertical=config.corrected_vertical,
        workers=workers,
    )


def run_cell(config: ExperimentConfig, spec: Dict[str, Any], use_eoe: bool, dataset: Dataset,
             fovs: Tuple[SensorFov, SensorFov], tracker: TimingTracker,
             workers: int = 1) -> Tuple[List[Dict[str, Any]], Optional[Dict[str, float]]]:
    """
    Register every consecutive frame pair for one (algorithm, EOE mode) cell.

    Frame i is the target and frame i+1 the source, so each estimate maps
    frame i+1 into frame i. Failures are recorded and the cell moves on.

    Returns:
        (per-pair result entries, trajectory drift or None)
    """
    registrar = config.registrar(spec)
    label = cell_label(registrar.name, use_eoe)
    entries = []
    estimates = []
    previous: Optional[RigidTransform] = None

    for target_index in range(len(dataset.frames) - 1):
        source_index = target_index + 1
        pair = (target_index, source_index)
        init = previous if config.init == 'prior-pose-chain' else None
        entry: Dict[str, Any] = {
            'algorithm': spec['name'],
            'display_name': registrar.name,
            'eoe': use_eoe,
            'pair': list(pair),
        }

        start = time.perf_counter()
        try:
            result = _register_pair(config, registrar, use_eoe, dataset.frames[source_index],
                                    dataset.frames[target_index], init, fovs, workers)
        except OverlapRegError as e:
            elapsed = time.perf_counter() - start
            logger.warning('%s failed on pair %d->%d: %s', label, source_index, target_index, e)
            tracker.track(label, elapsed, 'failed', pair)
            entry.update({
                'status': 'failed',
                'error': {
                    'type': type(e).__name__,
                    'message': str(e),
                    'outer_iteration': getattr(e, 'outer_iteration', None),
                },
                'time_s': elapsed,
            })
            entries.append(entry)
            estimates.append(None)
            previous = None
            continue

        elapsed = time.perf_counter() - start
        status = 'converged' if result.converged else 'not-converged'
        tracker.track(label, elapsed, status, pair)
        entry.update({
            'status': status,
            'transform': result.transform.as_rows_3x4(),
            'iterations': result.iterations,
            'outer_iterations': result.outer_iterations,
            'final_rmsd': result.final_rmsd,
        })
        truth = dataset.relative_pose(target_index, source_index)
        if truth is not None:
            error = pose_error_euler(result.transform, truth)
            entry.update({
                'rotation_error_deg': error.rotation_error,
                'translation_error_m': error.translation_error,
                'gimbal_lock': error.gimbal_lock,
            })
        entry['time_s'] = elapsed
        entries.append(entry)
        estimates.append(result.transform)
        previous = result.transform

    drift = None
    if dataset.poses is not None and all(estimate is not None for estimate in estimates):
        truths = [dataset.relative_pose(i, i + 1) for i in range(len(estimates))]
        error = pose_error_euler(compound_poses(estimates)[-1], compound_poses(truths)[-1])
        drift = {'rotation_deg': error.rotation_error, 'translation_m': error.translation_error}
    return entries, drift


def cmd_synth(config: ExperimentConfig, output: Path) -> int:
    """Write the synthetic suite (frames, absolute poses, manifest, pairwise overlap) next to `output`."""
    output = Path(output)
    if not output.suffix:
        raise ConfigurationError(f'--output must name a results file such as results.json, got {output}')
    dataset_dir = output.with_suffix('')
    sequence = synthetic_sequence(config)

    frame_paths = []
    for i, frame in enumerate(sequence.frames):
        path = dataset_dir / 'frames' / f'frame_{i:03d}.ply'
        write_ply(path, frame)
        frame_paths.append(path)
    poses_path = dataset_dir / 'poses.txt'
    write_kitti_poses(poses_path, sequence.poses)
    manifest_path = dataset_dir / 'manifest.json'
    DatasetManifest(tuple(frame_paths), 'ply', poses=poses_path, rng_seed=config.seed,
                    fov=sequence.fovs[0]).save(manifest_path)

    entries = []
    for i, relative in enumerate(sequence.relative_poses):
        overlap = overlap_fraction(sequence.frames[i], sequence.frames[i + 1],
                                   sequence.fovs[i], sequence.fovs[i + 1], relative)
        entries.append({
            'pair': [i, i + 1],
            'overlap': overlap,
            'points': [len(sequence.frames[i]), len(sequence.frames[i + 1])],
            'transform': relative.as_rows_3x4(),
        })
    write_csv(dataset_dir / 'overlap.csv',
              [{'target': e['pair'][0], 'source': e['pair'][1], 'overlap': e['overlap']} for e in entries],
              ['target', 'source', 'overlap'])

    write_result(output, {
        'command': 'synth',
        'config': config.to_dict(),
        'dataset': str(manifest_path),
        'results': entries,
    })

    for i, frame in enumerate(sequence.frames):
        print(f"✅ Frame {i}: {len(frame)} points")
    for entry in entries:
        print(f"   Overlap {entry['pair'][0]}-{entry['pair'][1]}: {entry['overlap']:.3f}")
    print(f"\nDataset written to: {dataset_dir}/")
    return EXIT_OK


def cmd_register(config: ExperimentConfig, output: Path, single_thread: bool = False) -> int:
    """
    Run every (algorithm, EOE mode) cell over the dataset and write the results document.

    Cells run in parallel unless `single_thread`; entries are always written in
    config order.

    Returns:
        EXIT_OK when every pair succeeded, EXIT_CELL_FAILURES otherwise
    """
    output = Path(output)
    threads = 1 if single_thread else config.threads
    dataset = load_dataset(config, threads)
    if len(dataset.frames) < 2:
        raise ConfigurationError(f'register needs at least two frames, dataset has {len(dataset.frames)}')
    fovs = resolve_fovs(config, dataset)
    log_file = config.resolve_path(config.timing_log) if config.timing_log else None
    tracker = TimingTracker(log_file)

    cells = [(spec, use_eoe) for spec in config.algorithms for use_eoe in config.eoe_modes()]
    inner_workers = threads if len(cells) == 1 else 1

    def run(cell):
        spec, use_eoe = cell
        return run_cell(config, spec, use_eoe, dataset, fovs, tracker, inner_workers)

    if threads == 1 or len(cells) == 1:
        outcomes = [run(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=min(threads, len(cells))) as pool:
            outcomes = list(pool.map(run, cells))

    entries = [entry for cell_entries, _ in outcomes for entry in cell_entries]
    summary = []
    for cell_entries, drift in outcomes:
        row = summary_rows(cell_entries)[0]
        row['drift_rotation_deg'] = None if drift is None else drift['rotation_deg']
        row['drift_translation_m'] = None if drift is None else drift['translation_m']
        summary.append(row)

    write_result(output, {
        'command': 'register',
        'config': config.to_dict(),
        'dataset': {
            'frames': len(dataset.frames),
            'ground_truth': dataset.poses is not None,
            'dropped_records': dataset.dropped_records,
        },
        'results': entries,
        'summary': summary,
        'timing': tracker.get_breakdown(),
    })
    write_csv(output.with_suffix('.csv'), summary)

    for entry in entries:
        if entry['status'] == 'failed':
            print(f"❌ {cell_label(entry['display_name'], entry['eoe'])} pair {entry['pair']}: "
                  f"{entry['error']['message']}")
    if dataset.poses is not None:
        print(rotation_table(summary))
        print()
        print(avg_median_table(summary))
    print('\n' + tracker.display_summary())

    failures = sum(row['failures'] for row in summary)
    if failures:
        print(f"\n❌ {failures} of {len(entries)} registrations failed; results: {output}")
        return EXIT_CELL_FAILURES
    print(f"\n✅ {len(entries)} registrations written to: {output}")
    return EXIT_OK


def cmd_timing(config: ExperimentConfig, output: Path) -> int:
    """Median weight-computation time per cloud size, plus a linear fit of time against size."""
    output = Path(output)
    samples = weight_timing_probe(
        [int(n) for n in config.timing['sizes']],
        trials=int(config.timing.get('trials', 5)),
        seed=config.seed,
        workers=config.threads,
    )
    rows = [{'n': sample.n, 'median_ms': sample.median_ms} for sample in samples]
    write_csv(output.with_suffix('.csv'), rows, ['n', 'median_ms'])

    fit = linear_fit(samples) if len(samples) >= 2 else None
    write_result(output, {
        'command': 'timing',
        'config': config.to_dict(),
        'results': rows,
        'fit': None if fit is None else {
            'slope_ms_per_point': fit.slope_ms_per_point,
            'intercept_ms': fit.intercept_ms,
            'r_squared': fit.r_squared,
        },
    })

    for row in rows:
        print(f"✅ n={row['n']:>8}: {row['median_ms']:.3f} ms")
    if fit is not None:
        print(f"\nSlope: {fit.slope_ms_per_point * 1e6:.3f} ms per million points (R² = {fit.r_squared:.4f})")
    return EXIT_OK


def _weight_rows(name: str, cloud: PointCloud, weights) -> List[Dict[str, Any]]:
    return [
        {'cloud': name, 'index': i, 'x': float(p[0]), 'y': float(p[1]), 'z': float(p[2]),
         'weight': float(w), 'penalty': float(xi)}
        for i, (p, w, xi) in enumerate(zip(cloud.points, weights.weights, weights.penalties))
    ]


def cmd_weights(config: ExperimentConfig, output: Path, pair: Optional[Sequence[int]] = None,
                preview: Optional[Path] = None) -> int:
    """
    Run EOE on one frame pair and dump the final per-point overlap weights.

    Args:
        config: Experiment configuration
        output: Results document; the weight CSV goes next to it
        pair: (target frame, source frame); defaults to weights.pair from the config
        preview: Optional PNG for a top-down view of the estimate

    Returns:
        EXIT_OK
    """
    output = Path(output)
    target_index, source_index = pair if pair is not None else config.weights['pair']
    dataset = load_dataset(config, config.threads)
    count = len(dataset.frames)
    for index in (target_index, source_index):
        if not 0 <= index < count:
            raise ConfigurationError(f'frame index {index} out of range for {count} frames')
    if target_index == source_index:
        raise ConfigurationError('weights pair must name two different frames')

    name = config.weights.get('algorithm', config.algorithms[0]['name'])
    spec = next((s for s in config.algorithms if s['name'] == name), {'name': name})
    try:
        registrar = config.registrar(spec)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f'weights.algorithm: {e}') from e

    source, target = dataset.frames[source_index], dataset.frames[target_index]
    fov_source, fov_target = resolve_fovs(config, dataset)
    penalties = config.penalties()
    result = eoe_register(source, target, registrar, fov_source, fov_target,
                          penalties=penalties, schedule=config.schedule(),
                          corrected_vertical=config.corrected_vertical, workers=config.threads)

    # Point-level weights at the final estimate for both clouds, for every registrar
    source_weights = calc_omega_weights(source, result.transform.inverse(), fov_target, penalties,
                                        corrected_vertical=config.corrected_vertical,
                                        workers=config.threads)
    target_weights = calc_omega_weights(target, result.transform, fov_source, penalties,
                                        corrected_vertical=config.corrected_vertical,
                                        workers=config.threads)

    dump_path = output.with_suffix('.csv')
    write_csv(dump_path,
              _weight_rows('source', source, source_weights) + _weight_rows('target', target, target_weights),
              WEIGHT_DUMP_FIELDS)

    write_result(output, {
        'command': 'weights',
        'config': config.to_dict(),
        'dump': str(dump_path),
        'results': [{
            'pair': [target_index, source_index],
            'algorithm': spec['name'],
            'display_name': registrar.name,
            'transform': result.transform.as_rows_3x4(),
            'converged': result.converged,
            'outer_iterations': result.outer_iterations,
            'source_weights': source_weights.stats().to_dict(),
            'target_weights': target_weights.stats().to_dict(),
        }],
    })

    for label, weights in (('source', source_weights), ('target', target_weights)):
        stats = weights.stats()
        print(f"✅ {label}: {stats.count} points, {stats.fraction_downweighted:.1%} downweighted "
              f"(min weight {stats.min:.3g})")
    print(f"Weights written to: {dump_path}")

    if preview is not None:
        path = render_weights_preview(Path(preview), [
            (result.transform.apply(source.points), source_weights.weights),
            (target.points, target_weights.weights),
        ])
        print(f"✅ Preview saved to: {path}")
    return EXIT_OK
