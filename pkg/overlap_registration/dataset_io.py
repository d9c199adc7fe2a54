"""Point cloud files, KITTI odometry artifacts, dataset manifests and results documents.

Readers reject malformed input rather than coercing it; every error names the
file and, where it applies, the byte offset or line number.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DatasetError, GeometryError, KittiFormatError, PlyFormatError, ResultSchemaError
from .geometry import PointCloud, RigidTransform, SensorFov, transform_compose, transform_inverse

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SCHEMA_VERSION = '1.0'
KITTI_RECORD_BYTES = 16

PLY_TYPES = {
    'char': 'i1', 'int8': 'i1',
    'uchar': 'u1', 'uint8': 'u1',
    'short': 'i2', 'int16': 'i2',
    'ushort': 'u2', 'uint16': 'u2',
    'int': 'i4', 'int32': 'i4',
    'uint': 'u4', 'uint32': 'u4',
    'float': 'f4', 'float32': 'f4',
    'double': 'f8', 'float64': 'f8',
}
PLY_FORMATS = ('ascii', 'binary_little_endian')


# --- PLY -------------------------------------------------------------------

@dataclass
class _PlyElement:
    name: str
    count: int
    properties: List[Tuple[str, str]] = field(default_factory=list)
    has_list: bool = False


def _parse_ply_header(data: bytes, path: Path) -> Tuple[str, List[_PlyElement], int]:
    """Return (format, elements, byte offset of the body)."""
    if not data.startswith(b'ply'):
        raise PlyFormatError('missing "ply" magic number', path, 0)
    end = data.find(b'end_header')
    if end < 0:
        raise PlyFormatError('header has no end_header line', path, len(data))
    newline = data.find(b'\n', end)
    body_offset = len(data) if newline < 0 else newline + 1

    fmt = None
    elements: List[_PlyElement] = []
    offset = 0
    for raw in data[:end].split(b'\n'):
        line_offset = offset
        offset += len(raw) + 1
        try:
            tokens = raw.decode('ascii').split()
        except UnicodeDecodeError:
            raise PlyFormatError('non-ASCII bytes in header', path, line_offset)
        if not tokens or tokens[0] in ('ply', 'comment', 'obj_info'):
            continue
        keyword = tokens[0]
        if keyword == 'format':
            if len(tokens) != 3:
                raise PlyFormatError('malformed format line', path, line_offset)
            fmt = tokens[1]
            if fmt == 'binary_big_endian':
                raise PlyFormatError('big-endian PLY is not supported', path, line_offset)
            if fmt not in PLY_FORMATS:
                raise PlyFormatError(f'unknown PLY format {fmt!r}', path, line_offset)
        elif keyword == 'element':
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PlyFormatError('malformed element line', path, line_offset)
            elements.append(_PlyElement(tokens[1], int(tokens[2])))
        elif keyword == 'property':
            if not elements:
                raise PlyFormatError('property declared before any element', path, line_offset)
            if len(tokens) >= 2 and tokens[1] == 'list':
                elements[-1].has_list = True
                continue
            if len(tokens) != 3 or tokens[1] not in PLY_TYPES:
                raise PlyFormatError(f'malformed property line {raw!r}', path, line_offset)
            elements[-1].properties.append((tokens[2], PLY_TYPES[tokens[1]]))
        else:
            raise PlyFormatError(f'unexpected header keyword {keyword!r}', path, line_offset)

    if fmt is None:
        raise PlyFormatError('header has no format line', path, 0)
    return fmt, elements, body_offset


def _vertex_layout(elements: List[_PlyElement], path: Path) -> Tuple[int, _PlyElement]:
    for position, element in enumerate(elements):
        if element.name == 'vertex':
            names = [name for name, _ in element.properties]
            missing = [axis for axis in ('x', 'y', 'z') if axis not in names]
            if missing:
                raise PlyFormatError(f'vertex element lacks properties {missing}', path)
            if element.has_list:
                raise PlyFormatError('list properties on vertices are not supported', path)
            return position, element
    raise PlyFormatError('no vertex element in header', path)


class FrameRead(NamedTuple):
    """Cloud read from a file and how many records were dropped for non-finite coordinates."""

    cloud: PointCloud
    dropped: int = 0


def _finite_cloud(points: np.ndarray, intensity: Optional[np.ndarray], path: Path) -> FrameRead:
    finite = np.all(np.isfinite(points), axis=1)
    dropped = int(len(points) - np.count_nonzero(finite))
    if dropped:
        logger.warning('%s: dropped %d records with non-finite coordinates', path, dropped)
        points = points[finite]
        intensity = None if intensity is None else intensity[finite]
    return FrameRead(PointCloud(points, intensity), dropped)


def read_ply(path: PathLike) -> PointCloud:
    """Read x, y, z (and intensity, if present) from an ASCII or binary little-endian PLY file.

    Records with non-finite coordinates are dropped with a warning.

    Raises:
        PlyFormatError: Malformed header, truncated body or big-endian encoding
    """
    return _read_ply(Path(path)).cloud


def _read_ply(path: Path) -> FrameRead:
    data = path.read_bytes()
    fmt, elements, body_offset = _parse_ply_header(data, path)
    position, vertex = _vertex_layout(elements, path)
    names = [name for name, _ in vertex.properties]

    if fmt == 'ascii':
        lines = data[body_offset:].decode('ascii', errors='replace').splitlines()
        header_lines = data[:body_offset].count(b'\n')
        skip = sum(element.count for element in elements[:position])
        rows = lines[skip:skip + vertex.count]
        if len(rows) < vertex.count:
            raise PlyFormatError(
                f'truncated body: expected {vertex.count} vertex lines, found {len(rows)}',
                path, header_lines + skip + len(rows) + 1,
            )
        values = np.empty((vertex.count, len(names)))
        for i, row in enumerate(rows):
            tokens = row.split()
            if len(tokens) < len(names):
                raise PlyFormatError(f'vertex line has {len(tokens)} values, expected {len(names)}',
                                     path, header_lines + skip + i + 1)
            try:
                values[i] = [float(token) for token in tokens[:len(names)]]
            except ValueError:
                raise PlyFormatError('unparseable vertex value', path, header_lines + skip + i + 1)
        columns = {name: values[:, j] for j, name in enumerate(names)}
    else:
        offset = body_offset
        for element in elements[:position]:
            if element.has_list:
                raise PlyFormatError(
                    f'cannot skip list element {element.name!r} preceding the vertices', path, offset
                )
            offset += element.count * np.dtype([(n, '<' + t) for n, t in element.properties]).itemsize
        dtype = np.dtype([(name, '<' + code) for name, code in vertex.properties])
        needed = vertex.count * dtype.itemsize
        available = max(0, len(data) - offset)
        if available < needed:
            raise PlyFormatError(
                f'truncated body: expected {needed} bytes of vertex data, found {available} '
                f'({needed - available} bytes missing)',
                path, offset + available,
            )
        records = np.frombuffer(data, dtype=dtype, count=vertex.count, offset=offset)
        columns = {name: records[name].astype(np.float64) for name in names}

    points = np.column_stack([columns['x'], columns['y'], columns['z']])
    intensity = columns.get('intensity')
    return _finite_cloud(points, intensity, path)


def write_ply(path: PathLike, cloud: PointCloud, binary: bool = True) -> None:
    """Write a cloud as PLY with double-precision coordinates (and intensity, if present)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ['x', 'y', 'z'] + ([] if cloud.intensity is None else ['intensity'])
    header = ['ply', f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f'element vertex {len(cloud)}']
    header += [f'property double {name}' for name in names]
    header.append('end_header')
    columns = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    if cloud.intensity is not None:
        columns.append(cloud.intensity)

    with open(path, 'wb') as f:
        f.write(('\n'.join(header) + '\n').encode('ascii'))
        if binary:
            records = np.empty(len(cloud), dtype=[(name, '<f8') for name in names])
            for name, column in zip(names, columns):
                records[name] = column
            f.write(records.tobytes())
        else:
            np.savetxt(f, np.column_stack(columns), fmt='%.17g')


# --- XYZ text ----------------------------------------------------------------

def read_xyz(path: PathLike) -> PointCloud:
    """Whitespace-separated x y z [intensity] per line; '#' starts a comment."""
    return _read_xyz(Path(path)).cloud


def _read_xyz(path: Path) -> FrameRead:
    try:
        values = np.loadtxt(path, comments='#', ndmin=2)
    except ValueError as e:
        raise DatasetError(f'malformed XYZ file: {e}', path) from e
    if values.size == 0:
        return FrameRead(PointCloud(np.empty((0, 3))))
    if values.shape[1] not in (3, 4):
        raise DatasetError(f'expected 3 or 4 columns, got {values.shape[1]}', path)
    intensity = values[:, 3] if values.shape[1] == 4 else None
    return _finite_cloud(values[:, :3], intensity, path)


def write_xyz(path: PathLike, cloud: PointCloud, weights: Optional[np.ndarray] = None) -> None:
    """Write x y z [intensity] [weight] rows with full double precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [cloud.points]
    if cloud.intensity is not None:
        columns.append(cloud.intensity[:, None])
    if weights is not None:
        columns.append(np.asarray(weights, dtype=np.float64).reshape(-1, 1))
    np.savetxt(path, np.hstack(columns), fmt='%.17g')


# --- KITTI -------------------------------------------------------------------

def read_kitti_bin(path: PathLike) -> PointCloud:
    """Parse packed little-endian float32 (x, y, z, intensity) records.

    Raises:
        KittiFormatError: File size is not a multiple of 16 bytes
    """
    return _read_kitti_bin(Path(path)).cloud


def _read_kitti_bin(path: Path) -> FrameRead:
    data = path.read_bytes()
    if len(data) % KITTI_RECORD_BYTES:
        raise KittiFormatError(
            f'size {len(data)} bytes is not a multiple of {KITTI_RECORD_BYTES}',
            path, len(data) - len(data) % KITTI_RECORD_BYTES,
        )
    records = np.frombuffer(data, dtype='<f4').reshape(-1, 4).astype(np.float64)
    return _finite_cloud(records[:, :3], records[:, 3], path)


def write_kitti_bin(path: PathLike, cloud: PointCloud) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = np.empty((len(cloud), 4), dtype='<f4')
    records[:, :3] = cloud.points
    records[:, 3] = 0.0 if cloud.intensity is None else cloud.intensity
    path.write_bytes(records.tobytes())


def read_kitti_poses(path: PathLike) -> List[RigidTransform]:
    """One row-major 3×4 pose per line.

    Raises:
        KittiFormatError: Wrong token count, unparseable value or non-orthonormal rotation
    """
    path = Path(path)
    poses = []
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise KittiFormatError(f'line {number}: expected 12 values, got {len(tokens)}',
                                       path, number)
            try:
                matrix = np.array([float(token) for token in tokens]).reshape(3, 4)
                poses.append(RigidTransform.from_matrix(matrix))
            except (ValueError, GeometryError) as e:
                raise KittiFormatError(f'line {number}: {e}', path, number) from e
    return poses


def write_kitti_poses(path: PathLike, poses: Sequence[RigidTransform]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        for pose in poses:
            f.write(' '.join(f'{value:.17g}' for value in pose.as_rows_3x4()) + '\n')


def read_kitti_calib(path: PathLike) -> RigidTransform:
    """Velodyne-to-camera extrinsic `Tr` (or `Tr_velo_to_cam`) from a sequence calib file."""
    path = Path(path)
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            key, _, rest = line.partition(':')
            if key.strip() not in ('Tr', 'Tr_velo_to_cam'):
                continue
            tokens = rest.split()
            if len(tokens) != 12:
                raise KittiFormatError(f'line {number}: Tr needs 12 values, got {len(tokens)}',
                                       path, number)
            try:
                return RigidTransform.from_matrix(np.array([float(t) for t in tokens]).reshape(3, 4))
            except (ValueError, GeometryError) as e:
                raise KittiFormatError(f'line {number}: {e}', path, number) from e
    raise KittiFormatError('no Tr entry in calibration file', path)


def camera_to_velodyne_poses(poses: Sequence[RigidTransform],
                             velo_to_cam: RigidTransform) -> List[RigidTransform]:
    """Express camera-frame ground truth as Velodyne poses: Trᵀ∘Pᵢ∘Tr."""
    cam_to_velo = transform_inverse(velo_to_cam)
    return [transform_compose(cam_to_velo, transform_compose(pose, velo_to_cam)) for pose in poses]


# --- Sampling and manifests -------------------------------------------------

def downsample_random(cloud: PointCloud, n: int, seed: int = 0) -> PointCloud:
    """Uniform sample of n points without replacement, kept in original order."""
    if n < 1:
        raise GeometryError(f'downsample target must be >= 1, got {n}')
    if len(cloud) <= n:
        return cloud
    rng = np.random.default_rng(seed)
    return cloud.subset(np.sort(rng.choice(len(cloud), size=n, replace=False)))


READERS = {'ply': _read_ply, 'kitti_bin': _read_kitti_bin, 'xyz': _read_xyz}


def read_frame(path: PathLike, format: str = 'ply') -> FrameRead:
    """Read one frame file of the given manifest format, reporting dropped records."""
    if format not in READERS:
        raise DatasetError(f'unknown frame format {format!r}; expected one of {sorted(READERS)}', path)
    return READERS[format](Path(path))


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered frame files plus how to read, thin and evaluate them.

    `poses` holds one absolute sensor pose per frame (KITTI layout); with
    `calib` set they are camera poses converted to Velodyne poses on load.
    """

    frames: Tuple[Path, ...]
    format: str = 'ply'
    poses: Optional[Path] = None
    calib: Optional[Path] = None
    stride: int = 1
    downsample: Optional[int] = None
    rng_seed: int = 0
    fov: Optional[SensorFov] = None

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(Path(p) for p in self.frames))
        if not self.frames:
            raise DatasetError('manifest lists no frames')
        if self.format not in READERS:
            raise DatasetError(f'unknown frame format {self.format!r}; expected one of {sorted(READERS)}')
        if self.stride < 1:
            raise DatasetError(f'stride must be >= 1, got {self.stride}')
        if self.downsample is not None and self.downsample < 1:
            raise DatasetError(f'downsample must be >= 1, got {self.downsample}')

    @classmethod
    def load(cls, path: PathLike) -> 'DatasetManifest':
        """Read a manifest JSON; relative paths resolve against its directory."""
        path = Path(path)
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetError(f'invalid manifest JSON: {e.msg}', path, e.lineno) from e
        base = path.parent

        def resolve(value):
            return None if value is None else base / value

        try:
            return cls(
                frames=tuple(base / frame for frame in data['frames']),
                format=data.get('format', 'ply'),
                poses=resolve(data.get('poses')),
                calib=resolve(data.get('calib')),
                stride=int(data.get('stride', 1)),
                downsample=data.get('downsample'),
                rng_seed=int(data.get('rng_seed', 0)),
                fov=None if data.get('fov') is None else SensorFov.from_dict(data['fov']),
            )
        except KeyError as e:
            raise DatasetError(f'manifest is missing {e.args[0]!r}', path) from e

    def save(self, path: PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.parent.resolve()

        def relative(value: Optional[Path]):
            if value is None:
                return None
            try:
                return str(Path(value).resolve().relative_to(base))
            except ValueError:
                return str(value)

        with open(path, 'w') as f:
            json.dump({
                'frames': [relative(frame) for frame in self.frames],
                'format': self.format,
                'poses': relative(self.poses),
                'calib': relative(self.calib),
                'stride': self.stride,
                'downsample': self.downsample,
                'rng_seed': self.rng_seed,
                'fov': None if self.fov is None else self.fov.to_dict(),
            }, f, indent=2)

    @classmethod
    def kitti_sequence(cls, sequence_dir: PathLike, poses: PathLike, stride: int = 5,
                       downsample: Optional[int] = 10000, rng_seed: int = 0,
                       fov: Optional[SensorFov] = None) -> 'DatasetManifest':
        """Manifest for a KITTI odometry sequence directory (velodyne/*.bin, calib.txt)."""
        sequence_dir = Path(sequence_dir)
        frames = tuple(sorted((sequence_dir / 'velodyne').glob('*.bin')))
        calib = sequence_dir / 'calib.txt'
        return cls(frames, 'kitti_bin', Path(poses), calib if calib.exists() else None,
                   stride, downsample, rng_seed, fov)


class LoadedFrames(NamedTuple):
    """Selected frames, their ground-truth poses (if any) and per-frame dropped record counts."""

    clouds: List[PointCloud]
    poses: Optional[List[RigidTransform]]
    dropped: List[int]


def load_frames(manifest: DatasetManifest, workers: int = 1) -> LoadedFrames:
    """Read every stride-th frame (downsampled if requested) and its ground-truth pose.

    Frame i of the selection is downsampled with seed `rng_seed + i`. `dropped`
    counts the records each file lost to non-finite coordinates, before
    downsampling.
    """
    selected = manifest.frames[::manifest.stride]

    def load(item):
        position, frame_path = item
        cloud, dropped = read_frame(frame_path, manifest.format)
        if manifest.downsample is not None:
            cloud = downsample_random(cloud, manifest.downsample, manifest.rng_seed + position)
        return cloud, dropped

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        loaded = list(pool.map(load, enumerate(selected)))
    clouds = [cloud for cloud, _ in loaded]
    dropped = [count for _, count in loaded]

    poses = None
    if manifest.poses is not None:
        all_poses = read_kitti_poses(manifest.poses)
        if manifest.calib is not None:
            all_poses = camera_to_velodyne_poses(all_poses, read_kitti_calib(manifest.calib))
        if len(all_poses) < len(manifest.frames):
            raise DatasetError(
                f'{len(all_poses)} poses for {len(manifest.frames)} frames', manifest.poses
            )
        poses = all_poses[:len(manifest.frames)][::manifest.stride]
    if any(dropped):
        logger.warning('dropped %d non-finite records across %d frames', sum(dropped), len(clouds))
    logger.info('loaded %d frames (stride %d)', len(clouds), manifest.stride)
    return LoadedFrames(clouds, poses, dropped)


# --- Results documents -------------------------------------------------------

def validate_result(document: Any, path: Optional[PathLike] = None) -> Dict[str, Any]:
    """Check a results document against the published schema.

    Raises:
        ResultSchemaError: Naming the first offending field
    """
    if not isinstance(document, dict):
        raise ResultSchemaError('results document must be a JSON object', path)
    version = document.get('schema_version')
    if version is None:
        raise ResultSchemaError('missing schema_version', path)
    if not isinstance(version, str) or version.split('.')[0] != SCHEMA_VERSION.split('.')[0]:
        raise ResultSchemaError(f'unsupported schema_version {version!r}', path)
    if not isinstance(document.get('command'), str):
        raise ResultSchemaError('missing or non-string command', path)
    if not isinstance(document.get('config', {}), dict):
        raise ResultSchemaError('config must be an object', path)
    results = document.get('results')
    if not isinstance(results, list):
        raise ResultSchemaError('results must be an array', path)
    for i, entry in enumerate(results):
        if not isinstance(entry, dict):
            raise ResultSchemaError(f'results[{i}] must be an object', path)
        transform = entry.get('transform')
        if transform is not None and (
                not isinstance(transform, list) or len(transform) != 12
                or not all(isinstance(v, (int, float)) for v in transform)):
            raise ResultSchemaError(f'results[{i}].transform must hold 12 numbers', path)
        error = entry.get('error')
        if error is not None and not isinstance(error, (dict, str)):
            raise ResultSchemaError(f'results[{i}].error must be an object or message', path)
    return document


def write_result(path: PathLike, run: Dict[str, Any]) -> None:
    """Write a version-stamped results document (validated first)."""
    path = Path(path)
    document = {'schema_version': SCHEMA_VERSION, **run}
    validate_result(document, path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, allow_nan=False)
        f.write('\n')


def read_result(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ResultSchemaError(f'invalid JSON: {e.msg}', path, e.lineno) from e
    return validate_result(document, path)


def transform_from_rows(rows: Sequence[float]) -> RigidTransform:
    """Inverse of RigidTransform.as_rows_3x4."""
    return RigidTransform.from_matrix(np.asarray(rows, dtype=np.float64).reshape(3, 4))
