"""Experiment configuration loaded from a JSON document plus environment overrides."""
import copy
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from ..eoe import EoeSchedule, PenaltyConstants
from ..errors import GeometryError
from ..geometry import SensorFov
from ..registration import BaseRegistrar, GmmParams, IcpParams, make_registrar

THREADS_ENV_VAR = 'OVERLAP_REG_THREADS'

ALGORITHM_NAMES = ('icp', 'trimmed', 'fractional', 'irls', 'gmm')
EOE_MODES = ('off', 'on', 'both')
INIT_POLICIES = ('identity', 'prior-pose-chain')

DEFAULT_SYNTHETIC = {
    'world': 'procedural',
    'up_axis': 'y',
    'n_points': 20000,
    'views': 5,
    'yaw_step_deg': 25.0,
    'h_fov_deg': 60.0,
    'v_fov_deg': 60.0,
    'psi_min': 0.01,
    'psi_max': 10.0,
    'radius': 0.35,
    'heading_offset_deg': 50.0,
    'relief': 0.1,
    'noise_sigma': 0.0,
}
DEFAULT_ALGORITHMS = [{'name': name} for name in ALGORITHM_NAMES]
DEFAULT_TIMING_SIZES = [100, 1000, 10000, 100000, 1000000]


class ConfigurationError(Exception):
    """Raised when the experiment configuration is invalid or incomplete."""
    pass


def _fov(data: Optional[dict], key: str) -> Optional[SensorFov]:
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigurationError(f'{key} must be an object')
    try:
        return SensorFov.from_dict(data)
    except (GeometryError, TypeError, ValueError) as e:
        raise ConfigurationError(f'{key}: {e}') from e


class ExperimentConfig:
    """Every experiment knob, with defaults; see docs/results_schema.md for the echo format."""

    def __init__(
        self,
        dataset: Optional[Dict[str, Any]] = None,
        algorithms: Optional[List[Dict[str, Any]]] = None,
        icp: Optional[Dict[str, Any]] = None,
        gmm: Optional[Dict[str, Any]] = None,
        eoe: Optional[Dict[str, Any]] = None,
        init: str = 'identity',
        output: str = 'results.json',
        seed: int = 0,
        threads: int = 1,
        timing: Optional[Dict[str, Any]] = None,
        weights: Optional[Dict[str, Any]] = None,
        timing_log: Optional[str] = None,
        base_dir: Optional[Path] = None,
    ):
        self.dataset = dataset if dataset is not None else {'synthetic': {}}
        self.algorithms = algorithms if algorithms is not None else copy.deepcopy(DEFAULT_ALGORITHMS)
        self.icp = icp or {}
        self.gmm = gmm or {}
        self.eoe = {'mode': 'both', **(eoe or {})}
        self.init = init
        self.output = output
        self.seed = seed
        self.threads = threads
        self.timing = {'sizes': list(DEFAULT_TIMING_SIZES), 'trials': 5, **(timing or {})}
        self.weights = {'pair': [0, 1], **(weights or {})}
        self.timing_log = timing_log
        self.base_dir = Path(base_dir) if base_dir is not None else Path('.')

    @classmethod
    def load(cls, path: Optional[Path] = None, env_file: Optional[Path] = None) -> 'ExperimentConfig':
        """Load a JSON config document and apply environment defaults.

        Args:
            path: JSON config; None gives the all-defaults synthetic experiment
            env_file: Optional .env file. If None, looks for .env in current directory.

        Returns:
            Validated ExperimentConfig

        Raises:
            ConfigurationError: Unreadable file, unknown key or invalid value
        """
        if env_file:
            load_dotenv(env_file)
        else:
            load_dotenv()

        data: Dict[str, Any] = {}
        base_dir = Path('.')
        if path is not None:
            path = Path(path)
            try:
                with open(path, 'r') as f:
                    data = json.load(f)
            except FileNotFoundError as e:
                raise ConfigurationError(f'Config file not found: {path}') from e
            except json.JSONDecodeError as e:
                raise ConfigurationError(f'Config file {path} is not valid JSON: {e.msg} (line {e.lineno})') from e
            if not isinstance(data, dict):
                raise ConfigurationError('Config document must be a JSON object')
            base_dir = path.parent

        known = {'dataset', 'algorithms', 'icp', 'gmm', 'eoe', 'init', 'output', 'seed',
                 'threads', 'timing', 'weights', 'timing_log'}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f'Unknown config keys: {unknown}')

        if 'threads' not in data:
            try:
                data['threads'] = int(os.getenv(THREADS_ENV_VAR, '1'))
            except ValueError as e:
                raise ConfigurationError(f'{THREADS_ENV_VAR} must be an integer') from e

        config = cls(base_dir=base_dir, **data)
        config.validate()
        return config

    def resolve_path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def validate(self) -> None:
        """Check every section, building the typed objects once to surface their errors."""
        if not isinstance(self.dataset, dict) or len(set(self.dataset) & {'manifest', 'synthetic'}) != 1:
            raise ConfigurationError("dataset must name exactly one of 'manifest' or 'synthetic'")
        if 'manifest' in self.dataset:
            manifest = self.resolve_path(self.dataset['manifest'])
            if not manifest.exists():
                raise ConfigurationError(f'dataset.manifest does not exist: {manifest}')
        else:
            preset = self.dataset['synthetic']
            if not isinstance(preset, dict):
                raise ConfigurationError('dataset.synthetic must be an object')
            unknown = sorted(set(preset) - set(DEFAULT_SYNTHETIC))
            if unknown:
                raise ConfigurationError(f'Unknown dataset.synthetic keys: {unknown}')
            if int(self.synthetic_preset()['views']) < 2:
                raise ConfigurationError('dataset.synthetic.views must be >= 2')

        if not isinstance(self.algorithms, list) or not self.algorithms:
            raise ConfigurationError('algorithms must list at least one algorithm')
        for i, spec in enumerate(self.algorithms):
            if not isinstance(spec, dict) or spec.get('name') not in ALGORITHM_NAMES:
                raise ConfigurationError(
                    f"algorithms[{i}].name must be one of {list(ALGORITHM_NAMES)}"
                )
        if self.eoe.get('mode') not in EOE_MODES:
            raise ConfigurationError(f"eoe.mode must be one of {list(EOE_MODES)}")
        if self.init not in INIT_POLICIES:
            raise ConfigurationError(f'init must be one of {list(INIT_POLICIES)}')
        if not isinstance(self.seed, int):
            raise ConfigurationError('seed must be an integer')
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigurationError('threads must be an integer >= 1')
        if not self.timing.get('sizes') or any(int(n) < 1 for n in self.timing['sizes']):
            raise ConfigurationError('timing.sizes must list point counts >= 1')
        if int(self.timing.get('trials', 1)) < 1:
            raise ConfigurationError('timing.trials must be >= 1')
        pair = self.weights.get('pair')
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
            raise ConfigurationError('weights.pair must be two frame indices')

        try:
            self.registrars()
            self.penalties()
            self.schedule()
            self.fov_source()
            self.fov_target()
        except (GeometryError, TypeError, ValueError) as e:
            raise ConfigurationError(str(e)) from e

    def synthetic_preset(self) -> Dict[str, Any]:
        return {**DEFAULT_SYNTHETIC, **self.dataset.get('synthetic', {})}

    def icp_params(self) -> IcpParams:
        data = dict(self.icp)
        if data.get('max_match_distance') is None:
            data['max_match_distance'] = math.inf
        return IcpParams(**data)

    def gmm_params(self) -> GmmParams:
        return GmmParams(**{'seed': self.seed, **self.gmm})

    def registrar(self, spec: Dict[str, Any]) -> BaseRegistrar:
        params = {key: value for key, value in spec.items() if key != 'name'}
        if 'lambda' in params:
            params['lambda_'] = params.pop('lambda')
        return make_registrar(spec['name'], self.icp_params(), self.gmm_params(), **params)

    def registrars(self) -> List[BaseRegistrar]:
        return [self.registrar(spec) for spec in self.algorithms]

    def eoe_modes(self) -> List[bool]:
        return {'off': [False], 'on': [True], 'both': [False, True]}[self.eoe['mode']]

    def penalties(self) -> PenaltyConstants:
        return PenaltyConstants.from_dict(self.eoe.get('penalties', {}))

    def schedule(self) -> EoeSchedule:
        return EoeSchedule(**self.eoe.get('schedule', {}))

    def fov_source(self) -> Optional[SensorFov]:
        return _fov(self.eoe.get('fov_source'), 'eoe.fov_source')

    def fov_target(self) -> Optional[SensorFov]:
        return _fov(self.eoe.get('fov_target'), 'eoe.fov_target')

    @property
    def corrected_vertical(self) -> bool:
        return bool(self.eoe.get('corrected_vertical', False))

    def to_dict(self) -> Dict[str, Any]:
        """Effective configuration after defaults, for echoing into results."""
        eoe = dict(self.eoe)
        eoe['penalties'] = self.penalties().to_dict()
        eoe['schedule'] = self.schedule().to_dict()
        eoe['corrected_vertical'] = self.corrected_vertical
        dataset = dict(self.dataset)
        if 'synthetic' in dataset:
            dataset['synthetic'] = self.synthetic_preset()
        return {
            'dataset': dataset,
            'algorithms': [
                {'name': spec['name'], 'display_name': registrar.name, **_registrar_params(registrar)}
                for spec, registrar in zip(self.algorithms, self.registrars())
            ],
            'icp': self.icp_params().to_dict(),
            'gmm': self.gmm_params().to_dict(),
            'eoe': eoe,
            'init': self.init,
            'seed': self.seed,
            'threads': self.threads,
            'timing': self.timing,
            'weights': self.weights,
        }


def _registrar_params(registrar: BaseRegistrar) -> Dict[str, Any]:
    params = getattr(registrar, 'params', None)
    return {} if params is None else params.to_dict()
