"""YAML configuration loader for STEER

Supports configuration via:
1. YAML config file (default)
2. Environment variables (override YAML values)

Environment variable mapping:
  STEER_CONFIG (config file path)
  STEER_LOG_LEVEL, STEER_LOG_FILE, STEER_OUTPUT_DIR, STEER_SEED
  STEER_BACKEND, STEER_CACHE_DIR, STEER_PARALLELISM
  STEER_BASE_URL, STEER_MODEL
  STEER_N_GENERATIONS, STEER_POOL_SIZE, STEER_TEAM_SIZE
The API token itself is read from the variable named by http.api_key_env.
"""

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .core_model import OrdinalScale


def _env_get(key: str, default: Any = None, type_cast: type = str) -> Any:
    """Get environment variable with type casting.

    Args:
        key: Environment variable name
        default: Default value if not set
        type_cast: Type to cast the value to (str, int, float, bool)

    Returns:
        The environment variable value cast to the specified type, or default
    """
    value = os.environ.get(key)
    if value is None:
        return default

    if type_cast == bool:
        return value.lower() in ('true', '1', 'yes', 'on')
    elif type_cast == int:
        try:
            return int(value)
        except ValueError:
            return default
    elif type_cast == float:
        try:
            return float(value)
        except ValueError:
            return default
    return value


class ConfigValidationError(ValueError):
    """Raised when configuration values are invalid"""
    pass


def _validate_range(value, name: str, min_val=None, max_val=None):
    """Validate a numeric value is within range"""
    if min_val is not None and value < min_val:
        raise ConfigValidationError(f"{name}={value} must be >= {min_val}")
    if max_val is not None and value > max_val:
        raise ConfigValidationError(f"{name}={value} must be <= {max_val}")


def _validate_fraction(value, name: str):
    """Percentiles live in (0, 1]"""
    if not 0 < value <= 1:
        raise ConfigValidationError(f"{name}={value} must lie in (0, 1]")


@dataclass
class GeneralConfig:
    """General application settings"""
    log_level: str = "INFO"
    log_file: str = ""
    output_dir: str = "runs/latest"
    seed: int = 7

    def __post_init__(self):
        valid_levels = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
        if self.log_level.upper() not in valid_levels:
            raise ConfigValidationError(
                f"general.log_level={self.log_level!r} must be one of {valid_levels}"
            )
        self.log_level = self.log_level.upper()
        _validate_range(self.seed, "general.seed", 0, 2 ** 64 - 1)


@dataclass
class ScaleConfig:
    """Ordinal decision scale"""
    k_levels: int = 5
    most_urgent_level: int = 1
    midpoint: int = 3
    rating_field: str = "esi_level"     # JSON field the rater answers in
    definitions_file: str = ""          # Level definitions injected into rater prompts

    def __post_init__(self):
        _validate_range(self.k_levels, "scale.k_levels", 2, 100)
        if self.most_urgent_level not in (1, self.k_levels):
            raise ConfigValidationError(
                f"scale.most_urgent_level={self.most_urgent_level} must be 1 or {self.k_levels}"
            )
        _validate_range(self.midpoint, "scale.midpoint", 1, self.k_levels)

    def to_scale(self) -> OrdinalScale:
        return OrdinalScale(self.k_levels, self.most_urgent_level, self.midpoint)


@dataclass
class DatasetConfig:
    """Input files"""
    cases: str = ""
    seed_personas: str = ""
    test_cases: str = ""    # Held-out cases for curve/compare (falls back to cases)


@dataclass
class BackendConfig:
    """Rater backend selection"""
    kind: str = "synthetic"      # 'synthetic' or 'http'
    cache_dir: str = ""          # Record/replay cache (empty = disabled)
    parallelism: int = 8         # Rating requests in flight

    def __post_init__(self):
        if self.kind not in ('synthetic', 'http'):
            raise ConfigValidationError(f"backend.kind={self.kind!r} must be 'synthetic' or 'http'")
        _validate_range(self.parallelism, "backend.parallelism", 1, 256)


@dataclass
class HttpConfig:
    """Chat-completion endpoint settings"""
    base_url: str = ""
    model: str = ""
    generator_model: str = ""    # Empty = use model
    judge_model: str = ""        # Empty = use model
    api_key_env: str = "STEER_API_KEY"
    temperature: float = 1.0
    timeout: float = 60.0
    retry_attempts: int = 3
    retry_delay: float = 2.0
    max_retry_delay: float = 30.0

    def __post_init__(self):
        _validate_range(self.temperature, "http.temperature", 0, 2)
        _validate_range(self.timeout, "http.timeout", 1, 600)
        _validate_range(self.retry_attempts, "http.retry_attempts", 1, 20)
        _validate_range(self.retry_delay, "http.retry_delay", 0, 300)
        _validate_range(self.max_retry_delay, "http.max_retry_delay", 0, 600)

    @property
    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "")

    def __repr__(self) -> str:
        masked = "***" if self.api_key else ""
        return (
            f"HttpConfig(base_url={self.base_url!r}, model={self.model!r}, "
            f"api_key_env={self.api_key_env!r}, api_key={masked!r})"
        )


@dataclass
class TemplatesConfig:
    """Prompt template files (Jinja2)"""
    directory: str = ""                  # Empty = bundled config/templates
    rater: str = "rater_esi.j2"
    gap_fill: str = "gap_fill.j2"
    edge_expand: str = "edge_expand.j2"
    judge_soundness: str = "judge_soundness.j2"
    judge_grounding: str = "judge_grounding.j2"
    role: str = "emergency physician"
    setting: str = "busy urban emergency department"


@dataclass
class SyntheticConfig:
    """Synthetic oracle settings"""
    latent: str = ""                     # latent.json written by `simulate`
    noise_sd: float = 0.0
    targeting_sd: float = 0.0            # Generator miss, cf. observed ~0.155 average error
    coherence: float = 3.0
    coherence_bias_slope: float = 0.0

    def __post_init__(self):
        _validate_range(self.noise_sd, "synthetic.noise_sd", 0)
        _validate_range(self.targeting_sd, "synthetic.targeting_sd", 0)
        _validate_range(self.coherence, "synthetic.coherence", 0, 4)


@dataclass
class SelectionConfig:
    """Feasibility cascade thresholds"""
    safety_percentile: float = 0.8
    safety_threshold: float = 0.9
    coherence_percentile: float = 0.85
    variance_percentile: float = 0.85
    min_cluster_size: int = 4
    cluster_delta: Optional[float] = None   # Frozen delta; None = calibrate

    def __post_init__(self):
        _validate_fraction(self.safety_percentile, "selection.safety_percentile")
        _validate_range(self.safety_threshold, "selection.safety_threshold", 0, 1)
        _validate_fraction(self.coherence_percentile, "selection.coherence_percentile")
        _validate_fraction(self.variance_percentile, "selection.variance_percentile")
        _validate_range(self.min_cluster_size, "selection.min_cluster_size", 2)
        if self.cluster_delta is not None:
            _validate_range(self.cluster_delta, "selection.cluster_delta", 0)


@dataclass
class ConvergenceConfig:
    """Coverage-plateau early stopping"""
    min_coverage_gain: float = 0.005
    patience: int = 2

    def __post_init__(self):
        _validate_range(self.patience, "evolution.convergence.patience", 1)


@dataclass
class EvolutionConfig:
    """Evolution loop settings"""
    n_generations: int = 5
    target_pool_size: int = 75
    gap_filling_ratio: float = 0.7
    edge_expansion_ratio: float = 0.3
    edge_step_fraction: float = 0.5     # Edge target = extreme +/- fraction x range
    edge_step_floor: float = 0.25
    coherence_sample: int = 0           # Ambiguous cases judged per persona (0 = all)
    failure_budget: float = 0.10        # Failed cells tolerated per persona
    bias_tolerance: float = 1e-8
    bias_max_iterations: int = 10_000
    seed: int = 7
    parallelism: int = 8
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)

    def __post_init__(self):
        _validate_range(self.n_generations, "evolution.n_generations", 1, 1000)
        _validate_range(self.target_pool_size, "evolution.target_pool_size", 2)
        _validate_range(self.gap_filling_ratio, "evolution.gap_filling_ratio", 0, 1)
        _validate_range(self.edge_expansion_ratio, "evolution.edge_expansion_ratio", 0, 1)
        if abs(self.gap_filling_ratio + self.edge_expansion_ratio - 1.0) > 1e-9:
            raise ConfigValidationError(
                "evolution.gap_filling_ratio + evolution.edge_expansion_ratio must equal 1"
            )
        _validate_range(self.edge_step_fraction, "evolution.edge_step_fraction", 0)
        _validate_range(self.edge_step_floor, "evolution.edge_step_floor", 0)
        _validate_range(self.coherence_sample, "evolution.coherence_sample", 0)
        _validate_range(self.failure_budget, "evolution.failure_budget", 0, 1)
        _validate_range(self.parallelism, "evolution.parallelism", 1, 256)


@dataclass
class TeamConfig:
    size: int = 10

    def __post_init__(self):
        _validate_range(self.size, "team.size", 2)


@dataclass
class CurveConfig:
    """Operating-curve and bootstrap settings"""
    grid: List[float] = field(default_factory=lambda: [float(p) for p in range(101)])
    bootstrap_iterations: int = 2000
    confidence: float = 0.95

    def __post_init__(self):
        if not self.grid:
            raise ConfigValidationError("curve.grid must not be empty")
        for p in self.grid:
            _validate_range(p, "curve.grid", 0, 100)
        if list(self.grid) != sorted(self.grid):
            raise ConfigValidationError("curve.grid must be sorted ascending")
        _validate_range(self.bootstrap_iterations, "curve.bootstrap_iterations", 1)
        if not 0 < self.confidence < 1:
            raise ConfigValidationError(f"curve.confidence={self.confidence} must lie in (0, 1)")


class ConfigLoader:
    """YAML configuration loader with environment variable override support"""

    def __init__(self, config_path: str = None, data: Dict = None, base_dir: str = None):
        self.config: Dict = {}
        self.config_path: Optional[Path] = None
        self.base_dir: Path = Path(base_dir) if base_dir else Path.cwd()
        self.general: GeneralConfig = None
        self.scale: ScaleConfig = None
        self.dataset: DatasetConfig = None
        self.backend: BackendConfig = None
        self.http: HttpConfig = None
        self.templates: TemplatesConfig = None
        self.synthetic: SyntheticConfig = None
        self.evolution: EvolutionConfig = None
        self.team: TeamConfig = None
        self.curve: CurveConfig = None
        if data is not None:
            self.config = data
            self._parse_config()
        else:
            self._load_config(config_path)

    def _load_config(self, config_path: str = None):
        """Load and parse configuration from a YAML file"""
        paths = [
            config_path,
            os.environ.get('STEER_CONFIG'),
            'config/steer.yaml',
            'steer.yaml',
        ]

        for path in filter(None, paths):
            if os.path.exists(path):
                with open(path, 'r', encoding='utf-8') as f:
                    self.config = yaml.safe_load(f) or {}
                if not isinstance(self.config, dict):
                    raise ConfigValidationError(f"{path}: top level must be a mapping")
                self.config_path = Path(path)
                self.base_dir = self.config_path.resolve().parent
                break
        else:
            raise ConfigValidationError(
                "No configuration file found. Searched paths:\n" +
                "\n".join(f"  - {p}" for p in filter(None, paths))
            )

        self._parse_config()

    def resolve_path(self, path: str) -> str:
        """Resolve a config-relative path; empty stays empty."""
        if not path:
            return ""
        candidate = Path(path).expanduser()
        if not candidate.is_absolute():
            candidate = self.base_dir / candidate
        return str(candidate)

    def require_file(self, path: str, name: str) -> str:
        if not path:
            raise ConfigValidationError(f"{name} is required")
        if not os.path.isfile(path):
            raise ConfigValidationError(f"{name}: file not found: {path}")
        return path

    def _parse_config(self):
        """Parse configuration into dataclasses with environment variable overrides"""

        gen = self.config.get('general', {}) or {}
        self.general = GeneralConfig(
            log_level=_env_get('STEER_LOG_LEVEL', gen.get('log_level') or 'INFO'),
            log_file=_env_get('STEER_LOG_FILE', gen.get('log_file') or ''),
            output_dir=self.resolve_path(_env_get('STEER_OUTPUT_DIR', gen.get('output_dir') or 'runs/latest')),
            seed=_env_get('STEER_SEED', gen.get('seed', 7), int),
        )

        sc = self.config.get('scale', {}) or {}
        k_levels = int(sc.get('k_levels', 5))
        self.scale = ScaleConfig(
            k_levels=k_levels,
            most_urgent_level=int(sc.get('most_urgent_level', 1)),
            midpoint=int(sc.get('midpoint', (k_levels + 1) // 2)),
            rating_field=sc.get('rating_field', 'esi_level'),
            definitions_file=self.resolve_path(sc.get('definitions_file', '')),
        )

        ds = self.config.get('dataset', {}) or {}
        self.dataset = DatasetConfig(
            cases=self.resolve_path(ds.get('cases', '')),
            seed_personas=self.resolve_path(ds.get('seed_personas', '')),
            test_cases=self.resolve_path(ds.get('test_cases', '')),
        )

        be = self.config.get('backend', {}) or {}
        cache_dir = _env_get('STEER_CACHE_DIR', be.get('cache_dir', ''))
        self.backend = BackendConfig(
            kind=_env_get('STEER_BACKEND', be.get('kind', 'synthetic')),
            cache_dir=self.resolve_path(cache_dir),
            parallelism=_env_get('STEER_PARALLELISM', be.get('parallelism', 8), int),
        )

        ht = self.config.get('http', {}) or {}
        self.http = HttpConfig(
            base_url=_env_get('STEER_BASE_URL', ht.get('base_url', '')),
            model=_env_get('STEER_MODEL', ht.get('model', '')),
            generator_model=ht.get('generator_model', ''),
            judge_model=ht.get('judge_model', ''),
            api_key_env=ht.get('api_key_env', 'STEER_API_KEY'),
            temperature=float(ht.get('temperature', 1.0)),
            timeout=float(ht.get('timeout', 60.0)),
            retry_attempts=int(ht.get('retry_attempts', 3)),
            retry_delay=float(ht.get('retry_delay', 2.0)),
            max_retry_delay=float(ht.get('max_retry_delay', 30.0)),
        )
        if self.backend.kind == 'http' and not (self.http.base_url and self.http.model):
            raise ConfigValidationError("http.base_url and http.model are required when backend.kind is 'http'")

        tp = self.config.get('templates', {}) or {}
        self.templates = TemplatesConfig(
            directory=self.resolve_path(tp.get('directory', '')),
            rater=tp.get('rater', 'rater_esi.j2'),
            gap_fill=tp.get('gap_fill', 'gap_fill.j2'),
            edge_expand=tp.get('edge_expand', 'edge_expand.j2'),
            judge_soundness=tp.get('judge_soundness', 'judge_soundness.j2'),
            judge_grounding=tp.get('judge_grounding', 'judge_grounding.j2'),
            role=tp.get('role', 'emergency physician'),
            setting=tp.get('setting', 'busy urban emergency department'),
        )

        sy = self.config.get('synthetic', {}) or {}
        self.synthetic = SyntheticConfig(
            latent=self.resolve_path(sy.get('latent', '')),
            noise_sd=float(sy.get('noise_sd', 0.0)),
            targeting_sd=float(sy.get('targeting_sd', 0.0)),
            coherence=float(sy.get('coherence', 3.0)),
            coherence_bias_slope=float(sy.get('coherence_bias_slope', 0.0)),
        )

        ev = self.config.get('evolution', {}) or {}
        sel = self.config.get('selection', {}) or {}
        conv = ev.get('convergence', {}) or {}
        self.evolution = EvolutionConfig(
            n_generations=_env_get('STEER_N_GENERATIONS', ev.get('n_generations', 5), int),
            target_pool_size=_env_get('STEER_POOL_SIZE', ev.get('target_pool_size', 75), int),
            gap_filling_ratio=float(ev.get('gap_filling_ratio', 0.7)),
            edge_expansion_ratio=float(ev.get('edge_expansion_ratio', 0.3)),
            edge_step_fraction=float(ev.get('edge_step_fraction', 0.5)),
            edge_step_floor=float(ev.get('edge_step_floor', 0.25)),
            coherence_sample=int(ev.get('coherence_sample', 0)),
            failure_budget=float(ev.get('failure_budget', 0.10)),
            bias_tolerance=float(ev.get('bias_tolerance', 1e-8)),
            bias_max_iterations=int(ev.get('bias_max_iterations', 10_000)),
            seed=self.general.seed,
            parallelism=self.backend.parallelism,
            selection=SelectionConfig(
                safety_percentile=float(sel.get('safety_percentile', 0.8)),
                safety_threshold=float(sel.get('safety_threshold', 0.9)),
                coherence_percentile=float(sel.get('coherence_percentile', 0.85)),
                variance_percentile=float(sel.get('variance_percentile', 0.85)),
                min_cluster_size=int(sel.get('min_cluster_size', 4)),
                cluster_delta=None if sel.get('cluster_delta') is None else float(sel['cluster_delta']),
            ),
            convergence=ConvergenceConfig(
                min_coverage_gain=float(conv.get('min_coverage_gain', 0.005)),
                patience=int(conv.get('patience', 2)),
            ),
        )

        tm = self.config.get('team', {}) or {}
        self.team = TeamConfig(size=_env_get('STEER_TEAM_SIZE', tm.get('size', 10), int))

        cv = self.config.get('curve', {}) or {}
        grid = cv.get('grid')
        self.curve = CurveConfig(
            grid=[float(p) for p in grid] if grid else [float(p) for p in range(101)],
            bootstrap_iterations=int(cv.get('bootstrap_iterations', 2000)),
            confidence=float(cv.get('confidence', 0.95)),
        )

    def to_dict(self) -> Dict:
        """Resolved configuration without secrets (written as config.json)."""
        return {
            "general": asdict(self.general),
            "scale": asdict(self.scale),
            "dataset": asdict(self.dataset),
            "backend": asdict(self.backend),
            "http": asdict(self.http),
            "templates": asdict(self.templates),
            "synthetic": asdict(self.synthetic),
            "evolution": asdict(self.evolution),
            "team": asdict(self.team),
            "curve": {**asdict(self.curve), "grid": list(self.curve.grid)},
        }


def get_config(config_path: str = None) -> ConfigLoader:
    """Load configuration from a file (or STEER_CONFIG / default locations)"""
    return ConfigLoader(config_path)
