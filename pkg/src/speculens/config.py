"""Pipeline configuration: one TOML document driving every subcommand.

Sections are detector, pseudo_gt, model, train, eval, and geometry; a
top-level ``seed`` is mandatory.  Unknown sections or keys are rejected
so typos fail loudly instead of silently running defaults.
"""

from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:  # 3.10
    import tomli as tomllib

from .errors import ConfigError, ParameterError
from .geometry import RansacConfig
from .highlight import DetectorConfig
from .model import LossWeights, ModelConfig, SamplingConfig
from .pseudo_gt import RandomMaskConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class PseudoGtSettings:
    """Mask translation and dataset split parameters."""

    offset: tuple = (32, 0)
    dilate_kernel: int = 9
    dilate_iterations: int = 1
    split_fraction: float = 0.087
    strokes_per_frame: int = 2
    brush_width: int = 24
    max_step: float = 4.0

    def random_masks(self, seed):
        return RandomMaskConfig(
            strokes_per_frame=self.strokes_per_frame,
            brush_width=self.brush_width,
            max_step=self.max_step,
            seed=seed,
        )


@dataclass(frozen=True)
class TrainSettings:
    """The [train] section; becomes a TrainConfig once the model and the
    top-level seed are attached."""

    preset: str = "S_C"
    init_checkpoint: str = ""
    max_iterations: int = 200
    batch: int = 1
    clip_length: int = 8
    eval_every: int = 100
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    neighbor_radius: int = 2
    distant_stride: int = 4
    w_hole: float = 1.0
    w_valid: float = 1.0
    w_adv: float = 0.01

    def to_train_config(self, model, seed, random_masks):
        return TrainConfig(
            preset=self.preset,
            init_checkpoint=self.init_checkpoint,
            max_iterations=self.max_iterations,
            batch=self.batch,
            clip_length=self.clip_length,
            sampling=SamplingConfig(
                neighbor_radius=self.neighbor_radius,
                distant_stride=self.distant_stride,
            ),
            loss_weights=LossWeights(
                lambda_hole=self.w_hole,
                lambda_valid=self.w_valid,
                lambda_adv=self.w_adv,
            ),
            seed=seed,
            eval_every=self.eval_every,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            model=model,
            random_masks=random_masks,
        )


@dataclass(frozen=True)
class EvalSettings:
    """Inference-time windowing and which masks drive the compositing."""

    mask_source: str = "orig"
    neighbor_radius: int = 2
    distant_stride: int = 4
    single_frame: bool = False

    def __post_init__(self):
        if self.mask_source not in ("orig", "trans"):
            raise ConfigError(
                f"mask_source must be 'orig' or 'trans', got {self.mask_source!r}"
            )

    @property
    def sampling(self):
        return SamplingConfig(
            neighbor_radius=self.neighbor_radius,
            distant_stride=self.distant_stride,
        )


@dataclass(frozen=True)
class GeometrySettings:
    """RANSAC and pair-selection parameters for pose evaluation."""

    threshold: float = 1e-3
    confidence: float = 0.999
    max_iterations: int = 1000
    refit: bool = True
    pair_window: int = 20
    flow_stride: int = 8

    def ransac(self, seed):
        return RansacConfig(
            threshold=self.threshold,
            confidence=self.confidence,
            max_iterations=self.max_iterations,
            seed=seed,
            refit=self.refit,
        )


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    pseudo_gt: PseudoGtSettings = field(default_factory=PseudoGtSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    geometry: GeometrySettings = field(default_factory=GeometrySettings)


_SECTIONS = {
    "detector": DetectorConfig,
    "pseudo_gt": PseudoGtSettings,
    "model": ModelConfig,
    "train": TrainSettings,
    "eval": EvalSettings,
    "geometry": GeometrySettings,
}

# keys that arrive as TOML arrays but live as tuples
_TUPLED = {
    ("pseudo_gt", "offset"),
    ("model", "enc_widths"),
    ("model", "disc_widths"),
    ("model", "heads"),
}


def _build_section(name, cls, data):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key '{sorted(unknown)[0]}' in section [{name}]"
        )
    kwargs = {}
    for key, value in data.items():
        if (name, key) in _TUPLED:
            if key == "heads":
                value = tuple(tuple(v) for v in value)
            else:
                value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def parse_config(data):
    """A parsed TOML mapping to a PipelineConfig; seed is mandatory."""
    if "seed" not in data:
        raise ConfigError("config must set a top-level seed")
    seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    parts = {"seed": seed}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        parts[name] = _build_section(name, cls, section)
    return PipelineConfig(**parts)


def load_config(path):
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)


def _plain(value):
    if hasattr(value, "__dataclass_fields__"):
        return {
            k: _plain(getattr(value, k)) for k in value.__dataclass_fields__
        }
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg):
    """JSON-ready nested dict of the effective configuration."""
    return _plain(cfg)
