import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from mttrack.core.exceptions import ConfigurationException

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    # Process-level settings, read from the environment or a .env file
    LOG_LEVEL: str = "INFO"
    THREADS: int = 1
    OUTPUT_DIR: str = "runs"

    model_config = SettingsConfigDict(
        env_prefix="MTTRACK_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",  # other tools share the same .env
    )


settings = Settings()


ABLATION_PRESETS: Dict[str, Dict[str, bool]] = {
    "baseline": {"temporal_correlation": False, "mutual_transformer": False, "encoder": True, "filter": True},
    "temcor": {"temporal_correlation": True, "mutual_transformer": False, "encoder": True, "filter": True},
    "mt": {"temporal_correlation": False, "mutual_transformer": True, "encoder": True, "filter": True},
    "no-encoder": {"temporal_correlation": True, "mutual_transformer": True, "encoder": False, "filter": True},
    "no-filter": {"temporal_correlation": True, "mutual_transformer": True, "encoder": True, "filter": False},
    "full": {"temporal_correlation": True, "mutual_transformer": True, "encoder": True, "filter": True},
}

AblationName = Literal["baseline", "temcor", "mt", "no-encoder", "no-filter", "full"]


class AblationFlags(BaseModel):
    """Switches that reduce the full model to the ablation variants"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    temporal_correlation: bool = True
    mutual_transformer: bool = True
    encoder: bool = True
    filter: bool = True

    @classmethod
    def preset(cls, name: str) -> "AblationFlags":
        if name not in ABLATION_PRESETS:
            raise ConfigurationException(
                user_message=f"Unknown ablation '{name}'. Choose one of: {', '.join(ABLATION_PRESETS)}.",
                details={"ablation": name},
            )
        return cls(**ABLATION_PRESETS[name])

    @property
    def name(self) -> str:
        for preset, flags in ABLATION_PRESETS.items():
            if self.model_dump() == flags:
                return preset
        return "custom"


class TrackerConfig(BaseModel):
    """Model geometry, temporal memory and post-processing settings"""

    model_config = ConfigDict(extra="forbid")

    search_size: int = 287
    template_size: int = 127
    stride: int = 8
    channels: int = 192
    backbone_channels: Tuple[int, int, int] = (32, 64, 128)
    head_channels: int = 64
    n_hist: int = 3
    L_train: int = 3
    tau: float = 3.0
    heads: int = 6
    enc_layers: int = 1
    dec_layers: int = 2
    reduction: int = 2
    context_amount: float = 1.0
    window_influence: float = 0.30
    smoothing: float = 0.7
    min_box_size: float = 2.0
    seed: int = 0
    dtype: Literal["float32", "float64"] = "float32"
    ablation: AblationFlags = AblationFlags()

    @model_validator(mode="after")
    def _check_geometry(self) -> "TrackerConfig":
        if min(self.search_size, self.template_size, self.stride, self.channels, self.heads) <= 0:
            raise ValueError("sizes, stride, channels and heads must be positive")
        if self.template_size > self.search_size:
            raise ValueError("template_size must not exceed search_size")
        if (self.search_size - self.template_size) % self.stride != 0:
            raise ValueError(
                f"search_size - template_size ({self.search_size - self.template_size}) "
                f"must be divisible by stride {self.stride}"
            )
        if self.channels % self.heads != 0:
            raise ValueError(f"channels {self.channels} must be divisible by heads {self.heads}")
        if self.channels % self.reduction != 0:
            raise ValueError(f"channels {self.channels} must be divisible by reduction {self.reduction}")
        if self.n_hist < 0 or self.L_train < 0:
            raise ValueError("n_hist and L_train must be non-negative")
        if not 0.0 <= self.window_influence <= 1.0:
            raise ValueError("window_influence must lie in [0, 1]")
        if not 0.0 < self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self

    @property
    def search_context(self) -> float:
        return self.context_amount * self.search_size / self.template_size

    @property
    def score_size(self) -> int:
        return (self.search_size - self.template_size) // self.stride + 1


class TrainConfig(BaseModel):
    """Toy-scale training recipe"""

    model_config = ConfigDict(extra="forbid")

    epochs: int = 20
    batch_size: int = 8
    samples_per_epoch: int = 64
    lr_start: float = 5e-3
    lr_end: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    max_frame_gap: int = 100
    max_shift: float = 48.0
    max_scale_jitter: float = 0.1
    positive_iou: float = 0.6
    freeze_backbone_epochs: int = 0

    @model_validator(mode="after")
    def _check_recipe(self) -> "TrainConfig":
        if self.epochs <= 0 or self.batch_size <= 0 or self.samples_per_epoch <= 0:
            raise ValueError("epochs, batch_size and samples_per_epoch must be positive")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise ValueError("learning rates must be positive")
        return self


class RunConfig(BaseModel):
    """Effective configuration of one command invocation"""

    model_config = ConfigDict(extra="forbid")

    tracker: TrackerConfig = TrackerConfig()
    train: TrainConfig = TrainConfig()
    checkpoint: Optional[str] = None
    data_dir: Optional[str] = None
    output_dir: str = settings.OUTPUT_DIR
    threads: int = settings.THREADS

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Build the effective config: defaults < JSON file < flag overrides.

        Overrides use dotted keys, e.g. {"tracker.tau": 2.5, "threads": 4}.
        """
        raw: Dict[str, Any] = {}
        if path:
            try:
                raw = json.loads(Path(path).read_text())
            except FileNotFoundError as e:
                raise ConfigurationException(
                    user_message=f"Config file '{path}' does not exist.",
                    technical_message=str(e),
                )
            except json.JSONDecodeError as e:
                raise ConfigurationException(
                    user_message=f"Config file '{path}' is not valid JSON (line {e.lineno}).",
                    technical_message=str(e),
                )
            if not isinstance(raw, dict):
                raise ConfigurationException(user_message=f"Config file '{path}' must hold a JSON object.")

        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            node = raw
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node.setdefault(key, {})
            node[leaf] = value

        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(loc) for loc in first.get("loc", []))
            if first.get("type") == "extra_forbidden":
                message = f"Unknown config key '{field}'."
            else:
                message = f"Invalid config value for '{field}': {first.get('msg')}"
            raise ConfigurationException(
                user_message=message,
                technical_message=str(e),
                details={"key": field},
            )

    def echo(self, out_dir: str) -> Path:
        """Write the effective config next to the command's outputs"""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        target = out / "config.json"
        target.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        logger.info(f"Effective config written to {target}")
        return target
