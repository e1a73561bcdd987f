import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from visadesk.core.errors import VisadeskError


class ConfigFileError(VisadeskError, ValueError):
    """Config file unreadable or invalid (reported as a usage error)."""


class Settings(BaseSettings):
    model_config = SettingsConfigDict(extra="forbid", frozen=True)

    # corpus
    seed: int = 42
    docs_per_class: int = Field(100, ge=1)
    n_rfes: int = Field(49, ge=1)
    ocr_noise_rate: float = Field(0.15, ge=0.0, lt=1.0)
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)
    text_channel: Literal["clean", "degraded"] = "degraded"

    # training (defaults also used by linclass.TrainConfig)
    l2: float = Field(1e-3, ge=0.0)
    learning_rate: float = Field(0.5, gt=0.0)
    max_iters: int = Field(2000, ge=0)
    grad_tol: float = Field(1e-6, ge=0.0)

    # detection / drafting
    tau: float = Field(0.6, ge=0.0, le=1.0)
    target_attack: str = "specialty-occupation"
    database_url: str = "sqlite://"

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings,
        env_settings,
        dotenv_settings,
        file_secret_settings,
    ):
        # Pas de variables d'environnement: flags + fichier de config uniquement
        return (init_settings,)


def load_settings(config_file: Optional[Path] = None, **overrides: Any) -> Settings:
    """Defaults < config file < flags. ``None`` overrides are ignored."""
    values: dict[str, Any] = {}
    if config_file is not None:
        try:
            raw = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigFileError(f"cannot read config file {config_file}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigFileError(f"config file {config_file} must hold a JSON object")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Settings(**values)
    except ValidationError as e:
        raise ConfigFileError(str(e)) from e


def config_hash(settings: Settings) -> str:
    payload = json.dumps(settings.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
