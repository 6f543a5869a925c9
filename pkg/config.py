import logging
import logging.config
import os
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


class Settings(BaseModel):
    seed: Optional[int] = None
    db_url: str = "sqlite:///./ifs_runs.db"
    log_config: str = "logging.ini"
    threads: int = Field(default=1, ge=1)
    word_budget: int = Field(default=2 ** 20, ge=1)
    strip_budget: int = Field(default=2 ** 20, ge=1)
    max_word_length: int = Field(default=20, ge=1)


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return None
    return int(value)


@lru_cache()
def get_settings() -> Settings:
    """Resolve settings from the environment (and a .env file when present)"""
    values = {
        "seed": _env_int("IFS_SEED"),
        "db_url": os.getenv("IFS_DB_URL"),
        "log_config": os.getenv("IFS_LOG_CONFIG"),
        "threads": _env_int("IFS_THREADS"),
        "word_budget": _env_int("IFS_WORD_BUDGET"),
        "strip_budget": _env_int("IFS_STRIP_BUDGET"),
        "max_word_length": _env_int("IFS_MAX_WORD_LENGTH"),
    }
    return Settings(**{k: v for k, v in values.items() if v is not None})


def configure_logging(path: Optional[str] = None) -> None:
    path = path or get_settings().log_config
    if os.path.exists(path):
        logging.config.fileConfig(path, disable_existing_loggers=False)
    else:
        logging.basicConfig(
            level=logging.INFO,
            format="%(levelname)-5.5s [%(name)s] %(message)s",
        )
        logger.debug("Logging config %s not found, using basicConfig", path)
