"""
Process-level defaults read from the environment (.env supported)
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


@dataclass
class Settings:
    seed: int
    threads: int
    output_dir: str
    log_level: str


def load_settings() -> Settings:
    """Read IRC_* variables, falling back to the documented defaults"""
    return Settings(
        seed=int(os.getenv("IRC_SEED", "0")),
        threads=max(1, int(os.getenv("IRC_THREADS", "1"))),
        output_dir=os.getenv("IRC_OUTPUT_DIR", "outputs"),
        log_level=os.getenv("IRC_LOG_LEVEL", "INFO"),
    )
