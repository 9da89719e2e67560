# settings.py
"""
Process-level settings read from the environment (and an optional .env file).

Experiment parameters live in the experiment config file; this module only
holds knobs that belong to the machine the solver runs on.
"""

import os

from dotenv import load_dotenv

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return max(1, value)


# Worker cap for sweep rows and dataset generation
HINTS_THREADS: int = _int_env("HINTS_THREADS", os.cpu_count() or 1)

# Intra-op threads for torch; 1 keeps training bitwise reproducible
HINTS_TORCH_THREADS: int = _int_env("HINTS_TORCH_THREADS", 1)

HINTS_LOG_LEVEL: str = os.getenv("HINTS_LOG_LEVEL", "INFO").upper()

# tqdm bars; still off when stderr is not a TTY
HINTS_PROGRESS: bool = os.getenv("HINTS_PROGRESS", "1") not in ("0", "false", "False", "")

HINTS_OUTPUT_DIR: str = os.getenv("HINTS_OUTPUT_DIR", "runs")
