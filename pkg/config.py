from __future__ import annotations

import os
from pathlib import Path

from dotenv import load_dotenv

# Load .env once at import
load_dotenv()

# Root for command outputs when no --out is given
ARTIFACT_DIR = Path(os.getenv("TCN_ARTIFACT_DIR", "artifacts")).resolve()

# Named run profiles (published, ci, overfit)
RUN_PROFILES_PATH = Path(os.getenv("TCN_RUN_PROFILES", "run_profiles.yaml"))

LOG_LEVEL = os.getenv("TCN_LOG_LEVEL", "INFO").upper()

# Inference worker threads
DEFAULT_THREADS = max(1, int(os.getenv("TCN_THREADS", "1")))
