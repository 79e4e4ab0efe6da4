# app/config.py
from __future__ import annotations

import os
from pathlib import Path
from dotenv import load_dotenv

PROJECT_ROOT = Path(__file__).resolve().parent.parent
load_dotenv(PROJECT_ROOT / ".env")

DATA_DIR = Path(os.getenv("SEG_DATA_DIR", str(PROJECT_ROOT / "data")))
DATA_DIR.mkdir(parents=True, exist_ok=True)

DB_PATH = DATA_DIR / "runs.db"
DATABASE_URL: str = os.getenv("SEG_DATABASE_URL", f"sqlite:///{DB_PATH.as_posix()}")

LOG_LEVEL: str = os.getenv("SEG_LOG_LEVEL", "INFO").upper()

# Write CLI training runs into the run registry (training_runs / epoch_metrics).
RECORD_RUNS: bool = os.getenv("SEG_RECORD_RUNS", "1") == "1"
