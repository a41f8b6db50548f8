# paths.py

"""
Project-level path resolution that works in scripts, tests, and Streamlit.
"""

from pathlib import Path
import inspect
import os

# Get project root
# Dynamic resolution for script + notebook/Streamlit
try:
    ROOT_DIR = Path(__file__).resolve().parent.parent
except NameError:
    ROOT_DIR = Path(inspect.stack()[0].filename).resolve().parent.parent


#  Define all paths relative to ROOT_DIR

DATA_DIR = ROOT_DIR / "data"
FIXTURES_DIR = DATA_DIR / "fixtures"
CONFIGS_DIR = ROOT_DIR / "configs"
OUTPUTS_DIR = ROOT_DIR / "outputs"

TESTS_DIR = ROOT_DIR / "tests"
SRC_DIR = ROOT_DIR / "src"

LOGS_DIR = Path(os.getenv("LANE_LOGS_DIR", ROOT_DIR / "logs"))

# Artifact sub-directories inside a run's output_dir
PREPARED_SUBDIR = "prepared"
PREFERENCES_SUBDIR = "preferences"
MODEL_SUBDIR = "model"
METRICS_SUBDIR = "metrics"
EXPLANATIONS_SUBDIR = "explanations"
SWEEP_SUBDIR = "sweep"


if __name__ == "__main__":
    print("📁 Project Path Summary")
    print(f"ROOT_DIR: {ROOT_DIR}")
    print(f"DATA_DIR: {DATA_DIR}")
    print(f"FIXTURES_DIR: {FIXTURES_DIR}")
    print(f"CONFIGS_DIR: {CONFIGS_DIR}")
    print(f"SRC_DIR: {SRC_DIR}")
    print(f"OUTPUTS_DIR: {OUTPUTS_DIR}")
    print(f"LOGS_DIR: {LOGS_DIR}")
    print(f"TESTS_DIR: {TESTS_DIR}")
