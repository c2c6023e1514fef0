"""Shared bits for the demo scripts: output folder and a headless backend."""
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

OUT = Path(os.environ.get("LEVCOOL_DEMO_OUT", Path(__file__).parent / "output"))
OUT.mkdir(parents=True, exist_ok=True)
