"""Per-stage timing table for the occlusion scene at half resolution."""
import sys
import tempfile
from pathlib import Path

from deformtrack.cli import main

if __name__ == "__main__":
    repeats = sys.argv[1] if len(sys.argv) > 1 else "3"
    with tempfile.TemporaryDirectory() as tmp:
        ds = Path(tmp) / "ds"
        main(["synth", "--preset", "rope_occlusion", "--half-res", "--out", str(ds)])
        main(["bench", "--dataset", str(ds), "--repeats", repeats])
