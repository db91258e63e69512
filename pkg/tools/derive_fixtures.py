"""Regenerate src/owbo/data/benchmarks.json from the brute-force oracles."""
import json
import sys
import time
from pathlib import Path

from owbo.benchfns import derive_all

if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parents[1] / "src/owbo/data/benchmarks.json"
    t0 = time.time()
    fixtures = derive_all()
    out.write_text(json.dumps(fixtures, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out} in {time.time() - t0:.1f}s")
