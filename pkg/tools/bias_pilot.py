"""Regenerate ``tests/fixtures/bias_pilot.json``.

Runs the two-client bias demo once (rates 10 and 1, centers -1 and 1) and
records both final distances along with the ratio threshold the
acceptance test enforces.

Usage::

    python tools/bias_pilot.py
"""

import json
from pathlib import Path

from areafl.verify import bias_demo

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "bias_pilot.json"

RATES = (10.0, 1.0)
CENTERS = (-1.0, 1.0)
K = 100_000
SEED = 0


def main():
    area, naive, limit = bias_demo(RATES, CENTERS, K, SEED)
    payload = {
        "rates": list(RATES),
        "centers": list(CENTERS),
        "K": K,
        "seed": SEED,
        "area_err": area,
        "naive_err": naive,
        "naive_final": [float(v) for v in limit],
        "ratio_threshold": 0.1,
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))


if __name__ == "__main__":
    main()
