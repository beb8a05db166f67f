"""Regenerate the envelope table shipped with the package.

    python3 scripts/build_default_table.py [--samples N] [--workers K]
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from margcond import envelope as env

OUT = Path(__file__).resolve().parents[1] / "src" / "margcond" / "data" / "envelope_default.csv"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=10**7)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = env.EnvelopeConfig(n_samples=args.samples)
    rho = np.round(np.arange(0, 101) / 100, 2)
    t0 = time.perf_counter()
    table = env.build_envelope_table(rho, (0.10, 0.05, 0.025, 0.01), cfg, workers=args.workers)
    table.to_csv(args.out)
    logging.info("wrote %s in %.0f s", args.out, time.perf_counter() - t0)


if __name__ == "__main__":
    main()
