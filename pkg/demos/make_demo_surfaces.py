"""Regenerates the frozen latent surfaces shipped as package data.

The demo scenario's trend, season, and spatial fields are single draws
from their own smoothing priors, taken once with the seed below and
committed to src/multistrain/data/demo_surfaces.csv.  Rerunning this
script reproduces the file byte for byte; it only needs to run again if
the scenario itself is redesigned.
"""

import csv
import pathlib

import numpy as np

import multistrain as ms

SEED = 20260114
N_MONTHS = 60
OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "multistrain" / "data" / "demo_surfaces.csv"


def main() -> None:
    rng = np.random.default_rng(SEED)
    # precisions picked so amplitudes sit in a realistic band:
    # slow trend drift, a clear seasonal swing, mild city-level contrasts
    trend = ms.sample_igmrf(ms.rw2_structure(N_MONTHS), 50_000.0, rng)
    season = ms.sample_igmrf(ms.crw1_structure(12), 6.0, rng)
    spatial = ms.sample_igmrf(
        ms.icar_structure(ms.grid_adjacency(3, 3)), 25.0, rng
    )
    with OUT.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["component", "index", "value"])
        for name, values in (("trend", trend), ("season", season), ("spatial", spatial)):
            for i, value in enumerate(values):
                writer.writerow([name, i, f"{value:.17g}"])
    print(f"wrote {OUT}")
    for name, values in (("trend", trend), ("season", season), ("spatial", spatial)):
        print(f"{name}: min {values.min():+.3f} max {values.max():+.3f} sd {values.std():.3f}")


if __name__ == "__main__":
    main()
