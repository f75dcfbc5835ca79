"""Regenerate the bundled sample files (deterministic)."""

import csv
import json
from pathlib import Path

import numpy as np

from multirdd.montecarlo import DgpSpec, generate

HERE = Path(__file__).parent

DGP = DgpSpec(
    cell_probs=(0.22, 0.2, 0.18, 0.15, 0.15, 0.1),
    base_levels=(
        (0.55, 0.25),
        (0.50, 0.25),
        (0.65, 0.15),
        (0.60, 0.20),
        (0.45, 0.25),
        (0.70, 0.10),
    ),
    jumps=(
        (0.30, 0.05),
        (0.10, 0.30),
        (0.20, 0.20),
        (0.25, 0.15),
        (0.10, 0.25),
        (0.15, 0.10),
    ),
    betas=((-0.15, 0.04),) * 6,
    intercepts=(0.10, 0.07, 0.05, 0.12, 0.09, 0.04),
    slope_left=-0.02,
    slope_right=-0.01,
    noise_sd=0.25,
    z_range=(-1.0, 1.0),
    seed=20240615,
)

RACE = ("MIN", "MIN", "MIN", "WH", "WH", "WH")
EDUC = ("COL", "DRP", "HS", "COL", "DRP", "HS")


def main() -> None:
    ds = generate(DGP, 4000, DGP.seed)
    rng = np.random.default_rng(99)
    region = rng.integers(1, 5, size=ds.n)
    rows = []
    for i in range(ds.n):
        age = 65.0 + 20.0 * ds.z[i]  # roughly ages 45-85, cutoff at 65
        coverage = int(ds.x[i].sum())
        cell = int(ds.cells[i])
        rows.append(
            {
                "delayed_care": f"{ds.y[i]:.6f}",
                "age": f"{age:.4f}",
                "coverage": coverage,
                "race": RACE[cell],
                "educ": EDUC[cell],
                "region": int(region[i]),
            }
        )
    with (HERE / "insurance_style.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    homogeneous = DgpSpec(
        cell_probs=(0.4, 0.35, 0.25),
        base_levels=((0.55, 0.25), (0.50, 0.30), (0.70, 0.15)),
        jumps=((0.25, 0.10), (0.10, 0.30), (0.05, 0.45)),
        betas=((0.5, -0.3),) * 3,
        intercepts=(0.2, 0.4, -0.1),
        slope_left=0.3,
        slope_right=0.5,
        noise_sd=0.35,
        seed=7,
    )
    (HERE / "dgp_homogeneous.json").write_text(
        json.dumps(homogeneous.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {ds.n} rows and the DGP spec to {HERE}")


if __name__ == "__main__":
    main()
