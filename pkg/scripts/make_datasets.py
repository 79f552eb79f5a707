"""Regenerate the bundled synthetic datasets in src/autostep/data/.

Both datasets are simulated from their models at fixed parameter values with a
fixed seed, so rerunning this script reproduces the shipped files exactly.
"""
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "autostep" / "data"


def write(path, header, cols):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def kilpisjarvi(rng):
    years = np.arange(1952, 2014, dtype=float)
    beta, sigma = 0.02, 1.1
    alpha = 9.313 - beta * years.mean()
    temps = np.round(alpha + beta * years + sigma * rng.standard_normal(years.size), 2)
    write(DATA / "kilpisjarvi.csv", ["x", "y"], [years, temps])


def mrna(rng):
    t = np.linspace(0.5, 25.0, 50)
    t0, k0, beta, delta, sigma = 1.0, 10**0.5, 10**-0.7, 10**-0.2, 0.1
    dt = np.clip(t - t0, 0.0, None)
    mu = np.where(dt > 0, k0 * (np.exp(-beta * dt) - np.exp(-delta * dt)) / (delta - beta), 0.0)
    y = np.round(mu + sigma * rng.standard_normal(t.size), 4)
    write(DATA / "mrna.csv", ["t", "y"], [t, y])


if __name__ == "__main__":
    rng = np.random.default_rng(20240601)
    kilpisjarvi(rng)
    mrna(rng)
