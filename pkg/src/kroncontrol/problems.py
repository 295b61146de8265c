"""Built-in problem presets, the Gaussian design, and coefficient file I/O.

The two built-in coefficient sets are closed-form rank-3 separable
coefficients: the unit set (whose operator is three times the Laplacian) and
a genuinely variable set mixing polynomial and trigonometric factors.
External coefficients travel as a JSON document of per-factor sample tables
interpolated linearly, or as references to the named presets below.
"""

import json

import numpy as np

from .kronop import GridSpec, SeparableCoefficient
from .lowrank import LowRankMatrix

FACTOR_PRESETS = {
    "one": lambda x: np.ones_like(x),
    "x_plus_2": lambda x: x + 2.0,
    "sin_cos_plus_1": lambda x: np.sin(x) * np.cos(x) + 1.0,
    "5x2_plus_2": lambda x: 5.0 * x**2 + 2.0,
    "sin_4pi_plus_2": lambda x: np.sin(4.0 * np.pi * x) + 2.0,
}


def test1_coefficient() -> SeparableCoefficient:
    """Rank-3 unit coefficient; the operator is 3x the 2D Laplacian."""
    one = FACTOR_PRESETS["one"]
    return SeparableCoefficient(2, tuple((one, one) for _ in range(3)))


def test2_coefficient() -> SeparableCoefficient:
    """Rank-3 variable coefficient mixing polynomial and oscillatory factors."""
    p = FACTOR_PRESETS
    return SeparableCoefficient(2, (
        (p["x_plus_2"], p["5x2_plus_2"]),
        (p["sin_cos_plus_1"], p["one"]),
        (p["one"], p["sin_4pi_plus_2"]),
    ))


def gaussian_rhs(grid: GridSpec, center=None, width=0.15) -> LowRankMatrix:
    """Rank-1 separable Gaussian bump sampled at the grid nodes.

    Defaults place a unit-amplitude bump at the domain center with width
    0.15; these parameters are conventions of this package, chosen so the
    design resembles the usual smooth tracking target.
    """
    if grid.d != 2:
        raise ValueError("the Gaussian design is generated for 2D grids")
    if center is None:
        center = (0.5,) * grid.d
    factors = [
        np.exp(-(((grid.nodes(ax) - center[ax]) / width) ** 2))
        for ax in range(grid.d)
    ]
    return LowRankMatrix.from_rank_one(factors[0], factors[1])


def _sampled_evaluator(samples):
    samples = np.asarray(samples, dtype=float)
    xs = np.linspace(0.0, 1.0, len(samples))
    return lambda x: np.interp(x, xs, samples)


def load_coefficient(path) -> SeparableCoefficient:
    """Read a coefficient exchange file and validate positivity.

    Format: {"d": int, "R": int, "factors": [[factor, ...], ...]} with one
    row per separable term and one entry per dimension; each factor is
    either {"samples": [...]} (equispaced on [0,1], linear interpolation)
    or {"preset": name}.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}"
            ) from exc
    try:
        d = int(doc["d"])
        r = int(doc["R"])
        rows = doc["factors"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: missing required field {exc}") from exc
    if r < 1 or len(rows) != r:
        raise ValueError(f"{path}: expected {r} factor rows, found {len(rows)}")
    factors = []
    for k, row in enumerate(rows):
        if len(row) != d:
            raise ValueError(
                f"{path}: term {k} has {len(row)} factors, expected {d}"
            )
        term = []
        for ell, entry in enumerate(row):
            where = f"{path}: term {k}, dimension {ell}"
            if "preset" in entry:
                name = entry["preset"]
                if name not in FACTOR_PRESETS:
                    raise ValueError(f"{where}: unknown preset {name!r}")
                term.append(FACTOR_PRESETS[name])
            elif "samples" in entry:
                samples = entry["samples"]
                if len(samples) < 2:
                    raise ValueError(f"{where}: need at least two samples")
                bad = next((i for i, v in enumerate(samples) if v <= 0.0), None)
                if bad is not None:
                    raise ValueError(
                        f"{where}: non-positive sample {samples[bad]} "
                        f"at index {bad}"
                    )
                term.append(_sampled_evaluator(samples))
            else:
                raise ValueError(f"{where}: need 'samples' or 'preset'")
        factors.append(tuple(term))
    coeff = SeparableCoefficient(d, tuple(factors))
    coeff.validate_positive()
    return coeff


def save_coefficient(coeff: SeparableCoefficient, path, samples=1024):
    """Write a coefficient as sampled tables (round-trips via interpolation)."""
    xs = np.linspace(0.0, 1.0, samples)
    doc = {
        "d": coeff.d,
        "R": coeff.rank,
        "factors": [
            [{"samples": np.asarray(f(xs), dtype=float).tolist()} for f in term]
            for term in coeff.factors
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def preset_coefficient(name) -> SeparableCoefficient:
    if name == "test1":
        return test1_coefficient()
    if name == "test2":
        return test2_coefficient()
    raise ValueError(f"unknown preset {name!r}")
