"""Tunnel-diode reflection amplifier design calculator.

Reflection gain, LC resonance, quality factor, the diode's equivalent
capacitance at the operating frequency, noise figure, and bias selection from
a polynomial fit of the measured IV curve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from .errors import (
    AboveCutoff,
    DataError,
    InductiveEquivalent,
    NoNegativeResistanceRegion,
    NonPositiveInput,
    RankDeficient,
    SchemaMismatch,
    SingularDenominator,
    ZeroSlope,
)

GAIN_FLOOR_DB = -200.0


@dataclass(frozen=True)
class Impedance:
    real: float
    imag: float = 0.0

    @property
    def complex(self) -> complex:
        return complex(self.real, self.imag)


def _z(value) -> complex:
    if isinstance(value, Impedance):
        return value.complex
    return complex(value)


@dataclass(frozen=True)
class DiodeModel:
    """Packaged tunnel diode. Defaults are typical datasheet values."""

    c_j: float = 0.1e-12
    c_p: float = 0.3e-12
    l_p: float = 1.2e-9
    r: float = 6.0
    iv_samples: tuple[tuple[float, float], ...] = ()
    fit_degree: int = 9
    k_a: float = 1.2
    f_r0: float | None = None

    def __post_init__(self):
        for name in ("c_j", "c_p", "l_p", "r"):
            if not getattr(self, name) > 0:
                raise NonPositiveInput(f"{name} must be positive")
        samples = tuple((float(v), float(i)) for v, i in self.iv_samples)
        object.__setattr__(self, "iv_samples", samples)
        biases = [v for v, _ in samples]
        if any(a >= b for a, b in zip(biases, biases[1:])):
            raise RankDeficient("IV sample biases must be strictly increasing")
        if samples and len(samples) < self.fit_degree + 1:
            raise RankDeficient(
                f"{len(samples)} IV samples cannot support a degree-{self.fit_degree} fit"
            )


@dataclass(frozen=True)
class ResonatorSpec:
    l: float
    c: float
    r_parasitic: float
    f_center: float = field(default=float("nan"))

    def __post_init__(self):
        if not (self.l > 0 and self.c > 0):
            raise NonPositiveInput("resonator L and C must be positive")
        if math.isnan(self.f_center):
            object.__setattr__(self, "f_center", resonant_frequency(self.l, self.c))
        elif not math.isclose(self.f_center, resonant_frequency(self.l, self.c), rel_tol=1e-9):
            raise DataError("f_center inconsistent with L and C")


def reflection_coefficient(z_load, z_antenna) -> complex:
    """Gamma = (Z_L - Z_A*) / (Z_L + Z_A)."""
    zl, za = _z(z_load), _z(z_antenna)
    den = zl + za
    if den == 0:
        raise SingularDenominator("Z_L = -Z_A")
    return (zl - za.conjugate()) / den


def reflection_gain_db(z_load, z_antenna) -> float:
    g2 = abs(reflection_coefficient(z_load, z_antenna)) ** 2
    if g2 == 0.0:
        return GAIN_FLOOR_DB
    return max(GAIN_FLOOR_DB, 10.0 * math.log10(g2))


def resonant_frequency(l: float, c: float) -> float:
    if not (l > 0 and c > 0):
        raise NonPositiveInput("L and C must be positive")
    return 1.0 / (2.0 * math.pi * math.sqrt(l * c))


def solve_inductance(f_c: float, c: float) -> float:
    if not (f_c > 0 and c > 0):
        raise NonPositiveInput("f_c and C must be positive")
    return 1.0 / ((2.0 * math.pi * f_c) ** 2 * c)


def quality_factor(spec: ResonatorSpec) -> float:
    if not spec.r_parasitic > 0:
        raise NonPositiveInput("parasitic resistance must be positive")
    return 2.0 * math.pi * spec.f_center * spec.l / spec.r_parasitic


def diode_admittance(diode: DiodeModel, r_nr: float, f_c: float) -> complex:
    """Admittance of C_p || (r + jwL_p + (C_j || R_NR))."""
    w = 2.0 * math.pi * f_c
    y_junction = 1.0 / r_nr + 1j * w * diode.c_j
    z_branch = diode.r + 1j * w * diode.l_p + 1.0 / y_junction
    return 1j * w * diode.c_p + 1.0 / z_branch


def equivalent_parallel_capacitance(diode: DiodeModel, r_nr: float, f_c: float) -> float:
    if not r_nr < 0:
        raise DataError("r_nr must be negative")
    if not f_c > 0:
        raise NonPositiveInput("f_c must be positive")
    b = diode_admittance(diode, r_nr, f_c).imag
    if b <= 0:
        raise InductiveEquivalent(b)
    return b / (2.0 * math.pi * f_c)


@dataclass(frozen=True)
class IvFit:
    poly: Polynomial
    degree: int
    residual_rms: float
    domain: tuple[float, float]

    @property
    def coefficients(self) -> list[float]:
        """Power-basis coefficients in volts, highest power first."""
        c = self.poly.convert(domain=[-1, 1], window=[-1, 1]).coef
        c = np.pad(c, (0, self.degree + 1 - len(c)))
        return [float(v) for v in c[::-1]]

    def current(self, v):
        return self.poly(v)

    def slope(self, v):
        return self.poly.deriv()(v)


def fit_iv_curve(samples, degree: int) -> IvFit:
    """Least-squares polynomial fit of current against bias voltage.

    ``degree == len(samples) - 1`` interpolates exactly; anything higher, or
    repeated bias values, raises :class:`RankDeficient`.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError("samples must be (bias, current) pairs")
    v, i = arr[:, 0], arr[:, 1]
    if degree < 0:
        raise DataError("degree must be non-negative")
    if len(np.unique(v)) != len(v):
        raise RankDeficient("bias values are not distinct")
    if degree >= len(v):
        raise RankDeficient(f"degree {degree} needs at least {degree + 1} samples, got {len(v)}")
    poly = Polynomial.fit(v, i, degree)
    resid = i - poly(v)
    return IvFit(
        poly=poly,
        degree=degree,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        domain=(float(v.min()), float(v.max())),
    )


def negative_resistance(fit: IvFit, bias: float) -> float:
    """Differential resistance 1/(dI/dV); negative inside the NR region."""
    s = float(fit.slope(bias))
    if s == 0.0:
        raise ZeroSlope(f"dI/dV is zero at {bias} V")
    return 1.0 / s


def noise_figure(diode: DiodeModel, r_nr: float, f: float) -> float:
    """Linear NF = (1 + K_a) / ((1 - r/R_NR)(1 - f/f_r0))."""
    if diode.f_r0 is None:
        raise DataError("noise figure needs the diode cutoff frequency f_r0")
    if r_nr == 0:
        raise DataError("r_nr must be non-zero")
    if f >= diode.f_r0:
        raise AboveCutoff(f"f={f} Hz is not below cutoff {diode.f_r0} Hz")
    return (1.0 + diode.k_a) / ((1.0 - diode.r / r_nr) * (1.0 - f / diode.f_r0))


def minimize_noise_figure(
    diode: DiodeModel,
    bias_range: tuple[float, float],
    f: float,
    step: float = 1e-3,
    fit: IvFit | None = None,
) -> tuple[float, float]:
    """Grid-search the bias with the lowest NF among negative-resistance points."""
    if fit is None:
        fit = fit_iv_curve(diode.iv_samples, diode.fit_degree)
    lo, hi = bias_range
    d0, d1 = fit.domain
    tol = 1e-12 * max(1.0, abs(d0), abs(d1))
    if lo > hi or lo < d0 - tol or hi > d1 + tol:
        raise DataError(f"bias range {bias_range} outside fitted domain {fit.domain}")
    if step <= 0:
        raise NonPositiveInput("step must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9))
    grid = lo + step * np.arange(n + 1)
    slopes = fit.slope(grid)
    mask = slopes < 0
    if not mask.any():
        raise NoNegativeResistanceRegion(f"no dI/dV < 0 in {bias_range}")
    best_bias, best_nf = None, math.inf
    for v, s in zip(grid[mask], slopes[mask]):
        nf = noise_figure(diode, 1.0 / float(s), f)
        if nf < best_nf:
            best_bias, best_nf = float(v), nf
    return best_bias, best_nf


def read_iv_csv(path) -> list[tuple[float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["bias_v", "current_a"]:
            raise SchemaMismatch(f"expected header bias_v,current_a, got {header}")
        return [(float(v), float(i)) for v, i in reader]


def write_iv_csv(path, samples) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bias_v", "current_a"])
        for v, i in samples:
            w.writerow([repr(float(v)), repr(float(i))])
