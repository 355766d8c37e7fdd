"""Modal amplitudes, outgoing powers, transmission spectra and CPD curves."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fem import FrequencyContext, Problem, SolverError, StateSolution, assemble_bulk
from .modes import ModeBasis

__all__ = [
    "AmplitudeSet",
    "PowerSet",
    "Spectrum",
    "CPDCurve",
    "incident_amplitude",
    "modal_amplitudes",
    "outgoing_powers",
    "performance_spectrum",
    "evaluation_grid",
    "cpd",
]

log = logging.getLogger(__name__)


def incident_amplitude(left: ModeBasis) -> float:
    """Planar modal amplitude ``v_0^T M^L 1`` of the unit-pressure incident wave.

    Mode vectors are M-orthonormal, so a unit pressure wave carries modal
    amplitude ``r_left / sqrt(2)``.  Amplitudes below are divided by this
    value so the incoming planar amplitude is exactly 1.
    """
    return float(left.projectors[:, 0].sum())


@dataclass(frozen=True)
class AmplitudeSet:
    """Outgoing amplitudes of the propagating modes, relative to unit incidence."""

    B_left: np.ndarray
    B_right: np.ndarray
    incoming_planar: float = 1.0


@dataclass(frozen=True)
class PowerSet:
    P_left: np.ndarray
    P_right: np.ndarray

    @property
    def total(self) -> float:
        return float(self.P_left.sum() + self.P_right.sum())

    @property
    def transmission(self) -> float:
        """Planar power leaving through the right boundary."""
        return float(self.P_right[0]) if len(self.P_right) else 0.0

    @property
    def parasitic(self) -> float:
        """Everything except the transmitted planar wave."""
        return float(self.P_left.sum() + self.P_right[1:].sum())


def modal_amplitudes(sol: StateSolution, left: ModeBasis | None = None, right: ModeBasis | None = None) -> AmplitudeSet:
    ctx = sol.context
    left = ctx.left if left is None else left
    right = ctx.right if right is None else right
    a_in = incident_amplitude(left)
    k = ctx.k
    mp_l, mp_r = left.n_propagating(k), right.n_propagating(k)
    B_left = left.project(sol.p)[:mp_l] / a_in
    B_left[0] -= 1.0
    B_right = right.project(sol.p)[:mp_r] / a_in
    return AmplitudeSet(B_left=B_left, B_right=B_right)


def power_factors(ctx: FrequencyContext):
    """``k_m / k`` for the propagating modes on each side."""
    mp_l, mp_r = ctx.Mp_left, ctx.Mp_right
    return ctx.km_left[:mp_l].real / ctx.k, ctx.km_right[:mp_r].real / ctx.k


def outgoing_powers(amps: AmplitudeSet, ctx: FrequencyContext) -> PowerSet:
    wl, wr = power_factors(ctx)
    if len(wl) != len(amps.B_left) or len(wr) != len(amps.B_right):
        raise ValueError("amplitude set does not match the propagating modes of the context")
    wl = wl.copy()
    wl[0] = 1.0
    P_left = wl * np.abs(amps.B_left) ** 2
    P_right = wr * np.abs(amps.B_right) ** 2
    return PowerSet(P_left=P_left, P_right=P_right)


def evaluation_grid(f_min: float = 4000.0, f_max: float = 16000.0, step: float = 20.0) -> np.ndarray:
    n = int(round((f_max - f_min) / step))
    return f_min + step * np.arange(n + 1)


@dataclass(frozen=True)
class Spectrum:
    """Planar transmission per frequency; failed solves are NaN."""

    frequencies: np.ndarray
    performance: np.ndarray

    @property
    def entries(self):
        return list(zip(self.frequencies.tolist(), self.performance.tolist()))

    @property
    def failed(self) -> np.ndarray:
        return self.frequencies[np.isnan(self.performance)]

    def __len__(self) -> int:
        return len(self.frequencies)


def performance_spectrum(problem: Problem, alpha, f_grid, workers: int | None = None) -> Spectrum:
    """Solve once per frequency and record ``P_0^R``."""
    from .parallel import map_ordered

    f_grid = np.asarray(f_grid, dtype=float)
    bulk = assemble_bulk(problem.mesh, alpha)

    def one(f):
        try:
            sol = problem.solve(bulk, f)
        except SolverError as exc:
            log.warning("spectrum gap at %.1f Hz: %s", f, exc)
            return np.nan
        return outgoing_powers(modal_amplitudes(sol), sol.context).transmission

    perf = np.array(map_ordered(one, f_grid, workers=workers), dtype=float)
    return Spectrum(frequencies=f_grid, performance=perf)


@dataclass(frozen=True)
class CPDCurve:
    thresholds: np.ndarray
    values: np.ndarray

    def area(self) -> float:
        """Trapezoid integral of the curve over the thresholds."""
        return float(np.trapezoid(self.values, self.thresholds))


def cpd(spectrum: Spectrum | np.ndarray, thresholds=None) -> CPDCurve:
    """Fraction of grid frequencies whose performance is at most each threshold."""
    perf = spectrum.performance if isinstance(spectrum, Spectrum) else np.asarray(spectrum, dtype=float)
    perf = perf[~np.isnan(perf)]
    if perf.size == 0:
        raise ValueError("empty spectrum")
    t = np.linspace(0.0, 1.0, 1001) if thresholds is None else np.asarray(thresholds, dtype=float)
    s = np.sort(perf)
    values = np.searchsorted(s, t, side="right") / s.size
    if t.size and t[-1] >= 1.0:
        # performances may exceed 1 by round-off
        values[t >= 1.0] = 1.0
    return CPDCurve(thresholds=t, values=values)
