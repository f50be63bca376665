"""Phase encoding and decoding.

Images enter the network as supply-enable delays and come back out as phases
of each oscillator relative to a reference oscillator: in phase = white pixel,
half a period of delay = 180 degrees = black pixel.  Feature detection reads
key-oscillator groups: a feature fires when its group oscillates mutually in
phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Waveform, falling_edge_crossings, InsufficientCrossings

__all__ = [
    "PhaseReadout", "FeatureVector", "UnsupportedSize",
    "AMBIGUOUS", "FEATURE_NAMES",
    "delays_from_pixels", "extract_phases", "binarize", "detect_features",
    "circular_distance_deg", "circular_mean_deg", "ideal_phases",
]

AMBIGUOUS = 0
FEATURE_NAMES = ("vertical", "horizontal", "diag_main", "diag_anti", "uniform")

# key-oscillator groups, 0-indexed row-major; a feature fires when its group
# is mutually in phase.  3x3 per the grid geometry; 2x2 uses the pair that is
# white in the corresponding stored edge pattern.
_GROUPS_9 = {
    "vertical": (1, 4, 7),
    "horizontal": (3, 4, 5),
    "diag_main": (0, 4, 8),
    "diag_anti": (2, 4, 6),
}
_GROUPS_4 = {
    "vertical": (0, 2),
    "horizontal": (0, 1),
    "diag_main": (0, 3),
    "diag_anti": (1, 2),
}


class UnsupportedSize(ValueError):
    """Feature groups are defined for 4 or 9 oscillators only."""


@dataclass(frozen=True)
class PhaseReadout:
    """Per-oscillator phase relative to the reference oscillator."""

    period: float
    phase_deg: np.ndarray
    locked: np.ndarray
    ref_index: int

    def to_record(self) -> dict:
        return {
            "period_s": self.period,
            "phases_deg": [float(p) for p in self.phase_deg],
            "locked": [bool(b) for b in self.locked],
            "ref": self.ref_index,
        }


@dataclass(frozen=True)
class FeatureVector:
    vertical: bool
    horizontal: bool
    diag_main: bool
    diag_anti: bool
    uniform: bool

    def as_array(self) -> np.ndarray:
        return np.array([self.vertical, self.horizontal, self.diag_main,
                         self.diag_anti, self.uniform], dtype=np.uint8)


def circular_distance_deg(a, b) -> np.ndarray:
    """Shortest angular distance in degrees, in [0, 180]."""
    d = np.abs((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0)
    return np.minimum(d, 360.0 - d)


def circular_mean_deg(angles_deg) -> float:
    """Circular mean, returned in [0, 360)."""
    ang = np.deg2rad(np.asarray(angles_deg, dtype=float))
    m = np.angle(np.mean(np.exp(1j * ang)))
    return float(np.rad2deg(m) % 360.0)


def delays_from_pixels(pixels, period: float) -> np.ndarray:
    """Map pixel values in [-1, 1] to supply-enable delays.

    White (+1) starts immediately, black (-1) starts half a period late so it
    oscillates 180 degrees out of phase with the reference; greys interpolate
    linearly: delay = (1 - x) / 2 * (T / 2).
    """
    if period <= 0.0:
        raise ValueError("period must be positive")
    x = np.asarray(pixels, dtype=float)
    if np.any(x < -1.0) or np.any(x > 1.0):
        raise ValueError("pixels must lie in [-1, 1]")
    return (1.0 - x) / 2.0 * (period / 2.0)


def ideal_phases(pixels) -> np.ndarray:
    """Phases a delay-encoded pattern would show with no coupling pull,
    relative to oscillator 0: 180 * (x_0 - x_i) / 2 mod 360 for binary x."""
    x = np.asarray(pixels, dtype=float)
    return (90.0 * (x[0] - x)) % 360.0


def extract_phases(w: Waveform, v_th: float = 1.0, n_settle: int = 5,
                   ref: int = 0) -> PhaseReadout:
    """Read phases from falling-edge threshold crossings.

    The first n_settle reference periods are discarded; each oscillator's
    phase is the circular mean of 360 * ((t_i - t_ref) mod T_ref) / T_ref over
    the last 3 crossing pairs.  locked_i requires the oscillator's own mean
    period to match the reference period within 1%.
    """
    n = w.v.shape[1]
    cross = [falling_edge_crossings(w.t, w.v[:, i], v_th) for i in range(n)]
    c_ref = cross[ref]
    if len(c_ref) < n_settle + 3:
        raise InsufficientCrossings(
            f"reference has {len(c_ref)} crossings, need {n_settle + 3}")
    c_ref = c_ref[n_settle:]
    t_ref = float(np.mean(np.diff(c_ref))) if len(c_ref) > 1 else float("nan")

    phases = np.zeros(n)
    locked = np.zeros(n, dtype=bool)
    for i in range(n):
        c_i = cross[i]
        if i == ref:
            phases[i] = 0.0
            locked[i] = True
            continue
        if len(c_i) < 3:
            raise InsufficientCrossings(
                f"oscillator {i} has {len(c_i)} crossings, need 3")
        samples = []
        for m in range(1, 4):
            d = (c_i[-m] - c_ref[-m]) % t_ref
            samples.append(360.0 * d / t_ref)
        phases[i] = circular_mean_deg(samples)
        tail = c_i[c_i >= c_ref[0]]
        if len(tail) < 3:
            tail = c_i[-3:]
        t_i = float(np.mean(np.diff(tail)))
        locked[i] = abs(t_i - t_ref) / t_ref < 0.01
    return PhaseReadout(period=t_ref, phase_deg=phases, locked=locked, ref_index=ref)


def binarize(readout: PhaseReadout, band_deg: float = 60.0) -> np.ndarray:
    """Phase to pixel: +1 within band_deg of 0, -1 within band_deg of 180,
    otherwise AMBIGUOUS (0).  Ambiguity is data, not an error."""
    if not (0.0 < band_deg <= 90.0):
        raise ValueError("band_deg must lie in (0, 90]")
    ph = readout.phase_deg
    out = np.zeros(len(ph), dtype=int)
    out[circular_distance_deg(ph, 0.0) <= band_deg] = 1
    out[circular_distance_deg(ph, 180.0) <= band_deg] = -1
    return out


def _group_fires(ph: np.ndarray, group, theta_tol: float) -> bool:
    g = list(group)
    for a in range(len(g)):
        for b in range(a + 1, len(g)):
            if circular_distance_deg(ph[g[a]], ph[g[b]]) > theta_tol:
                return False
    return True


def detect_features(readout: PhaseReadout, theta_tol: float = 30.0) -> FeatureVector:
    """Key-oscillator-group feature detection.

    A group fires when its members' maximum pairwise circular distance is at
    most theta_tol.  The all-in-phase (uniform) condition is the background
    detector and takes precedence, suppressing the edge flags.
    """
    ph = readout.phase_deg
    n = len(ph)
    if n == 9:
        groups = _GROUPS_9
    elif n == 4:
        groups = _GROUPS_4
    else:
        raise UnsupportedSize(f"feature groups defined for n in (4, 9), got {n}")
    uniform = _group_fires(ph, range(n), theta_tol)
    if uniform:
        return FeatureVector(False, False, False, False, True)
    flags = {name: _group_fires(ph, grp, theta_tol) for name, grp in groups.items()}
    return FeatureVector(flags["vertical"], flags["horizontal"],
                         flags["diag_main"], flags["diag_anti"], False)
