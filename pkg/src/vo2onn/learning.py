"""Programming and training of the coupling network.

Closed-form Hebbian weights store a pattern set; the weights map onto the two
coupling-resistance values used in the experiments.  Beyond that, the coupling
conductances can be trained against a target phase vector by gradient descent,
with the gradient taken by central finite differences straight on the circuit
simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import (NetworkConfig, CouplingSpec, Waveform, simulate_batch,
                      NO_COUPLING, InsufficientCrossings)
from .phase import extract_phases, detect_features, ideal_phases, PhaseReadout

__all__ = [
    "LengthMismatch", "ResistanceMap", "TrainSpec", "GradientResult", "TrainResult",
    "hebbian", "weights_to_resistance", "weights_to_resistance_continuous",
    "phase_cost", "fd_gradient", "train_onn",
    "save_coupling", "load_coupling",
]


class LengthMismatch(ValueError):
    pass


def hebbian(patterns) -> np.ndarray:
    """Coupling weights c_ij = (1/n) sum_k x_i^k x_j^k.

    Pixels are real-valued in [-1, 1]; for binary patterns they are phasors at
    0/180 degrees, so conjugation is the identity and the product rule is all
    that remains.  The diagonal comes out at m/n and is never used for
    coupling.
    """
    pats = [np.asarray(p, dtype=float) for p in patterns]
    if not pats:
        raise LengthMismatch("need at least one pattern")
    n = len(pats[0])
    if any(len(p) != n for p in pats):
        raise LengthMismatch("patterns differ in length")
    c = np.zeros((n, n))
    for p in pats:
        c += np.outer(p, p)
    return c / n


@dataclass(frozen=True)
class ResistanceMap:
    """Two-level weight-to-resistance quantization."""

    r_strong: float = 82.0e3
    r_weak: float = 130.0e3
    c_thresh: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.r_strong < self.r_weak):
            raise ValueError("need 0 < r_strong < r_weak")
        if self.c_thresh < 0.0:
            raise ValueError("c_thresh must be non-negative")


def weights_to_resistance(c: np.ndarray, rmap: ResistanceMap = ResistanceMap()) -> np.ndarray:
    """|c_ij| above the threshold gets the strong (lower) resistance, the rest
    the weak one.  The diagonal is absent (no self coupling)."""
    c = np.asarray(c, dtype=float)
    r = np.where(np.abs(c) > rmap.c_thresh, rmap.r_strong, rmap.r_weak)
    np.fill_diagonal(r, NO_COUPLING)
    return r


def weights_to_resistance_continuous(c: np.ndarray, r_unit: float = 41.0e3,
                                     r_min: float = 10.0e3,
                                     r_max: float = 1.0e6) -> np.ndarray:
    """Continuous alternative: r inversely proportional to |c|, clamped.
    r_unit is the resistance at |c| = 1."""
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore"):
        r = np.clip(r_unit / np.abs(c), r_min, r_max)
    np.fill_diagonal(r, NO_COUPLING)
    return r


def phase_cost(phi_out, phi_train) -> float:
    """Half the sum of squared circular phase errors, in squared degrees.
    Differences wrap into (-180, 180] before squaring."""
    a = np.asarray(phi_out, dtype=float)
    b = np.asarray(phi_train, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    d = (b - a) % 360.0
    d = np.where(d > 180.0, d - 360.0, d)
    return float(0.5 * np.sum(d * d))


@dataclass(frozen=True)
class TrainSpec:
    """Finite-difference training controls.

    eta is the conductance step per unit cost gradient (S per deg^2/S), delta
    the relative perturbation of each coupling conductance, g_min/g_max the
    conductance clamps.
    """

    eta: float = 1.0e-9
    epochs: int = 20
    delta: float = 0.02
    g_min: float = 1.0e-6
    g_max: float = 1.0e-4

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if not (0.0 < self.delta < 0.1):
            raise ValueError("delta must lie in (0, 0.1)")
        if not (self.g_min < self.g_max):
            raise ValueError("need g_min < g_max")


@dataclass
class GradientResult:
    grad: np.ndarray                       # (n, n) symmetric, d(cost)/d(g_ij)
    cost: float                            # cost at the nominal point
    not_locked: list[tuple[int, int]]      # pairs zeroed for failed lock


def _pairs(r_c: np.ndarray) -> list[tuple[int, int]]:
    n = r_c.shape[0]
    return [(i, j) for i in range(n) for j in range(i + 1, n)
            if np.isfinite(r_c[i, j])]


def _with_resistance(cfg: NetworkConfig, r_c: np.ndarray) -> NetworkConfig:
    coup = CouplingSpec(cfg.coupling.n, r_c, cfg.coupling.c_c)
    return replace(cfg, coupling=coup)


def _readout(w: Waveform, v_th: float, n_settle: int, ref: int):
    try:
        ro = extract_phases(w, v_th=v_th, n_settle=n_settle, ref=ref)
    except InsufficientCrossings:
        return None
    if not ro.locked.all():
        return None
    return ro


def fd_gradient(cfg: NetworkConfig, phi_train, spec: TrainSpec,
                v_th: float = 1.0, n_settle: int = 5, ref: int = 0) -> GradientResult:
    """Central-difference gradient of the phase cost with respect to each
    coupling conductance g_ij = 1/r_ij.

    Every unordered pair is perturbed symmetrically by +-delta * g_ij and the
    network re-simulated; all perturbed instances integrate as one batch.  A
    pair whose perturbed run fails to lock contributes zero gradient and is
    reported.
    """
    phi_train = np.asarray(phi_train, dtype=float)
    n = cfg.coupling.n
    pairs = _pairs(cfg.coupling.r_c)
    base_r = cfg.coupling.r_c

    cfgs = [cfg]
    for (i, j) in pairs:
        for sign in (+1.0, -1.0):
            g = 1.0 / base_r[i, j]
            r_pert = base_r.copy()
            r_pert[i, j] = r_pert[j, i] = 1.0 / (g * (1.0 + sign * spec.delta))
            cfgs.append(_with_resistance(cfg, r_pert))

    waves = simulate_batch(cfgs)
    ro0 = _readout(waves[0], v_th, n_settle, ref)
    if ro0 is None:
        raise InsufficientCrossings("nominal point did not lock")
    cost0 = phase_cost(ro0.phase_deg, phi_train)

    grad = np.zeros((n, n))
    not_locked = []
    for k, (i, j) in enumerate(pairs):
        ro_p = _readout(waves[1 + 2 * k], v_th, n_settle, ref)
        ro_m = _readout(waves[2 + 2 * k], v_th, n_settle, ref)
        if ro_p is None or ro_m is None:
            not_locked.append((i, j))
            continue
        c_p = phase_cost(ro_p.phase_deg, phi_train)
        c_m = phase_cost(ro_m.phase_deg, phi_train)
        g = 1.0 / base_r[i, j]
        grad[i, j] = grad[j, i] = (c_p - c_m) / (2.0 * spec.delta * g)
    return GradientResult(grad=grad, cost=cost0, not_locked=not_locked)


@dataclass
class TrainResult:
    r_c: np.ndarray
    cost_history: list[float]
    recognized_epoch: int | None           # epoch after which the target fired
    not_locked_events: int


def train_onn(cfg: NetworkConfig, phi_train, spec: TrainSpec,
              v_th: float = 1.0, n_settle: int = 5, ref: int = 0,
              theta_tol: float = 30.0) -> TrainResult:
    """Gradient-descent training of the coupling conductances.

    Iterates g <- clamp(g - eta * dC/dg) and stops early once the feature
    detector reads the same feature vector from the network as from the
    target phases.  The cost history is recorded as-is (descent on a
    simulated circuit is not guaranteed monotone).
    """
    phi_train = np.asarray(phi_train, dtype=float)
    target = detect_features(
        PhaseReadout(period=1.0, phase_deg=phi_train,
                     locked=np.ones(len(phi_train), dtype=bool), ref_index=ref),
        theta_tol=theta_tol)
    r_c = cfg.coupling.r_c.copy()
    history: list[float] = []
    bad = 0
    recognized = None

    def recognizes(c: NetworkConfig) -> bool:
        ro = _readout(simulate_batch([c])[0], v_th, n_settle, ref)
        if ro is None:
            return False
        return detect_features(ro, theta_tol=theta_tol) == target

    if recognizes(cfg):
        g0 = fd_gradient(cfg, phi_train, spec, v_th, n_settle, ref)
        return TrainResult(r_c=r_c, cost_history=[g0.cost], recognized_epoch=0,
                           not_locked_events=len(g0.not_locked))

    for epoch in range(1, spec.epochs + 1):
        cur = _with_resistance(cfg, r_c)
        res = fd_gradient(cur, phi_train, spec, v_th, n_settle, ref)
        history.append(res.cost)
        bad += len(res.not_locked)
        mask = np.isfinite(r_c)
        np.fill_diagonal(mask, False)
        g = np.zeros_like(r_c)
        g[mask] = 1.0 / r_c[mask]
        g[mask] = np.clip(g[mask] - spec.eta * res.grad[mask], spec.g_min, spec.g_max)
        r_new = r_c.copy()
        r_new[mask] = 1.0 / g[mask]
        r_c = (r_new + r_new.T) / 2.0
        np.fill_diagonal(r_c, NO_COUPLING)
        if recognizes(_with_resistance(cfg, r_c)):
            recognized = epoch
            break
    return TrainResult(r_c=r_c, cost_history=history, recognized_epoch=recognized,
                       not_locked_events=bad)


# ---------------------------------------------------------------------------
# coupling persistence
# ---------------------------------------------------------------------------

def save_coupling(path, r_c: np.ndarray, c_c: np.ndarray) -> None:
    """Versioned text format: header line `onn-coupling v1 n=<n>`, then one
    `i j r_ohm c_farad` row per present upper-triangular branch (0-indexed)."""
    n = r_c.shape[0]
    with open(path, "w") as fh:
        fh.write(f"onn-coupling v1 n={n}\n")
        for i in range(n):
            for j in range(i + 1, n):
                if np.isfinite(r_c[i, j]):
                    fh.write(f"{i} {j} {r_c[i, j]!r} {c_c[i, j]!r}\n")


def load_coupling(path) -> CouplingSpec:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "onn-coupling" or header[1] != "v1":
            raise ValueError(f"bad coupling file header: {' '.join(header)}")
        n = int(header[2].removeprefix("n="))
        r_c = np.full((n, n), NO_COUPLING)
        c_c = np.zeros((n, n))
        for line in fh:
            if not line.strip():
                continue
            i_s, j_s, r_s, c_s = line.split()
            i, j = int(i_s), int(j_s)
            r_c[i, j] = r_c[j, i] = float(r_s)
            c_c[i, j] = c_c[j, i] = float(c_s)
    return CouplingSpec(n, r_c, c_c)
