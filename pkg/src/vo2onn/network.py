"""Coupled relaxation-oscillator circuit assembly and time integration.

Each oscillator is a VO2 device from its own supply node to an internal node
that carries a capacitance to ground and a linear load conductance (the series
transistor biased at fixed gate voltage).  Oscillators are joined by parallel
R-C coupling branches.  Kirchhoff's current law per node gives

    M dv/dt = A v + b(t)

with M the capacitance matrix (node + coupling stamps), A the conductance
stamps (device state dependent), and b the supply injections.  The supply of
oscillator i is zero until t = delay_i, which is how input patterns enter.

Integration is trapezoidal with the device states frozen inside a step;
threshold crossings of the device voltage u_i = v_in_i(t) - v_i are located
inside the step by bisection on the step's cubic dense output, the switch is
committed there, and the remainder of the step is re-integrated.  The whole
engine is batched: many networks that share topology, capacitances, and the
time grid integrate together as one (B, n) system, which is what makes
image-scale filtering and finite-difference training affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .device import DeviceParams, DeviceState

__all__ = [
    "OscillatorUnit", "CouplingSpec", "NetworkConfig", "Waveform", "SimContext",
    "SingularMatrix", "StepRejected", "InsufficientCrossings",
    "build_network", "step", "simulate", "simulate_batch", "estimate_period",
    "falling_edge_crossings", "oscillation_extremes", "single_oscillator_period",
    "trim_g_load", "default_dt", "default_t_end", "write_waveform_csv",
    "write_event_csv", "NO_COUPLING",
]

NO_COUPLING = np.inf

_BISECT_MAX_ITER = 60
_EVENT_LOOP_MAX = 200


class SingularMatrix(ValueError):
    """Capacitance matrix is not positive definite (corrupted config)."""


class StepRejected(RuntimeError):
    """Event bisection failed to converge."""


class InsufficientCrossings(ValueError):
    """Trace has too few threshold crossings for the requested estimate."""


@dataclass(frozen=True)
class OscillatorUnit:
    """One oscillator: device + node capacitance + load + gated supply."""

    device: DeviceParams = field(default_factory=DeviceParams)
    c_node: float = 8.0e-12
    g_load: float = 1.5e-5
    v_in: float = 2.0
    delay: float = 0.0

    def __post_init__(self):
        if self.c_node <= 0.0 or self.g_load <= 0.0:
            raise ValueError("c_node and g_load must be positive")
        if self.v_in < 0.0 or self.delay < 0.0:
            raise ValueError("v_in and delay must be non-negative")


@dataclass(frozen=True)
class CouplingSpec:
    """Symmetric parallel R-C coupling branches; NO_COUPLING marks absent pairs."""

    n: int
    r_c: np.ndarray
    c_c: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_c, dtype=float)
        c = np.asarray(self.c_c, dtype=float)
        if r.shape != (self.n, self.n) or c.shape != (self.n, self.n):
            raise ValueError("coupling matrices must be n x n")
        if not (np.allclose(r, r.T, equal_nan=True) and np.allclose(c, c.T)):
            raise ValueError("coupling matrices must be symmetric")
        off = ~np.eye(self.n, dtype=bool)
        if np.any(r[off] <= 0.0):
            raise ValueError("present coupling resistances must be positive")
        if np.any(c[off] < 0.0):
            raise ValueError("coupling capacitances must be non-negative")
        object.__setattr__(self, "r_c", r)
        object.__setattr__(self, "c_c", c)

    @classmethod
    def uncoupled(cls, n: int) -> "CouplingSpec":
        return cls(n, np.full((n, n), NO_COUPLING), np.zeros((n, n)))


@dataclass(frozen=True)
class NetworkConfig:
    units: tuple[OscillatorUnit, ...]
    coupling: CouplingSpec
    dt: float
    t_end: float
    sample_every: int = 4

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if len(self.units) != self.coupling.n or self.coupling.n < 1:
            raise ValueError("units and coupling size mismatch")
        if self.dt <= 0.0 or self.t_end < 0.0 or self.sample_every < 1:
            raise ValueError("dt must be > 0, t_end >= 0, sample_every >= 1")


@dataclass
class Waveform:
    """Sampled node voltages with the switch-event log."""

    t: np.ndarray
    v: np.ndarray                       # (samples, n)
    events: list[tuple[float, int, DeviceState]]
    non_oscillating: np.ndarray = None  # (n,) bool, set by simulate()

    def __post_init__(self):
        if self.non_oscillating is None:
            self.non_oscillating = np.zeros(self.v.shape[1], dtype=bool)


# ---------------------------------------------------------------------------
# closed-form single-oscillator relations (oracle, defaults, trimming)
# ---------------------------------------------------------------------------

def oscillation_extremes(unit: OscillatorUnit) -> tuple[float, float]:
    """Node-voltage swing (v_bot, v_top) implied by the switching conditions."""
    return unit.v_in - unit.device.v_high, unit.v_in - unit.device.v_low


def single_oscillator_period(unit: OscillatorUnit) -> float:
    """Steady-state period of one uncoupled oscillator.

    Each half-cycle is a first-order relaxation toward
    v_inf(s) = v_in * g_dev / (g_dev + g_load) with tau = c / (g_dev + g_load);
    the durations follow from the threshold-crossing conditions.  Returns inf
    when the asymptotes never reach the switching points (no oscillation).
    """
    d = unit.device
    g_m, g_i, g_l = 1.0 / d.r_met, 1.0 / d.r_ins, unit.g_load
    v_bot, v_top = oscillation_extremes(unit)
    v_inf_m = unit.v_in * g_m / (g_m + g_l)
    v_inf_i = unit.v_in * g_i / (g_i + g_l)
    if v_inf_m <= v_top or v_inf_i >= v_bot or v_bot <= 0.0:
        return np.inf
    t_met = unit.c_node / (g_m + g_l) * np.log((v_inf_m - v_bot) / (v_inf_m - v_top))
    t_ins = unit.c_node / (g_i + g_l) * np.log((v_top - v_inf_i) / (v_bot - v_inf_i))
    return t_met + t_ins


def default_dt(unit: OscillatorUnit, steps_per_period: int = 2000) -> float:
    t = single_oscillator_period(unit)
    if not np.isfinite(t):
        raise ValueError("unit does not oscillate; cannot derive a step")
    return t / steps_per_period


def default_t_end(unit: OscillatorUnit, periods: float = 12.0) -> float:
    return periods * single_oscillator_period(unit)


def trim_g_load(unit: OscillatorUnit, t_target: float,
                g_lo: float = 1.0e-6, g_hi: float = 9.0e-5,
                grid: int = 160) -> float:
    """Load conductance that sets the uncoupled period to t_target.

    The period-versus-g_load curve is non-monotonic (it diverges at both ends
    of the oscillation window), so the root is bracketed on a grid first.
    Raises ValueError when the target is unreachable.
    """
    def excess(g: float) -> float:
        return single_oscillator_period(replace(unit, g_load=g)) - t_target

    gs = np.linspace(g_lo, g_hi, grid)
    vals = np.array([excess(g) for g in gs])
    for a, b, fa, fb in zip(gs[:-1], gs[1:], vals[:-1], vals[1:]):
        if np.isfinite(fa) and np.isfinite(fb) and fa * fb <= 0.0:
            return float(brentq(excess, a, b, xtol=1e-14))
    raise ValueError(f"period {t_target} not reachable by g_load in [{g_lo}, {g_hi}]")


# ---------------------------------------------------------------------------
# batched trapezoidal engine
# ---------------------------------------------------------------------------

class _Engine:
    """Integrates B networks sharing topology, capacitances, and time grid."""

    def __init__(self, couplings: list[CouplingSpec], c_node: np.ndarray,
                 g_ins: np.ndarray, g_met: np.ndarray, g_load: np.ndarray,
                 v_in: np.ndarray, v_high: np.ndarray, v_low: np.ndarray,
                 delays: np.ndarray, dt: float):
        ref = couplings[0]
        self.n = ref.n
        self.B = g_ins.shape[0]
        self.dt = float(dt)

        c_c = ref.c_c.copy()
        np.fill_diagonal(c_c, 0.0)
        self.M = np.diag(c_node + c_c.sum(axis=1)) - c_c
        try:
            np.linalg.cholesky(self.M)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix("capacitance matrix not positive definite") from exc
        self.M_inv = np.linalg.inv(self.M)

        # coupling-only conductance stamps, per batch row; load and device
        # conductances are element-wise diagonal corrections
        def stamps(cp: CouplingSpec) -> np.ndarray:
            g_c = np.where(np.isfinite(cp.r_c), 1.0 / cp.r_c, 0.0)
            np.fill_diagonal(g_c, 0.0)
            return g_c - np.diag(g_c.sum(axis=1))

        if len(couplings) == 1 or all(
                np.array_equal(np.nan_to_num(c.r_c, posinf=-1.0),
                               np.nan_to_num(ref.r_c, posinf=-1.0)) for c in couplings[1:]):
            self.A_base = stamps(ref)           # (n, n), shared
            self.A_per_row = None
        else:
            self.A_base = None
            self.A_per_row = np.stack([stamps(c) for c in couplings])  # (B, n, n)

        self.g_ins, self.g_met = g_ins, g_met    # (B, n)
        self.g_load, self.v_in = g_load, v_in    # (B, n)
        self.v_high, self.v_low = v_high, v_low  # (B, n)
        self.delays = delays                     # (B, n)

        self.shared_rows = self.A_per_row is None and (self.B == 1 or all(
            np.ptp(a, axis=0).max() == 0.0
            for a in (g_ins, g_met, g_load, v_in, v_high, v_low)))

        self.t = 0.0
        self.v = np.zeros((self.B, self.n))
        self.metallic = np.zeros((self.B, self.n), dtype=bool)
        self.events: list[list[tuple[float, int, DeviceState]]] = [[] for _ in range(self.B)]

        # step-matrix inverse cache for the regular step, keyed by the device
        # state bitmask (and by batch row when rows differ)
        self._pow2 = (1 << np.arange(self.n)).astype(np.int64)
        self._cache: dict[int, np.ndarray] = {}
        if self.A_base is not None:
            self._Rmat = self.M / self.dt + self.A_base / 2.0
            self._Lbase = self.M / self.dt - self.A_base / 2.0
        else:
            self._Rmat = self.M / self.dt + self.A_per_row / 2.0     # (B, n, n)
            self._Lbase = self.M / self.dt - self.A_per_row / 2.0

    def _A_rows(self, idx: np.ndarray) -> np.ndarray:
        if self.A_per_row is None:
            return self.A_base[None, :, :]
        return self.A_per_row[idx]

    # -- elementwise pieces ------------------------------------------------

    def _gdev(self) -> np.ndarray:
        return np.where(self.metallic, self.g_met, self.g_ins)

    def _vin_at(self, t: float) -> np.ndarray:
        return np.where(t >= self.delays, self.v_in, 0.0)

    def _crossing(self, u: np.ndarray) -> np.ndarray:
        return (~self.metallic & (u >= self.v_high)) | (self.metallic & (u <= self.v_low))

    # -- linear solves -----------------------------------------------------

    def _solve_regular(self, rhs: np.ndarray, gdiag: np.ndarray) -> np.ndarray:
        """Solve (M/dt - A/2) v+ = rhs for every row, caching inverses by
        state bitmask (valid because the varying part is diag(gdiag)/2)."""
        masks = self.metallic @ self._pow2
        if self.shared_rows:
            keys = masks
        else:
            keys = masks + (np.arange(self.B, dtype=np.int64) << self.n)
        out = np.empty_like(rhs)
        gathered = np.empty((self.B, self.n, self.n))
        missing = []
        for b in range(self.B):
            inv = self._cache.get(int(keys[b]))
            if inv is None:
                missing.append(b)
            else:
                gathered[b] = inv
        for b in missing:
            base = self._Lbase if self.A_per_row is None else self._Lbase[b]
            L = base + np.diag(gdiag[b] / 2.0)
            inv = np.linalg.inv(L)
            self._cache[int(keys[b])] = inv
            gathered[b] = inv
        np.einsum("bij,bj->bi", gathered, rhs, out=out)
        return out

    def _trapz_rows(self, idx: np.ndarray, v0: np.ndarray, t0: np.ndarray,
                    h: np.ndarray) -> np.ndarray:
        """Trapezoidal substeps for selected rows; start time and length may
        differ per row.  v0 holds the selected rows' start values."""
        gd = np.where(self.metallic[idx], self.g_met[idx], self.g_ins[idx])
        gdiag = self.g_load[idx] + gd
        # substeps never straddle a supply turn-on, so the supply state over
        # the whole substep is its state at the substep start
        on = t0[:, None] >= self.delays[idx]
        b = np.where(on, self.v_in[idx], 0.0) * gd
        hcol = h[:, None]
        A = self._A_rows(idx)
        rhs = (np.einsum("ij,bj->bi", self.M, v0) / hcol
               + np.einsum("bij,bj->bi", A, v0) / 2.0
               - gdiag / 2.0 * v0 + b)
        # hcol has one row per selected element, so both terms broadcast to a
        # fresh (k, n, n) array
        L = self.M[None, :, :] / hcol[:, :, None] - A / 2.0
        L[:, np.arange(self.n), np.arange(self.n)] += gdiag / 2.0
        return np.linalg.solve(L, rhs[:, :, None])[:, :, 0]

    # -- event handling ----------------------------------------------------

    def _flip_instantaneous(self):
        """Apply switches implied by the current (t, v) before integrating;
        this is how supply turn-on at t = delay triggers the first switch."""
        for _ in range(self.n + 1):
            u = self._vin_at(self.t) - self.v
            hit = self._crossing(u)
            if not hit.any():
                return
            for b, i in zip(*np.where(hit)):
                self.metallic[b, i] = ~self.metallic[b, i]
                self.events[b].append(
                    (self.t, int(i),
                     DeviceState.METALLIC if self.metallic[b, i] else DeviceState.INSULATING))

    def _deriv_rows(self, idx: np.ndarray, v: np.ndarray, on: np.ndarray) -> np.ndarray:
        """dv/dt = M^-1 (A v + b) for selected rows, given the segment's
        supply-enable mask."""
        gd = np.where(self.metallic[idx], self.g_met[idx], self.g_ins[idx])
        b = np.where(on, self.v_in[idx], 0.0) * gd
        rhs = (np.einsum("bij,bj->bi", self._A_rows(idx), v)
               - (self.g_load[idx] + gd) * v + b)
        return np.einsum("ij,bj->bi", self.M_inv, rhs)

    def _locate_crossings(self, idx: np.ndarray, v0: np.ndarray, v1: np.ndarray,
                          t0: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Earliest threshold-crossing time inside (0, h] per selected row,
        bisected on the step's cubic dense output to within h * 1e-3."""
        on = t0[:, None] >= self.delays[idx]
        d0 = self._deriv_rows(idx, v0, on)
        d1 = self._deriv_rows(idx, v1, on)
        vin_seg = np.where(on, self.v_in[idx], 0.0)
        met = self.metallic[idx]
        vh, vl = self.v_high[idx], self.v_low[idx]
        hcol = h[:, None]

        def crossed(theta: np.ndarray) -> np.ndarray:
            s = (theta / h)[:, None]
            v_th = ((1 + 2 * s) * (1 - s) ** 2 * v0 + s * (1 - s) ** 2 * hcol * d0
                    + s * s * (3 - 2 * s) * v1 + s * s * (s - 1) * hcol * d1)
            u = vin_seg - v_th
            return np.any((~met & (u >= vh)) | (met & (u <= vl)), axis=1)

        lo = np.zeros(len(idx))
        hi = h.copy()
        # freeze rows once converged so results do not depend on batch makeup
        for _ in range(_BISECT_MAX_ITER):
            live = hi - lo > 1e-3 * h
            if not live.any():
                return hi
            mid = 0.5 * (lo + hi)
            c = crossed(mid)
            hi = np.where(live & c, mid, hi)
            lo = np.where(live & ~c, mid, lo)
        if np.any(hi - lo > 1e-3 * h):
            raise StepRejected(
                f"bisection did not converge within {_BISECT_MAX_ITER} iterations")
        return hi

    def _walk_rows(self, idx: np.ndarray, t_start: np.ndarray, h_total: np.ndarray,
                   v_end: np.ndarray | None = None):
        """Walk selected rows from their start times across h_total, locating
        and committing every switch event on the way.  Row results do not
        depend on which other rows share the batch."""
        t_cur = t_start.astype(float).copy()
        h_rem = h_total.astype(float).copy()
        h_ref = h_total.astype(float).copy()
        v_cur = self.v[idx].copy()
        if v_end is None:
            v_end = self._trapz_rows(idx, v_cur, t_cur, h_rem)
        for _ in range(_EVENT_LOOP_MAX):
            on = t_cur[:, None] >= self.delays[idx]
            u_end = np.where(on, self.v_in[idx], 0.0) - v_end
            met = self.metallic[idx]
            hit = ((~met & (u_end >= self.v_high[idx]))
                   | (met & (u_end <= self.v_low[idx]))).any(axis=1)
            done = ~hit
            if done.any():
                self.v[idx[done]] = v_end[done]
                idx, t_cur, h_rem, h_ref = idx[hit], t_cur[hit], h_rem[hit], h_ref[hit]
                v_cur, v_end = v_cur[hit], v_end[hit]
            if len(idx) == 0:
                return
            theta = self._locate_crossings(idx, v_cur, v_end, t_cur, h_rem)
            v_star = self._trapz_rows(idx, v_cur, t_cur, theta)
            on_star = t_cur[:, None] >= self.delays[idx]
            u_star = np.where(on_star, self.v_in[idx], 0.0) - v_star
            met = self.metallic[idx]
            flip = ((~met & (u_star >= self.v_high[idx] - 1e-12))
                    | (met & (u_star <= self.v_low[idx] + 1e-12)))
            none = ~flip.any(axis=1)
            if none.any():
                # dense output marginally shy of threshold: flip the closest device
                gap = np.where(met, u_star - self.v_low[idx], self.v_high[idx] - u_star)
                closest = gap.argmin(axis=1)
                flip[none, closest[none]] = True
            for r, b in enumerate(idx):
                te = t_cur[r] + theta[r]
                for i in np.where(flip[r])[0]:
                    self.metallic[b, i] = ~self.metallic[b, i]
                    self.events[b].append(
                        (float(te), int(i),
                         DeviceState.METALLIC if self.metallic[b, i] else DeviceState.INSULATING))
            t_cur = t_cur + theta
            h_rem = h_rem - theta
            spent = h_rem <= 1e-12 * h_ref
            if spent.any():
                self.v[idx[spent]] = v_star[spent]
                idx, t_cur, h_rem, h_ref = (idx[~spent], t_cur[~spent],
                                            h_rem[~spent], h_ref[~spent])
                v_star = v_star[~spent]
            if len(idx) == 0:
                return
            v_cur = v_star
            v_end = self._trapz_rows(idx, v_cur, t_cur, h_rem)
        raise StepRejected("event loop exceeded iteration budget")

    # -- public stepping ---------------------------------------------------

    def _flip_rows_at(self, idx: np.ndarray, t: float):
        for _ in range(self.n + 1):
            on = t >= self.delays[idx]
            u = np.where(on, self.v_in[idx], 0.0) - self.v[idx]
            met = self.metallic[idx]
            hit = (~met & (u >= self.v_high[idx])) | (met & (u <= self.v_low[idx]))
            if not hit.any():
                return
            for r, i in zip(*np.where(hit)):
                b = idx[r]
                self.metallic[b, i] = ~self.metallic[b, i]
                self.events[b].append(
                    (t, int(i),
                     DeviceState.METALLIC if self.metallic[b, i] else DeviceState.INSULATING))

    def step(self, h: float):
        """Advance the whole batch by one step of length h.

        Rows whose supply turns on strictly inside the step walk it piecewise
        (exact turn-on handling); everything is arranged so that each row's
        trajectory is independent of which other rows share the batch."""
        t0 = self.t
        self._flip_instantaneous()
        gd = self._gdev()
        gdiag = self.g_load + gd
        b_seg = self._vin_at(t0) * gd
        if h == self.dt:
            if self.A_per_row is None:
                av = np.einsum("ij,bj->bi", self._Rmat, self.v)
            else:
                av = np.einsum("bij,bj->bi", self._Rmat, self.v)
            rhs = av - gdiag / 2.0 * self.v + b_seg
            v_cand = self._solve_regular(rhs, gdiag)
        else:
            all_rows = np.arange(self.B)
            v_cand = self._trapz_rows(all_rows, self.v.copy(),
                                      np.full(self.B, t0), np.full(self.B, h))
        brows = ((self.delays > t0) & (self.delays < t0 + h)).any(axis=1)
        u_cand = self._vin_at(t0) - v_cand
        erows = self._crossing(u_cand).any(axis=1) & ~brows
        clean = ~erows & ~brows
        self.v[clean] = v_cand[clean]
        if erows.any():
            idx = np.where(erows)[0]
            self._walk_rows(idx, np.full(len(idx), t0), np.full(len(idx), h),
                            v_end=v_cand[idx])
        for b in np.where(brows)[0]:
            t_cur = t0
            sel = np.array([b])
            while t_cur < t0 + h - 1e-15 * max(t0 + h, 1.0):
                pend = self.delays[b][(self.delays[b] > t_cur) & (self.delays[b] < t0 + h)]
                nxt = float(pend.min()) if pend.size else t0 + h
                self._walk_rows(sel, np.array([t_cur]), np.array([nxt - t_cur]))
                t_cur = nxt
                self._flip_rows_at(sel, t_cur)
        self.t = t0 + h


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass
class SimContext:
    """Integration state for one network (owned by a single caller)."""

    config: NetworkConfig
    engine: _Engine

    @property
    def M(self) -> np.ndarray:
        return self.engine.M

    @property
    def t(self) -> float:
        return self.engine.t

    @property
    def v(self) -> np.ndarray:
        return self.engine.v[0]

    @v.setter
    def v(self, value):
        self.engine.v[0] = np.asarray(value, dtype=float)

    @property
    def states(self) -> list[DeviceState]:
        return [DeviceState.METALLIC if m else DeviceState.INSULATING
                for m in self.engine.metallic[0]]

    @property
    def events(self) -> list[tuple[float, int, DeviceState]]:
        return self.engine.events[0]


def _engine_from_configs(cfgs: list[NetworkConfig]) -> _Engine:
    ref = cfgs[0]
    n = ref.coupling.n
    for c in cfgs[1:]:
        if c.coupling.n != n or not np.array_equal(c.coupling.c_c, ref.coupling.c_c) \
                or c.dt != ref.dt:
            raise ValueError("batched configs must share coupling capacitances and dt")
        if any(u.c_node != r.c_node for u, r in zip(c.units, ref.units)):
            raise ValueError("batched configs must share node capacitances")

    def arr(get):
        return np.array([[get(u) for u in c.units] for c in cfgs], dtype=float)

    return _Engine(
        couplings=[c.coupling for c in cfgs],
        c_node=np.array([u.c_node for u in ref.units], dtype=float),
        g_ins=arr(lambda u: 1.0 / u.device.r_ins),
        g_met=arr(lambda u: 1.0 / u.device.r_met),
        g_load=arr(lambda u: u.g_load),
        v_in=arr(lambda u: u.v_in),
        v_high=arr(lambda u: u.device.v_high),
        v_low=arr(lambda u: u.device.v_low),
        delays=arr(lambda u: u.delay),
        dt=ref.dt,
    )


def build_network(cfg: NetworkConfig) -> SimContext:
    """Assemble the circuit: capacitance matrix, conductance stamps, initial
    state (all nodes at 0 V, all devices insulating)."""
    return SimContext(config=cfg, engine=_engine_from_configs([cfg]))


def step(ctx: SimContext, dt: float) -> SimContext:
    """Advance one step (trapezoidal + in-step event location)."""
    ctx.engine.step(dt)
    return ctx


def _mark_non_oscillating(w: Waveform, t_end: float) -> None:
    n = w.v.shape[1]
    half = t_end / 2.0
    counts = np.zeros(n, dtype=int)
    for (te, i, _s) in w.events:
        if te >= half:
            counts[i] += 1
    w.non_oscillating = counts < 3


def _simulate_scalar(cfg: NetworkConfig) -> Waveform:
    """Plain-float fast path for a single uncoupled oscillator."""
    u0 = cfg.units[0]
    d = u0.device
    g_i, g_m, g_l = 1.0 / d.r_ins, 1.0 / d.r_met, u0.g_load
    c, vin_amp, delay = u0.c_node, u0.v_in, u0.delay
    vh, vl = d.v_high, d.v_low
    dt, t_end, dec = cfg.dt, cfg.t_end, cfg.sample_every

    nstep = int(round(t_end / dt))
    t_samp = [0.0]
    v_samp = [0.0]
    events: list[tuple[float, int, DeviceState]] = []
    v = 0.0
    met = False
    t = 0.0

    def vin_at(tt: float) -> float:
        return vin_amp if tt >= delay else 0.0

    def flip_now():
        nonlocal met
        for _ in range(2):
            u = vin_at(t) - v
            if (not met and u >= vh) or (met and u <= vl):
                met = not met
                events.append((t, 0, DeviceState.METALLIC if met else DeviceState.INSULATING))
            else:
                return

    def advance(v0: float, t0: float, h: float) -> float:
        g_d = g_m if met else g_i
        a = g_l + g_d
        b = vin_at(t0) * g_d    # substeps never straddle the turn-on
        return ((c / h - a / 2.0) * v0 + b) / (c / h + a / 2.0)

    for k in range(nstep):
        t_next = (k + 1) * dt
        while t < t_next - 1e-15 * max(t_next, 1.0):
            bound = t_next
            if t < delay < bound:
                bound = delay
            h = bound - t
            flip_now()
            guard = 0
            while h > 1e-12 * dt:
                guard += 1
                if guard > _EVENT_LOOP_MAX:
                    raise StepRejected("scalar event loop exceeded budget")
                v1 = advance(v, t, h)
                u1 = vin_at(t) - v1
                if not ((not met and u1 >= vh) or (met and u1 <= vl)):
                    v = v1
                    t += h
                    break
                g_d = g_m if met else g_i
                d0 = (-(g_l + g_d) * v + vin_at(t) * g_d) / c
                d1 = (-(g_l + g_d) * v1 + vin_at(t) * g_d) / c
                vin_seg = vin_at(t)

                def crossed(theta: float) -> bool:
                    s = theta / h
                    vth = ((1 + 2 * s) * (1 - s) ** 2 * v + s * (1 - s) ** 2 * h * d0
                           + s * s * (3 - 2 * s) * v1 + s * s * (s - 1) * h * d1)
                    uu = vin_seg - vth
                    return (not met and uu >= vh) or (met and uu <= vl)

                lo, hi = 0.0, h
                for _ in range(_BISECT_MAX_ITER):
                    if hi - lo <= 1e-3 * h:
                        break
                    mid = 0.5 * (lo + hi)
                    if crossed(mid):
                        hi = mid
                    else:
                        lo = mid
                v = advance(v, t, hi)
                t += hi
                h = bound - t
                met = not met
                events.append((t, 0, DeviceState.METALLIC if met else DeviceState.INSULATING))
        if (k + 1) % dec == 0:
            t_samp.append(t_next)
            v_samp.append(v)

    w = Waveform(np.array(t_samp), np.array(v_samp)[:, None], events)
    _mark_non_oscillating(w, t_end)
    return w


def simulate(cfg: NetworkConfig) -> Waveform:
    """Integrate from t = 0 to t_end, recording decimated samples and every
    switch event.  Deterministic: identical configs give identical waveforms."""
    if cfg.coupling.n == 1:
        return _simulate_scalar(cfg)
    return simulate_batch([cfg])[0]


def simulate_batch(cfgs: list[NetworkConfig]) -> list[Waveform]:
    """Integrate several networks in lockstep.  The configs must share the
    coupling matrices, node capacitances, dt, and t_end; unit parameters and
    delays may differ per config.  Each row's result is identical to
    simulating its config alone."""
    ref = cfgs[0]
    if any(c.t_end != ref.t_end or c.sample_every != ref.sample_every for c in cfgs):
        raise ValueError("batched configs must share t_end and sample_every")
    if ref.coupling.n == 1:
        return [_simulate_scalar(c) for c in cfgs]
    eng = _engine_from_configs(cfgs)
    nstep = int(round(ref.t_end / ref.dt))
    n_samp = nstep // ref.sample_every + 1
    t_samp = np.empty(n_samp)
    v_samp = np.empty((len(cfgs), n_samp, ref.coupling.n))
    t_samp[0] = 0.0
    v_samp[:, 0] = eng.v
    row = 1
    for k in range(nstep):
        eng.step(ref.dt)
        if (k + 1) % ref.sample_every == 0:
            t_samp[row] = (k + 1) * ref.dt
            v_samp[:, row] = eng.v
            row += 1
    out = []
    for b in range(len(cfgs)):
        w = Waveform(t_samp.copy(), v_samp[b, :row].copy(), list(eng.events[b]))
        w.t = w.t[:row]
        _mark_non_oscillating(w, ref.t_end)
        out.append(w)
    return out


# ---------------------------------------------------------------------------
# waveform measurements and export
# ---------------------------------------------------------------------------

def falling_edge_crossings(t: np.ndarray, x: np.ndarray, v_th: float) -> np.ndarray:
    """Times where the trace crosses v_th downward, by linear interpolation."""
    above = x[:-1] >= v_th
    below = x[1:] < v_th
    k = np.where(above & below)[0]
    frac = (x[k] - v_th) / (x[k] - x[k + 1])
    return t[k] + frac * (t[k + 1] - t[k])


def estimate_period(w: Waveform, osc: int = 0, v_th: float = 1.0) -> float:
    """Mean falling-edge interval over the final half of the trace."""
    cross = falling_edge_crossings(w.t, w.v[:, osc], v_th)
    if len(cross) < 3:
        raise InsufficientCrossings(
            f"oscillator {osc}: {len(cross)} crossings of {v_th} V, need >= 3")
    t_half = w.t[-1] / 2.0
    tail = cross[cross >= t_half]
    if len(tail) < 3:
        tail = cross[-3:]
    return float(np.mean(np.diff(tail)))


def write_waveform_csv(w: Waveform, path) -> None:
    n = w.v.shape[1]
    with open(path, "w") as fh:
        fh.write("t_s," + ",".join(f"v{i + 1}_v" for i in range(n)) + "\n")
        for k in range(len(w.t)):
            fh.write(f"{w.t[k]!r}," + ",".join(repr(float(x)) for x in w.v[k]) + "\n")


def write_event_csv(w: Waveform, path) -> None:
    with open(path, "w") as fh:
        fh.write("t_s,osc,state\n")
        for (te, i, s) in w.events:
            fh.write(f"{te!r},{i},{s.name}\n")
