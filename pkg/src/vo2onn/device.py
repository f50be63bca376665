"""Behavioral model of a single VO2 two-terminal device.

The device is a hysteretic two-state resistor: Ohmic in each state, with an
abrupt insulator/metal transition at a high voltage threshold and the reverse
transition at a low one.  The band between the thresholds keeps whatever state
the device is in, which is what makes relaxation oscillation (and memory of
the switching history) possible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

__all__ = [
    "DeviceState", "DeviceParams", "VariabilitySpec", "IvPoint",
    "InvariantViolated", "RampTooShallow",
    "switch_state", "device_current", "iv_sweep", "sample_variability",
    "write_iv_csv", "DEFAULT_DEVICE",
]


class InvariantViolated(ValueError):
    """A parameter draw or construction broke a device invariant."""


class RampTooShallow(ValueError):
    """Current ramp never reaches the insulator-to-metal switching point."""


class DeviceState(Enum):
    INSULATING = 0
    METALLIC = 1


@dataclass(frozen=True)
class DeviceParams:
    """Static device parameters.

    r_ins, r_met: Ohmic resistances of the insulating / metallic state (ohm).
    v_high: device voltage that triggers the insulator-to-metal switch (V).
    v_low: device voltage that triggers the metal-to-insulator switch (V).
    """

    r_ins: float = 1.0e6
    r_met: float = 1.0e4
    v_high: float = 1.2
    v_low: float = 0.7

    def __post_init__(self):
        if not (self.r_ins > self.r_met > 0.0):
            raise InvariantViolated(
                f"need r_ins > r_met > 0, got {self.r_ins}, {self.r_met}")
        if not (self.v_high > self.v_low > 0.0):
            raise InvariantViolated(
                f"need v_high > v_low > 0, got {self.v_high}, {self.v_low}")

    def resistance(self, state: DeviceState) -> float:
        return self.r_met if state is DeviceState.METALLIC else self.r_ins


DEFAULT_DEVICE = DeviceParams()


@dataclass(frozen=True)
class VariabilitySpec:
    """Relative device-to-device spread, drawn from a seeded stream.

    sigma_threshold scales both switching thresholds by a common factor so the
    hysteresis window keeps its shape; sigma_resistance does the same for the
    two resistances.
    """

    sigma_threshold: float = 0.0
    sigma_resistance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_threshold", "sigma_resistance"):
            s = getattr(self, name)
            if not (0.0 <= s <= 0.5):
                raise InvariantViolated(f"{name} must be in [0, 0.5], got {s}")


def switch_state(u: float, state: DeviceState, params: DeviceParams) -> DeviceState:
    """Hysteresis rule.  Boundary inclusion (>=, <=) makes the rule total
    and deterministic."""
    if state is DeviceState.INSULATING and u >= params.v_high:
        return DeviceState.METALLIC
    if state is DeviceState.METALLIC and u <= params.v_low:
        return DeviceState.INSULATING
    return state


def device_current(u: float, state: DeviceState, params: DeviceParams) -> float:
    """Ohmic current of the current state."""
    return u / params.resistance(state)


@dataclass(frozen=True)
class IvPoint:
    i: float
    v: float
    state: DeviceState


def iv_sweep(params: DeviceParams, i_peak: float, n_points: int = 400,
             require_switching: bool = False) -> list[IvPoint]:
    """Quasi-static current-driven sweep 0 -> i_peak -> 0.

    At each current the state follows the hysteresis rule evaluated at the
    voltage the present state would produce, so the up branch rides r_ins
    until v_high is reached, drops abruptly onto the metallic branch (the
    negative-differential-resistance signature), and the down branch holds
    r_met until the v_low condition releases it.

    require_switching=True raises RampTooShallow when the peak current never
    reaches the switching point; by default a too-shallow ramp just returns
    the single Ohmic branch it traced.
    """
    if i_peak <= 0.0 or n_points < 4:
        raise ValueError("need i_peak > 0 and n_points >= 4")
    up = np.linspace(0.0, i_peak, n_points // 2)
    currents = np.concatenate([up, up[::-1][1:]])
    state = DeviceState.INSULATING
    pts = []
    switched = False
    for i in currents:
        # a state change alters the voltage at the same current: re-apply the
        # rule until the (i, state) pair is self-consistent
        for _ in range(2):
            v = i * params.resistance(state)
            new = switch_state(v, state, params)
            if new is state:
                break
            state = new
            switched = switched or state is DeviceState.METALLIC
        pts.append(IvPoint(float(i), float(i * params.resistance(state)), state))
    if require_switching and not switched:
        raise RampTooShallow(
            f"peak {i_peak} A below switching current {params.v_high / params.r_ins} A")
    return pts


def write_iv_csv(points: list[IvPoint], path) -> None:
    with open(path, "w") as fh:
        fh.write("i_a,v_v,state\n")
        for p in points:
            fh.write(f"{p.i!r},{p.v!r},{p.state.name}\n")


_VARIABILITY_RETRIES = 100


def sample_variability(params: DeviceParams, spec: VariabilitySpec) -> DeviceParams:
    """Draw a perturbed device from a deterministic stream keyed by the seed.

    Thresholds share one multiplicative factor, resistances another.  If a
    draw breaks an ordering invariant (possible only for extreme tails where
    1 + eps <= 0) it is retried a bounded number of times.
    """
    if spec.sigma_threshold == 0.0 and spec.sigma_resistance == 0.0:
        return params
    rng = np.random.default_rng(spec.seed)
    for _ in range(_VARIABILITY_RETRIES):
        e_th = rng.normal(0.0, spec.sigma_threshold) if spec.sigma_threshold else 0.0
        e_r = rng.normal(0.0, spec.sigma_resistance) if spec.sigma_resistance else 0.0
        if 1.0 + e_th <= 0.0 or 1.0 + e_r <= 0.0:
            continue
        return replace(
            params,
            v_high=params.v_high * (1.0 + e_th),
            v_low=params.v_low * (1.0 + e_th),
            r_ins=params.r_ins * (1.0 + e_r),
            r_met=params.r_met * (1.0 + e_r),
        )
    raise InvariantViolated("variability draw kept violating invariants")


def per_oscillator_seed(base_seed: int, index: int) -> int:
    """Derive a per-oscillator child seed from a network-level seed."""
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1)[0])
