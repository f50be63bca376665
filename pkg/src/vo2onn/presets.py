"""Calibrated network configurations.

The experiment-scale presets reproduce the four-oscillator pattern-storage
setup: coupling resistances 82 / 130 kOhm from the Hebbian map of the four
edge patterns, 5.6 nF coupling capacitors, and oscillators tuned so that both
the in-phase and the anti-phase pair relation are stable (the hybrid R-C
balance).  Device-to-device variability enters through seeded draws; each
drawn oscillator is then bench-calibrated the way the experiments were, by
aligning its supply to the swing midpoint and trimming its load conductance
until the free-running period matches nominal.

The 3x3 filter preset scales the per-branch coupling impedances with the
branch count (8 branches per node instead of 3) so the total coupling load
per node, and with it the locking behavior, carries over from the calibrated
4-oscillator setup.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .device import DeviceParams, VariabilitySpec, sample_variability, per_oscillator_seed
from .learning import ResistanceMap, hebbian, weights_to_resistance
from .network import (OscillatorUnit, CouplingSpec, NetworkConfig,
                      single_oscillator_period, trim_g_load)
from .phase import delays_from_pixels

__all__ = [
    "EDGE_PATTERNS_2X2", "EDGE_PATTERNS_3X3",
    "EXP_C_NODE", "EXP_G_LOAD", "EXP_V_IN", "EXP_CC", "TECH_C_NODE",
    "tech_unit", "experiment_unit", "variability_from_level",
    "drawn_devices", "calibrated_units", "edge_coupling",
    "pattern_network", "filter_template", "pattern_delays",
    "STEPS_PER_PERIOD", "SETTLE_PERIODS", "HORIZON_PERIODS", "READOUT_V_TH",
]

# stored edge patterns, row-major pixels in {-1, +1}
EDGE_PATTERNS_2X2 = {
    "vertical": np.array([1, -1, 1, -1]),
    "horizontal": np.array([1, 1, -1, -1]),
    "diag_main": np.array([1, -1, -1, 1]),
    "diag_anti": np.array([-1, 1, 1, -1]),
}
EDGE_PATTERNS_3X3 = {
    "vertical": np.array([-1, 1, -1, -1, 1, -1, -1, 1, -1]),
    "horizontal": np.array([-1, -1, -1, 1, 1, 1, -1, -1, -1]),
    "diag_main": np.array([1, -1, -1, -1, 1, -1, -1, -1, 1]),
    "diag_anti": np.array([-1, -1, 1, -1, 1, -1, 1, -1, -1]),
}

# experiment-scale oscillator (slowed by the external node capacitance, as in
# the measured waveforms); values calibrated for bistable pair locking
EXP_C_NODE = 800.0e-9
EXP_G_LOAD = 1.5e-5
EXP_V_IN = 2.0
EXP_CC = 5.6e-9

# technology-scale node capacitance: same device and load, ~3 MHz oscillation
TECH_C_NODE = 8.1e-12

STEPS_PER_PERIOD = 1000
SETTLE_PERIODS = 5
HORIZON_PERIODS = 30     # coupling loading can stretch the period ~2x
READOUT_V_TH = 1.0


def tech_unit(delay: float = 0.0) -> OscillatorUnit:
    return OscillatorUnit(device=DeviceParams(), c_node=TECH_C_NODE,
                          g_load=EXP_G_LOAD, v_in=EXP_V_IN, delay=delay)


def experiment_unit(delay: float = 0.0) -> OscillatorUnit:
    return OscillatorUnit(device=DeviceParams(), c_node=EXP_C_NODE,
                          g_load=EXP_G_LOAD, v_in=EXP_V_IN, delay=delay)


def variability_from_level(level: float, seed: int) -> VariabilitySpec:
    """A single variability level x maps to resistance spread x and threshold
    spread x/2: the resistance figure is the one the device-variability level
    refers to, and per-device bias calibration absorbs part of the threshold
    spread."""
    return VariabilitySpec(sigma_threshold=level / 2.0,
                           sigma_resistance=level, seed=seed)


def drawn_devices(n: int, level: float, seed: int) -> list[DeviceParams]:
    base = DeviceParams()
    if level == 0.0:
        return [base] * n
    out = []
    for i in range(n):
        child = per_oscillator_seed(seed, i)
        spec = variability_from_level(level, child)
        out.append(sample_variability(base, spec))
    return out


def calibrated_units(devices: list[DeviceParams], c_node: float = EXP_C_NODE,
                     g_load: float = EXP_G_LOAD, v_in: float = EXP_V_IN) -> list[OscillatorUnit]:
    """Bench calibration of drawn devices, mirroring the per-oscillator V_in
    and gate-bias adjustment of the experiments: the supply is shifted so the
    voltage swing midpoint matches nominal, then the load conductance is
    trimmed until the free-running period matches the nominal unit."""
    base = DeviceParams()
    nominal = OscillatorUnit(device=base, c_node=c_node, g_load=g_load, v_in=v_in)
    t_nom = single_oscillator_period(nominal)
    mid0 = (base.v_high + base.v_low) / 2.0
    units = []
    for dev in devices:
        if dev == base:
            units.append(nominal)
            continue
        v_in_i = v_in + (dev.v_high + dev.v_low) / 2.0 - mid0
        u = OscillatorUnit(device=dev, c_node=c_node, g_load=g_load, v_in=v_in_i)
        try:
            g_trim = trim_g_load(u, t_nom)
        except ValueError:
            g_trim = g_load
        units.append(replace(u, g_load=g_trim))
    return units


def edge_coupling(k: int) -> CouplingSpec:
    """Hebbian-programmed coupling of the four stored edge patterns.

    The 2x2 map uses the measured branch values (82 / 130 kOhm, 5.6 nF on
    every pair).  Four patterns in nine oscillators sit far above the 0.15 n
    capacity, so to keep the spurious all-in-phase state from swallowing the
    encoded ones the 3x3 map keeps real branches only where the weights are
    strong: below-threshold pairs get a parasitic-level 1 GOhm path and no
    capacitor, and the strong branches scale to 220 kOhm / 2.1 nF so the
    per-node coupling load stays near the calibrated 2x2 level.
    """
    if k == 2:
        pats = list(EDGE_PATTERNS_2X2.values())
        rmap = ResistanceMap()
        c = hebbian(pats)
        r_c = weights_to_resistance(c, rmap)
        c_c = np.full((4, 4), EXP_CC)
        np.fill_diagonal(c_c, 0.0)
        return CouplingSpec(4, r_c, c_c)
    if k == 3:
        pats = list(EDGE_PATTERNS_3X3.values())
        rmap = ResistanceMap(r_strong=220.0e3, r_weak=1.0e9)
        c = hebbian(pats)
        r_c = weights_to_resistance(c, rmap)
        c_c = np.where(r_c <= rmap.r_strong * 1.001, EXP_CC * 3.0 / 8.0, 0.0)
        np.fill_diagonal(c_c, 0.0)
        return CouplingSpec(9, r_c, c_c)
    raise ValueError("edge filters are defined for k in (2, 3)")


def pattern_delays(pixels, c_node: float = EXP_C_NODE) -> np.ndarray:
    t_nom = single_oscillator_period(
        OscillatorUnit(device=DeviceParams(), c_node=c_node,
                       g_load=EXP_G_LOAD, v_in=EXP_V_IN))
    return delays_from_pixels(pixels, t_nom)


def pattern_network(pixels, level: float = 0.0, seed: int = 0,
                    coupling: CouplingSpec | None = None,
                    horizon_periods: float = HORIZON_PERIODS,
                    steps_per_period: int = STEPS_PER_PERIOD,
                    sample_every: int = 2) -> NetworkConfig:
    """Delay-encode a pixel pattern into the calibrated coupled network."""
    pixels = np.asarray(pixels, dtype=float)
    n = len(pixels)
    if coupling is None:
        k = int(round(np.sqrt(n)))
        coupling = edge_coupling(k)
    if coupling.n != n:
        raise ValueError("pattern length does not match coupling size")
    units = calibrated_units(drawn_devices(n, level, seed))
    t_nom = single_oscillator_period(
        OscillatorUnit(device=DeviceParams(), c_node=EXP_C_NODE,
                       g_load=EXP_G_LOAD, v_in=EXP_V_IN))
    delays = delays_from_pixels(pixels, t_nom)
    units = [replace(u, delay=float(d)) for u, d in zip(units, delays)]
    return NetworkConfig(tuple(units), coupling, dt=t_nom / steps_per_period,
                         t_end=horizon_periods * t_nom, sample_every=sample_every)


CONV_HORIZON_PERIODS = 10.0      # sparse 3x3 coupling leaves the period at
CONV_STEPS_PER_PERIOD = 300      # nominal, so a short fast profile suffices


def filter_template(k: int = 3, level: float = 0.0, seed: int = 0,
                    horizon_periods: float = CONV_HORIZON_PERIODS,
                    steps_per_period: int = CONV_STEPS_PER_PERIOD,
                    sample_every: int = 2) -> NetworkConfig:
    """Programmed ONN filter template; window pixels set the delays later."""
    return pattern_network(np.ones(k * k), level=level, seed=seed,
                           coupling=edge_coupling(k),
                           horizon_periods=horizon_periods,
                           steps_per_period=steps_per_period,
                           sample_every=sample_every)
