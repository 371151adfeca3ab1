"""Capacitor-backed supply model.

The simulated device rides through unpowered track gaps on a single
capacitor.  Discharge follows the linear constant-current law
V = V0 - I*t/C, where I depends on the device power state (clock tier x
radio mode).  Per-state currents are calibrated from bench-measured
maximum voltage drops over a known gap duration via I = C*dV/T.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Mapping, Optional, Sequence


class ClockTier(Enum):
    C80 = 80
    C160 = 160
    C240 = 240


class RadioMode(Enum):
    OFF = "off"
    IDLE_CONNECTED = "idle"
    TRANSMITTING = "tx"


@dataclass(frozen=True)
class PowerState:
    """Device operating point: one clock tier plus one radio mode."""

    clock: ClockTier
    radio: RadioMode

    @property
    def infeasible(self) -> bool:
        # 240 MHz with the radio stack up consistently brownouts on gap
        # crossings; representable, but flagged so callers can refuse it.
        return self.clock is ClockTier.C240 and self.radio is not RadioMode.OFF

    def __str__(self) -> str:
        return f"c{self.clock.value}_{self.radio.value}"


ALL_POWER_STATES: tuple[PowerState, ...] = tuple(
    PowerState(c, r) for c in ClockTier for r in RadioMode
)

#: Bench-measured maximum capacitor voltage drops (volts) per power state
#: over one 20 ms gap.  The two 240 MHz radio-on cells are absent: those
#: configurations consistently browned out, so no maximum was observable.
MEASURED_DROPS: Mapping[PowerState, float] = {
    PowerState(ClockTier.C80, RadioMode.OFF): 1.62,
    PowerState(ClockTier.C80, RadioMode.IDLE_CONNECTED): 1.91,
    PowerState(ClockTier.C80, RadioMode.TRANSMITTING): 2.64,
    PowerState(ClockTier.C160, RadioMode.OFF): 2.11,
    PowerState(ClockTier.C160, RadioMode.IDLE_CONNECTED): 2.20,
    PowerState(ClockTier.C160, RadioMode.TRANSMITTING): 2.82,
    PowerState(ClockTier.C240, RadioMode.OFF): 2.49,
}

#: Current (amperes) assigned to states with no measurable drop.  The
#: default produces a 5.0 V modeled drop over a 20 ms gap, past the 4.0 V
#: brownout threshold, reproducing the consistent failures.
DEFAULT_BURST_CURRENT = 0.250


class ConfigError(ValueError):
    """Invalid energy-model configuration."""


class CalibrationError(ValueError):
    """Invalid calibration input (e.g. a negative voltage drop)."""


@dataclass
class EnergyModelParams:
    capacitance: float = 1.0e-3          # farads
    nominal_voltage: float = 9.0         # volts
    brownout_drop: float = 4.0           # volts below nominal that reboots
    gap_duration: float = 0.020          # seconds of ride-through per gap
    current_table: dict[PowerState, float] = field(default_factory=dict)

    def validate(self) -> None:
        if self.capacitance <= 0:
            raise ConfigError("capacitance must be > 0")
        if self.gap_duration <= 0:
            raise ConfigError("gap_duration must be > 0")
        if not (0 < self.brownout_drop < self.nominal_voltage):
            raise ConfigError(
                "brownout_drop must lie in (0, nominal_voltage)"
            )
        for state, current in self.current_table.items():
            if current < 0:
                raise ConfigError(f"negative current for state {state}")

    def current(self, state: PowerState) -> float:
        try:
            return self.current_table[state]
        except KeyError:
            raise ConfigError(f"no current configured for state {state}") from None

    @property
    def brownout_voltage(self) -> float:
        return self.nominal_voltage - self.brownout_drop

    @classmethod
    def calibrated(
        cls,
        drops: Mapping[PowerState, float] = MEASURED_DROPS,
        burst_current: float = DEFAULT_BURST_CURRENT,
        **kwargs: float,
    ) -> "EnergyModelParams":
        """Params with currents back-computed from measured drops."""
        params = cls(**kwargs)
        params.current_table = calibrate_currents(
            drops, params, burst_current=burst_current
        )
        params.validate()
        return params


@dataclass
class VoltageTrace:
    """Uniformly sampled supply and capacitor voltages."""

    samples: list[tuple[float, float, float]]  # (time_s, supply_v, cap_v)
    sample_period: float

    def __post_init__(self) -> None:
        for _, _, cap_v in self.samples:
            if cap_v < 0:
                raise ValueError("capacitor voltage must be >= 0")

    def __len__(self) -> int:
        return len(self.samples)

    def write_csv(self, fp: IO[str]) -> None:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["time_s", "supply_v", "cap_v"])
        for t, supply_v, cap_v in self.samples:
            writer.writerow([f"{t:.6f}", f"{supply_v:.6f}", f"{cap_v:.6f}"])


def discharge_current(
    v0: float, current: float, dt: float, capacitance: float
) -> float:
    """Linear discharge by a raw current; clamped at zero volts."""
    return max(0.0, v0 - current * dt / capacitance)


def discharge(
    v0: float, state: PowerState, dt: float, params: EnergyModelParams
) -> float:
    """Capacitor voltage after running `dt` seconds unpowered in `state`."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return discharge_current(v0, params.current(state), dt, params.capacitance)


def calibrate_currents(
    drops: Mapping[PowerState, float],
    params: EnergyModelParams,
    burst_current: float = DEFAULT_BURST_CURRENT,
) -> dict[PowerState, float]:
    """Per-state currents from measured drops: I = C*dV/T.

    States absent from `drops` get `burst_current`; with the defaults that
    models a drop beyond the brownout threshold, matching observed
    behavior for the unmeasurable configurations.
    """
    table: dict[PowerState, float] = {}
    for state, drop in drops.items():
        if drop < 0:
            raise CalibrationError(f"negative drop {drop} for state {state}")
        table[state] = params.capacitance * drop / params.gap_duration
    for state in ALL_POWER_STATES:
        table.setdefault(state, burst_current)
    return table


def detect_brownout(
    trace: VoltageTrace, params: EnergyModelParams
) -> Optional[float]:
    """Time of the first sample at or past the brownout drop, if any."""
    if not trace.samples:
        raise ValueError("empty trace")
    for t, _, cap_v in trace.samples:
        if params.nominal_voltage - cap_v >= params.brownout_drop:
            return t
    return None


def max_drop(trace: VoltageTrace, nominal: float) -> float:
    """Largest observed drop below `nominal` over the trace."""
    if not trace.samples:
        raise ValueError("empty trace")
    return max(0.0, nominal - min(cap_v for _, _, cap_v in trace.samples))
