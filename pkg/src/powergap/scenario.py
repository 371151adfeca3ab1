"""Scenario description files.

Plain-text sectioned key=value format, chosen over a richer config
language so acceptance scenarios diff cleanly and can be written by
hand.  Parsing is total: any rejection carries the offending line
number, unknown sections and keys are refused, and cross-field rules
(threshold ordering, dock placement, mandatory seeds for lossy links)
are checked before a simulation starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .energy_model import (
    MEASURED_DROPS,
    ClockTier,
    EnergyModelParams,
    PowerState,
    RadioMode,
    calibrate_currents,
)
from .strategies import EnergyBudget, StrategyKind
from .track_world import (
    HostRequestSchedule,
    LayoutError,
    ScenarioConfig,
    Segment,
    SegmentKind,
    TrackLayout,
)
from .transports import WirelessLinkParams


class ScenarioError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


_CLOCKS = {"c80": ClockTier.C80, "c160": ClockTier.C160, "c240": ClockTier.C240,
           "80": ClockTier.C80, "160": ClockTier.C160, "240": ClockTier.C240}
_RADIOS = {"off": RadioMode.OFF, "idle": RadioMode.IDLE_CONNECTED,
           "tx": RadioMode.TRANSMITTING}
_STRATEGIES = {k.value: k for k in StrategyKind}

_STATE_KEYS = {
    f"{c}_{r}": PowerState(_CLOCKS[c], _RADIOS[r])
    for c in ("c80", "c160", "c240")
    for r in ("off", "idle", "tx")
}

_KNOWN_KEYS: dict[str, set[str]] = {
    "energy": {
        "capacitance", "nominal_voltage", "brownout_drop", "gap_duration",
        "burst_current", "ripple_amplitude", "recharge_rate",
        *{f"drop_{s}" for s in _STATE_KEYS},
        *{f"current_{s}" for s in _STATE_KEYS},
    },
    "track": {"segments", "gap_length", "dock_position"},
    "car": {"speed", "clock", "radio"},
    "strategy": {"kind", "controller", "drain_interval", "reboot_dead_time"},
    "budget": {"max_allowed_drop", "lookahead"},
    "wireless": {
        "connect_latency", "connect_extra_current", "per_frame_airtime",
        "reply_airtime", "loss_rate",
    },
    "workload": {"rate", "payload_size"},
    "schedule": {"requests"},
    "run": {
        "duration", "seed", "dt", "ram_capacity", "flash_capacity",
        "wired_frame_time",
    },
}

DEFAULT_SEGMENTS = "straight:0.30 lanechange:0.48:0.09:0.36 straight:0.30"


@dataclass
class ScenarioSpec:
    """Parsed, validated scenario; `build` produces the runnable config."""

    name: str = "scenario"
    values: dict[tuple[str, str], str] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def _line(self, section: str, key: str) -> int:
        return self.lines.get((section, key), 0)

    def _raw(self, section: str, key: str, default: Optional[str]) -> Optional[str]:
        return self.values.get((section, key), default)

    def _float(self, section: str, key: str, default: float,
               minimum: Optional[float] = None, maximum: Optional[float] = None,
               exclusive_min: bool = False) -> float:
        raw = self._raw(section, key, None)
        if raw is None:
            return default
        line = self._line(section, key)
        try:
            value = float(raw)
        except ValueError:
            raise ScenarioError(line, f"{key}: expected a number, got {raw!r}") from None
        if minimum is not None and (value <= minimum if exclusive_min else value < minimum):
            op = ">" if exclusive_min else ">="
            raise ScenarioError(line, f"{key}: must be {op} {minimum}")
        if maximum is not None and value > maximum:
            raise ScenarioError(line, f"{key}: must be <= {maximum}")
        return value

    def _int(self, section: str, key: str, default: Optional[int],
             minimum: Optional[int] = None) -> Optional[int]:
        raw = self._raw(section, key, None)
        if raw is None:
            return default
        line = self._line(section, key)
        try:
            value = int(raw)
        except ValueError:
            raise ScenarioError(line, f"{key}: expected an integer, got {raw!r}") from None
        if minimum is not None and value < minimum:
            raise ScenarioError(line, f"{key}: must be >= {minimum}")
        return value

    def _choice(self, section: str, key: str, table: dict, default):
        raw = self._raw(section, key, None)
        if raw is None:
            return default
        line = self._line(section, key)
        try:
            return table[raw.lower()]
        except KeyError:
            raise ScenarioError(
                line, f"{key}: expected one of {sorted(table)}, got {raw!r}"
            ) from None

    def _flag(self, section: str, key: str, default: bool) -> bool:
        return self._choice(
            section, key, {"on": True, "off": False, "true": True, "false": False},
            default,
        )

    # -- section builders --------------------------------------------------

    def _build_params(self) -> EnergyModelParams:
        nominal = self._float("energy", "nominal_voltage", 9.0, 0.0, exclusive_min=True)
        brownout = self._float("energy", "brownout_drop", 4.0, 0.0, exclusive_min=True)
        if brownout >= nominal:
            line = self._line("energy", "brownout_drop") or self._line(
                "energy", "nominal_voltage"
            )
            raise ScenarioError(
                line, f"brownout_drop ({brownout}) must be below nominal_voltage ({nominal})"
            )
        params = EnergyModelParams(
            capacitance=self._float("energy", "capacitance", 1.0e-3, 0.0, exclusive_min=True),
            nominal_voltage=nominal,
            brownout_drop=brownout,
            gap_duration=self._float("energy", "gap_duration", 0.020, 0.0, exclusive_min=True),
        )
        drops = dict(MEASURED_DROPS)
        for state_key, state in _STATE_KEYS.items():
            drop = self._float("energy", f"drop_{state_key}", -1.0)
            if drop >= 0:
                drops[state] = drop
            elif ("energy", f"drop_{state_key}") in self.values:
                raise ScenarioError(
                    self._line("energy", f"drop_{state_key}"),
                    f"drop_{state_key}: must be >= 0",
                )
        burst = self._float("energy", "burst_current", 0.250, 0.0)
        params.current_table = calibrate_currents(drops, params, burst_current=burst)
        for state_key, state in _STATE_KEYS.items():
            raw = self._raw("energy", f"current_{state_key}", None)
            if raw is not None:
                params.current_table[state] = self._float(
                    "energy", f"current_{state_key}", 0.0, 0.0
                )
        return params

    def _build_layout(self) -> TrackLayout:
        text = self._raw("track", "segments", DEFAULT_SEGMENTS)
        line = self._line("track", "segments")
        gap_length = self._float("track", "gap_length", 0.06, 0.0, exclusive_min=True)
        segments = []
        for token in text.split():
            parts = token.split(":")
            kind_name = parts[0].lower()
            kinds = {k.value: k for k in SegmentKind}
            if kind_name not in kinds:
                raise ScenarioError(
                    line, f"segments: unknown segment kind {kind_name!r}"
                )
            try:
                numbers = [float(p) for p in parts[1:]]
            except ValueError:
                raise ScenarioError(
                    line, f"segments: bad number in {token!r}"
                ) from None
            kind = kinds[kind_name]
            if kind is SegmentKind.LANE_CHANGE:
                if len(numbers) != 3:
                    raise ScenarioError(
                        line,
                        "segments: lanechange needs length and two gap offsets",
                    )
                segments.append(
                    Segment(kind, numbers[0], (numbers[1], numbers[2]), gap_length)
                )
            else:
                if len(numbers) != 1:
                    raise ScenarioError(
                        line, f"segments: {kind_name} takes exactly one length"
                    )
                segments.append(Segment(kind, numbers[0], (), gap_length))
        dock = self._raw("track", "dock_position", None)
        dock_position = (
            self._float("track", "dock_position", 0.0) if dock is not None else None
        )
        layout = TrackLayout(segments, dock_position)
        try:
            layout.validate()
        except LayoutError as exc:
            raise ScenarioError(line, f"segments: {exc}") from None
        return layout

    def _build_schedule(self) -> HostRequestSchedule:
        raw = self._raw("schedule", "requests", "none")
        line = self._line("schedule", "requests")
        if raw == "none":
            return HostRequestSchedule()
        if raw == "gap_aligned":
            return HostRequestSchedule(gap_aligned=True)
        try:
            times = tuple(float(p) for p in raw.split(","))
        except ValueError:
            raise ScenarioError(
                line, f"requests: expected 'none', 'gap_aligned' or times, got {raw!r}"
            ) from None
        try:
            return HostRequestSchedule(times=times)
        except ValueError as exc:
            raise ScenarioError(line, f"requests: {exc}") from None

    def build(self) -> ScenarioConfig:
        params = self._build_params()
        layout = self._build_layout()
        clock = self._choice("car", "clock", _CLOCKS, ClockTier.C80)
        radio = self._choice("car", "radio", _RADIOS, RadioMode.OFF)
        strategy = self._choice(
            "strategy", "kind", {**_STRATEGIES, "none": None}, None
        )
        if strategy is StrategyKind.SAVE_AND_PRINT_LATER and layout.dock_position is None:
            raise ScenarioError(
                self._line("strategy", "kind"),
                "save_and_print_later needs a dock_position in [track]",
            )
        budget = EnergyBudget(
            max_allowed_drop=self._float("budget", "max_allowed_drop", 3.5, 0.0,
                                         exclusive_min=True),
            lookahead=self._float("budget", "lookahead", 0.050, 0.0),
        )
        if budget.max_allowed_drop >= params.brownout_drop:
            raise ScenarioError(
                self._line("budget", "max_allowed_drop"),
                f"max_allowed_drop ({budget.max_allowed_drop}) must stay below "
                f"brownout_drop ({params.brownout_drop})",
            )
        wireless = WirelessLinkParams(
            connect_latency=self._float("wireless", "connect_latency", 1.5, 0.0),
            connect_extra_current=self._float(
                "wireless", "connect_extra_current", 0.050, 0.0
            ),
            per_frame_airtime=self._float("wireless", "per_frame_airtime", 0.002, 0.0),
            reply_airtime=self._float("wireless", "reply_airtime", 0.025, 0.0),
            loss_rate=self._float("wireless", "loss_rate", 0.0, 0.0, 1.0),
        )
        seed = self._int("run", "seed", None)
        uses_radio = strategy in (
            StrategyKind.STOP_AND_RADIO, StrategyKind.WIRELESS_CONTINUOUS
        )
        if wireless.loss_rate > 0 and uses_radio and seed is None:
            raise ScenarioError(
                self._line("wireless", "loss_rate"),
                "a seed in [run] is mandatory when loss_rate > 0",
            )
        payload_size = self._int("workload", "payload_size", 16, 0)
        if payload_size > 255:
            raise ScenarioError(
                self._line("workload", "payload_size"),
                "payload_size: must be <= 255",
            )
        recharge_raw = self._raw("energy", "recharge_rate", "instant")
        recharge_rate: Optional[float]
        if recharge_raw == "instant":
            recharge_rate = None
        else:
            recharge_rate = self._float("energy", "recharge_rate", 0.0, 0.0,
                                        exclusive_min=True)
        return ScenarioConfig(
            params=params,
            layout=layout,
            speed=self._float("car", "speed", 3.0, 0.0),
            dt=self._float("run", "dt", 5.0e-4, 0.0, exclusive_min=True),
            duration=self._float("run", "duration", 1.0, 0.0, exclusive_min=True),
            seed=seed if seed is not None else 0,
            initial_state=PowerState(clock, radio),
            strategy=strategy,
            controller=self._flag("strategy", "controller", False),
            budget=budget,
            wireless=wireless,
            workload_rate=self._float("workload", "rate", 0.0, 0.0),
            workload_payload=payload_size,
            schedule=self._build_schedule(),
            drain_interval=self._float("strategy", "drain_interval", 10.0, 0.0,
                                       exclusive_min=True),
            wired_frame_time=self._float("run", "wired_frame_time", 0.001, 0.0,
                                         exclusive_min=True),
            reboot_dead_time=self._float("strategy", "reboot_dead_time", 0.5, 0.0),
            recharge_rate=recharge_rate,
            ripple_amplitude=self._float("energy", "ripple_amplitude", 0.0, 0.0),
            ram_capacity=self._int("run", "ram_capacity", 256, 1),
            flash_capacity=self._int("run", "flash_capacity", 65536, 1),
            name=self.name,
        )


def parse_scenario(text: str, name: str = "scenario") -> ScenarioSpec:
    """Parse scenario text; raises ScenarioError with a line number."""
    spec = ScenarioSpec(name=name)
    section: Optional[str] = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _KNOWN_KEYS:
                raise ScenarioError(lineno, f"unknown section [{section}]")
            continue
        if "=" not in line:
            raise ScenarioError(lineno, f"expected 'key = value', got {raw_line.strip()!r}")
        if section is None:
            raise ScenarioError(lineno, "key outside of any [section]")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key not in _KNOWN_KEYS[section]:
            raise ScenarioError(lineno, f"unknown key {key!r} in section [{section}]")
        if (section, key) in spec.values:
            raise ScenarioError(lineno, f"duplicate key {key!r} in section [{section}]")
        if not value:
            raise ScenarioError(lineno, f"{key}: empty value")
        spec.values[(section, key)] = value
        spec.lines[(section, key)] = lineno
    return spec


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)
