"""Show the energy-budget transmission gate preventing brownouts.

The host requests a status reply at every track-gap entry, so the radio
burst (250 mA) lands exactly while the car is coasting unpowered through
the gap.  Ungated, the capacitor drop crosses the 4 V brownout
threshold; with the gate enabled the firmware defers the reply until the
gap is cleared and still answers every request.
"""

from powergap.energy_model import ClockTier, EnergyModelParams, PowerState, RadioMode
from powergap.strategies import EnergyBudget, StrategyKind
from powergap.track_world import (
    HostRequestSchedule,
    ScenarioConfig,
    Segment,
    SegmentKind,
    TrackLayout,
    run_scenario,
)


def run(controller: bool):
    params = EnergyModelParams.calibrated()
    params.current_table[PowerState(ClockTier.C160, RadioMode.TRANSMITTING)] = 0.250
    cfg = ScenarioConfig(
        params=params,
        layout=TrackLayout(
            [
                Segment(SegmentKind.STRAIGHT, 0.51),
                Segment(SegmentKind.LANE_CHANGE, 0.48, (0.09, 0.36)),
                Segment(SegmentKind.STRAIGHT, 0.51),
            ]
        ),
        speed=3.0,
        duration=15.0,
        seed=3,
        initial_state=PowerState(ClockTier.C160, RadioMode.OFF),
        strategy=StrategyKind.WIRELESS_CONTINUOUS,
        controller=controller,
        budget=EnergyBudget(max_allowed_drop=3.5, lookahead=0.050),
        schedule=HostRequestSchedule(gap_aligned=True),
        workload_rate=0.0,
    )
    return run_scenario(cfg).metrics


def main() -> None:
    for controller in (False, True):
        m = run(controller)
        label = "gate on " if controller else "gate off"
        print(
            f"{label}: brownouts={m.brownout_count}  "
            f"requests answered={m.requests_answered}/{m.requests_arrived}  "
            f"max drop={m.max_drop_v:.2f} V"
        )


if __name__ == "__main__":
    main()
