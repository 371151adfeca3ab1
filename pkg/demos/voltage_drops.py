"""Reproduce the per-power-state capacitor voltage drops.

A car crossing a double lane change loses supply power twice for 20 ms
each (6 cm gap at 3 m/s).  The ride-through capacitor sags linearly with
the load current; this script simulates one crossing per calibrated
power state and compares the simulated drop to the bench measurement.
"""

from powergap.cli import run_table1_suite


def main() -> None:
    print(f"{'state':<12} {'measured V':>10} {'simulated V':>12} {'error %':>8}")
    for state, expected, got in run_table1_suite():
        err = 100.0 * abs(got - expected) / expected
        print(f"{str(state):<12} {expected:>10.2f} {got:>12.4f} {err:>8.3f}")


if __name__ == "__main__":
    main()
