"""Conflict geometry walk-through: closed-form time to loss of separation and
the three-event taxonomy on a constructed two-aircraft encounter.

Run: python demos/01_conflict_geometry.py
"""

import numpy as np

from airsep.airspace import (
    KT,
    NM,
    AircraftState,
    Route,
    SectorParams,
    WorldState,
    detect_events,
    time_to_los,
)


def place(aid, xy_nm, heading_deg, speed_kt):
    pos = np.asarray(xy_nm, float) * NM
    heading = np.radians(heading_deg)
    direction = np.array([np.cos(heading), np.sin(heading)])
    return AircraftState(
        aircraft_id=aid, route=Route([pos, pos + direction * 200 * NM]), leg=0,
        leg_offset=0.0, cas=speed_kt * KT, v_des=speed_kt * KT,
        spawn_time=0.0, eta_deadline=1e9,
    )


def main():
    sector = SectorParams()
    print("sector: protection zone 5 NM, NMAC radius 500 ft, look-ahead 120 s\n")

    print("closed-form time_to_los for a pure head-on closure:")
    p = np.array([20 * NM, 0.0])
    v = np.array([-200 * KT, 0.0])
    t = time_to_los(p, v, sector.r_pz)
    print(f"  20 NM apart, closing at 200 kt -> first breach of 5 NM in {t:.0f} s")
    print(f"  already inside (4 NM): {time_to_los(np.array([4 * NM, 0.0]), v, sector.r_pz)} s")
    print(f"  diverging: {time_to_los(p, -v, sector.r_pz)}\n")

    scenarios = [
        ("head-on 20 NM apart at 100 kt each", place("A", [0, 0], 0, 100), place("B", [20, 0], 180, 100)),
        ("same geometry but 10 NM apart", place("A", [0, 0], 0, 100), place("B", [10, 0], 180, 100)),
        ("4 NM apart, parallel tracks", place("A", [0, 0], 90, 100), place("B", [4, 0], 90, 100)),
        ("500 ft apart", place("A", [0, 0], 0, 100), place("B", [500 * 0.3048 / NM, 0], 0, 100)),
    ]
    for label, a, b in scenarios:
        world = WorldState(sector=sector, routes=[], rng=np.random.default_rng(0), aircraft=[a, b])
        events = detect_events(world)
        if not events:
            print(f"{label}: no event (outside both zones and the look-ahead window)")
        for e in events:
            extra = f", time to breach {e.t_los:.0f} s" if e.t_los is not None else ""
            print(f"{label}: {e.kind.value.upper()} for pair {e.pair}{extra}")


if __name__ == "__main__":
    main()
