"""Featurization walk-through: the ownship block, per-intruder rows, and the
frame-invariance property that motivates the egocentric encoding.

Run: python demos/03_egocentric_features.py
"""

import numpy as np

from airsep.airspace import KT, NM, AircraftState, Route, SectorParams, WorldState
from airsep.featurize import INTRUDER_FEATURES, featurize


def place(aid, xy_nm, heading_deg, speed_kt, desired_kt):
    pos = np.asarray(xy_nm, float) * NM
    heading = np.radians(heading_deg)
    direction = np.array([np.cos(heading), np.sin(heading)])
    return AircraftState(
        aircraft_id=aid, route=Route([pos, pos + direction * 200 * NM]), leg=0,
        leg_offset=0.0, cas=speed_kt * KT, v_des=desired_kt * KT,
        spawn_time=0.0, eta_deadline=1e9,
    )


def show(obs):
    print(f"  ownship (speed, deviation): {np.round(obs.ownship, 4)}")
    for row in obs.intruders:
        print("  intruder:", ", ".join(f"{n}={v:+.4f}" for n, v in zip(INTRUDER_FEATURES, row)))


def main():
    sector = SectorParams()
    own = place("OWN", [0, 0], 90, 100, 110)
    ahead = place("I1", [3.6, 4.8], 270, 120, 110)  # 3-4-5 bearing, 6 NM out
    inside = place("I2", [0, 4], 180, 60, 90)       # inside the 5 NM zone, closing

    world = WorldState(sector=sector, routes=[], rng=np.random.default_rng(0),
                       aircraft=[own, ahead, inside])
    obs = featurize(world, "OWN")
    print("ownship heading north at 100 kt (desired 110):")
    show(obs)

    print("\nsame traffic rotated 73 degrees and shifted 40 NM: features are identical")
    rot = np.radians(73.0)
    mat = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    shift = np.array([40 * NM, -12 * NM])
    moved = WorldState(
        sector=sector, routes=[], rng=np.random.default_rng(0),
        aircraft=[
            AircraftState(
                aircraft_id=ac.aircraft_id, route=Route(ac.route.waypoints @ mat.T + shift),
                leg=ac.leg, leg_offset=ac.leg_offset, cas=ac.cas, v_des=ac.v_des,
                spawn_time=ac.spawn_time, eta_deadline=ac.eta_deadline,
            )
            for ac in world.aircraft
        ],
    )
    moved_obs = featurize(moved, "OWN")
    drift = max(
        np.max(np.abs(obs.ownship - moved_obs.ownship)),
        np.max(np.abs(obs.intruders - moved_obs.intruders)),
    )
    print(f"  max feature difference after the rigid motion: {drift:.2e}")


if __name__ == "__main__":
    main()
