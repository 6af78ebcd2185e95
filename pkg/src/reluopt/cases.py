"""Bundled grid fixtures.

Two synthetic cases with explicitly supplied PTDF matrices: a 5-bus system
in the spirit of the classic PJM example (three load buses hosting data
centers, cheap remote generation) and a 6-bus ring with chords.  Line
capacities are chosen so the congested variants bind one to three lines
across the whole demand box while every demand draw stays feasible; the
uncongested variants relax the same capacities a hundredfold, collapsing
prices to a single system price.
"""

from __future__ import annotations

import numpy as np

from .opf import GridCase

# PTDFs derived offline from nominal line reactances (slack: last bus for
# the 5-bus case, first bus for the 6-bus case).
_PTDF5 = np.array([
    [0.034379, -0.635433, -0.508527, -0.159538, 0.000000],
    [0.077578, -0.101667, -0.170559, -0.360010, 0.000000],
    [0.888043, 0.737100, 0.679086, 0.519548, 0.000000],
    [0.034379, 0.364567, -0.508527, -0.159538, 0.000000],
    [0.034379, 0.364567, 0.491473, -0.159538, 0.000000],
    [0.111957, 0.262900, 0.320914, 0.480452, 0.000000],
])

_PTDF6 = np.array([
    [0.000000, -0.646504, -0.498822, -0.474077, -0.443833, -0.247447],
    [0.000000, 0.184603, -0.482718, -0.307296, -0.092891, -0.129222],
    [0.000000, 0.027494, 0.183425, -0.527150, -0.173409, -0.019246],
    [0.000000, 0.027494, 0.183425, 0.472850, -0.173409, -0.019246],
    [0.000000, 0.196386, 0.167321, 0.306068, 0.475648, -0.137471],
    [0.000000, 0.353496, 0.501178, 0.525923, 0.556167, 0.752553],
    [0.000000, 0.168892, -0.016104, -0.166781, -0.350943, -0.118225],
    [0.000000, 0.157109, 0.333857, 0.219855, 0.080518, -0.109976],
])

_CAPS5 = np.array([330.0, 250.0, 305.0, 120.0, 200.0, 278.0])


def case5(congested: bool = True) -> GridCase:
    """5-bus system; data centers at the three load buses, demand bounds at
    [0.8, 1.0] of the nominal loads (300, 300, 400) MW."""
    return GridCase(
        quad_cost=[0.02, 0.0, 0.05, 0.06, 0.01],
        lin_cost=[14.0, 0.0, 30.0, 40.0, 10.0],
        p_min=[0.0] * 5,
        p_max=[210.0, 0.0, 520.0, 200.0, 600.0],
        ptdf=_PTDF5,
        f_max=_CAPS5 if congested else _CAPS5 * 100.0,
        base_load=[0.0] * 5,
        dc_buses=(1, 2, 3),
        d_min=[240.0, 240.0, 320.0],
        d_max=[300.0, 300.0, 400.0],
    )


_CAPS6 = np.array([90.0, 60.0, 70.0, 80.0, 65.0, 150.0, 55.0, 60.0])


def case6(congested: bool = True) -> GridCase:
    """6-bus ring with chords; four data-center buses with [0, 100] MW demand
    ranges riding on a conventional base load."""
    return GridCase(
        quad_cost=[0.015, 0.0, 0.04, 0.0, 0.08, 0.0],
        lin_cost=[12.0, 0.0, 28.0, 0.0, 45.0, 0.0],
        p_min=[0.0] * 6,
        p_max=[400.0, 0.0, 250.0, 0.0, 150.0, 0.0],
        ptdf=_PTDF6,
        f_max=_CAPS6 if congested else _CAPS6 * 100.0,
        base_load=[0.0, 40.0, 0.0, 50.0, 0.0, 60.0],
        dc_buses=(1, 2, 3, 5),
        d_min=[0.0, 0.0, 0.0, 0.0],
        d_max=[100.0, 100.0, 100.0, 100.0],
    )
