import numpy as np
import pytest

from fretsync.geometry import GuitarSpec, build_geometry
from fretsync.hand import HandSkeleton, NUM_DOF, PRESSING_FINGERS, forward_kinematics


@pytest.fixture(scope="session")
def geometry():
    return build_geometry(GuitarSpec())


@pytest.fixture(scope="session")
def skeleton():
    return HandSkeleton()


def tucked_coordinates(skeleton):
    """Palm rotated fingers-down, all fingers folded away from the board."""
    q = np.zeros(NUM_DOF)
    q[4] = np.pi / 2  # palm +x maps to -z: fingers point down
    for base in (11, 15, 19, 23):
        q[base + 1] = 1.2
        q[base + 2] = 1.2
    q[7] = 1.2
    return q


def press_pose(skeleton, target, finger="index"):
    """Pose with ``finger`` extended straight down and its tip at ``target``.

    The remaining fingers are folded horizontally, far above the strings.
    """
    q = tucked_coordinates(skeleton)
    base_off = 11 + 4 * PRESSING_FINGERS.index(finger)
    q[base_off + 1 : base_off + 3] = 0.0
    probe = forward_kinematics(skeleton, q)
    tip = probe.fingertip(finger)
    q[0:3] = np.asarray(target, float) - tip
    return forward_kinematics(skeleton, q)


def away_pose(skeleton, offset=(0.3, 0.0, 0.3)):
    """Hand far away from every string."""
    q = tucked_coordinates(skeleton)
    q[0:3] = offset
    return forward_kinematics(skeleton, q)


def barre_pose(skeleton, geometry, fret):
    """Index finger laid flat across all strings at ``fret``."""
    q = np.zeros(NUM_DOF)
    q[5] = -np.pi / 2  # palm +x maps to -y: fingers cross the strings
    for base in (15, 19, 23):  # fold middle/ring/pinky
        q[base + 1] = 1.2
        q[base + 2] = 1.2
    q[7] = 1.2
    probe = forward_kinematics(skeleton, q)
    # align the index MCP-PIP midpoint with the top string at the fret mid
    x = geometry.fret_mid_distance[fret]
    z = geometry.spec.string_action_height
    mcp = probe.finger_chains["index"][0]
    top_y = geometry.string_nut[0, 1] + 0.01
    q[0:3] = np.array([x, top_y, z]) - mcp
    return forward_kinematics(skeleton, q)
