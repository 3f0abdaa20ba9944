import numpy as np
import pytest

from safewbc import multibody as mb


@pytest.fixture(scope="session")
def dpend():
    return mb.load_builtin_model("dpend")


@pytest.fixture(scope="session")
def cartpole():
    return mb.load_builtin_model("cartpole")


@pytest.fixture(scope="session")
def fourbar():
    return mb.load_builtin_model("fourbar-arm")


@pytest.fixture(scope="session")
def biped():
    return mb.load_builtin_model("biped5")


def make_planar_hopper():
    """Planar floating body with one leg; small testbed for floating-base
    dynamics and point contacts."""
    return mb.model_from_dict(
        {
            "format": "wbc-model/1",
            "name": "hopper",
            "bodies": [
                {
                    "name": "body",
                    "parent": "world",
                    "joint": {"type": "planar-floating"},
                    "mass": 2.0,
                    "com": [0, 0, 0.1],
                    "inertia": [0.05, 0.05, 0.01],
                },
                {
                    "name": "leg",
                    "parent": "body",
                    "joint": {"type": "revolute", "axis": [1, 0, 0], "actuated": True,
                              "torque_limit": 80.0},
                    "mass": 1.0,
                    "com": [0, 0, -0.2],
                    "inertia": [0.01, 0.01, 0.001],
                },
            ],
            "frames": [{"name": "foot", "body": "leg", "offset": [0, 0, -0.4]}],
            "q0": [0, 0.4, 0, 0],
        }
    )


def make_spatial_block():
    """Free spatial body with one arm; testbed for the Euler-ZYX base chart
    and surface contacts."""
    return mb.model_from_dict(
        {
            "format": "wbc-model/1",
            "name": "block",
            "bodies": [
                {
                    "name": "body",
                    "parent": "world",
                    "joint": {"type": "spatial-floating"},
                    "mass": 3.0,
                    "com": [0.01, -0.02, 0.05],
                    "inertia": [0.04, 0.05, 0.06],
                },
                {
                    "name": "arm",
                    "parent": "body",
                    "joint": {
                        "type": "revolute",
                        "axis": [0, 1, 0],
                        "offset": [0.1, 0, 0.2],
                        "actuated": True,
                        "torque_limit": 40.0,
                    },
                    "mass": 0.7,
                    "com": [0, 0, -0.15],
                    "inertia": [0.008, 0.008, 0.001],
                },
            ],
            "frames": [
                {"name": "hand", "body": "arm", "offset": [0, 0, -0.3]},
                {"name": "sole", "body": "body", "offset": [0, 0, -0.1]},
            ],
            "q0": [0, 0, 0, 0, 0, 0, 0],
        }
    )


@pytest.fixture(scope="session")
def hopper():
    return make_planar_hopper()


@pytest.fixture(scope="session")
def block():
    return make_spatial_block()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
