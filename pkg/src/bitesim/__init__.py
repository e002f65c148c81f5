"""bitesim: desk-scale simulation of force-reactive in-mouth bite transfer.

Subsystems: chain kinematics with damped least-squares IK, the phased
force-reactive impedance controller, the bite-transfer state machine,
synthetic food/mouth perception, a simulated human (contact, bites,
head motion), the wrist comfort study, and the 1 kHz trial harness.
"""

from .geometry import Pose
from .kinematics import (ChainModel, IkParams, bundled_chain, forward_kinematics,
                         ik_damped_least_squares, jacobian)
from .controller import Wrench, ReactivityGains, ImpedanceParams
from .harness import Scenario, run_trial, run_suite, export_trajectory
from .comfort import run_wrist_study

__all__ = [
    "Pose",
    "ChainModel",
    "IkParams",
    "bundled_chain",
    "forward_kinematics",
    "ik_damped_least_squares",
    "jacobian",
    "Wrench",
    "ReactivityGains",
    "ImpedanceParams",
    "Scenario",
    "run_trial",
    "run_suite",
    "export_trajectory",
    "run_wrist_study",
]

__version__ = "0.1.0"
