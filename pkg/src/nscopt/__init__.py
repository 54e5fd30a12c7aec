"""Penalty-method optimal control of the periodic Navier-Stokes equations
under state constraints, with numerical certificates of the first-order
optimality system."""

from .constraints import EnergyBall, EnstrophyBall, HelicitySet, Unconstrained, project
from .control import ControlTrajectory, FullField, ModeSet, Quadratic, SubdomainMask
from .dynamics import ProblemData, TimeGrid, adjoint_solve, existence_time, forward_solve
from .errors import CheckpointError, ConfigurationError, IntegrationError, LineSearchStall, NscoptError
from .fields import Grid, VelocityField
from .penalty import PenaltyConfig, continuation_solve

__version__ = "0.1.0"
