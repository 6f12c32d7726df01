"""Stochastic approximation with state-dependent Markov noise: simulation,
rate functions, action minimisation and Monte Carlo Laplace estimates."""

__version__ = "0.1.0"

from .errors import ConvergenceError, ErgodicityError, NumericalError  # noqa: E402,F401
from .schedule import StepSchedule  # noqa: E402,F401
from .sa_sim import Path, SAModel  # noqa: E402,F401
