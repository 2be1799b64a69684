"""Safe distributed optimal output consensus for heterogeneous linear agents."""

from .errors import (ConfigError, DivergenceError, InvariantViolation, NumericalError,
                     RegulatorInfeasible, SafeconsError)
from .graph import CommGraph, is_connected, laplacian, spectrum
from .objectives import GeneralSmooth, ObjectiveEnsemble, Quadratic
from .plant import AgentSynthesis, LinearAgent, solve_regulator, synthesize
from .protocol import (ProtocolParams, compute_beta_functions, derive_constants,
                       feasibility_report)
from .regions import (Ball, Box, ExpandingSchedule, HalfspaceIntersection, hausdorff_gap,
                      inclusion_slack, safety_radius, validate_schedule)
from .safety import cbf_value, safety_report
from .scenario import load_scenario, parse_scenario
from .simulator import (ScenarioConfig, SimulationTrace, centralized_oracle,
                        convergence_metrics, integrate_closed_loop, time_varying_oracle)

__all__ = [name for name in dir() if not name.startswith("_")]
