"""Incentive bargaining between a shared EV fleet, its riders and a power utility.

Each minute a ride-service provider assigns EVs to ride and charge requests,
a utility prices charging to soak up surplus PV, and EVs bid on rides. The
three best responses are iterated to a fixed point and certified with a
merit function.
"""

from .assign import LapInstance, build_cost_matrices, pad_symmetric, solve_lap
from .bargain import BargainResult, bargain, run_bargain
from .equilibrium import GamePoint, certify, game_gradient, merit, project_joint
from .incentive import InfeasibleIncentiveBounds, ev_best_bids, utility_incentives
from .model import (CityGraph, EpochProblem, Ev, Metrics, PvProfile, RideRequest,
                    ScenarioConfig, build_default_graph, desk_scale)
from .sim import pooling_feasible, run_scenario

__all__ = [
    "LapInstance", "build_cost_matrices", "pad_symmetric", "solve_lap",
    "BargainResult", "bargain", "run_bargain",
    "GamePoint", "certify", "game_gradient", "merit", "project_joint",
    "InfeasibleIncentiveBounds", "ev_best_bids", "utility_incentives",
    "CityGraph", "EpochProblem", "Ev", "Metrics", "PvProfile", "RideRequest",
    "ScenarioConfig", "build_default_graph", "desk_scale",
    "pooling_feasible", "run_scenario",
]
