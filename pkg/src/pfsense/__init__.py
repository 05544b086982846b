"""Power-flow sensitivities and phaseless recovery of power injections.

Submodules
----------
netmodel       case parsing and the bus admittance matrix
numkit         dense linear-algebra kernels
powerflow      Newton-Raphson solver and Jacobian blocks
sensitivity    voltage sensitivity matrices by three routes
observability  power-factor encoding and invertibility conditions
estimation     phaseless estimation and ridge regression of sensitivities
lowrank        truncated SVD, matrix completion, online estimator
amisim         synthetic AMI time series
"""

from .exceptions import PfsenseError
from .netmodel import NetworkCase, build_admittance, bundled_cases, load_case
from .powerflow import OperatingPoint, assemble_jacobian, solve_newton_raphson
from .sensitivity import invert_jacobian, perturb_and_observe, schur_sensitivities
from .observability import check_case, report_table, theorem1_check, theorem2_check

__version__ = "0.1.0"

__all__ = [
    "PfsenseError", "NetworkCase", "build_admittance", "bundled_cases", "load_case",
    "OperatingPoint", "assemble_jacobian", "solve_newton_raphson", "invert_jacobian",
    "perturb_and_observe", "schur_sensitivities", "check_case", "report_table",
    "theorem1_check", "theorem2_check", "__version__",
]
