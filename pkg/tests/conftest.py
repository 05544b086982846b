import functools

import numpy as np
import pytest

from pfsense.netmodel import build_admittance, load_case
from pfsense.powerflow import solve_newton_raphson

BUNDLED = ["case4_dist", "case4_radial", "case5", "case9", "case14", "case24", "case30"]


@functools.lru_cache(maxsize=None)
def solved(name, tol=1e-11):
    case = load_case(name)
    y = build_admittance(case)
    point = solve_newton_raphson(case, tol=tol)
    assert point.converged
    return case, y, point


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_bus_text(r=0.0, x=0.1, b=0.0, pd=0.0, qd=0.0, tap=0, shift=0):
    return f"""
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 10 1 1.1 0.9;
  2 1 {pd} {qd} 0 0 1 1 0 10 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 100 0;
];
mpc.branch = [
  1 2 {r} {x} {b} 0 0 0 {tap} {shift} 1 -360 360;
];
"""
