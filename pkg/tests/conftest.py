"""Shared fixtures: converged baseline designs reused across test modules.

The heavy optimization runs are session-scoped so the analysis and
acceptance tests can share one set of reference designs.
"""

import numpy as np
import pytest

from topokit import presets
from topokit.runner import run_optimization


def strictly_feasible_best(trajectory, volume_target):
    """Best design among iterates whose volume does not exceed the target."""
    best_obj, best_design = np.inf, None
    for obj, vol, design in zip(trajectory.objective, trajectory.volume, trajectory.designs):
        if vol <= volume_target and obj < best_obj:
            best_obj, best_design = obj, design
    assert best_design is not None, "run produced no strictly feasible iterate"
    return best_design


def run_preset(name, budget=None, seed=0, **overrides):
    cfg = presets.preset_config(name)
    cfg.update(overrides)
    return run_optimization(
        presets.problem_from_config(cfg["problem"]),
        presets.spec_from_config(cfg["reparam"]),
        presets.optimizer_from_config(cfg["optimizer"]),
        budget=budget if budget is not None else cfg["budget"],
        seed=seed,
        pretrain=cfg.get("pretrain", True),
        theta0=cfg.get("theta0"),
    )


@pytest.fixture(scope="session")
def michell_p1_problem():
    return presets.problem_from_config(
        {"name": "michell", "nx": 64, "ny": 32, "v0": 0.6, "penalty": 1.0}
    )


@pytest.fixture(scope="session")
def michell_p1_solution(michell_p1_problem):
    """Converged baseline design of the convex (p = 1) Michell case."""
    result = run_preset("michell-p1-baseline-mma", budget=200)
    return strictly_feasible_best(result.trajectory, michell_p1_problem.volume_target)


@pytest.fixture(scope="session")
def bending_targets():
    """Baseline designs of the three bending cases at 30% volume."""
    from topokit.fields import DensityField

    targets = []
    for name in ("mbb", "cantilever", "michell"):
        cfg = {
            "problem": {"name": name, "nx": 64, "ny": 32, "v0": 0.3, "penalty": 3.0},
            "reparam": {"kind": "direct"},
            "optimizer": {"kind": "mma", "move_limit": 0.1, "asyinit": 0.2},
        }
        result = run_optimization(
            presets.problem_from_config(cfg["problem"]),
            presets.spec_from_config(cfg["reparam"]),
            presets.optimizer_from_config(cfg["optimizer"]),
            budget=150,
            seed=0,
        )
        design = result.trajectory.best_feasible_design
        targets.append(DensityField(np.clip(design, 0.0, 1.0), 64, 32))
    return targets
