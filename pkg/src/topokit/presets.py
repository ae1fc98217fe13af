"""Named run presets and config-dict builders.

The tuned hyperparameter table below was obtained at 64x32 resolution with a
60-iteration tuning budget; presets ship so standard runs do not require a
search. Preset names follow ``<problem>-p<penalty>-<reparam>-<optimizer>``
plus the three two-bar setups.
"""

from __future__ import annotations

import copy

import numpy as np

from .problems import CATALOG, make_problem
from .reparam import ArchitectureSpec
from .runner import TWOBAR_MMA_C, TWOBAR_THETA0, AdamSettings, MmaSettings

MLP_WIDTH = 20
SIREN_WIDTH = 22

# (move_limit, asyinit, theta_bound) for MMA; SIREN adds omega0.
_MMA_TUNED = {
    ("tensile", 1.0): {
        "direct": (0.03, 0.5, None, None),
        "mlp": (0.03, 0.4, 11.0, None),
        "siren": (2e-4, 0.1, 5.0, 25.0),
        "cnn": (0.056, 0.3, 11.0, None),
    },
    ("michell", 1.0): {
        "direct": (0.056, 0.3, None, None),
        "mlp": (0.002, 0.4, 8.0, None),
        "siren": (0.001, 0.1, 2.0, 10.0),
        "cnn": (0.0056, 0.2, 5.0, None),
    },
    ("tensile", 3.0): {
        "direct": (0.1, 0.2, None, None),
        "mlp": (0.003, 0.4, 5.0, None),
        "siren": (0.002, 0.2, 2.0, 5.0),
        "cnn": (0.0056, 0.5, 5.0, None),
    },
    ("michell", 3.0): {
        "direct": (0.1, 0.2, None, None),
        "mlp": (0.003, 0.2, 2.0, None),
        "siren": (0.002, 0.2, 2.0, 10.0),
        "cnn": (0.003, 0.1, 2.0, None),
    },
}

# (learning_rate, grad_clip) for Adam; SIREN adds omega0.
_ADAM_TUNED = {
    ("tensile", 1.0): {
        "mlp": (0.02, 1e-4, None),
        "siren": (0.01, 0.01, 5.0),
        "cnn": (0.03, 0.01, None),
    },
    ("michell", 1.0): {
        "mlp": (0.056, 0.1, None),
        "siren": (0.0056, 0.1, 15.0),
        "cnn": (0.056, 1e-4, None),
    },
    ("tensile", 3.0): {
        "mlp": (0.02, 0.1, None),
        "siren": (0.0056, 0.1, 15.0),
        "cnn": (0.03, 0.01, None),
    },
    ("michell", 3.0): {
        "mlp": (0.03, 1e-4, None),
        "siren": (0.01, 1e-4, 15.0),
        "cnn": (0.03, 0.01, None),
    },
}

#: Architectures of the expressivity sweep at each resolution: widths for
#: MLP/SIREN and (input size, dense channels, first-layer filters) for the
#: CNN; None marks under-parameterized rows the CNN cannot realize.
EXPRESSIVITY_SWEEP = {
    (64, 32): {
        "width": (11, 15, 20, 33, 42, 50),
        "cnn": (None, None, (1, 1, 2), (16, 12, 16), (32, 12, 32), (64, 16, 32)),
    },
    (128, 64): {
        "width": (23, 33, 44, 66, 85, 100),
        "cnn": (None, None, (1, 1, 2), (32, 12, 32), (64, 12, 64), (128, 16, 64)),
    },
    (256, 128): {
        "width": (48, 70, 90, 135, 170, 200),
        "cnn": (None, None, (1, 1, 2), (64, 16, 32), (96, 16, 64), (128, 16, 96)),
    },
    (320, 160): {
        "width": (60, 85, 110, 170, 215, 250),
        "cnn": (None, None, (1, 1, 2), (16, 16, 64), (64, 16, 96), (128, 16, 128)),
    },
}


def _base_config(problem: str, penalty: float, v0: float) -> dict:
    return {
        "problem": {"name": problem, "nx": 64, "ny": 32, "v0": v0, "penalty": penalty},
        "budget": 200,
        "seed": 0,
        "pretrain": True,
    }


def _build_presets() -> dict[str, dict]:
    presets: dict[str, dict] = {}
    for (problem, penalty), by_kind in _MMA_TUNED.items():
        for kind, (move, asy, bound, omega) in by_kind.items():
            cfg = _base_config(problem, penalty, 0.6)
            cfg["reparam"] = {"kind": kind if kind != "direct" else "direct"}
            if omega is not None:
                cfg["reparam"]["omega0"] = omega
            cfg["optimizer"] = {"kind": "mma", "move_limit": move, "asyinit": asy}
            if bound is not None:
                cfg["optimizer"]["theta_bound"] = bound
            label = "baseline" if kind == "direct" else kind
            presets[f"{problem}-p{int(penalty)}-{label}-mma"] = cfg
    for (problem, penalty), by_kind in _ADAM_TUNED.items():
        for kind, (lr, clip, omega) in by_kind.items():
            cfg = _base_config(problem, penalty, 0.6)
            cfg["reparam"] = {"kind": kind}
            if omega is not None:
                cfg["reparam"]["omega0"] = omega
            cfg["optimizer"] = {"kind": "adam", "learning_rate": lr, "grad_clip": clip}
            presets[f"{problem}-p{int(penalty)}-{kind}-adam"] = cfg

    # One moderate feasibility penalty serves the whole two-bar study; see
    # runner.TWOBAR_MMA_C for why the usual stiff default cannot traverse
    # the relaxed band around the stress-constrained optimum.
    presets["twobar-baseline"] = {
        "problem": {"name": "twobar"},
        "reparam": {"kind": "direct"},
        "optimizer": {"kind": "mma", "move_limit": 2.0, "asyinit": 0.1, "c_const": TWOBAR_MMA_C},
        "budget": 100,
        "seed": 0,
    }
    presets["twobar-siren"] = {
        "problem": {"name": "twobar"},
        "reparam": {"kind": "siren", "omega0": 88.0},
        "optimizer": {
            "kind": "mma",
            "move_limit": 0.31,
            "asyinit": 0.1,
            "theta_bound": 3.0,
            "c_const": TWOBAR_MMA_C,
        },
        "budget": 100,
        "seed": 0,
        "theta0": list(TWOBAR_THETA0),
    }
    presets["twobar-siren-fast"] = {
        "problem": {"name": "twobar"},
        "reparam": {"kind": "siren", "omega0": 40.0},
        "optimizer": {
            "kind": "mma",
            "move_limit": 0.4,
            "asyinit": 0.3,
            "theta_bound": 11.0,
            "c_const": TWOBAR_MMA_C,
        },
        "budget": 20,
        "seed": 0,
        "theta0": list(TWOBAR_THETA0),
    }
    return presets


PRESETS = _build_presets()


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


def problem_from_config(cfg: dict):
    name = cfg["name"]
    if name == "twobar":
        return make_problem("twobar")
    if name not in CATALOG:
        raise ValueError(f"unknown problem {name!r}; catalog: {', '.join(CATALOG + ('twobar',))}")
    return make_problem(
        name,
        resolution=(cfg.get("nx", 64), cfg.get("ny", 32)),
        v0=cfg.get("v0"),
        penalty=cfg.get("penalty", 3.0),
        filter_radius=cfg.get("filter_radius"),
    )


def spec_from_config(cfg: dict) -> ArchitectureSpec:
    kind = cfg.get("kind", "direct")
    kwargs = {}
    if kind in ("mlp", "siren"):
        kwargs["width"] = cfg.get("width", MLP_WIDTH if kind == "mlp" else SIREN_WIDTH)
        kwargs["hidden_layers"] = cfg.get("hidden_layers", 5)
    if kind == "siren" or "omega0" in cfg:
        kwargs["omega0"] = cfg.get("omega0", 10.0)
    if kind == "cnn":
        kwargs["cnn_input_size"] = cfg.get("input_size", 1)
        kwargs["cnn_channels"] = cfg.get("channels", 1)
        kwargs["cnn_filters"] = tuple(cfg.get("filters", (2, 1)))
        kwargs["cnn_upsample"] = tuple(cfg.get("upsample", (4, 8)))
    return ArchitectureSpec(kind=kind, **kwargs)


def optimizer_from_config(cfg: dict) -> MmaSettings | AdamSettings:
    kind = cfg.get("kind", "mma")
    if kind == "mma":
        return MmaSettings(
            move_limit=cfg["move_limit"],
            asyinit=cfg["asyinit"],
            theta_bound=cfg.get("theta_bound", 1.0),
            c_const=cfg.get("c_const", 1000.0),
        )
    if kind == "adam":
        clip = cfg.get("grad_clip", np.inf)
        return AdamSettings(learning_rate=cfg["learning_rate"], grad_clip=float(clip))
    raise ValueError(f"unknown optimizer kind {kind!r}")


def sweep_specs(nx: int, ny: int) -> list[ArchitectureSpec]:
    """Expressivity sweep architectures for one of the studied resolutions."""
    if (nx, ny) not in EXPRESSIVITY_SWEEP:
        raise ValueError(f"no sweep table for resolution {nx}x{ny}")
    table = EXPRESSIVITY_SWEEP[(nx, ny)]
    specs = []
    for width in table["width"]:
        specs.append(ArchitectureSpec(kind="mlp", width=width))
        specs.append(ArchitectureSpec(kind="siren", width=width))
    for row in table["cnn"]:
        if row is None:
            continue
        n_in, channels, filters = row
        specs.append(
            ArchitectureSpec(
                kind="cnn",
                cnn_input_size=n_in,
                cnn_channels=channels,
                cnn_filters=(filters, 1),
                cnn_upsample=(4, 8),
            )
        )
    return specs
