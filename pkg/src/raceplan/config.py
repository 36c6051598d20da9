"""Run configuration: JSON schema, shipped defaults, and parameter wiring.

A single JSON document drives planning, simulation, and benchmarking.  The
shipped defaults carry a plain-language description per section so a config
file regenerated with :func:`write_default_config` documents itself.  Any
subset may be overridden; unknown keys are rejected rather than ignored so
typos fail loudly.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .behavior import BehaviorParams
from .errors import ParseError, SpecError
from .ocp import OcpParams
from .sim import OpponentSpec, Scenario
from .vehicle import GgDiagram

DEFAULT_CONFIG = {
    "seed": 0,
    "ego": {
        "s0": 0.0,          # start position along the spine, m
        "n0": 0.0,          # start lateral offset, m
        "v0": 50.0,         # start speed, m/s
    },
    "opponents": [
        # offset: initial gap ahead of the ego (m); lane: lateral offset (m);
        # speed: m/s; mode: "constant" or "limit" (scaled track-limit follower)
        {"offset": 60.0, "lane": 1.0, "speed": 30.0,
         "half_length": 2.5, "half_width": 1.0, "mode": "constant",
         "frac": 0.9},
    ],
    "sim": {
        "replan_ds": 20.0,  # replan every this many meters of ego progress
        "dt": 0.1,          # physics step, s
        "t_max": 60.0,      # give up after this much simulated time, s
        "gap_done": 50.0,   # overtake complete once ahead of everyone by this, m
    },
    "behavior": {
        "horizon": 300.0,            # planning window along the spine, m
        "factors": [0.5, 1.0, 2.0],  # set-speed multipliers for progress variants
        "gain": 2.0,                 # speed-tracking gain of the profile model, 1/s
        "dt_profile": 0.1,           # profile integration step, s
        "t_horizon": 12.0,           # progress-variant time horizon, s
        "t_react": 0.5,              # reaction allowance in expanded polygons, s
        "d_s": 0.8,                  # safety margin around obstacles/track, m
        "eps_rdp": 0.1,              # boundary simplification tolerance, m
        "w_d": 1.0,                  # graph-search weight on path length
        "w_chi": 5.0,                # graph-search weight on heading changes
        "tol_gg": 0.02,              # acceleration-envelope slack in the check
        "profile_acc_frac": 0.7,     # usable acceleration share in profiles
        "ego_half_length": 2.5,      # m
        "ego_half_width": 1.0,       # m
        "ds_boundary": 5.0,          # boundary sampling step for the graph, m
        "ds_candidate": 0.5,         # candidate sampling step, m
    },
    "ocp": {
        "horizon": 300.0,            # must match behavior horizon, m
        "n_grid": 60,                # collocation intervals
        "w_jx": 1e-5,                # jerk regularization (longitudinal)
        "w_jy": 1e-5,                # jerk regularization (lateral)
        "w_eps_v": [10.0, 1.0],      # velocity-slack weight (linear, quadratic)
        "w_eps_lat_lin": [50.0, 25.0],   # corridor slack, linear, start/end
        "w_eps_lat_quad": [5.0, 2.5],    # corridor slack, quadratic, start/end
        "w_eps_wall_lin": [20.0, 10.0],  # wall slack, linear, start/end
        "w_eps_wall_quad": [2.0, 1.0],   # wall slack, quadratic, start/end
        "d_s": 0.8,                  # safety margin, m (matches behavior)
        "v_max": 83.0,               # speed ceiling, m/s
        "v_min": 1.0,                # forward-progress floor, m/s
        "kkt_tol": 1e-4,             # optimality tolerance
        "max_iterations": 200,
    },
    "gg": {
        # speed-dependent acceleration envelope, sampled per grid speed
        "speeds": [0.0, 20.75, 41.5, 62.25, 83.0],
        "ax_acc": [8.0, 7.0, 6.0, 5.0, 4.0],
        "ax_brake": [15.0, 15.0, 15.0, 15.0, 15.0],
        "ay_max": [15.0, 15.0, 15.0, 15.0, 15.0],
        "p": 1.0,                    # envelope shape exponent
    },
    "bench": {
        "n_scenarios": 50,           # seeded random scenarios per benchmark
        "n_opponents": 2,            # opponents per random scenario
        "placement": 120.0,          # opponents start within this range ahead, m
        "lane_range": 2.8,           # |lane| bound for random opponents, m
        "speed_min": 26.0,           # random opponent speed range, m/s
        "speed_max": 34.0,
    },
    "notes": {
        "ego": "initial ego state: s0/n0 ribbon position (m), v0 speed (m/s)",
        "opponents": "scripted cars: gap ahead (offset), fixed lane, speed; "
                     "mode 'limit' follows frac times the local track limit",
        "sim": "closed-loop stepping: replan cadence in meters traveled, "
               "physics step, time budget, and the finish gap",
        "behavior": "side-selection search: 300 m window, set-speed factors "
                    "{0.5,1,2}, 12 s profile horizon, 0.8 m safety margin",
        "ocp": "trajectory refinement: grid density, jerk and slack weights "
               "(linear/quadratic pairs decay from start to horizon end)",
        "gg": "acceleration limits by speed; the refinement requires p=1",
        "bench": "benchmarks draw opponents within 120 m ahead and stop "
                 "once the ego leads everyone by the finish gap",
    },
}

_SECTIONS = tuple(DEFAULT_CONFIG.keys())


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def write_default_config(path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(DEFAULT_CONFIG, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_config(cfg: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _merge(base, override, where):
    if not isinstance(override, dict):
        raise SpecError(f"config section {where!r} must be an object")
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise SpecError(f"unknown config key {where}.{key}")
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def load_config(path) -> dict:
    """Read a config file and merge it over the shipped defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SpecError(f"{path}: top level must be an object")
    cfg = default_config()
    for key, val in raw.items():
        if key not in _SECTIONS:
            raise SpecError(f"unknown config section {key!r}")
        if key == "opponents":
            cfg[key] = [_merge(DEFAULT_CONFIG["opponents"][0], o,
                               f"opponents[{i}]")
                        for i, o in enumerate(val)]
        elif key == "notes":
            cfg[key] = dict(val)    # free-form documentation, not validated
        elif isinstance(DEFAULT_CONFIG[key], dict):
            cfg[key] = _merge(DEFAULT_CONFIG[key], val, key)
        else:
            cfg[key] = val
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Range/type checks beyond what the parameter classes enforce."""
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise SpecError("seed must be a nonnegative integer")
    ego = cfg["ego"]
    if ego["v0"] <= 0:
        raise SpecError("ego v0 must be positive")
    for i, opp in enumerate(cfg["opponents"]):
        if opp["offset"] <= 0:
            raise SpecError(f"opponents[{i}].offset must be positive")
        if opp["speed"] <= 0:
            raise SpecError(f"opponents[{i}].speed must be positive")
    sim = cfg["sim"]
    if sim["dt"] <= 0 or sim["t_max"] <= 0 or sim["replan_ds"] <= 0:
        raise SpecError("sim dt, t_max, and replan_ds must be positive")
    bench = cfg["bench"]
    if bench["n_scenarios"] < 1:
        raise SpecError("bench.n_scenarios must be at least 1")
    if bench["speed_min"] <= 0 or bench["speed_max"] < bench["speed_min"]:
        raise SpecError("bench speed range must be positive and ordered")
    if abs(cfg["behavior"]["horizon"] - cfg["ocp"]["horizon"]) > 1e-9:
        raise SpecError("behavior and ocp horizons must agree")
    # constructing the parameter objects runs their own validation
    behavior_params(cfg)
    ocp_params(cfg)
    gg_diagram(cfg)


def behavior_params(cfg: dict) -> BehaviorParams:
    b = dict(cfg["behavior"])
    b["factors"] = tuple(b["factors"])
    return BehaviorParams(**b)


def ocp_params(cfg: dict) -> OcpParams:
    o = dict(cfg["ocp"])
    for key in ("w_eps_v", "w_eps_lat_lin", "w_eps_lat_quad",
                "w_eps_wall_lin", "w_eps_wall_quad"):
        o[key] = tuple(o[key])
    return OcpParams(**o)


def gg_diagram(cfg: dict) -> GgDiagram:
    g = cfg["gg"]
    return GgDiagram(speeds=np.asarray(g["speeds"], dtype=float),
                     ax_acc=np.asarray(g["ax_acc"], dtype=float),
                     ax_brake=np.asarray(g["ax_brake"], dtype=float),
                     ay_max=np.asarray(g["ay_max"], dtype=float),
                     p=float(g["p"]))


def bench_kwargs(cfg: dict) -> dict:
    """Keyword arguments for the random scenario generator."""
    b = cfg["bench"]
    return {
        "n_opponents": int(b["n_opponents"]),
        "placement": float(b["placement"]),
        "lane_range": float(b["lane_range"]),
        "speed_range": (float(b["speed_min"]), float(b["speed_max"])),
        "ego_v0": float(cfg["ego"]["v0"]),
    }


def scenario_from_config(cfg: dict, seed=None) -> Scenario:
    ego = cfg["ego"]
    sim = cfg["sim"]
    opponents = [
        OpponentSpec(offset=float(o["offset"]), lane=float(o["lane"]),
                     speed=float(o["speed"]),
                     half_length=float(o["half_length"]),
                     half_width=float(o["half_width"]),
                     mode=str(o["mode"]), frac=float(o["frac"]))
        for o in cfg["opponents"]
    ]
    return Scenario(seed=cfg["seed"] if seed is None else int(seed),
                    ego_s0=float(ego["s0"]), ego_n0=float(ego["n0"]),
                    ego_v0=float(ego["v0"]), opponents=opponents,
                    replan_ds=float(sim["replan_ds"]), dt=float(sim["dt"]),
                    t_max=float(sim["t_max"]),
                    gap_done=float(sim["gap_done"]))
