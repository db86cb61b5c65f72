"""Scenario files: a versioned JSON schema plus the bundled scenarios.

Schema (version 1)::

    {
      "schema": 1,
      "T": 0.1, "F": 30, "R": 500.0, "seed": 0, "max_slots": 400,
      "geometry": {"x_s": 200.0, "w": 3.5},
      "channel": {"type": "perfect"}
                 | {"type": "distance_iid", "lambda": 0.0013}
                 | {"type": "correlated", "lambda": 0.0013, "xi": 0.9}
                 | {"type": "scripted", "losses": [[uid, slot], ...],
                    "all_lost": [uid, ...]},
      "params": {"tau_th": 2.0, "epsilon": 1e-9, "sigma_x": 0.0,
                 "d_margin": 2.0, "sensing_radius": 150.0,
                 "resume_accel": 2.0},
      "vehicles": [{"uid": 1, "clane": "H1R", "nlane": "H3L",
                    "x": 62.0, "v": 13.0, "a": 0.0, "dx_bound": 0.0}]
    }

The bundled names (``fig5a`` .. ``fig5d``, ``allloss``) reproduce the four
scripted failure scenarios and a total-blackout run; they are also shipped
as JSON files under ``icsim/data``.
"""

from __future__ import annotations

import json
from pathlib import Path

from .channel import ChannelModel, CorrelatedBurst, DistanceIID, Perfect, Scripted
from .kinematics import IntersectionGeometry, Route
from .sim import Scenario, ScenarioError, VehicleSpec

SCHEMA_VERSION = 1

_PARAM_FIELDS = (
    "tau_th",
    "epsilon",
    "sigma_x",
    "d_margin",
    "sensing_radius",
    "resume_accel",
)


def channel_from_dict(d: dict) -> ChannelModel:
    kind = d.get("type")
    if kind == "perfect":
        return Perfect()
    if kind == "distance_iid":
        return DistanceIID(lam=float(d["lambda"]))
    if kind == "correlated":
        return CorrelatedBurst(lam=float(d["lambda"]), xi=float(d["xi"]))
    if kind == "scripted":
        losses = frozenset((int(u), int(s)) for u, s in d.get("losses", []))
        all_lost = frozenset(int(u) for u in d.get("all_lost", []))
        return Scripted(losses=losses, all_lost=all_lost)
    raise ScenarioError(f"unknown channel type {kind!r}")


def channel_to_dict(model: ChannelModel) -> dict:
    if isinstance(model, Perfect):
        return {"type": "perfect"}
    if isinstance(model, DistanceIID):
        return {"type": "distance_iid", "lambda": model.lam}
    if isinstance(model, CorrelatedBurst):
        return {"type": "correlated", "lambda": model.lam, "xi": model.xi}
    if isinstance(model, Scripted):
        return {
            "type": "scripted",
            "losses": sorted([u, s] for u, s in model.losses),
            "all_lost": sorted(model.all_lost),
        }
    raise ScenarioError(f"unknown channel model {model!r}")


def scenario_from_dict(data: dict) -> Scenario:
    try:
        if data.get("schema") != SCHEMA_VERSION:
            raise ScenarioError(
                f"unsupported schema version {data.get('schema')!r}"
            )
        geo = data.get("geometry", {})
        geometry = IntersectionGeometry(
            x_s=float(geo.get("x_s", 200.0)), w=float(geo.get("w", 3.5))
        )
        params = data.get("params", {})
        vehicles = tuple(
            VehicleSpec(
                uid=int(v["uid"]),
                route=Route(v["clane"], v["nlane"]),
                x=float(v["x"]),
                v=float(v["v"]),
                a=float(v.get("a", 0.0)),
                dx_bound=float(v.get("dx_bound", 0.0)),
                x_est=float(v["x_est"]) if "x_est" in v else None,
            )
            for v in data["vehicles"]
        )
        kwargs = {k: float(params[k]) for k in _PARAM_FIELDS if k in params}
        return Scenario(
            vehicles=vehicles,
            geometry=geometry,
            channel=channel_from_dict(data.get("channel", {"type": "perfect"})),
            T=float(data.get("T", 0.1)),
            F=int(data.get("F", 30)),
            R=float(data.get("R", 500.0)),
            max_slots=int(data.get("max_slots", 400)),
            seed=int(data.get("seed", 0)),
            **kwargs,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "T": s.T,
        "F": s.F,
        "R": s.R,
        "seed": s.seed,
        "max_slots": s.max_slots,
        "geometry": {"x_s": s.geometry.x_s, "w": s.geometry.w},
        "channel": channel_to_dict(s.channel),
        "params": {
            "tau_th": s.tau_th,
            "epsilon": s.epsilon,
            "sigma_x": s.sigma_x,
            "d_margin": s.d_margin,
            "sensing_radius": s.sensing_radius,
            "resume_accel": s.resume_accel,
        },
        "vehicles": [
            {
                "uid": v.uid,
                "clane": v.route.clane,
                "nlane": v.route.nlane,
                "x": v.x,
                "v": v.v,
                "a": v.a,
                "dx_bound": v.dx_bound,
                **({"x_est": v.x_est} if v.x_est is not None else {}),
            }
            for v in s.vehicles
        ],
    }


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must contain a JSON object")
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


# Two vehicles on perpendicular approaches with conflicting straight routes.
# They sense each other in slot 1, switch to V2V together, and send their
# first ENTER in slot 2, so scripted bursts anchored at the first exchange
# start at global slot 2. Vehicle 1 starts slightly closer and wins priority.
def _two_car_base(losses=(), seed: int = 0) -> Scenario:
    return Scenario(
        vehicles=(
            VehicleSpec(uid=1, route=Route("H1R", "H3L"), x=102.0, v=13.0, a=0.0),
            VehicleSpec(uid=2, route=Route("H2R", "H4L"), x=100.0, v=13.0, a=0.0),
        ),
        channel=Scripted(losses=frozenset(losses)),
        F=8,
        R=500.0,
        max_slots=400,
        seed=seed,
    )


def build_fig5a() -> Scenario:
    """Three cars, no losses; the third arrives late, waits out the first
    round, and competes against the yielding car in a second round."""
    return Scenario(
        vehicles=(
            VehicleSpec(uid=1, route=Route("H1R", "H3L"), x=102.0, v=13.0, a=0.0),
            VehicleSpec(uid=2, route=Route("H2R", "H4L"), x=100.0, v=13.0, a=0.0),
            VehicleSpec(uid=3, route=Route("H3R", "H1L"), x=30.0, v=13.0, a=0.0),
        ),
        channel=Perfect(),
        F=8,
        R=150.0,
        max_slots=600,
        seed=0,
    )


def build_fig5b() -> Scenario:
    """Two cars; the second misses one slot (the first ENTER)."""
    return _two_car_base(losses={(2, 2)})


def build_fig5c() -> Scenario:
    """Two cars; the second misses three consecutive slots."""
    return _two_car_base(losses={(2, 2), (2, 3), (2, 4)})


def build_fig5d() -> Scenario:
    """Two cars; both miss the same two slots."""
    return _two_car_base(losses={(1, 2), (1, 3), (2, 2), (2, 3)})


def build_allloss() -> Scenario:
    """Every V2V message is lost; both cars must cross via the fallback."""
    return Scenario(
        vehicles=(
            VehicleSpec(uid=1, route=Route("H1R", "H3L"), x=102.0, v=13.0, a=0.0),
            VehicleSpec(uid=2, route=Route("H2R", "H4L"), x=100.0, v=13.0, a=0.0),
        ),
        channel=Scripted(all_lost=frozenset({1, 2})),
        F=5,
        R=500.0,
        max_slots=600,
        seed=0,
    )


BUNDLED = {
    "fig5a": build_fig5a,
    "fig5b": build_fig5b,
    "fig5c": build_fig5c,
    "fig5d": build_fig5d,
    "allloss": build_allloss,
}


def bundled_scenario(name: str) -> Scenario:
    try:
        return BUNDLED[name]()
    except KeyError:
        raise ScenarioError(
            f"unknown bundled scenario {name!r}; available: {sorted(BUNDLED)}"
        ) from None


def resolve_scenario(ref: str) -> Scenario:
    """A scenario reference is a bundled name or a path to a JSON file."""
    if ref in BUNDLED:
        return bundled_scenario(ref)
    if Path(ref).exists():
        return load_scenario(ref)
    raise ScenarioError(f"scenario {ref!r} is neither bundled nor a readable file")


def write_bundled_files(directory) -> list[Path]:
    """Materialize the bundled scenarios as JSON files (used at build time)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, build in sorted(BUNDLED.items()):
        path = directory / f"{name}.scenario.json"
        save_scenario(build(), path)
        written.append(path)
    return written
