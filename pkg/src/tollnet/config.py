"""Experiment configuration: TOML-syntax ``.cfg`` files with nested sections.

See ``configs/wheatstone.cfg`` for the normative example. Every key is
optional except ``[network]``; defaults are filled in and echoed by
:meth:`ExperimentConfig.to_dict`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import CapacityTooSmall, ParseError, TollNetError, ValidationError
from .links import LinkArray, LinkParams, TollPolicy
from .network import Network, PathSet, build_network, check_simplex, enumerate_paths

POLICIES = ("none", "marginal", "fixed", "custom")

_SCHEMA = {
    "network": {"nodes", "origin", "destination", "links"},
    "model": {"demand", "policy", "nominal_demand", "beta", "eta", "custom_tolls"},
    "initial": {"z", "x"},
    "integrator": {"dt", "t_final", "record_stride"},
    "diagnostics": {"epsilon", "tail_fraction"},
    "sweeps": {"beta_grid", "eta_grid", "eta_horizon", "demand_grid"},
    "output": {"directory", "seed", "workers"},
}
_LINK_KEYS = {"id", "tail", "head", "capacity", "alpha", "family"}


@dataclass(frozen=True)
class LinkSpec:
    id: str
    tail: str
    head: str
    capacity: float
    alpha: float = 1.0
    family: str = "exponential"


@dataclass(frozen=True)
class ExperimentConfig:
    nodes: tuple
    origin: str
    destination: str
    links: tuple  # of LinkSpec
    demand: float = 1.0
    policy: str = "marginal"
    nominal_demand: float = 1.0
    custom_tolls: dict | None = None
    beta: float = 1.0
    eta: float = 0.1
    z0: tuple | dict | None = None  # list in path order, or {path label: share}
    x0: tuple | None = None
    dt: float = 0.01
    t_final: float = 350.0
    record_stride: float = 0.1
    epsilon: float = 1e-3
    tail_fraction: float = 0.2
    beta_grid: tuple = tuple(float(b) for b in range(1, 13))
    eta_grid: tuple = (0.01, 0.05, 0.1)
    eta_horizon: float = 35.0
    demand_grid: tuple = (0.5, 0.8, 1.2, 1.5)
    output_dir: str = "results"
    seed: int = 0
    workers: int = 1
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    # ---- derived objects -------------------------------------------------
    def network(self) -> Network:
        return build_network(self.nodes, [(l.tail, l.head) for l in self.links], self.origin,
                             self.destination, [l.id for l in self.links])

    def pathset(self) -> PathSet:
        return enumerate_paths(self.network())

    def link_array(self) -> LinkArray:
        return LinkArray([LinkParams(l.capacity, l.alpha, l.family) for l in self.links])

    def initial_z(self, paths: PathSet) -> np.ndarray:
        n = paths.n_paths
        if self.z0 is None:
            return np.full(n, 1.0 / n)
        if isinstance(self.z0, dict):
            unknown = set(self.z0) - set(paths.labels)
            if unknown:
                raise ValidationError(f"initial.z names unknown paths {sorted(unknown)}; paths are {paths.labels}")
            z = np.array([float(self.z0.get(lbl, 0.0)) for lbl in paths.labels])
        else:
            z = np.array(self.z0, dtype=float)
        try:
            return check_simplex(z, n)
        except TollNetError as exc:
            raise ValidationError(f"initial.z: {exc}") from None

    def initial_x(self) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(len(self.links))
        return np.array(self.x0, dtype=float)

    def toll_policy(self, kind: str | None = None, paths: PathSet | None = None) -> TollPolicy:
        """Resolve a policy name; ``fixed`` solves the nominal social optimum."""
        kind = kind or self.policy
        if kind == "none":
            return TollPolicy.none()
        if kind == "marginal":
            return TollPolicy.marginal()
        if kind == "fixed":
            from .equilibrium import fixed_marginal_tolls
            return fixed_marginal_tolls(paths or self.pathset(), self.link_array(), self.nominal_demand)
        if kind == "custom":
            tables = [(self.custom_tolls[l.id]["flows"], self.custom_tolls[l.id]["tolls"]) for l in self.links]
            return TollPolicy.custom(tables)
        raise ValidationError(f"unknown policy {kind!r}")

    # ---- validation ------------------------------------------------------
    def validate(self) -> None:
        paths = self.pathset()  # structural checks: nodes, self-loops, coverage
        links = self.link_array()
        if not self.demand > 0:
            raise ValidationError(f"demand must be positive, got {self.demand}")
        short = [l.id for l in self.links if not l.capacity > self.demand]
        if short:
            raise CapacityTooSmall(f"links {short} have capacity <= demand {self.demand}")
        if self.policy not in POLICIES:
            raise ValidationError(f"model.policy must be one of {POLICIES}, got {self.policy!r}")
        if self.policy == "custom":
            missing = [l.id for l in self.links if not self.custom_tolls or l.id not in self.custom_tolls]
            if missing:
                raise ValidationError(f"custom policy lacks toll tables for links {missing}")
            self.toll_policy("custom")
        if not self.nominal_demand > 0 or any(not l.capacity > self.nominal_demand for l in self.links):
            raise CapacityTooSmall(f"nominal_demand {self.nominal_demand} must be positive and below every capacity")
        for name in ("beta", "eta", "dt", "t_final", "record_stride", "epsilon", "eta_horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be a positive number, got {v!r}")
        if self.t_final < self.dt or self.record_stride < self.dt:
            raise ValidationError("t_final and record_stride must be at least dt")
        if not 0 < self.tail_fraction <= 1:
            raise ValidationError(f"tail_fraction must be in (0, 1], got {self.tail_fraction}")
        for name in ("beta_grid", "eta_grid", "demand_grid"):
            grid = getattr(self, name)
            if not grid or any(not (np.isfinite(v) and v > 0) for v in grid):
                raise ValidationError(f"{name} must be a nonempty list of positive numbers, got {grid!r}")
        self.initial_z(paths)
        x = self.initial_x()
        if x.shape != (len(links),) or np.any(x < 0) or not np.all(np.isfinite(x)):
            raise ValidationError(f"initial.x must hold {len(links)} nonnegative densities, got {self.x0!r}")
        if int(self.workers) < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with selected fields replaced; ``None`` values are ignored."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ValidationError(f"unknown override fields {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        """Fully resolved config, in the same section layout as the file."""
        paths = self.pathset()
        return {
            "source": self.source,
            "network": {
                "nodes": list(self.nodes), "origin": self.origin, "destination": self.destination,
                "links": [dataclasses.asdict(l) for l in self.links],
                "paths": paths.labels,
            },
            "model": {"demand": self.demand, "policy": self.policy, "nominal_demand": self.nominal_demand,
                      "beta": self.beta, "eta": self.eta, "custom_tolls": self.custom_tolls},
            "initial": {"z": [float(v) for v in self.initial_z(paths)], "x": [float(v) for v in self.initial_x()]},
            "integrator": {"method": "rk4", "dt": self.dt, "t_final": self.t_final,
                           "record_stride": self.record_stride},
            "diagnostics": {"norm": "l1", "epsilon": self.epsilon, "tail_norm": "l2",
                            "tail_fraction": self.tail_fraction},
            "sweeps": {"beta_grid": list(self.beta_grid), "eta_grid": list(self.eta_grid),
                       "eta_horizon": self.eta_horizon, "demand_grid": list(self.demand_grid)},
            "output": {"directory": self.output_dir, "seed": self.seed, "workers": self.workers},
        }


def _number(value, where: str) -> float:
    if isinstance(value, bool):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ParseError(f"{where}: expected a number or fraction string, got {value!r}")


def _numbers(value, where: str) -> tuple:
    if not isinstance(value, list):
        raise ParseError(f"{where}: expected a list, got {value!r}")
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(value))


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ParseError(f"[{name}] must be a section")
    unknown = set(sec) - _SCHEMA[name]
    if unknown:
        raise ParseError(f"[{name}]: unknown keys {sorted(unknown)}")
    return sec


def config_from_dict(doc: dict, source: str | None = None) -> ExperimentConfig:
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise ParseError(f"unknown sections {sorted(unknown)}")
    if "network" not in doc:
        raise ParseError("missing required section [network]")
    net = _section(doc, "network")
    for key in ("nodes", "origin", "destination", "links"):
        if key not in net:
            raise ParseError(f"[network]: missing required key {key!r}")
    links = []
    for i, raw in enumerate(net["links"]):
        where = f"network.links[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{where}: expected a table")
        bad = set(raw) - _LINK_KEYS
        if bad:
            raise ParseError(f"{where}: unknown keys {sorted(bad)}")
        for key in ("tail", "head", "capacity"):
            if key not in raw:
                raise ParseError(f"{where}: missing required key {key!r}")
        links.append(LinkSpec(
            id=str(raw.get("id", f"e{i + 1}")), tail=str(raw["tail"]), head=str(raw["head"]),
            capacity=_number(raw["capacity"], f"{where}.capacity"),
            alpha=_number(raw.get("alpha", 1.0), f"{where}.alpha"),
            family=str(raw.get("family", "exponential")),
        ))

    model = _section(doc, "model")
    initial = _section(doc, "initial")
    integ = _section(doc, "integrator")
    diag = _section(doc, "diagnostics")
    sweeps = _section(doc, "sweeps")
    out = _section(doc, "output")

    kw = {}
    for key in ("demand", "nominal_demand", "beta", "eta"):
        if key in model:
            kw[key] = _number(model[key], f"model.{key}")
    if "policy" in model:
        kw["policy"] = str(model["policy"])
    if "custom_tolls" in model:
        tables = {}
        for lid, tab in model["custom_tolls"].items():
            if not isinstance(tab, dict) or set(tab) != {"flows", "tolls"}:
                raise ParseError(f"model.custom_tolls.{lid}: expected {{flows = [...], tolls = [...]}}")
            tables[lid] = {"flows": _numbers(tab["flows"], f"model.custom_tolls.{lid}.flows"),
                           "tolls": _numbers(tab["tolls"], f"model.custom_tolls.{lid}.tolls")}
        kw["custom_tolls"] = tables
    if "z" in initial:
        z = initial["z"]
        if isinstance(z, dict):
            kw["z0"] = {str(k): _number(v, f"initial.z.{k}") for k, v in z.items()}
        else:
            kw["z0"] = _numbers(z, "initial.z")
    if "x" in initial:
        kw["x0"] = _numbers(initial["x"], "initial.x")
    for key in ("dt", "t_final", "record_stride"):
        if key in integ:
            kw[key] = _number(integ[key], f"integrator.{key}")
    for key in ("epsilon", "tail_fraction"):
        if key in diag:
            kw[key] = _number(diag[key], f"diagnostics.{key}")
    for key in ("beta_grid", "eta_grid", "demand_grid"):
        if key in sweeps:
            kw[key] = _numbers(sweeps[key], f"sweeps.{key}")
    if "eta_horizon" in sweeps:
        kw["eta_horizon"] = _number(sweeps["eta_horizon"], "sweeps.eta_horizon")
    if "directory" in out:
        kw["output_dir"] = str(out["directory"])
    for key in ("seed", "workers"):
        if key in out:
            if not isinstance(out[key], int) or isinstance(out[key], bool):
                raise ParseError(f"output.{key}: expected an integer, got {out[key]!r}")
            kw[key] = out[key]

    return ExperimentConfig(nodes=tuple(str(n) for n in net["nodes"]), origin=str(net["origin"]),
                            destination=str(net["destination"]), links=tuple(links), source=source, **kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return config_from_dict(doc, source=str(path))
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def bundled_config(name: str = "wheatstone") -> Path:
    """Path of a config shipped with the package."""
    return Path(str(resources.files("tollnet") / "configs" / f"{name}.cfg"))
