"""Coupled path-preference / link-density dynamics and convergence diagnostics.

State is (z, x): z lives on the path simplex and relaxes at rate ``eta``
toward the logit response to current costs; x are link densities driven by
node-local routing of the arriving flow. Integration is fixed-step classical
RK4 so runs are reproducible bit-for-bit for a given config.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .choice import UNIFORM_SPLIT_THRESHOLD, SplitOperator, path_costs, logit_response
from .errors import (AllPathsBlocked, IntegratorDiverged, IoError, NegativeDensity, NonFiniteState,
                     ValidationError)
from .links import LinkArray, TollPolicy
from .network import PathSet, check_simplex

GUARD_LIMIT = 1e-9
RENORMALIZE_ABOVE = 1e-12


@dataclass(frozen=True)
class SimConfig:
    eta: float = 0.1
    dt: float = 0.01
    t_final: float = 350.0
    record_stride: float = 0.1
    demand: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ValidationError(f"t_final ({self.t_final}) must be at least dt ({self.dt})")
        if not self.record_stride >= self.dt:
            raise ValidationError(f"record_stride ({self.record_stride}) must be at least dt ({self.dt})")
        if not self.demand > 0:
            raise ValidationError(f"demand must be positive, got {self.demand}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def steps_per_record(self) -> int:
        return max(1, int(round(self.record_stride / self.dt)))


@dataclass(frozen=True)
class SimState:
    t: float
    z: np.ndarray
    x: np.ndarray
    f: np.ndarray


@dataclass
class Trajectory:
    """Sampled states; row k of each array is the k-th record."""

    t: np.ndarray
    z: np.ndarray
    x: np.ndarray
    f: np.ndarray
    # pre-guard diagnostics over every integrator step
    max_simplex_drift: float = 0.0
    min_preference: float = 1.0
    min_density: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> SimState:
        return SimState(float(self.t[k]), self.z[k], self.x[k], self.f[k])

    @property
    def final(self) -> SimState:
        return self.state(len(self) - 1)

    def to_csv(self, path, paths: PathSet) -> Path:
        path = Path(path)
        net = paths.network
        header = (["t"] + [f"z_{lbl}" for lbl in paths.labels]
                  + [f"x_{e}" for e in net.link_ids] + [f"f_{e}" for e in net.link_ids])
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for k in range(len(self)):
                    row = np.concatenate(([self.t[k]], self.z[k], self.x[k], self.f[k]))
                    w.writerow([f"{v:.17g}" for v in row])
        except OSError as exc:
            raise IoError(f"cannot write trajectory to {path}: {exc}") from exc
        return path


class FlowDynamics:
    """Right-hand side of the coupled system for one (network, links, policy, beta, config)."""

    def __init__(self, paths: PathSet, links: LinkArray, policy: TollPolicy, beta: float, config: SimConfig):
        net = paths.network
        if len(links) != net.n_links:
            raise ValidationError(f"{len(links)} link parameter sets for {net.n_links} links")
        policy.check_size(net.n_links)
        if not (beta > 0 and np.isfinite(beta)):
            raise ValidationError(f"beta must be positive and finite, got {beta}")
        self.paths, self.links, self.policy = paths, links, policy
        self.beta, self.config = float(beta), config
        self.split = SplitOperator(paths)
        tails = [net.tail(e) for e in range(net.n_links)]
        heads = [net.head(e) for e in range(net.n_links)]
        # arrivals[e, j] = 1 iff link j feeds the tail node of link e
        self.arrivals = np.array([[1.0 if heads[j] == tails[e] else 0.0 for j in range(net.n_links)]
                                  for e in range(net.n_links)])
        self.exogenous = config.demand * np.array([1.0 if t == net.origin else 0.0 for t in tails])

    @property
    def compilable(self) -> bool:
        return self.links.vectorized and self.policy.kind in ("none", "marginal", "fixed")

    def response(self, f: np.ndarray) -> np.ndarray:
        return logit_response(path_costs(self.paths, self.links, self.policy, f), self.beta)

    def __call__(self, z: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = self.links.flow(x)
        dz = self.config.eta * (self.response(f) - z)
        G = self.split(z, self.config.demand)
        dx = G * (self.exogenous + self.arrivals @ f) - f
        return dz, dx

    def rk4(self, z, x, dt):
        k1z, k1x = self(z, x)
        h = 0.5 * dt
        k2z, k2x = self(z + h * k1z, x + h * k1x)
        k3z, k3x = self(z + h * k2z, x + h * k2x)
        k4z, k4x = self(z + dt * k3z, x + dt * k3x)
        z_new = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        x_new = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        return z_new, x_new


def _guard(z: np.ndarray, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
        raise NonFiniteState(f"non-finite state at t={t}")
    xmin, zmin = x.min(), z.min()
    if xmin < -GUARD_LIMIT or zmin < -GUARD_LIMIT:
        raise IntegratorDiverged(f"state left the domain at t={t} (min x {xmin}, min z {zmin})")
    if xmin < 0:
        x = np.maximum(x, 0.0)
    if zmin < 0:
        z = np.maximum(z, 0.0)
    drift = abs(z.sum() - 1.0)
    if drift > GUARD_LIMIT:
        raise IntegratorDiverged(f"path preference left the simplex at t={t} (|1'z - 1| = {drift})")
    if drift > RENORMALIZE_ABOVE:
        z = z / z.sum()
    return z, x


def drift(state: SimState, paths: PathSet, links: LinkArray, policy: TollPolicy,
          beta: float, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """(dz/dt, dx/dt) at ``state``."""
    return FlowDynamics(paths, links, policy, beta, config)(np.asarray(state.z, float), np.asarray(state.x, float))


def make_state(links: LinkArray, z, x, t: float = 0.0) -> SimState:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NegativeDensity(f"initial densities must be nonnegative: {x}")
    z = check_simplex(z, None)
    return SimState(t, z, x, links.flow(x))


def step(state: SimState, paths: PathSet, links: LinkArray, policy: TollPolicy,
         beta: float, config: SimConfig, dt: float | None = None) -> SimState:
    """One RK4 step of length ``dt`` (default ``config.dt``) followed by the guards."""
    dt = config.dt if dt is None else dt
    if dt == 0:
        return state
    dyn = FlowDynamics(paths, links, policy, beta, config)
    z, x = dyn.rk4(np.asarray(state.z, float), np.asarray(state.x, float), dt)
    t = state.t + dt
    z, x = _guard(z, x, t)
    return SimState(t, z, x, links.flow(x))


def _run_numpy(dyn, z, x, n, stride, dt, ts, zs, xs, diag) -> None:
    r = 1
    for k in range(1, n + 1):
        z, x = dyn.rk4(z, x, dt)
        diag[0] = max(diag[0], abs(z.sum() - 1.0))
        diag[1], diag[2] = min(diag[1], z.min()), min(diag[2], x.min())
        z, x = _guard(z, x, k * dt)
        if k % stride == 0 or k == n:
            ts[r], zs[r], xs[r] = k * dt, z, x
            r += 1


def _run_compiled(dyn, z, x, n, stride, dt, ts, zs, xs, diag) -> None:
    from . import _kernels as kn

    links, policy, cfg = dyn.links, dyn.policy, dyn.config
    fixed = np.asarray(policy.constants if policy.kind == "fixed" else np.zeros(len(links)), dtype=float)
    status, k = kn.integrate(
        z, x, n, stride, dt, ts, zs, xs, diag, links.capacity, links.alpha, kn.POLICY_CODES[policy.kind],
        fixed, np.ascontiguousarray(dyn.paths.incidence, dtype=float), dyn.split.same_tail,
        1.0 / dyn.split.out_degree, dyn.arrivals, dyn.exogenous, cfg.eta, dyn.beta, cfg.demand,
        UNIFORM_SPLIT_THRESHOLD * cfg.demand, GUARD_LIMIT, RENORMALIZE_ABOVE)
    t = k * dt
    if status == kn.NON_FINITE:
        raise NonFiniteState(f"non-finite state at t={t}")
    if status == kn.LEFT_DOMAIN:
        raise IntegratorDiverged(f"state left the domain at t={t} (min x {x.min()}, min z {z.min()})")
    if status == kn.LEFT_SIMPLEX:
        raise IntegratorDiverged(f"path preference left the simplex at t={t} (|1'z - 1| = {abs(z.sum() - 1)})")
    if status == kn.ALL_BLOCKED:
        raise AllPathsBlocked(f"every path crosses a saturated link at t={t}")


def simulate(z0, x0, paths: PathSet, links: LinkArray, policy: TollPolicy,
             beta: float, config: SimConfig, compiled: bool | None = None) -> Trajectory:
    """Integrate from (z0, x0) over ``config.t_final``.

    ``compiled`` selects the numba loop (default: whenever it applies, i.e.
    exponential links with a none/marginal/fixed policy).
    """
    z = check_simplex(z0, paths.n_paths)
    x = np.asarray(x0, dtype=float)
    if x.shape != (paths.network.n_links,):
        raise ValidationError(f"initial densities need {paths.network.n_links} entries, got {x.shape}")
    if np.any(x < 0):
        raise NegativeDensity(f"initial densities must be nonnegative: {x}")

    dyn = FlowDynamics(paths, links, policy, beta, config)
    n, stride, dt = config.n_steps, config.steps_per_record, config.dt
    n_rec = n // stride + 1 + (1 if n % stride else 0)
    ts = np.empty(n_rec)
    zs = np.empty((n_rec, z.size))
    xs = np.empty((n_rec, x.size))
    ts[0], zs[0], xs[0] = 0.0, z, x
    diag = np.array([abs(z.sum() - 1.0), z.min(), x.min()])

    if compiled is None:
        compiled = dyn.compilable
    elif compiled and not dyn.compilable:
        raise ValidationError("the compiled loop needs exponential links and a none/marginal/fixed policy")
    if compiled:
        _run_compiled(dyn, z.copy(), x.copy(), n, stride, dt, ts, zs, xs, diag)
    else:
        _run_numpy(dyn, z, x, n, stride, dt, ts, zs, xs, diag)
    max_drift, min_z, min_x = diag

    fs = links.flow(xs) if links.vectorized else np.array([links.flow(v) for v in xs])
    return Trajectory(ts, zs, xs, fs,
                      max_simplex_drift=float(max_drift), min_preference=float(min_z), min_density=float(min_x),
                      meta={"integrator": "rk4", "dt": dt, "eta": config.eta, "beta": float(beta),
                            "policy": policy.kind, "demand": config.demand})


def convergence_time(trajectory: Trajectory, target, epsilon: float) -> float | None:
    """First sampled time with ||f(t) - target||_1 <= epsilon, or None."""
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    d = np.abs(trajectory.f - np.asarray(target, float)).sum(axis=1)
    hit = np.flatnonzero(d <= epsilon)
    return float(trajectory.t[hit[0]]) if hit.size else None


def tail_distance(trajectory: Trajectory, target, tail_fraction: float = 0.2) -> float:
    """max ||f(t) - target||_2 over the last ``tail_fraction`` of the horizon."""
    if not 0 < tail_fraction <= 1:
        raise ValidationError(f"tail_fraction must be in (0, 1], got {tail_fraction}")
    t0, t1 = trajectory.t[0], trajectory.t[-1]
    start = t1 - tail_fraction * (t1 - t0)
    mask = trajectory.t >= start - 1e-12 * max(1.0, abs(t1))
    return float(np.linalg.norm(trajectory.f[mask] - np.asarray(target, float), axis=1).max())
