"""Semi-implicit (IMEX) time stepping shared by all model simulators.

Each step treats reactions explicitly and diffusion implicitly:

    u* = u + dt * R(u, ...)          (explicit, evaluated Jacobi-style)
    (I - dt * d * Lap) u_next = u*   (implicit, factorized once)

The implicit operator is an M-matrix, so the solve preserves positivity and
box bounds; dt is chosen so the explicit reaction maps are monotone on the
invariant ranges, which preserves componentwise ordering between coupled
runs.  Fixed points of the scheme are exactly the discrete elliptic steady
states, independent of dt, so trajectories converge to the same fields the
steady-state solvers produce.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ToolkitError
from .grid import Grid, ScalarField, laplacian_matrix

DEFAULT_STEP_SAFETY = 0.8
CONVERGENCE_TOL = 1e-10     # plateau threshold on successive checkpoints
CHECK_EVERY = 32            # steps between plateau / target checks


@functools.lru_cache(maxsize=128)
def diffusion_solver(grid: Grid, d: float, dt: float):
    """Cached factorization of (I - dt*d*Lap)."""
    n = grid.n_points
    a = sp.identity(n, format="csr") - (dt * d) * laplacian_matrix(grid)
    return spla.splu(a.tocsc())


def reaction_step_limit(*lipschitz_bounds: float) -> float:
    """Largest dt keeping every explicit reaction map monotone."""
    worst = max(lipschitz_bounds)
    return DEFAULT_STEP_SAFETY / worst if worst > 0 else 1.0


def logistic_reaction(u: np.ndarray, h: np.ndarray, dt: float) -> np.ndarray:
    """One explicit step of u' = u*(h - u).  Shared verbatim by the logistic
    marcher and the predator component of the competition simulator so the
    two trajectories agree bitwise under identical stepping."""
    return u + dt * (u * (h - u))


@dataclass
class SpeciesSpec:
    """One species inside a coupled march."""

    name: str
    initial: np.ndarray
    d: float
    blowup_cap: float


@dataclass
class TrajectorySummary:
    """Recorded diagnostics of one PDE run."""

    species: tuple[str, ...]
    times: np.ndarray
    mins: dict[str, np.ndarray]
    maxs: dict[str, np.ndarray]
    means: dict[str, np.ndarray]
    finals: dict[str, ScalarField]
    dt: float
    steps: int
    converged: bool
    stop_reason: str
    target_label: str | None = None
    target_distance: float | None = None
    extra: dict = field(default_factory=dict)

    def floor(self, name: str, fraction: float = 0.1) -> float:
        """Min over the trailing fraction of records of the spatial minimum
        (a liminf proxy for persistence checks)."""
        m = self.mins[name]
        k = max(1, int(math.ceil(fraction * len(m))))
        return float(np.min(m[-k:]))

    def to_csv(self, path, meta: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if meta:
                fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            writer = csv.writer(fh)
            header = ["t"]
            for name in self.species:
                header += [f"min_{name}", f"max_{name}", f"mean_{name}"]
            writer.writerow(header)
            for i, t in enumerate(self.times):
                row = [f"{t:.17g}"]
                for name in self.species:
                    row += [
                        f"{self.mins[name][i]:.17g}",
                        f"{self.maxs[name][i]:.17g}",
                        f"{self.means[name][i]:.17g}",
                    ]
                writer.writerow(row)


class MarchRecorder:
    """Accumulates per-record statistics during a march."""

    def __init__(self, names):
        self.names = list(names)
        self.times = []
        self.mins = {n: [] for n in self.names}
        self.maxs = {n: [] for n in self.names}
        self.means = {n: [] for n in self.names}

    def record(self, t, states: dict[str, np.ndarray]):
        self.times.append(t)
        for n in self.names:
            v = states[n]
            self.mins[n].append(float(v.min()))
            self.maxs[n].append(float(v.max()))
            self.means[n].append(float(v.mean()))

    def summary(self, grid: Grid, states, dt, steps, converged, reason,
                target_label=None, target_distance=None) -> TrajectorySummary:
        return TrajectorySummary(
            species=tuple(self.names),
            times=np.array(self.times),
            mins={n: np.array(v) for n, v in self.mins.items()},
            maxs={n: np.array(v) for n, v in self.maxs.items()},
            means={n: np.array(v) for n, v in self.means.items()},
            finals={n: ScalarField(grid, states[n]) for n in self.names},
            dt=dt,
            steps=steps,
            converged=converged,
            stop_reason=reason,
            target_label=target_label,
            target_distance=target_distance,
        )


def march(grid: Grid, species: list[SpeciesSpec], reaction, T: float,
          dt: float, record_every: int = 1,
          target: dict[str, np.ndarray] | None = None,
          target_tol: float | None = None,
          stop_tol: float = CONVERGENCE_TOL,
          step_hook=None) -> TrajectorySummary:
    """Integrate a coupled reaction-diffusion system to time T.

    reaction(states, dt) -> dict of explicitly updated arrays (must evaluate
    all species from the same input states).  Stops early when successive
    checkpoints differ by less than stop_tol in the max norm, or when every
    species is within target_tol of the corresponding target array.
    step_hook(step, t, states) is called after every step when given.
    """
    names = [s.name for s in species]
    solvers = {s.name: diffusion_solver(grid, s.d, dt) for s in species}
    caps = {s.name: s.blowup_cap for s in species}
    states = {s.name: np.array(s.initial, dtype=float) for s in species}

    n_steps = max(1, int(math.ceil(T / dt - 1e-12)))
    recorder = MarchRecorder(names)
    recorder.record(0.0, states)

    checkpoint = {n: states[n].copy() for n in names}
    converged = False
    reason = "time limit"
    step = 0
    while step < n_steps:
        step += 1
        updated = reaction(states, dt)
        for n in names:
            states[n] = solvers[n].solve(updated[n])
        t = step * dt

        u0 = states[names[0]]
        if not np.isfinite(u0[0]) or u0.max() > caps[names[0]] or any(
            not np.all(np.isfinite(states[n])) or states[n].max() > caps[n]
            for n in names
        ):
            raise ToolkitError(
                f"blow-up detected at t={t:g}: solution left its a-priori bound"
            )

        if step_hook is not None:
            step_hook(step, t, states)
        if step % record_every == 0 or step == n_steps:
            recorder.record(t, states)

        if step % CHECK_EVERY == 0:
            drift = max(
                float(np.max(np.abs(states[n] - checkpoint[n]))) for n in names
            )
            if target is not None and target_tol is not None:
                dist = max(
                    float(np.max(np.abs(states[n] - target[n]))) for n in names
                )
                if dist <= target_tol:
                    converged = True
                    reason = "reached target"
                    if step % record_every != 0:
                        recorder.record(t, states)
                    break
            if drift < stop_tol:
                converged = True
                reason = "steady plateau"
                if step % record_every != 0:
                    recorder.record(t, states)
                break
            checkpoint = {n: states[n].copy() for n in names}

    target_distance = None
    if target is not None:
        target_distance = max(
            float(np.max(np.abs(states[n] - target[n]))) for n in names
        )
    return recorder.summary(grid, states, dt, step, converged, reason,
                            target_distance=target_distance)


def identify_attractor(finals: dict[str, ScalarField],
                       catalog: dict[str, dict[str, ScalarField]],
                       margin_factor: float = 10.0):
    """Nearest catalog state in the max norm, accepted only when the
    runner-up is at least margin_factor further away.

    Returns (label, distance) or (None, best_distance) when ambiguous.
    """
    distances = {}
    for label, state in catalog.items():
        distances[label] = max(
            float(np.max(np.abs(finals[n].values - state[n].values)))
            for n in finals
        )
    ranked = sorted(distances.items(), key=lambda kv: kv[1])
    best_label, best = ranked[0]
    if len(ranked) > 1 and ranked[1][1] < margin_factor * best:
        return None, best
    return best_label, best
