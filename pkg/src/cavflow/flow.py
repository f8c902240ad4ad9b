"""
Flow of the composite velocity field and transport of the deformation gradient.

Positions and gradients are advanced together by classical RK4 on a fixed
uniform grid of ``[1, lam]``. Stage times are the grid points and midpoints,
so each stage time is addressed by an integer half-step key and its
velocity evaluator is built once.
"""
from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .geometry import Evolution, domain_at
from .neumann import SolverOptions
from .velocity import CutoffParams, VelocityEvaluator, build_velocity_field

__all__ = [
    "FlowError",
    "FlowOptions",
    "VelocitySchedule",
    "TrajectoryBatch",
    "integrate_flow",
    "u_far",
    "boundary_seeds",
    "flow_seeds",
    "tracking_report",
    "incompressibility_report",
    "injectivity_probe",
    "decay_check",
    "spectral_norm",
    "worker_count",
]

OUTER = 0
INTERIOR = -1


class FlowError(RuntimeError):
    """A trajectory left the closed domain; ``seed`` and ``time`` locate it."""

    def __init__(self, message, seed=None, time=None, deviation=None):
        super().__init__(message)
        self.seed = seed
        self.time = time
        self.deviation = deviation


@dataclass
class FlowOptions:
    steps: int = 400
    tol_det: float = 1e-4
    tol_bdry: float = 1e-5
    solver: SolverOptions = field(default_factory=SolverOptions)
    cutoff: CutoffParams = field(default_factory=CutoffParams)
    threads: int | None = None

    def __post_init__(self):
        if self.steps < 10:
            raise ValueError("need at least 10 steps")
        if self.tol_det <= 0 or self.tol_bdry <= 0:
            raise ValueError("tolerances must be positive")


def worker_count(requested: int | None = None) -> int:
    """Threads to use: ``requested``, else ``CAVFLOW_THREADS``, capped by the CPU count."""
    cpus = os.cpu_count() or 1
    if requested is None:
        env = os.environ.get("CAVFLOW_THREADS")
        requested = int(env) if env else cpus
    return max(1, min(int(requested), cpus))


def spectral_norm(G) -> np.ndarray:
    """Largest singular value of each 2x2 matrix in ``G``."""
    fro = (G**2).sum(axis=(-2, -1))
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    return np.sqrt(0.5 * (fro + np.sqrt(np.maximum(fro**2 - 4 * det**2, 0.0))))


class VelocitySchedule:
    """Write-once table of velocity evaluators at the RK4 stage times.

    Key ``k`` stands for ``t = 1 + (lam - 1) k / (2 N)``; the last key is
    mapped exactly onto ``lam``.
    """

    def __init__(self, evolution: Evolution, steps: int, solver: SolverOptions | None = None,
                 cutoff: CutoffParams | None = None):
        self.evolution = evolution
        self.steps = int(steps)
        self.solver = solver or SolverOptions()
        self.cutoff = cutoff or CutoffParams()
        self._table: dict[int, VelocityEvaluator | None] = {}
        self._lock = threading.Lock()

    @property
    def degenerate(self) -> bool:
        return self.evolution.lam <= 1.0

    def time(self, key: int) -> float:
        if key == 2 * self.steps:
            return float(self.evolution.lam)
        return 1.0 + (self.evolution.lam - 1.0) * key / (2 * self.steps)

    def get(self, key: int) -> VelocityEvaluator | None:
        ev = self._table.get(key)
        if ev is None and key not in self._table:
            ev = None if self.degenerate else build_velocity_field(
                self.evolution, self.time(key), self.solver, self.cutoff
            )
            with self._lock:
                ev = self._table.setdefault(key, ev)
        return ev

    def prebuild(self, threads: int | None = None):
        keys = [k for k in range(2 * self.steps + 1) if k not in self._table]
        n = worker_count(threads)
        if n == 1:
            for k in keys:
                self.get(k)
        else:
            with ThreadPoolExecutor(n) as pool:
                list(pool.map(self.get, keys))
        return self

    def evaluate(self, key: int, y):
        ev = self.get(key)
        if ev is None:
            return np.zeros((len(y), 2)), np.zeros((len(y), 2, 2))
        return ev.evaluate(y)

    def __len__(self):
        return len(self._table)


@dataclass
class TrajectoryBatch:
    """Positions and gradients of the flow at the checkpoint times.

    ``labels`` marks seeds on the outer circle (0), on hole ``i`` (``i``,
    one-based) or interior (-1). ``boundary_deviation`` is the largest
    distance from the exact circle seen before any re-projection.
    """

    seeds: np.ndarray
    labels: np.ndarray
    times: np.ndarray
    steps: np.ndarray
    positions: np.ndarray
    gradients: np.ndarray
    det: np.ndarray
    boundary_deviation: float
    grad_sup: float
    lam: float
    options: FlowOptions

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def det_error(self) -> float:
        return float(np.abs(self.det - 1.0).max()) if self.det.size else 0.0


def boundary_seeds(evolution: Evolution, samples: int = 64):
    """Rings of seeds on every boundary circle of ``E(1)`` with their labels."""
    th = 2 * np.pi * np.arange(samples) / samples
    e = np.exp(1j * th)
    pts = [evolution.R0 * e]
    labels = [np.full(samples, OUTER)]
    R = evolution.excision_radii
    for i, a in enumerate(evolution.sites):
        pts.append(a + R[i] * e)
        labels.append(np.full(samples, i + 1))
    return np.concatenate(pts), np.concatenate(labels)


def flow_seeds(evolution: Evolution, points: int = 2000, samples: int = 64, seed: int = 0):
    """Uniform random interior seeds of ``E(1)`` followed by the labelled boundary rings."""
    dom = domain_at(evolution, 1.0)
    rng = np.random.default_rng(seed)
    out = []
    while sum(len(o) for o in out) < points:
        k = 2 * points
        z = dom.r0 * np.sqrt(rng.uniform(size=k)) * np.exp(2j * np.pi * rng.uniform(size=k))
        ok = np.abs(z) < dom.r0
        for c, r in zip(dom.centers, dom.radii):
            ok &= np.abs(z - c) > r
        out.append(z[ok])
    interior = np.concatenate(out)[:points]
    bs, bl = boundary_seeds(evolution, samples)
    return np.concatenate([interior, bs]), np.concatenate([np.full(points, INTERIOR), bl])


def _circle(evolution: Evolution, t: float, labels):
    """Center and radius of the circle every boundary seed must stay on."""
    c = np.zeros(len(labels), dtype=complex)
    r = np.full(len(labels), evolution.R0 * t)
    holes = labels > 0
    if holes.any():
        z = evolution.center(t)
        rad = evolution.hole_radius(t)
        c[holes] = z[labels[holes] - 1]
        r[holes] = rad[labels[holes] - 1]
    return c, r


def _check_labels(evolution, seeds, labels, tol):
    dom = domain_at(evolution, 1.0)
    if not dom.contains(seeds, tol).all():
        k = int(np.nonzero(~dom.contains(seeds, tol))[0][0])
        raise FlowError(f"seed {k} lies outside E(1)", seed=k, time=1.0)
    b = labels >= 0
    if b.any():
        c, r = _circle(evolution, 1.0, labels[b])
        dev = np.abs(np.abs(seeds[b] - c) - r)
        if dev.max() > tol:
            k = int(np.nonzero(b)[0][np.argmax(dev)])
            raise FlowError(f"seed {k} is labelled as a boundary seed but is off its circle",
                            seed=k, time=1.0, deviation=float(dev.max()))


def integrate_flow(seeds, evolution: Evolution, opts: FlowOptions | None = None, labels=None,
                   checkpoints=None, schedule: VelocitySchedule | None = None) -> TrajectoryBatch:
    """Integrate ``df/dt = v(f, t)`` and ``dF/dt = Dv(f, t) F`` from ``t = 1`` to ``lam``.

    Parameters
    ----------
    seeds : complex array
        Starting points in the closed domain ``E(1)``.
    labels : int array, optional
        Boundary labels as in :class:`TrajectoryBatch`; default all interior.
    checkpoints : int or sequence of int, optional
        Step indices at which to record the state (0 and ``N`` always
        included). An integer asks for that many evenly spaced checkpoints.
    schedule : VelocitySchedule, optional
        Shared evaluator table, e.g. to reuse solves across batches.
    """
    opts = opts or FlowOptions()
    N = opts.steps
    seeds = np.asarray(seeds, dtype=complex).reshape(-1)
    K = len(seeds)
    labels = np.full(K, INTERIOR) if labels is None else np.asarray(labels, dtype=int).reshape(-1)
    if len(labels) != K:
        raise ValueError("need one label per seed")
    if schedule is None:
        schedule = VelocitySchedule(evolution, N, opts.solver, opts.cutoff)
    elif schedule.steps != N or schedule.evolution is not evolution:
        raise ValueError("schedule does not match the evolution and step count")
    if checkpoints is None:
        checkpoints = 10
    if np.isscalar(checkpoints):
        marks = np.unique(np.round(np.linspace(0, N, int(checkpoints) + 1)).astype(int))
    else:
        marks = np.unique(np.concatenate([[0, N], np.asarray(checkpoints, dtype=int)]))
    if marks.min() < 0 or marks.max() > N:
        raise ValueError("checkpoint outside [0, N]")
    tol = opts.tol_bdry
    _check_labels(evolution, seeds, labels, tol)
    if schedule.degenerate:
        times = np.ones(len(marks))
        F = np.broadcast_to(np.eye(2), (len(marks), K, 2, 2)).copy()
        return TrajectoryBatch(seeds, labels, times, marks, np.tile(seeds, (len(marks), 1)), F,
                               np.ones((len(marks), K)), 0.0, 0.0, float(evolution.lam), opts)

    h = (evolution.lam - 1.0) / N
    x = seeds.copy()
    F = np.broadcast_to(np.eye(2), (K, 2, 2)).copy()
    bnd = labels >= 0
    rec_x, rec_F, rec_t = [], [], []
    deviation = 0.0
    grad_sup = 0.0

    def field_at(key, y):
        nonlocal grad_sup
        v, G = schedule.evaluate(key, y)
        if len(G):
            grad_sup = max(grad_sup, float(spectral_norm(G).max()))
        return v[:, 0] + 1j * v[:, 1], G

    def record(n, t):
        if n in marks_set:
            rec_x.append(x.copy())
            rec_F.append(F.copy())
            rec_t.append(t)

    marks_set = set(int(m) for m in marks)
    record(0, 1.0)
    for n in range(N):
        k0 = 2 * n
        v1, G1 = field_at(k0, x)
        D1 = G1 @ F
        v2, G2 = field_at(k0 + 1, x + 0.5 * h * v1)
        D2 = G2 @ (F + 0.5 * h * D1)
        v3, G3 = field_at(k0 + 1, x + 0.5 * h * v2)
        D3 = G3 @ (F + 0.5 * h * D2)
        v4, G4 = field_at(k0 + 2, x + h * v3)
        D4 = G4 @ (F + h * D3)
        x = x + (h / 6.0) * (v1 + 2 * v2 + 2 * v3 + v4)
        F = F + (h / 6.0) * (D1 + 2 * D2 + 2 * D3 + D4)
        t = schedule.time(k0 + 2)
        if bnd.any():
            c, r = _circle(evolution, t, labels[bnd])
            dz = x[bnd] - c
            dist = np.abs(dz)
            dev = np.abs(dist - r)
            deviation = max(deviation, float(dev.max()))
            if dev.max() > tol:
                j = int(np.argmax(dev))
                k = int(np.nonzero(bnd)[0][j])
                raise FlowError(f"boundary seed {k} left its circle by {dev[j]:.3e} at t={t:.6g}",
                                seed=k, time=t, deviation=float(dev[j]))
            x[bnd] = c + r * dz / dist
        if n + 1 in marks_set:
            _check_inside(evolution, t, x, bnd, tol)
        record(n + 1, t)

    det_hist = np.array([np.linalg.det(g) for g in rec_F])
    return TrajectoryBatch(
        seeds, labels, np.array(rec_t), marks, np.array(rec_x), np.array(rec_F), det_hist,
        deviation, grad_sup, float(evolution.lam), opts,
    )


def _check_inside(evolution, t, x, bnd, tol):
    dom = domain_at(evolution, t)
    inside = dom.contains(x, tol)
    inside[bnd] = True
    if not inside.all():
        k = int(np.nonzero(~inside)[0][0])
        raise FlowError(f"trajectory of seed {k} left E(t) at t={t:.6g}", seed=k, time=t)


def u_far(batch: TrajectoryBatch) -> np.ndarray:
    """Images ``f(x, lam)`` of the seeds."""
    if not math.isclose(batch.times[-1], batch.lam, rel_tol=0, abs_tol=1e-12) and batch.lam > 1:
        raise ValueError("batch was not integrated up to lam")
    return batch.final.copy()


def tracking_report(batch: TrajectoryBatch, evolution: Evolution) -> dict:
    """Distance of boundary seeds to their exact images at every checkpoint.

    Outer seeds ``R0 e^{i theta}`` should sit at ``t R0 e^{i theta}``; hole seeds
    ``a_i + R_i e^{i theta}`` at ``z_i(t) + r_i(t) e^{i theta}``.
    """
    lab = batch.labels
    b = lab >= 0
    per = []
    if not b.any():
        return {"max_error": 0.0, "per_checkpoint": [], "max_projection": batch.boundary_deviation}
    x0 = batch.seeds[b]
    l0 = lab[b]
    c1, r1 = _circle(evolution, 1.0, l0)
    e = (x0 - c1) / r1
    for t, pos in zip(batch.times, batch.positions):
        c, r = _circle(evolution, t, l0)
        per.append(float(np.abs(pos[b] - (c + r * e)).max()))
    return {"max_error": max(per), "per_checkpoint": per, "max_projection": batch.boundary_deviation}


def incompressibility_report(batch: TrajectoryBatch, tol: float | None = None) -> dict:
    tol = batch.options.tol_det if tol is None else tol
    err = np.abs(batch.det - 1.0)
    per = err.max(axis=1) if err.size else np.zeros(len(batch.times))
    worst = float(per.max()) if per.size else 0.0
    return {
        "max_det_error": worst,
        "per_checkpoint": [float(p) for p in per],
        "mean_det_error": float(err.mean()) if err.size else 0.0,
        "tol": tol,
        "passed": worst <= tol,
    }


def injectivity_probe(batch: TrajectoryBatch, threshold: float = 1e-3, max_seeds: int = 4000) -> dict:
    """Compare image and seed distances over all pairs; small ratios hint at folds."""
    K = len(batch.seeds)
    if K < 2:
        raise ValueError("need at least two seeds")
    idx = np.arange(K)
    if K > max_seeds:
        idx = np.linspace(0, K - 1, max_seeds).round().astype(int)
    x = batch.seeds[idx]
    y = batch.final[idx]
    dx = pdist(np.stack([x.real, x.imag], axis=-1))
    dy = pdist(np.stack([y.real, y.imag], axis=-1))
    keep = dx > 0
    ratio = dy[keep] / dx[keep]
    flags = int((ratio < threshold).sum())
    return {
        "min_seed_distance": float(dx[keep].min()),
        "min_image_distance": float(dy[keep].min()),
        "min_ratio": float(ratio.min()),
        "flags": flags,
        "passed": flags == 0,
    }


def decay_check(batch: TrajectoryBatch, C: float | None = None, slack: float = 0.01) -> dict:
    """Check that ``exp(-C t) sum |F|^2`` does not increase between checkpoints.

    Since ``d/dt |F|^2 = 2 F : (Dv F) <= 2 |Dv|_op |F|^2``, the default rate is
    twice the largest spectral norm of ``Dv`` met along the trajectories.
    """
    if C is None:
        C = 2.0 * batch.grad_sup
    S = (batch.gradients**2).sum(axis=(1, 2, 3))
    # in logs, since exp(-C t) underflows for stiff fields
    logg = np.log(S) - C * (batch.times - batch.times[0])
    worst = float(np.exp(np.diff(logg).max())) if len(logg) > 1 else 1.0
    return {
        "C": float(C),
        "weighted": [float(v) for v in np.exp(logg)],
        "log_weighted": [float(v) for v in logg],
        "max_ratio": worst,
        "slack": slack,
        "passed": worst <= 1.0 + slack,
    }
