"""Reference minimizers for the XY Hamiltonian: basin hopping and an exhaustive grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import CostLimitError, InvalidArgumentError, NonConvergenceError
from .graphs import NetworkSpec

__all__ = [
    "BasinHoppingConfig",
    "OptimResult",
    "xy_gradient",
    "local_minimize",
    "basin_hopping",
    "brute_force_oracle",
]


@dataclass(frozen=True)
class BasinHoppingConfig:
    iterations: int = 1000
    step_scale: float = math.pi / 2
    local_tol: float = 1e-6
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise InvalidArgumentError("iterations must be a positive integer")
        if not (self.step_scale > 0 and self.local_tol > 0 and self.temperature >= 0):
            raise InvalidArgumentError("step_scale and local_tol must be positive, temperature non-negative")


@dataclass
class OptimResult:
    energy: float
    phases: np.ndarray
    iterations_used: int = 0
    local_minima_found: int = 1
    gradient_norm: float = 0.0


def _J(net) -> np.ndarray:
    return net.couplings if isinstance(net, NetworkSpec) else np.asarray(net, dtype=np.float64)


def xy_gradient(net, phases) -> np.ndarray:
    """``dH/dtheta_n = 2 sum_m J[n, m] sin(theta_n - theta_m)``."""
    J = _J(net)
    z = np.exp(1j * np.asarray(phases, dtype=np.float64))
    return 2.0 * np.imag(z * np.conj(J @ z))


def _energy_and_grad(J):
    def f(theta):
        z = np.exp(1j * theta)
        Jz = J @ z
        return -np.real(np.vdot(z, Jz)), 2.0 * np.imag(z * np.conj(Jz))

    return f


def local_minimize(net, start_phases, local_tol: float = 1e-6, max_restarts: int = 5) -> OptimResult:
    """Quasi-Newton (BFGS) descent until the gradient 2-norm is at most ``local_tol``.

    BFGS is restarted from its last iterate when it stalls on precision
    loss; :class:`NonConvergenceError` carries the best point if the restarts
    run out.
    """
    J = _J(net)
    x = np.asarray(start_phases, dtype=np.float64).copy()
    if x.shape != (J.shape[0],) or not np.all(np.isfinite(x)):
        raise InvalidArgumentError("start phases must be finite and match the graph size")
    f = _energy_and_grad(J)
    e, g = f(x)
    gnorm = float(np.linalg.norm(g))
    iters = 0
    for _ in range(max_restarts + 1):
        if gnorm <= local_tol:
            break
        res = minimize(f, x, jac=True, method="BFGS", options={"gtol": local_tol, "norm": 2, "maxiter": 200 * x.size})
        iters += int(res.nit)
        e1, g1 = f(res.x)
        if e1 <= e:
            x, e, g = res.x, e1, g1
            gnorm = float(np.linalg.norm(g))
    if gnorm > local_tol:
        best = OptimResult(float(e), x, iters, 1, gnorm)
        raise NonConvergenceError(f"gradient norm {gnorm:.3g} above {local_tol:g}", best)
    return OptimResult(float(e), x, iters, 1, gnorm)


def basin_hopping(net, config: BasinHoppingConfig = BasinHoppingConfig()) -> OptimResult:
    """Perturb, locally minimize, accept by Metropolis; return the best minimum seen.

    Phases move freely in R; periodicity is carried by the cosine.
    """
    J = _J(net)
    n = J.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed) & 0xFFFF_FFFF_FFFF_FFFF))
    current = local_minimize(J, rng.uniform(-np.pi, np.pi, n), config.local_tol)
    best = current
    found = 1
    for _ in range(config.iterations):
        trial_start = current.phases + rng.uniform(-config.step_scale, config.step_scale, n)
        u = rng.random()
        try:
            trial = local_minimize(J, trial_start, config.local_tol)
        except NonConvergenceError:
            continue
        found += 1
        dE = trial.energy - current.energy
        if dE <= 0 or (config.temperature > 0 and u < math.exp(-dE / config.temperature)):
            current = trial
        if trial.energy < best.energy:
            best = trial
    return OptimResult(best.energy, best.phases, config.iterations, found, best.gradient_norm)


def _grid_cost(n: int, points: int) -> int:
    return points ** (n - 1)


def brute_force_oracle(net, grid_points_per_angle: int = 72, max_evaluations: int = 200_000_000) -> OptimResult:
    """Exhaustive scan of the phase grid with ``theta_0 = 0``, then local polish of the best point."""
    J = _J(net)
    n = J.shape[0]
    G = int(grid_points_per_angle)
    if G < 2:
        raise InvalidArgumentError("need at least 2 grid points per angle")
    cost = _grid_cost(n, G)
    if n > 5:
        raise CostLimitError(
            f"brute force is limited to N <= 5; N={n} at {G} points per angle needs {cost:.3e} evaluations",
            cost,
        )
    if cost > max_evaluations:
        raise CostLimitError(f"grid scan needs {cost:.3e} evaluations (limit {max_evaluations:.1e})", cost)
    if n == 1:
        return OptimResult(0.0, np.zeros(1), 0, 1, 0.0)

    grid = 2.0 * np.pi * np.arange(G) / G
    iu, ju = np.triu_indices(n, k=1)
    w = J[iu, ju]
    best_e, best_idx = math.inf, None
    # enumerate theta_1 in the outer loop, the remaining free angles as one block
    rest = n - 2
    if rest > 0:
        mesh = np.stack(np.meshgrid(*([grid] * rest), indexing="ij"), axis=-1).reshape(-1, rest)
    else:
        mesh = np.zeros((1, 0))
    for i1, t1 in enumerate(grid):
        theta = np.empty((mesh.shape[0], n))
        theta[:, 0] = 0.0
        theta[:, 1] = t1
        theta[:, 2:] = mesh
        e = -2.0 * (np.cos(theta[:, iu] - theta[:, ju]) @ w)
        k = int(np.argmin(e))
        if e[k] < best_e:
            best_e, best_idx = float(e[k]), theta[k].copy()
    try:
        polished = local_minimize(J, best_idx, 1e-9)
    except NonConvergenceError as exc:  # stalled at round-off; the partial polish is still an improvement
        polished = exc.best
    if polished.energy > best_e:
        polished = OptimResult(best_e, best_idx, 0, 1, float(np.linalg.norm(xy_gradient(J, best_idx))))
    return OptimResult(polished.energy, polished.phases, cost, 1, polished.gradient_norm)
