"""Time integration of Stuart-Landau, pumped Stuart-Landau and Kuramoto networks.

Stuart-Landau states are integrated in Cartesian (complex) form::

    dpsi_n/dt = [P_n - i*omega_n - |psi_n|^2] psi_n + sum_m J[n, m] psi_m

with ``P_n = 0`` unless feedback pumping is active, in which case
``dP_n/dt = epsilon * (rho_t - |psi_n|)``. Kuramoto phases follow
``dtheta_n/dt = omega_n + sum_m J[n, m] sin(theta_m - theta_n)``.

Every integrator works on a batch of independent networks at once; the
single-network functions are thin wrappers around :func:`simulate_batch`.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.integrate import RK45

from .errors import DivergenceError, InvalidArgumentError
from .graphs import STREAM_INITIAL, NetworkSpec, TriadEmbedding, rng_stream

__all__ = [
    "Method",
    "SimConfig",
    "FeedbackConfig",
    "Trajectory",
    "BatchTrajectory",
    "Coupling",
    "initial_state",
    "initial_phases",
    "sl_rhs",
    "polar_rhs",
    "kuramoto_rhs",
    "stable_dt",
    "default_t_end",
    "simulate_batch",
    "integrate_sl",
    "integrate_sl_feedback",
    "integrate_kuramoto",
    "detect_steady",
    "write_trajectory_csv",
]


class Method(str, enum.Enum):
    FIXED_RK4 = "rk4"
    ADAPTIVE_RK45 = "rk45"


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings.

    For ``rk4`` a sample is recorded every ``record_stride`` steps. For
    ``rk45`` samples are taken from the dense output on the uniform grid
    ``k * dt * record_stride`` so that runs with different step sequences
    share a time grid. ``keep_last`` bounds memory by retaining only the
    most recent samples; ``stop_on_steady`` ends the run at the first sample
    where every network in the batch is steady.
    """

    dt: float = 0.01
    t_end: float = 50.0
    method: Method = Method.ADAPTIVE_RK45
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    record_stride: int = 1
    steady_tol: float = 1e-6
    init_amplitude: float = 1e-3
    keep_last: Optional[int] = None
    stop_on_steady: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if not (self.dt > 0 and self.t_end > 0 and self.dt < self.t_end):
            raise InvalidArgumentError(f"need 0 < dt < t_end, got dt={self.dt}, t_end={self.t_end}")
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.steady_tol > 0):
            raise InvalidArgumentError("tolerances must be positive")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise InvalidArgumentError("record_stride must be a positive integer")
        if not self.init_amplitude > 0:
            raise InvalidArgumentError("init_amplitude must be positive")
        if self.keep_last is not None and self.keep_last < 1:
            raise InvalidArgumentError("keep_last must be positive")

    def replace(self, **changes) -> SimConfig:
        return replace(self, **changes)


@dataclass(frozen=True)
class FeedbackConfig:
    """Pump feedback rate and target amplitude.

    ``rho_target=None`` selects the running-max target: at every instant
    the target is the largest current amplitude in the network.
    """

    epsilon: float = 0.04
    rho_target: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.epsilon >= 0:
            raise InvalidArgumentError("epsilon must be non-negative")
        if self.rho_target is not None and not self.rho_target > 0:
            raise InvalidArgumentError("a fixed rho_target must be positive")

    @property
    def running_max(self) -> bool:
        return self.rho_target is None


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    pumps: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None
    reached_steady: bool = False
    steady_index: Optional[int] = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states)
        if self.states.ndim != 2 or self.states.shape[0] != self.times.shape[0]:
            raise InvalidArgumentError("states must have shape (len(times), N)")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("times must be strictly increasing")

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.states)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.abs(self.states)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_phases(self) -> np.ndarray:
        return np.angle(self.states[-1])


@dataclass
class BatchTrajectory:
    """Recorded samples of ``B`` networks integrated side by side.

    ``states`` has shape ``(T, B, M)`` and ``residuals`` ``(T, B)``.
    """

    times: np.ndarray
    states: np.ndarray
    pumps: Optional[np.ndarray]
    residuals: np.ndarray
    steady_tol: float

    @property
    def batch_size(self) -> int:
        return self.states.shape[1]

    def member(self, b: int) -> Trajectory:
        res = self.residuals[:, b]
        idx = _steady_from_residuals(res, self.steady_tol)
        return Trajectory(
            times=self.times,
            states=self.states[:, b, :],
            pumps=None if self.pumps is None else self.pumps[:, b, :],
            residuals=res,
            reached_steady=idx is not None,
            steady_index=idx,
        )

    def steady_indices(self) -> list[Optional[int]]:
        return [_steady_from_residuals(self.residuals[:, b], self.steady_tol) for b in range(self.batch_size)]


# -- couplings ----------------------------------------------------------------


MatrixLike = Union[np.ndarray, sp.spmatrix, sp.sparray, NetworkSpec, TriadEmbedding]


def _as_matrix(m: MatrixLike):
    if isinstance(m, NetworkSpec):
        return m.couplings
    if isinstance(m, TriadEmbedding):
        return m.couplings
    if sp.issparse(m):
        return sp.csr_array(m)
    return np.asarray(m, dtype=np.float64)


class Coupling:
    """Applies one coupling matrix per batch member (or one shared by all) to ``(B, M)`` states."""

    def __init__(self, matrices: Union[MatrixLike, Sequence[MatrixLike]], batch_size: int):
        if isinstance(matrices, (list, tuple)):
            mats = [_as_matrix(m) for m in matrices]
        else:
            mats = [_as_matrix(matrices)]
        M = mats[0].shape[0]
        for m in mats:
            if m.shape != (M, M):
                raise InvalidArgumentError("all coupling matrices must be square and equally sized")
            diff = m - m.T
            asym = abs(diff).max() if sp.issparse(diff) else np.abs(diff).max()
            if asym > 0:
                raise InvalidArgumentError("coupling matrix must be symmetric")
        if len(mats) not in (1, batch_size):
            raise InvalidArgumentError(f"got {len(mats)} coupling matrices for a batch of {batch_size}")
        self.size = M
        self.batch_size = batch_size
        self.row_abs_sum = max(float(np.max(abs(m).sum(axis=1))) for m in mats)
        nnz = sum(m.nnz if sp.issparse(m) else np.count_nonzero(m) for m in mats)
        sparse = nnz < 0.1 * len(mats) * M * M
        if len(mats) == 1:
            m = mats[0]
            if sparse:
                self._mat = sp.csr_array(m)
                self._apply = self._shared_sparse
            else:
                self._mat = m.toarray() if sp.issparse(m) else m
                self._apply = self._shared_dense
        elif sparse:
            self._mat = sp.csr_array(sp.block_diag([sp.csr_array(m) for m in mats], format="csr"))
            self._apply = self._block_sparse
        else:
            self._mat = np.stack([m.toarray() if sp.issparse(m) else m for m in mats])
            self._apply = self._stacked_dense

    def _shared_dense(self, x):
        return x @ self._mat

    def _shared_sparse(self, x):
        return (self._mat @ x.T).T

    def _block_sparse(self, x):
        return (self._mat @ x.reshape(-1)).reshape(x.shape)

    def _stacked_dense(self, x):
        return np.matmul(self._mat, x[..., None])[..., 0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._apply(x)


# -- right-hand sides ---------------------------------------------------------


def _sl_deriv(psi, omega, coupled, pump=None):
    gain = -(psi.real**2 + psi.imag**2)
    if pump is not None:
        gain = pump + gain
    return (gain - 1j * omega) * psi + coupled


def sl_rhs(psi, couplings, omega, pump=None) -> np.ndarray:
    """Cartesian right-hand side for a single state vector ``psi``."""
    J = _as_matrix(couplings)
    psi = np.asarray(psi, dtype=np.complex128)
    return _sl_deriv(psi, np.asarray(omega, dtype=np.float64), J @ psi, pump)


def polar_rhs(rho, theta, couplings, omega) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude and phase velocities of the same flow written in polar form.

    The phase equation carries ``-omega_n`` because the Cartesian form rotates
    each free oscillator as ``exp(-i omega_n t)``.
    """
    J = np.asarray(_as_matrix(couplings).toarray() if sp.issparse(couplings) else _as_matrix(couplings))
    rho = np.asarray(rho, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    dphase = theta[None, :] - theta[:, None]  # theta_m - theta_n
    drho = -(rho**3) + (J * rho[None, :] * np.cos(dphase)).sum(axis=1)
    dtheta = -np.asarray(omega) + (J * (rho[None, :] / rho[:, None]) * np.sin(dphase)).sum(axis=1)
    return drho, dtheta


def kuramoto_rhs(theta, couplings, omega) -> np.ndarray:
    J = _as_matrix(couplings)
    z = np.exp(1j * np.asarray(theta, dtype=np.float64))
    return np.asarray(omega) + np.imag(np.conj(z) * (J @ z))


def _corotating_residual(psi, dpsi):
    w = psi.real**2 + psi.imag**2
    tot = w.sum(axis=-1, keepdims=True)
    num = np.imag(np.conj(psi) * dpsi).sum(axis=-1, keepdims=True)
    omega_hat = np.divide(num, tot, out=np.zeros_like(num), where=tot > 0)
    return np.abs(dpsi - 1j * omega_hat * psi).max(axis=-1)


class _Model:
    """Bundles a vector field with its state packing and steady-state residual."""

    def __init__(self, kind: str, coupling: Coupling, omega: np.ndarray, feedback: Optional[FeedbackConfig]):
        self.kind = kind
        self.coupling = coupling
        self.omega = omega
        self.feedback = feedback
        self.M = coupling.size

    def deriv(self, y):
        if self.kind == "sl":
            return _sl_deriv(y, self.omega, self.coupling(y))
        if self.kind == "kuramoto":
            z = np.exp(1j * y)
            return self.omega + np.imag(np.conj(z) * self.coupling(z))
        M = self.M
        psi, pump = y[:, :M], y[:, M:].real
        dpsi = _sl_deriv(psi, self.omega, self.coupling(psi), pump)
        rho = np.abs(psi)
        fb = self.feedback
        target = rho.max(axis=1, keepdims=True) if fb.running_max else fb.rho_target
        dpump = fb.epsilon * (target - rho)
        return np.concatenate([dpsi, dpump.astype(np.complex128)], axis=1)

    def residual(self, y, dy):
        if self.kind == "sl":
            return _corotating_residual(y, dy)
        if self.kind == "kuramoto":
            return np.abs(dy - dy.mean(axis=-1, keepdims=True)).max(axis=-1)
        M = self.M
        r = _corotating_residual(y[:, :M], dy[:, :M])
        return np.maximum(r, np.abs(dy[:, M:]).max(axis=-1))

    def split(self, y):
        """Recorded (states, pumps) from a packed state."""
        if self.kind == "sl":
            return y.copy(), None
        if self.kind == "kuramoto":
            return np.exp(1j * y), None
        return y[:, : self.M].copy(), y[:, self.M :].real.copy()


def stable_dt(row_abs_sum: float, max_frequency: float = 0.0, kind: str = "sl", max_pump: float = 0.0) -> float:
    """Largest fixed RK4 step that is stable for any reachable state.

    Steady amplitudes obey ``rho^2 <= S + P`` with ``S`` the largest absolute
    row sum of the coupling matrix, bounding the Jacobian norm by
    ``|omega| + 4 (S + P)``; 2.5 keeps inside RK4's stability region.
    """
    S = float(row_abs_sum) + max(0.0, float(max_pump))
    if kind == "kuramoto":
        bound = 2.0 * S
    else:
        bound = abs(max_frequency) + 4.0 * S
    return math.inf if bound == 0 else 2.5 / bound


def default_t_end(*coupling_scales: float) -> float:
    """``50 / min(1, smallest scale)``: long against every coupling time scale."""
    scales = [abs(s) for s in coupling_scales if s]
    return 50.0 / min([1.0] + scales)


# -- integration loops --------------------------------------------------------


class _Recorder:
    def __init__(self, model: _Model, keep_last: Optional[int]):
        self.model = model
        self.times = deque(maxlen=keep_last)
        self.states = deque(maxlen=keep_last)
        self.pumps = deque(maxlen=keep_last)
        self.residuals = deque(maxlen=keep_last)

    def record(self, t: float, y, dy=None) -> np.ndarray:
        if dy is None:
            dy = self.model.deriv(y)
        res = self.model.residual(y, dy)
        states, pumps = self.model.split(y)
        self.times.append(t)
        self.states.append(states)
        self.pumps.append(pumps)
        self.residuals.append(res)
        return res

    def result(self, steady_tol: float) -> BatchTrajectory:
        pumps = None if self.pumps[0] is None else np.stack(self.pumps)
        return BatchTrajectory(
            times=np.array(self.times),
            states=np.stack(self.states),
            pumps=pumps,
            residuals=np.stack(self.residuals),
            steady_tol=steady_tol,
        )


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        bad = np.flatnonzero(~np.all(np.isfinite(y), axis=1)).tolist()
        raise DivergenceError(f"non-finite state at t={t:.6g} in batch members {bad}", time=t, members=bad)


def _run_rk4(model: _Model, y0, cfg: SimConfig) -> BatchTrajectory:
    n_steps = max(1, math.ceil(cfg.t_end / cfg.dt - 1e-9))
    h = cfg.t_end / n_steps
    rec = _Recorder(model, cfg.keep_last)
    f = model.deriv
    y = y0
    k1 = f(y)
    res = rec.record(0.0, y, k1)
    if cfg.stop_on_steady and np.all(res < cfg.steady_tol):
        return rec.result(cfg.steady_tol)
    for step in range(1, n_steps + 1):
        k2 = f(y + (0.5 * h) * k1)
        k3 = f(y + (0.5 * h) * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = step * h
        _check_finite(y, t)
        k1 = f(y)
        if step % cfg.record_stride == 0 or step == n_steps:
            res = rec.record(t, y, k1)
            if cfg.stop_on_steady and np.all(res < cfg.steady_tol):
                break
    return rec.result(cfg.steady_tol)


def _run_rk45(model: _Model, y0, cfg: SimConfig) -> BatchTrajectory:
    shape = y0.shape
    f = model.deriv

    def fun(t, yflat):
        return f(yflat.reshape(shape)).reshape(-1)

    solver = RK45(
        fun, 0.0, y0.reshape(-1), cfg.t_end,
        rtol=cfg.rel_tol, atol=cfg.abs_tol, first_step=min(cfg.dt, cfg.t_end),
    )
    spacing = cfg.dt * cfg.record_stride
    rec = _Recorder(model, cfg.keep_last)
    res = rec.record(0.0, y0)
    if cfg.stop_on_steady and np.all(res < cfg.steady_tol):
        return rec.result(cfg.steady_tol)
    k = 1
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise DivergenceError(f"adaptive step failed at t={solver.t:.6g}: {msg}", time=solver.t)
        _check_finite(solver.y.reshape(shape), solver.t)
        interp = None
        stop = False
        while True:
            tk = k * spacing
            if tk > solver.t + 1e-12 * spacing or tk >= cfg.t_end - 1e-12 * spacing:
                break
            if interp is None:
                interp = solver.dense_output()
            res = rec.record(tk, interp(tk).reshape(shape))
            k += 1
            if cfg.stop_on_steady and np.all(res < cfg.steady_tol):
                stop = True
                break
        if stop:
            break
        if solver.status == "finished":
            rec.record(cfg.t_end, solver.y.reshape(shape))
    return rec.result(cfg.steady_tol)


def simulate_batch(
    model: str,
    couplings,
    frequencies,
    initial,
    config: SimConfig,
    feedback: Optional[FeedbackConfig] = None,
) -> BatchTrajectory:
    """Integrate ``B`` independent networks in lock step.

    ``model`` is ``"sl"``, ``"sl-feedback"`` or ``"kuramoto"``. ``couplings``
    is one matrix shared by the batch or a sequence of ``B`` matrices;
    ``frequencies`` has shape ``(B, M)`` (or ``(M,)``); ``initial`` holds
    complex states for the Stuart-Landau models and phases for Kuramoto.
    Pumps start at zero.
    """
    initial = np.atleast_2d(np.asarray(initial))
    B, M = initial.shape
    omega = np.broadcast_to(np.asarray(frequencies, dtype=np.float64), (B, M))
    coupling = Coupling(couplings, B)
    if coupling.size != M:
        raise InvalidArgumentError(f"coupling size {coupling.size} does not match state size {M}")
    if model == "sl":
        y0 = initial.astype(np.complex128)
        m = _Model("sl", coupling, omega, None)
    elif model == "sl-feedback":
        if feedback is None:
            raise InvalidArgumentError("sl-feedback needs a FeedbackConfig")
        y0 = np.concatenate([initial.astype(np.complex128), np.zeros((B, M), np.complex128)], axis=1)
        m = _Model("feedback", coupling, omega, feedback)
    elif model == "kuramoto":
        if np.iscomplexobj(initial):
            raise InvalidArgumentError("Kuramoto initial conditions are real phases")
        y0 = initial.astype(np.float64)
        m = _Model("kuramoto", coupling, omega, None)
    else:
        raise InvalidArgumentError(f"unknown model {model!r}")
    # overflow on the way to a non-finite state is reported as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        if config.method is Method.FIXED_RK4:
            return _run_rk4(m, y0, config)
        return _run_rk45(m, y0, config)


# -- single-network entry points ---------------------------------------------


def initial_phases(n: int, seed: int) -> np.ndarray:
    """Uniform phases on [0, 2pi) from the initial-condition stream of ``seed``."""
    return rng_stream(seed, STREAM_INITIAL).uniform(0.0, 2.0 * np.pi, int(n))


def initial_state(n: int, seed: int, amplitude: float = 1e-3) -> np.ndarray:
    """Near-vacuum start: amplitude ``amplitude`` with uniform random phases."""
    return amplitude * np.exp(1j * initial_phases(n, seed))


def _network_parts(net, frequencies):
    if isinstance(net, NetworkSpec):
        J = net.couplings
        w = net.frequencies if frequencies is None else frequencies
    else:
        J = _as_matrix(net)
        w = np.zeros(J.shape[0]) if frequencies is None else frequencies
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (J.shape[0],):
        raise InvalidArgumentError(f"expected {J.shape[0]} frequencies, got {w.shape}")
    return J, w


def _single(model, net, config, seed, frequencies, initial, feedback=None) -> Trajectory:
    config = config or SimConfig()
    J, w = _network_parts(net, frequencies)
    n = J.shape[0]
    if initial is None:
        if model == "kuramoto":
            initial = initial_phases(n, seed)
        else:
            initial = initial_state(n, seed, config.init_amplitude)
    batch = simulate_batch(model, J, w[None, :], np.asarray(initial)[None, :], config, feedback)
    return batch.member(0)


def integrate_sl(net, config: SimConfig = None, seed: int = 0, *, frequencies=None, psi0=None) -> Trajectory:
    """Integrate a Stuart-Landau network from a near-vacuum random start.

    ``net`` may be a :class:`NetworkSpec`, a :class:`TriadEmbedding` or a bare
    (dense or sparse) symmetric matrix. Frequencies default to those of the
    ``NetworkSpec`` (zero otherwise); ``psi0`` overrides the seeded start.
    """
    return _single("sl", net, config, seed, frequencies, psi0)


def integrate_sl_feedback(
    net, config: SimConfig = None, fb: FeedbackConfig = None, seed: int = 0, *, frequencies=None, psi0=None
) -> Trajectory:
    return _single("sl-feedback", net, config, seed, frequencies, psi0, fb or FeedbackConfig())


def integrate_kuramoto(net, config: SimConfig = None, seed: int = 0, *, frequencies=None, theta0=None) -> Trajectory:
    """Integrate the Kuramoto phase model; states are stored as unit phasors."""
    return _single("kuramoto", net, config, seed, frequencies, theta0)


def _steady_from_residuals(res: np.ndarray, tol: float) -> Optional[int]:
    res = np.asarray(res)
    if res.size == 0:
        return None
    above = np.flatnonzero(~(res < tol))
    if above.size == 0:
        return 0
    idx = int(above[-1]) + 1
    return idx if idx < res.size else None


def detect_steady(traj: Trajectory, steady_tol: float) -> Optional[int]:
    """Earliest sample index from which the co-rotating residual stays below ``steady_tol``.

    Uses the residuals recorded during integration; for hand-built
    trajectories without them the derivative is estimated by finite
    differences of the recorded states.
    """
    if traj.times.size == 0:
        raise InvalidArgumentError("empty trajectory")
    res = traj.residuals
    if res is None:
        if traj.times.size == 1:
            res = np.zeros(1) if np.all(np.isfinite(traj.states)) else np.full(1, np.inf)
        else:
            with np.errstate(invalid="ignore", over="ignore"):
                dpsi = np.gradient(traj.states, traj.times, axis=0)
                res = _corotating_residual(traj.states, dpsi)
                if traj.pumps is not None:
                    dp = np.gradient(traj.pumps, traj.times, axis=0)
                    res = np.maximum(res, np.abs(dp).max(axis=-1))
        res = np.where(np.isfinite(res), res, np.inf)
    return _steady_from_residuals(res, steady_tol)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.states.shape[1]
    header = ["t"]
    for i in range(n):
        header += [f"re_psi_{i}", f"im_psi_{i}"]
    if traj.pumps is not None:
        header += [f"P_{i}" for i in range(n)]
    with open(Path(path), "w", newline="") as fh:
        fh.write("# format_version 1\n")
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [repr(float(t))]
            for z in traj.states[k]:
                row += [repr(float(z.real)), repr(float(z.imag))]
            if traj.pumps is not None:
                row += [repr(float(p)) for p in traj.pumps[k]]
            w.writerow(row)
