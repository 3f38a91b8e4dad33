"""Coherence order parameters, XY energies, phase RMSE, winding numbers and error ratios.

All XY energies use the unrestricted double sum over ordered pairs, so
every unordered pair contributes twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UndefinedRatioError
from .graphs import NetworkSpec, TriadEmbedding, chain_phasors, unembed_phases

__all__ = [
    "CoherenceReport",
    "EnergyReport",
    "WindingReport",
    "wrap_phase",
    "coherence_complete",
    "coherence_triad",
    "xy_energy",
    "unembedded_energy",
    "embedded_energy",
    "energy_report",
    "rmse_eta",
    "winding_number",
    "error_ratio",
    "energy_difference_half",
    "amplitude_spread",
]


@dataclass(frozen=True)
class CoherenceReport:
    r_complete: float
    r_inter: float = float("nan")
    r_intra: float = float("nan")
    per_chain_r: np.ndarray = None


@dataclass(frozen=True)
class EnergyReport:
    h_xy: float = float("nan")
    h_unemb: float = float("nan")
    h_emb: float = float("nan")


@dataclass(frozen=True)
class WindingReport:
    ell: int

    @property
    def is_twisted(self) -> bool:
        return self.ell != 0


def wrap_phase(x):
    """Wrap angles into (-pi, pi]."""
    y = np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), 2.0 * np.pi)
    return y if np.ndim(y) else float(y)


def coherence_complete(phases) -> float:
    phases = np.asarray(phases, dtype=np.float64)
    if phases.size == 0:
        raise InvalidArgumentError("coherence of an empty phase vector is undefined")
    return float(min(1.0, np.abs(np.exp(1j * phases).mean())))


def coherence_triad(embedding: TriadEmbedding, phases) -> CoherenceReport:
    """Inter-chain coherence of the unembedded phases and mean intra-chain coherence.

    ``r_complete`` of the report is the coherence over all triad oscillators.
    """
    phases = np.asarray(phases, dtype=np.float64)
    z = chain_phasors(embedding, phases)
    per_chain = np.minimum(np.abs(z), 1.0)
    theta_bar = np.angle(z)
    return CoherenceReport(
        r_complete=coherence_complete(phases),
        r_inter=coherence_complete(theta_bar),
        r_intra=float(per_chain.mean()),
        per_chain_r=per_chain,
    )


def _couplings(net) -> np.ndarray:
    if isinstance(net, NetworkSpec):
        return net.couplings
    return np.asarray(net, dtype=np.float64)


def xy_energy(net, phases) -> float:
    """``-sum_{n,m} J[n, m] cos(theta_n - theta_m)`` over ordered pairs."""
    J = _couplings(net)
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != (J.shape[0],):
        raise InvalidArgumentError(f"expected {J.shape[0]} phases, got shape {phases.shape}")
    z = np.exp(1j * phases)
    return float(-np.real(np.conj(z) @ (J @ z)))


def unembedded_energy(embedding: TriadEmbedding, source, phases) -> float:
    return xy_energy(source, unembed_phases(embedding, phases))


def embedded_energy(embedding: TriadEmbedding, source, phases) -> float:
    """XY energy read off the inter-chain edges, each source pair counted twice."""
    J = _couplings(source)
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != (embedding.n_vertices,):
        raise InvalidArgumentError(f"expected {embedding.n_vertices} triad phases, got {phases.shape}")
    if J.shape[0] != embedding.source_n:
        raise InvalidArgumentError("source graph does not match the embedding")
    n, m = embedding.inter_pairs.T
    a, b = embedding.inter_vertices.T
    return float(-2.0 * np.sum(J[n, m] * np.cos(phases[a] - phases[b])))


def energy_report(embedding: TriadEmbedding | None, source, phases) -> EnergyReport:
    if embedding is None:
        return EnergyReport(h_xy=xy_energy(source, phases))
    return EnergyReport(
        h_unemb=unembedded_energy(embedding, source, phases),
        h_emb=embedded_energy(embedding, source, phases),
    )


def _window_phases(traj, window):
    states = traj.states if hasattr(traj, "states") else np.asarray(traj)
    return np.angle(states[-window:])


def rmse_eta(complete_traj, triad_traj, embedding: TriadEmbedding, window: int = 200) -> float:
    """Gauge-invariant RMSE between complete-graph and unembedded triad phase differences.

    Uses the last ``window`` recorded samples of both trajectories, which
    must share their time stamps. The normalisation ``1/(N(N-1)T)`` sits
    outside the square root, ``T`` being the number of samples used.
    """
    if window < 1:
        raise InvalidArgumentError("window must be positive")
    tc, tt = np.asarray(complete_traj.times), np.asarray(triad_traj.times)
    if tc.size < window or tt.size < window:
        raise InvalidArgumentError(
            f"need at least {window} samples, got {tc.size} (complete) and {tt.size} (triad)"
        )
    if not np.allclose(tc[-window:], tt[-window:], rtol=1e-12, atol=1e-12):
        raise InvalidArgumentError("complete and triad trajectories are on different time grids")
    theta = _window_phases(complete_traj, window)
    N = theta.shape[1]
    if N != embedding.source_n:
        raise InvalidArgumentError("complete trajectory size does not match the embedding")
    theta_bar = unembed_phases(embedding, _window_phases(triad_traj, window))
    return eta_from_phases(theta, theta_bar)


def eta_from_phases(theta: np.ndarray, theta_bar: np.ndarray) -> float:
    """The RMSE of :func:`rmse_eta` from aligned ``(T, N)`` phase histories."""
    T, N = theta.shape
    n, m = np.triu_indices(N, k=1)
    d = theta[:, n] - theta[:, m]
    d_bar = theta_bar[:, n] - theta_bar[:, m]
    s = (np.cos(d) - np.cos(d_bar)) ** 2 + (np.sin(d) - np.sin(d_bar)) ** 2
    return float(np.sqrt(s.sum()) / (N * (N - 1) * T))


def winding_number(phases) -> WindingReport:
    """Net phase winding around a loop, in units of 2pi."""
    phases = np.asarray(phases, dtype=np.float64)
    if phases.size < 3:
        raise InvalidArgumentError("a loop needs at least 3 phases")
    steps = wrap_phase(np.roll(phases, -1) - phases)
    return WindingReport(int(np.rint(steps.sum() / (2.0 * np.pi))))


def error_ratio(e_reference: float, e_candidate: float) -> float:
    """``(E_ref - E_cand) / E_ref``: positive when the candidate is worse than a negative reference."""
    if e_reference == 0:
        raise UndefinedRatioError("error ratio against a zero reference energy")
    return (e_reference - e_candidate) / e_reference


def energy_difference_half(e_reference: float, e_candidate: float) -> float:
    """``(E_ref - E_cand) / (2 E_ref)``; equals 1 when ``E_cand == -E_ref``."""
    if e_reference == 0:
        raise UndefinedRatioError("energy difference against a zero reference energy")
    return (e_reference - e_candidate) / (2.0 * e_reference)


def amplitude_spread(state) -> float:
    rho = np.abs(np.asarray(state))
    return float(rho.max() - rho.min())
