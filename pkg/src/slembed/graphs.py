"""Coupling graphs and the complete-graph to triad minor embedding.

Triad layout: chain ``n`` of an embedded ``K_N`` occupies triad vertices
``n*(N-1) .. n*(N-1)+N-2``. The inter-chain edge carrying ``J[n, m]``
(``n < m``) joins position ``m-1`` of chain ``n`` to position ``n`` of
chain ``m``, so every chain position carries exactly one inter-chain edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateEmbeddingError, InvalidArgumentError, ValidationError

__all__ = [
    "NetworkSpec",
    "UniformInterval",
    "ConstantFM",
    "NormalMeanStd",
    "WeightDistribution",
    "TriadEmbedding",
    "RingSpec",
    "STREAM_WEIGHTS",
    "STREAM_FREQUENCIES",
    "STREAM_INITIAL",
    "rng_stream",
    "build_complete",
    "build_ring",
    "embed_triad",
    "triad_frequencies",
    "unembed_phases",
    "write_graph",
    "read_graph",
    "format_graph",
    "parse_graph",
    "write_sidecar",
    "read_sidecar",
    "GRAPH_FORMAT_VERSION",
]

GRAPH_FORMAT_VERSION = 1

# Per-purpose random streams split off one master seed.
STREAM_WEIGHTS = 0
STREAM_FREQUENCIES = 1
STREAM_INITIAL = 2


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one purpose (weights, frequencies, initial state) of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(stream,))
    return np.random.default_rng(ss)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkSpec:
    """Symmetric coupling matrix with zero diagonal plus natural frequencies."""

    couplings: np.ndarray
    frequencies: np.ndarray = None

    def __post_init__(self) -> None:
        J = np.array(self.couplings, dtype=np.float64)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] < 1:
            raise InvalidArgumentError(f"couplings must be a square matrix, got shape {J.shape}")
        if not np.all(np.isfinite(J)):
            raise InvalidArgumentError("couplings must be finite")
        if not np.array_equal(J, J.T):
            raise InvalidArgumentError("couplings must be symmetric")
        if np.any(np.diag(J) != 0.0):
            raise InvalidArgumentError("couplings must have a zero diagonal")
        n = J.shape[0]
        if self.frequencies is None:
            w = np.zeros(n)
        else:
            w = np.array(self.frequencies, dtype=np.float64).reshape(-1)
            if w.shape != (n,):
                raise InvalidArgumentError(f"frequencies must have length {n}, got {w.shape[0]}")
        object.__setattr__(self, "couplings", _readonly(J))
        object.__setattr__(self, "frequencies", _readonly(w))

    @property
    def n_vertices(self) -> int:
        return self.couplings.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        """Nonzero edges ``(i, j, w)`` with ``i < j`` in lexicographic order."""
        iu, ju = np.triu_indices(self.n_vertices, k=1)
        w = self.couplings[iu, ju]
        keep = w != 0.0
        return [(int(i), int(j), float(x)) for i, j, x in zip(iu[keep], ju[keep], w[keep])]

    def with_frequencies(self, frequencies) -> NetworkSpec:
        return NetworkSpec(self.couplings, frequencies)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return np.array_equal(self.couplings, other.couplings) and np.array_equal(
            self.frequencies, other.frequencies
        )

    __hash__ = None


# -- weight distributions -----------------------------------------------------


@dataclass(frozen=True)
class UniformInterval:
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise InvalidArgumentError(f"UniformInterval requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def is_ferromagnetic(self) -> bool:
        return self.lo >= 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class ConstantFM:
    j: float = 1.0

    @property
    def is_ferromagnetic(self) -> bool:
        # negative constants are allowed but are not FM couplings
        return self.j > 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.j))


@dataclass(frozen=True)
class NormalMeanStd:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self) -> None:
        if self.std < 0:
            raise InvalidArgumentError("NormalMeanStd requires std >= 0")

    @property
    def is_ferromagnetic(self) -> bool:
        return self.std == 0.0 and self.mean > 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(size)


WeightDistribution = Union[UniformInterval, ConstantFM, NormalMeanStd]


def build_complete(n: int, dist: WeightDistribution, seed: int = 0) -> NetworkSpec:
    """Complete graph ``K_n`` with upper-triangle weights drawn from ``dist``.

    Weights are drawn in row-major upper-triangle order from the weights
    stream of ``seed``; frequencies are zero.
    """
    if int(n) != n or n < 2:
        raise InvalidArgumentError(f"complete graph needs n >= 2, got {n}")
    n = int(n)
    iu, ju = np.triu_indices(n, k=1)
    w = dist.sample(rng_stream(seed, STREAM_WEIGHTS), iu.size)
    J = np.zeros((n, n))
    J[iu, ju] = w
    J[ju, iu] = w
    return NetworkSpec(J)


@dataclass(frozen=True)
class RingSpec:
    """Ring of ``n_vertices`` with each vertex coupled to ``neighbor_count`` neighbours per side."""

    n_vertices: int
    neighbor_count: int = 1
    coupling: float = 1.0

    def __post_init__(self) -> None:
        if self.n_vertices < 3:
            raise InvalidArgumentError(f"a ring needs at least 3 vertices, got {self.n_vertices}")
        kmax = (self.n_vertices - 1) // 2
        if not 1 <= self.neighbor_count <= kmax:
            raise InvalidArgumentError(
                f"neighbor_count must be in [1, {kmax}] for N={self.n_vertices}, got {self.neighbor_count}"
            )

    @property
    def mu(self) -> float:
        """Fraction of the other vertices each vertex is coupled to."""
        return 2 * self.neighbor_count / (self.n_vertices - 1)


def build_ring(spec: RingSpec) -> NetworkSpec:
    n, k = spec.n_vertices, spec.neighbor_count
    J = np.zeros((n, n))
    idx = np.arange(n)
    for d in range(1, k + 1):
        J[idx, (idx + d) % n] = spec.coupling
        J[(idx + d) % n, idx] = spec.coupling
    return NetworkSpec(J)


# -- triad embedding ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TriadEmbedding:
    """Minor embedding of ``K_N`` into the triad graph.

    ``inter_pairs[p]`` is the source pair ``(n, m)`` with ``n < m`` and
    ``inter_vertices[p]`` the triad vertices ``(a, b)`` its weight sits on;
    pairs are in row-major upper-triangle order. ``couplings`` is a sparse
    CSR matrix of size ``N(N-1)``.
    """

    source_n: int
    j_c: float
    looped: bool
    chain_of: np.ndarray
    couplings: sp.csr_array
    inter_pairs: np.ndarray
    inter_vertices: np.ndarray
    source_weights: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.source_n * (self.source_n - 1)

    @property
    def chain_length(self) -> int:
        return self.source_n - 1

    @property
    def inter_edge_of(self) -> dict[tuple[int, int], tuple[int, int]]:
        return {
            (int(n), int(m)): (int(a), int(b))
            for (n, m), (a, b) in zip(self.inter_pairs, self.inter_vertices)
        }

    def chain(self, n: int) -> np.ndarray:
        """Triad vertex indices of chain ``n`` in chain-position order."""
        L = self.source_n - 1
        return np.arange(n * L, (n + 1) * L)

    def intra_edges(self) -> list[tuple[int, int, float]]:
        """Distinct intra-chain edges ``(a, b, w)`` with ``a < b``."""
        C = sp.triu(self.couplings, k=1).tocoo()
        same = self.chain_of[C.row] == self.chain_of[C.col]
        return sorted(
            (int(a), int(b), float(w)) for a, b, w in zip(C.row[same], C.col[same], C.data[same])
        )

    def dense(self) -> np.ndarray:
        return self.couplings.toarray()

    def to_network(self, frequencies=None) -> NetworkSpec:
        return NetworkSpec(self.dense(), frequencies)

    def source_network(self) -> NetworkSpec:
        """The complete graph this embedding was built from (zero frequencies)."""
        n = self.source_n
        J = np.zeros((n, n))
        J[self.inter_pairs[:, 0], self.inter_pairs[:, 1]] = self.source_weights
        J[self.inter_pairs[:, 1], self.inter_pairs[:, 0]] = self.source_weights
        return NetworkSpec(J)


def _triad_inter_layout(n: int) -> tuple[np.ndarray, np.ndarray]:
    L = n - 1
    iu, ju = np.triu_indices(n, k=1)
    a = iu * L + (ju - 1)
    b = ju * L + iu
    return np.column_stack([iu, ju]), np.column_stack([a, b])


def embed_triad(source: NetworkSpec, j_c: float, looped: bool = False) -> TriadEmbedding:
    """Expand every vertex of the complete graph ``source`` into an FM chain of length ``N-1``.

    Intra-chain edges carry ``j_c``; each source weight ``J[n, m]`` is carried
    by exactly one inter-chain edge. With ``looped`` the ends of each chain are
    joined; for ``N == 3`` that loop edge coincides with the single chain edge
    and the two are merged into one edge of weight ``2*j_c``.
    """
    if isinstance(source, np.ndarray):
        source = NetworkSpec(source)
    n = source.n_vertices
    if n < 3:
        raise DegenerateEmbeddingError(
            f"triad embedding needs N >= 3 (chains of length N-1 >= 2), got N={n}"
        )
    if not (j_c > 0 and math.isfinite(j_c)):
        raise InvalidArgumentError(f"j_c must be positive and finite, got {j_c}")

    L = n - 1
    M = n * L
    pairs, verts = _triad_inter_layout(n)
    w_src = source.couplings[pairs[:, 0], pairs[:, 1]].copy()

    rows, cols, vals = [verts[:, 0]], [verts[:, 1]], [w_src]
    starts = np.arange(n) * L
    for p in range(L - 1):
        rows.append(starts + p)
        cols.append(starts + p + 1)
        vals.append(np.full(n, float(j_c)))
    if looped:
        rows.append(starts)
        cols.append(starts + L - 1)
        vals.append(np.full(n, float(j_c)))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    # duplicate (r, c) entries are summed: that is the N=3 looped merge
    upper = sp.coo_array((v, (r, c)), shape=(M, M))
    C = (upper + upper.T).tocsr()
    C.sum_duplicates()
    C.sort_indices()

    chain_of = np.repeat(np.arange(n), L)
    return TriadEmbedding(
        source_n=n,
        j_c=float(j_c),
        looped=bool(looped),
        chain_of=_readonly(chain_of),
        couplings=C,
        inter_pairs=_readonly(pairs),
        inter_vertices=_readonly(verts),
        source_weights=_readonly(w_src),
    )


def triad_frequencies(n_triad_vertices: int, sigma: float, seed: int = 0) -> np.ndarray:
    """Independent N(0, sigma) natural frequencies from the frequency stream of ``seed``.

    Draws are ``sigma * z`` for a fixed standard-normal sequence ``z``, so the
    first ``k`` values do not depend on how many are requested and rescaling
    ``sigma`` keeps the same underlying draws.
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be non-negative, got {sigma}")
    z = rng_stream(seed, STREAM_FREQUENCIES).standard_normal(int(n_triad_vertices))
    return float(sigma) * z


def chain_phasors(embedding: TriadEmbedding, phases) -> np.ndarray:
    """Mean unit phasor of every chain; trailing axis of ``phases`` is the triad vertex."""
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape[-1] != embedding.n_vertices:
        raise InvalidArgumentError(
            f"expected {embedding.n_vertices} triad phases, got {phases.shape[-1]}"
        )
    z = np.exp(1j * phases)
    shape = phases.shape[:-1] + (embedding.source_n, embedding.chain_length)
    return z.reshape(shape).mean(axis=-1)


def unembed_phases(embedding: TriadEmbedding, phases) -> np.ndarray:
    """Circular mean phase of each chain, in chain order.

    Matches the arithmetic chain average whenever a chain's phases are
    tightly clustered, and stays correct across the +-pi branch cut.
    """
    return np.angle(chain_phasors(embedding, phases))


# -- text graph format --------------------------------------------------------


def format_graph(net: NetworkSpec, include_frequencies: bool | None = None) -> str:
    lines = [f"# format_version {GRAPH_FORMAT_VERSION}", f"N {net.n_vertices}"]
    lines += [f"{i} {j} {w!r}" for i, j, w in net.edges()]
    if include_frequencies is None:
        include_frequencies = bool(np.any(net.frequencies != 0.0))
    if include_frequencies:
        lines.append("OMEGA")
        lines += [repr(float(x)) for x in net.frequencies]
    return "\n".join(lines) + "\n"


def parse_graph(text: str, *, return_edges: bool = False):
    """Parse the text graph format.

    With ``return_edges`` also returns the set of ``(i, j)`` pairs listed in
    the file, so explicit zero-weight edges can be told apart from absent ones.
    """
    n = None
    edges: dict[tuple[int, int], float] = {}
    omega: list[float] = []
    in_omega = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if n is None:
                if len(tok) != 2 or tok[0] != "N":
                    raise ValidationError(f"line {lineno}: expected header 'N <n_vertices>'")
                n = int(tok[1])
                if n < 1:
                    raise ValidationError(f"line {lineno}: vertex count must be positive")
            elif tok == ["OMEGA"]:
                in_omega = True
            elif in_omega:
                if len(tok) != 1:
                    raise ValidationError(f"line {lineno}: expected one frequency per line")
                omega.append(float(tok[0]))
            else:
                if len(tok) != 3:
                    raise ValidationError(f"line {lineno}: expected '<i> <j> <w>'")
                i, j, w = int(tok[0]), int(tok[1]), float(tok[2])
                if not (0 <= i < j < n):
                    raise ValidationError(f"line {lineno}: need 0 <= i < j < {n}, got {i} {j}")
                if (i, j) in edges:
                    raise ValidationError(f"line {lineno}: duplicate edge {i} {j}")
                edges[(i, j)] = w
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"line {lineno}: {exc}") from None
    if n is None:
        raise ValidationError("missing 'N <n_vertices>' header")
    if omega and len(omega) != n:
        raise ValidationError(f"OMEGA section has {len(omega)} values, expected {n}")
    J = np.zeros((n, n))
    for (i, j), w in edges.items():
        J[i, j] = J[j, i] = w
    net = NetworkSpec(J, omega if omega else None)
    if return_edges:
        return net, set(edges)
    return net


def write_graph(net: NetworkSpec, path, include_frequencies: bool | None = None) -> None:
    Path(path).write_text(format_graph(net, include_frequencies))


def read_graph(path, *, return_edges: bool = False):
    return parse_graph(Path(path).read_text(), return_edges=return_edges)


def sidecar_dict(embedding: TriadEmbedding) -> dict:
    return {
        "format_version": GRAPH_FORMAT_VERSION,
        "source_n": embedding.source_n,
        "j_c": embedding.j_c,
        "looped": embedding.looped,
        "chain_of": embedding.chain_of.tolist(),
        "inter_edge_of": [
            [int(n), int(m), int(a), int(b)]
            for (n, m), (a, b) in zip(embedding.inter_pairs, embedding.inter_vertices)
        ],
    }


def write_sidecar(embedding: TriadEmbedding, path) -> None:
    Path(path).write_text(json.dumps(sidecar_dict(embedding), indent=1) + "\n")


def read_sidecar(path, triad: NetworkSpec) -> TriadEmbedding:
    """Rebuild a :class:`TriadEmbedding` from a sidecar and its triad graph file.

    Source weights are read back off the inter-chain edges of ``triad`` and the
    result is checked against a fresh embedding of that source.
    """
    try:
        d = json.loads(Path(path).read_text())
        n = int(d["source_n"])
        j_c = float(d["j_c"])
        looped = bool(d["looped"])
        inter = np.asarray(d["inter_edge_of"], dtype=np.int64).reshape(-1, 4)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed triad sidecar {path}: {exc}") from None
    if n < 3 or triad.n_vertices != n * (n - 1):
        raise ValidationError(
            f"sidecar source_n={n} does not match a triad graph of {triad.n_vertices} vertices"
        )
    J = np.zeros((n, n))
    for s, t, a, b in inter:
        J[s, t] = J[t, s] = triad.couplings[a, b]
    emb = embed_triad(NetworkSpec(J), j_c, looped)
    if not np.array_equal(emb.dense(), triad.couplings):
        raise ValidationError(f"triad graph does not match the embedding described by {path}")
    if not np.array_equal(emb.inter_pairs, inter[:, :2]) or not np.array_equal(
        emb.inter_vertices, inter[:, 2:]
    ):
        raise ValidationError(f"sidecar {path} uses a different inter-edge layout")
    return emb
