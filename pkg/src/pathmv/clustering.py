"""Simulated-annealing clustering of assets under the similarity energy.

The energy of a partition ``C`` with ``K = |C| >= 2`` clusters is::

    E(C) = sum_i (1 - kappa / (K - 1) * sum_{X<Y in C_i} sim(X, Y))

Each temperature step proposes moving one asset to another cluster slot
and accepts it with the Metropolis rule. The hot loop runs in a compiled
kernel when available (``BACKEND == "cython"``) and otherwise in a pure
Python twin that produces bit-identical results.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _anneal_py
from ._anneal_py import NoLegalMove
from .similarity import SimilarityMatrix

_KERNELS = {"python": _anneal_py}
if not os.environ.get("PATHMV_PURE_PYTHON"):
    try:
        from . import _anneal as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        _KERNELS["cython"] = _compiled

BACKEND = "cython" if "cython" in _KERNELS else "python"

__all__ = [
    "AnnealConfig",
    "AnnealResult",
    "BACKEND",
    "NoLegalMove",
    "Partition",
    "anneal",
    "available_backends",
    "best_of_restarts",
    "energy",
    "n_temperature_steps",
    "perturb",
    "restart_seeds",
    "select_representatives",
]


def available_backends() -> list[str]:
    return sorted(_KERNELS)


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Cluster slot id per asset; ids run over ``0 .. k_max - 1``."""

    assignment: np.ndarray
    k_max: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1 or a.size == 0:
            raise PartitionError("assignment must be a non-empty 1-D array")
        if a.min() < 0 or a.max() >= self.k_max:
            raise PartitionError(f"cluster ids must lie in [0, {self.k_max})")
        object.__setattr__(self, "assignment", a)

    @property
    def n(self) -> int:
        return int(self.assignment.size)

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.assignment).size)

    def clusters(self) -> list[np.ndarray]:
        """Member indices of each nonempty cluster, ordered by cluster id."""
        return [np.flatnonzero(self.assignment == c) for c in np.unique(self.assignment)]

    def canonical(self) -> tuple[int, ...]:
        """Labels renumbered by first appearance; equal for equivalent partitions."""
        seen: dict[int, int] = {}
        return tuple(seen.setdefault(int(c), len(seen)) for c in self.assignment)

    def check_valid(self) -> None:
        if self.n_clusters < 2:
            raise PartitionError("a partition needs at least two nonempty clusters")


@dataclass(frozen=True)
class AnnealConfig:
    T0: float = 100.0
    Tf: float = 0.1
    alpha: float = 0.99
    kappa: float = 1e-4
    restarts: int = 100
    seed: int = 0
    k_max: int = 25
    max_tries: int = 64

    def __post_init__(self):
        if not 0 < self.Tf < self.T0:
            raise ValueError("need 0 < Tf < T0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")


@dataclass
class AnnealResult:
    partition: Partition
    energy: float
    trace: np.ndarray
    best_trace: np.ndarray
    final: Partition
    n_accepted: int
    restart: int = 0
    energies: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return int(self.trace.size)


def _matrix(S) -> np.ndarray:
    return np.asarray(S.values if isinstance(S, SimilarityMatrix) else S, dtype=float)


def energy(p: Partition, S, kappa: float) -> float:
    """Cluster energy; singleton clusters contribute exactly 1."""
    S = _matrix(S)
    K = p.n_clusters
    if K < 2:
        raise PartitionError("energy is undefined for fewer than two clusters")
    total = 0.0
    for members in p.clusters():
        block = S[np.ix_(members, members)]
        pair_sum = float(np.triu(block, k=1).sum())
        total += 1.0 - kappa / (K - 1) * pair_sum
    return total


def n_temperature_steps(cfg: AnnealConfig) -> int:
    """Number of proposals made by the geometric schedule ``T0 * alpha**l >= Tf``."""
    n, T = 0, cfg.T0
    while T >= cfg.Tf:
        n += 1
        T *= cfg.alpha
    return n


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(rng))


def _has_legal_move(p: Partition) -> bool:
    counts = np.bincount(p.assignment, minlength=p.k_max)
    K = int(np.count_nonzero(counts))
    return K >= 3 or counts.max() >= 2 or p.k_max > K


def perturb(p: Partition, rng, max_tries: int = 64) -> Partition:
    """Move one uniformly drawn asset to a uniformly drawn other cluster slot.

    Moves that would leave a single nonempty cluster are redrawn, so the
    result is uniform over legal (asset, target) pairs.
    """
    p.check_valid()
    if p.n < 2 or not _has_legal_move(p):
        raise NoLegalMove("partition admits no move that keeps two clusters")
    gen = _generator(rng)
    i, _, b = _anneal_py.draw_move(p.assignment, p.k_max, gen.bit_generator, max_tries)
    out = p.assignment.copy()
    out[i] = b
    return Partition(out, p.k_max)


def _initial_partition(n: int, k_max: int, gen: np.random.Generator) -> Partition:
    # all assets start in slot 0; one asset is moved out so that |C| = 2
    raw = gen.bit_generator.random_raw
    i = int(((raw() >> 11) * _anneal_py._TO_UNIT) * n)
    b = 1 + int(((raw() >> 11) * _anneal_py._TO_UNIT) * (k_max - 1))
    a = np.zeros(n, dtype=np.int64)
    a[i] = b
    return Partition(a, k_max)


def anneal(
    S,
    cfg: AnnealConfig,
    rng=None,
    initial: Partition | None = None,
    backend: str | None = None,
) -> AnnealResult:
    """Single annealing run; returns the best partition seen and its energy.

    ``rng`` may be a seed, a ``SeedSequence`` or a ``Generator`` (PCG64).
    """
    M = _matrix(S)
    n = M.shape[0]
    if n < 2 or M.shape != (n, n):
        raise ValueError("similarity matrix must be square with n >= 2")
    gen = _generator(cfg.seed if rng is None else rng)
    if initial is None:
        initial = _initial_partition(n, cfg.k_max, gen)
    elif initial.k_max != cfg.k_max or initial.n != n:
        raise PartitionError("initial partition does not match the config")
    initial.check_valid()
    if not _has_legal_move(initial):
        raise NoLegalMove("partition admits no move that keeps two clusters")

    kernel = _KERNELS[backend or BACKEND]
    best, _, trace, best_trace, final, n_acc = kernel.run(
        M, initial.assignment, cfg.k_max, cfg.T0, cfg.Tf, cfg.alpha, cfg.kappa,
        gen.bit_generator, cfg.max_tries,
    )
    part = Partition(best, cfg.k_max)
    return AnnealResult(
        partition=part,
        energy=energy(part, M, cfg.kappa),
        trace=trace,
        best_trace=best_trace,
        final=Partition(final, cfg.k_max),
        n_accepted=int(n_acc),
    )


def restart_seeds(seed: int, restarts: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(restarts)


def best_of_restarts(S, cfg: AnnealConfig, backend: str | None = None) -> AnnealResult:
    """Lowest-energy result over ``cfg.restarts`` independent runs.

    Ties go to the lowest restart index, so the reduction is deterministic.
    """
    best = None
    energies = []
    for r, ss in enumerate(restart_seeds(cfg.seed, cfg.restarts)):
        res = anneal(S, cfg, rng=ss, backend=backend)
        res.restart = r
        energies.append(res.energy)
        if best is None or res.energy < best.energy:
            best = res
    best.energies = energies
    return best


def select_representatives(p: Partition, rng) -> list[int]:
    """One uniformly drawn member per nonempty cluster, in cluster-id order."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return [int(members[gen.integers(members.size)]) for members in p.clusters()]
