"""Finite element white noise: single-level, hierarchical, conditional.

The coefficient vector b = W^{1/2} xi has covariance W; the hierarchical
construction combines an independent draw per level so that
b_l = Pi_l^T b_{l+1} + (I - Pi_l^T P_l^T) W_l^{1/2} xi_l is again white
noise on level l.  Every draw records its (level, counter) stream keys so
decompositions are exact replays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import LevelOperators, TransferPair


class NoiseError(ValueError):
    pass


_KIND_NORMAL = 0
_KIND_UNIFORM = 1


class RngStreams:
    """Counter-based substreams keyed by (level, draw counter).

    Each draw instantiates a fresh Philox generator from the key, so
    identical keys reproduce identical values and distinct keys give
    statistically independent streams (parallel-safe).
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & (2**64 - 1)
        self._counters: dict[tuple[int, int], int] = {}

    def _generator(self, kind: int, level: int, counter: int) -> np.random.Generator:
        if not (0 <= level < 2**16 and 0 <= counter < 2**32):
            raise NoiseError("stream key out of range")
        subkey = (kind << 48) | (level << 32) | counter
        key = (self.master_seed << 64) | subkey
        return np.random.Generator(np.random.Philox(key=key))

    def _next(self, kind: int, level: int) -> int:
        c = self._counters.get((kind, level), 0)
        self._counters[(kind, level)] = c + 1
        return c

    def normal(self, level: int, n: int) -> tuple[np.ndarray, tuple[int, int]]:
        """n i.i.d. standard normals plus the (level, counter) key used."""
        counter = self._next(_KIND_NORMAL, level)
        xi = self._generator(_KIND_NORMAL, level, counter).standard_normal(n)
        return xi, (level, counter)

    def normal_matrix(self, level: int, shape: tuple[int, int]) -> np.ndarray:
        """Batch of independent standard normals from one substream."""
        counter = self._next(_KIND_NORMAL, level)
        return self._generator(_KIND_NORMAL, level, counter).standard_normal(shape)

    def replay_normal(self, level: int, counter: int, n: int) -> np.ndarray:
        """Reproduce a previous draw without advancing any counter."""
        return self._generator(_KIND_NORMAL, level, counter).standard_normal(n)

    def uniform(self, level: int) -> float:
        counter = self._next(_KIND_UNIFORM, level)
        return float(self._generator(_KIND_UNIFORM, level, counter).random())

    def spawn(self, tag: int) -> "RngStreams":
        """Independent stream family for a concurrent worker."""
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(int(tag),))
        return RngStreams(int(seq.generate_state(1, dtype=np.uint64)[0]))


@dataclass
class NoiseVector:
    """White-noise coefficient vector b at one level, with provenance."""

    level: int
    b: np.ndarray
    provenance: str  # single_level | hierarchical | conditional | combined
    seed_trace: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)


def sample_standard_normal(streams: RngStreams, level: int, n: int) -> np.ndarray:
    if n <= 0:
        raise NoiseError("n must be positive")
    xi, _ = streams.normal(level, n)
    return xi


def single_level_noise(ops: LevelOperators, streams: RngStreams) -> NoiseVector:
    """b = W^{1/2} xi on one level."""
    xi, key = streams.normal(ops.level, ops.num_elements)
    return NoiseVector(ops.level, ops.W_sqrt * xi, "single_level", (key,))


def _two_level_step(
    transfer: TransferPair,
    ops_fine: LevelOperators,
    b_coarse: np.ndarray,
    noise_fine: np.ndarray,
) -> np.ndarray:
    """b_l = Pi^T b_{l+1} + (I - Pi^T P^T) W^{1/2} xi_l."""
    return transfer.Pi.T @ b_coarse + noise_fine - transfer.Pi.T @ (transfer.P.T @ noise_fine)


def hierarchical_noise(
    all_ops: list[LevelOperators],
    transfers: list[TransferPair],
    streams: RngStreams,
    target_level: int,
) -> list[NoiseVector]:
    """Multilevel white noise built coarse-to-fine down to ``target_level``.

    Returns one NoiseVector per level, ordered coarsest (L) first.
    """
    L = len(all_ops) - 1
    if not 0 <= target_level <= L:
        raise NoiseError(f"target_level {target_level} out of range [0, {L}]")
    out: list[NoiseVector] = []
    xi, key = streams.normal(L, all_ops[L].num_elements)
    b = all_ops[L].W_sqrt * xi
    trace = [key]
    out.append(NoiseVector(L, b, "single_level" if target_level == L else "hierarchical", tuple(trace)))
    for level in range(L - 1, target_level - 1, -1):
        xi, key = streams.normal(level, all_ops[level].num_elements)
        trace.append(key)
        b = _two_level_step(transfers[level], all_ops[level], b, all_ops[level].W_sqrt * xi)
        out.append(NoiseVector(level, b, "hierarchical", tuple(trace)))
    return out


def conditional_noise(
    ops_fine: LevelOperators,
    transfer: TransferPair,
    b_coarse: NoiseVector,
    streams: RngStreams,
    xi: np.ndarray | None = None,
) -> NoiseVector:
    """One two-level step with fresh fine noise given the coarse vector.

    ``xi`` overrides the random draw (test hook; no counter is consumed).
    """
    if b_coarse.level != ops_fine.level + 1:
        raise NoiseError(
            f"coarse noise at level {b_coarse.level} does not match fine level {ops_fine.level}"
        )
    if transfer.fine_level != ops_fine.level:
        raise NoiseError("transfer pair does not match the fine level")
    if xi is None:
        xi, key = streams.normal(ops_fine.level, ops_fine.num_elements)
        trace = b_coarse.seed_trace + (key,)
    else:
        xi = np.asarray(xi, dtype=float)
        trace = ()
    b = _two_level_step(transfer, ops_fine, b_coarse.b, ops_fine.W_sqrt * xi)
    return NoiseVector(ops_fine.level, b, "conditional", trace)


def decompose_noise(
    b_fine: NoiseVector,
    transfers: list[TransferPair],
    all_ops: list[LevelOperators],
    streams: RngStreams,
) -> list[tuple[int, np.ndarray]]:
    """Additive per-level components of a hierarchical draw, at the fine
    level; they sum to b_fine.

    Replays the recorded (level, counter) keys, so this is exact, not a
    re-projection.
    """
    if b_fine.provenance not in ("hierarchical", "conditional", "single_level"):
        raise NoiseError(f"cannot decompose noise with provenance {b_fine.provenance!r}")
    if not b_fine.seed_trace:
        raise NoiseError("noise vector lacks a seed trace")
    levels = [lv for lv, _ in b_fine.seed_trace]
    L = len(all_ops) - 1
    k = b_fine.level
    if levels != list(range(L, k - 1, -1)):
        raise NoiseError("seed trace does not cover levels L..k")

    components: list[tuple[int, np.ndarray]] = []
    for level, counter in b_fine.seed_trace:
        xi = streams.replay_normal(level, counter, all_ops[level].num_elements)
        noise = all_ops[level].W_sqrt * xi
        if level == L:
            comp = noise
        else:
            tr = transfers[level]
            comp = noise - tr.Pi.T @ (tr.P.T @ noise)
        # interpolate down to the target level
        for l in range(level - 1, k - 1, -1):
            comp = transfers[l].Pi.T @ comp
        components.append((level, comp))
    total = sum(c for _, c in components)
    if not np.allclose(total, b_fine.b, rtol=0, atol=1e-10 * max(1.0, np.abs(b_fine.b).max())):
        raise NoiseError("replayed components do not reproduce the stored vector")
    return components


def hierarchical_noise_batch(
    all_ops: list[LevelOperators],
    transfers: list[TransferPair],
    streams: RngStreams,
    target_level: int,
    n_samples: int,
) -> np.ndarray:
    """Matrix of hierarchical draws at ``target_level`` (columns are
    samples); used by the statistical verification experiments."""
    L = len(all_ops) - 1
    if not 0 <= target_level <= L:
        raise NoiseError(f"target_level {target_level} out of range [0, {L}]")
    xi = streams.normal_matrix(L, (all_ops[L].num_elements, n_samples))
    b = all_ops[L].W_sqrt[:, None] * xi
    for level in range(L - 1, target_level - 1, -1):
        xi = streams.normal_matrix(level, (all_ops[level].num_elements, n_samples))
        noise = all_ops[level].W_sqrt[:, None] * xi
        tr = transfers[level]
        b = tr.Pi.T @ b + noise - tr.Pi.T @ (tr.P.T @ noise)
    return b
