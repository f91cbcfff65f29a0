"""Single-spin-flip Markov chains for the RFIM Gibbs measure.

One sweep visits every site once in lexicographic order and uses exactly one
uniform per site, so a chain's trajectory is a pure function of its seed no
matter how the uniforms are blocked.  Replica chains share the disorder and
draw from independent streams keyed by ``(seed, replica)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numba
import numpy as np

from .disorder import DisorderRealization
from .errors import ValidationError
from .exact import ModelParams
from .lattice import LatticeSpec

DYNAMICS = ("glauber", "metropolis")
STARTS = ("up", "random")
TRAJECTORY_MAGIC = b"RFT"
TRAJECTORY_VERSION = 1
_BLOCK_SWEEPS = 256
_REFRESH_SWEEPS = 1000


@dataclass(frozen=True)
class SamplerConfig:
    """``sweeps`` counts every sweep including the ``burn_in`` ones."""

    sweeps: int = 21000
    burn_in: int = 1000
    thinning: int = 10
    dynamics: str = "glauber"
    seed: int = 0
    start: str = "up"

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValidationError(f"sweeps must be positive, got {self.sweeps}")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValidationError(f"burn_in must satisfy 0 <= burn_in < sweeps ({self.sweeps}), got {self.burn_in}")
        if self.thinning < 1:
            raise ValidationError(f"thinning must be >= 1, got {self.thinning}")
        if self.dynamics not in DYNAMICS:
            raise ValidationError(f"dynamics must be one of {DYNAMICS}, got {self.dynamics!r}")
        if self.start not in STARTS:
            raise ValidationError(f"start must be one of {STARTS}, got {self.start!r}")

    @property
    def n_samples(self) -> int:
        return (self.sweeps - self.burn_in) // self.thinning

    def to_dict(self) -> dict:
        return dict(sweeps=self.sweeps, burn_in=self.burn_in, thinning=self.thinning,
                    dynamics=self.dynamics, seed=self.seed, start=self.start)


@dataclass
class ChainState:
    spins: np.ndarray  # int8, +-1
    local: np.ndarray  # beta * sum of neighbour spins + h * g_x
    rng: np.random.Generator = field(repr=False)
    sweeps: int = 0


@numba.njit(cache=True)
def _run_sweeps(spins, local, offsets, nbrs, beta, uniforms, metropolis, thinning, phase, out):
    """Apply len(uniforms) sweeps; record after every sweep whose index+phase hits a thinning boundary."""
    n_sweeps, V = uniforms.shape
    k = 0
    for t in range(n_sweeps):
        for x in range(V):
            s = spins[x]
            L = local[x]
            u = uniforms[t, x]
            if metropolis:
                a = -2.0 * s * L
                flip = a >= 0.0 or u < np.exp(a)
            else:
                p_up = 1.0 / (1.0 + np.exp(-2.0 * L))
                flip = (u < p_up) != (s > 0)
            if flip:
                spins[x] = -s
                delta = -2.0 * s * beta
                for q in range(offsets[x], offsets[x + 1]):
                    local[nbrs[q]] += delta
        if thinning > 0 and (t + phase + 1) % thinning == 0:
            out[k, :] = spins
            k += 1
    return k


class _Kernel:
    """Lattice-bound data shared by every chain of one (spec, params, disorder)."""

    def __init__(self, spec: LatticeSpec, params: ModelParams, disorder):
        g = disorder.g if isinstance(disorder, DisorderRealization) else np.asarray(disorder, dtype=float)
        if g.shape != (spec.volume,):
            raise ValidationError(f"disorder has shape {g.shape}, lattice has {spec.volume} sites")
        self.spec = spec
        self.params = params
        self.field = params.h * g
        self.offsets, self.nbrs = spec.csr_neighbors()

    def local_fields(self, spins: np.ndarray) -> np.ndarray:
        s = spins.astype(float)
        nsum = np.zeros_like(s)
        e = self.spec.edges
        if len(e):
            np.add.at(nsum, e[:, 0], s[e[:, 1]])
            np.add.at(nsum, e[:, 1], s[e[:, 0]])
        return self.params.beta * nsum + self.field

    def init(self, rng: np.random.Generator, start: str) -> ChainState:
        V = self.spec.volume
        if start == "up":
            spins = np.ones(V, dtype=np.int8)
        else:
            spins = np.where(rng.random(V) < 0.5, 1, -1).astype(np.int8)
        return ChainState(spins, self.local_fields(spins), rng)

    def advance(self, state: ChainState, n_sweeps: int, dynamics: str, thinning: int = 0) -> np.ndarray:
        """Run n_sweeps, returning the configurations recorded on the thinning grid."""
        V = self.spec.volume
        metropolis = dynamics == "metropolis"
        n_out = (state.sweeps + n_sweeps) // thinning - state.sweeps // thinning if thinning else 0
        out = np.empty((n_out, V), dtype=np.int8)
        k = 0
        done = 0
        while done < n_sweeps:
            b = min(_BLOCK_SWEEPS, n_sweeps - done)
            # Keep block edges aligned with refresh points so refreshes are chunking-independent.
            b = min(b, _REFRESH_SWEEPS - state.sweeps % _REFRESH_SWEEPS)
            u = state.rng.random((b, V))
            k += _run_sweeps(state.spins, state.local, self.offsets, self.nbrs, self.params.beta, u,
                             metropolis, thinning, state.sweeps, out[k:])
            state.sweeps += b
            done += b
            if state.sweeps % _REFRESH_SWEEPS == 0:
                state.local = self.local_fields(state.spins)
        return out


def chain_rng(seed: int, replica: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(replica)])))


def init_chain(spec, params, disorder, config: SamplerConfig, replica: int = 0) -> ChainState:
    return _Kernel(spec, params, disorder).init(chain_rng(config.seed, replica), config.start)


def sweep(state: ChainState, spec, params, disorder, config: SamplerConfig) -> ChainState:
    """One lexicographic pass over all sites; mutates and returns ``state``."""
    _Kernel(spec, params, disorder).advance(state, 1, config.dynamics)
    return state


def local_field_drift(state: ChainState, spec, params, disorder) -> float:
    """max |cached - recomputed| local field."""
    return float(np.max(np.abs(state.local - _Kernel(spec, params, disorder).local_fields(state.spins))))


def run_chain(spec, params, disorder, config: SamplerConfig, replica: int = 0) -> np.ndarray:
    """Thinned post-burn-in samples of one chain, shape (n_samples, V) int8."""
    kern = _Kernel(spec, params, disorder)
    state = kern.init(chain_rng(config.seed, replica), config.start)
    kern.advance(state, config.burn_in, config.dynamics)
    state.sweeps = 0
    return kern.advance(state, config.sweeps - config.burn_in, config.dynamics, config.thinning)


def sample_replica_array(spec, params, disorder, m: int, config: SamplerConfig, identical: bool = False) -> np.ndarray:
    """All thinned m-tuples at once, shape (n_samples, m, V) int8.

    ``identical=True`` (test mode) gives every replica the stream of replica 0.
    """
    if m < 1:
        raise ValidationError(f"replica count must be >= 1, got {m}")
    chains = [run_chain(spec, params, disorder, config, 0 if identical else r) for r in range(m)]
    return np.stack(chains, axis=1)


def sample_replicas(spec, params, disorder, m: int, config: SamplerConfig, identical: bool = False
                    ) -> Iterator[np.ndarray]:
    """Stream of (m, V) replica tuples; chains advance in lockstep block by block."""
    if m < 1:
        raise ValidationError(f"replica count must be >= 1, got {m}")
    kern = _Kernel(spec, params, disorder)
    states = [kern.init(chain_rng(config.seed, 0 if identical else r), config.start) for r in range(m)]
    for st in states:
        kern.advance(st, config.burn_in, config.dynamics)
        st.sweeps = 0
    remaining = config.sweeps - config.burn_in
    block = _BLOCK_SWEEPS * config.thinning
    while remaining > 0:
        b = min(block, remaining)
        outs = [kern.advance(st, b, config.dynamics, config.thinning) for st in states]
        for k in range(outs[0].shape[0]):
            yield np.stack([o[k] for o in outs])
        remaining -= b


def transition_matrix(spec, params, disorder, dynamics: str = "glauber") -> np.ndarray:
    """Exact one-sweep transition matrix on {-1,1}^V (state c has sigma_x = 1 - 2 bit_x(c))."""
    V = spec.volume
    if V > 10:
        raise ValidationError("transition matrix is only built for V <= 10")
    kern = _Kernel(spec, params, disorder)
    nbrs = spec.neighbors()
    n = 1 << V
    P = np.zeros((n, n))
    for c0 in range(n):
        dist = {c0: 1.0}
        for x in range(V):
            nxt: dict[int, float] = {}
            for c, p in dist.items():
                s = 1 - 2 * ((c >> x) & 1)
                L = kern.field[x] + params.beta * sum(1 - 2 * ((c >> y) & 1) for y in nbrs[x])
                if dynamics == "metropolis":
                    pf = min(1.0, float(np.exp(-2.0 * s * L)))
                else:
                    pf = 1.0 / (1.0 + np.exp(2.0 * s * L))
                flipped = c ^ (1 << x)
                nxt[c] = nxt.get(c, 0.0) + p * (1 - pf)
                nxt[flipped] = nxt.get(flipped, 0.0) + p * pf
            dist = nxt
        for c, p in dist.items():
            P[c0, c] = p
    return P


def batch_means_se(values: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n < 2:
        return float("nan")
    nb = min(n_batches, n)
    size = n // nb
    means = v[: nb * size].reshape(nb, size, *v.shape[1:]).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / np.sqrt(nb)


def write_trajectory(path, samples: np.ndarray) -> None:
    """Header b"RFT" + version byte, then uint32 sites and records, then bit-packed spins per record."""
    S = np.asarray(samples)
    S = S.reshape(-1, S.shape[-1])
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC + bytes([TRAJECTORY_VERSION]))
        fh.write(struct.pack("<II", S.shape[1], S.shape[0]))
        fh.write(np.packbits(S > 0, axis=1).tobytes())


def read_trajectory(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:3] != TRAJECTORY_MAGIC:
        raise ValidationError(f"{path}: not a trajectory file")
    if data[3] != TRAJECTORY_VERSION:
        raise ValidationError(f"{path}: unsupported trajectory version {data[3]}")
    V, T = struct.unpack("<II", data[4:12])
    row = (V + 7) // 8
    bits = np.frombuffer(data[12:], dtype=np.uint8).reshape(T, row)
    return np.where(np.unpackbits(bits, axis=1, count=V), 1, -1).astype(np.int8)
