"""Markov-chain samplers on the RBM joint space.

All samplers share the same block-Gibbs kernel (resample h | v, then
v | h) and draw from an explicit numpy Generator, so every run is
reproducible from its seed. Batched variants operate on arrays of chains
at once; the draw order (hidden uniforms, then visible uniforms, chains
vectorized together) is part of the reproducibility contract.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError
from .rbm import Rbm, cond_h_given_v, energy


def rng_for_stream(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of a top-level seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


@dataclass
class ChainState:
    """One Gibbs chain: current visible/hidden states plus its rng stream id."""

    v: np.ndarray
    h: np.ndarray
    rng_stream_id: int = 0


def sample_hidden(rbm: Rbm, v: np.ndarray, rng: np.random.Generator,
                  beta: float = 1.0) -> np.ndarray:
    """Draw h ~ p_beta(h|v) for a batch of visible states."""
    p = expit(beta * (v @ rbm.W + rbm.b))
    return (rng.random(p.shape) < p).astype(np.float64)


def sample_visible(rbm: Rbm, h: np.ndarray, rng: np.random.Generator,
                   beta: float = 1.0) -> np.ndarray:
    """Draw v ~ p_beta(v|h) for a batch of hidden states."""
    p = expit(beta * (h @ rbm.W.T + rbm.a))
    return (rng.random(p.shape) < p).astype(np.float64)


def gibbs_sweep(rbm: Rbm, v: np.ndarray, rng: np.random.Generator,
                beta: float = 1.0):
    """One block update: h' ~ p(h|v), then v' ~ p(v|h'). Returns (v', h')."""
    h = sample_hidden(rbm, v, rng, beta)
    v_new = sample_visible(rbm, h, rng, beta)
    return v_new, h


def gibbs_step(rbm: Rbm, state: ChainState, rng: np.random.Generator) -> ChainState:
    """Advance a single chain by one block-Gibbs update."""
    v = np.asarray(state.v, dtype=np.float64)
    if v.shape != (rbm.n_visible,):
        raise DimensionError(f"chain visible shape {v.shape} != ({rbm.n_visible},)")
    v_new, h_new = gibbs_sweep(rbm, v[None, :], rng)
    return ChainState(v=v_new[0], h=h_new[0], rng_stream_id=state.rng_stream_id)


def cd_k_sample(rbm: Rbm, v0_batch: np.ndarray, k: int, rng: np.random.Generator):
    """CD-k negative-phase samples.

    Runs k Gibbs sweeps from each row of `v0_batch` and returns
    (v_k, E[h|v_k]): the hidden statistics are the analytic conditional
    means at the final visible states, not binary draws.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    v = np.asarray(v0_batch, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise DimensionError("v0_batch must be a nonempty (batch, n_visible) array")
    if v.shape[1] != rbm.n_visible:
        raise DimensionError(f"batch width {v.shape[1]} != n_visible {rbm.n_visible}")
    for _ in range(k):
        v, _ = gibbs_sweep(rbm, v, rng)
    return v, cond_h_given_v(rbm, v)


@dataclass
class PersistentChains:
    """Negative-phase chains kept alive across training updates."""

    v: np.ndarray
    h: np.ndarray

    @classmethod
    def initialized(cls, rbm: Rbm, n_chains: int, rng: np.random.Generator):
        """Uniform random bits on both layers (chains start unbiased)."""
        v = rng.integers(0, 2, size=(n_chains, rbm.n_visible)).astype(np.float64)
        h = rng.integers(0, 2, size=(n_chains, rbm.n_hidden)).astype(np.float64)
        return cls(v=v, h=h)


def pcd_step(rbm: Rbm, persistent: PersistentChains, k: int,
             rng: np.random.Generator):
    """Advance persistent chains by k sweeps; returns ((v, E[h|v]), chains)."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    v = persistent.v
    h = persistent.h
    for _ in range(k):
        v, h = gibbs_sweep(rbm, v, rng)
    persistent.v = v
    persistent.h = h
    return (v, cond_h_given_v(rbm, v)), persistent


@dataclass
class PtLadder:
    """Replica-exchange state: one batch of chains per inverse temperature.

    `betas` is strictly decreasing with betas[0] = 1 (the target model).
    `v` and `h` have shape (n_temps, n_chains, n_visible/hidden). Swap
    counters track proposals/acceptances per adjacent pair, summed over
    chain columns.
    """

    betas: np.ndarray
    v: np.ndarray
    h: np.ndarray
    swap_attempts: np.ndarray = field(default=None)
    swap_accepts: np.ndarray = field(default=None)
    sweep_count: int = 0

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size < 1:
            raise ConfigError("betas must be a nonempty 1-D array")
        if abs(self.betas[0] - 1.0) > 1e-12:
            raise ConfigError("first inverse temperature must be 1")
        if self.betas.size > 1 and not np.all(np.diff(self.betas) < 0):
            raise ConfigError("betas must be strictly decreasing")
        if self.swap_attempts is None:
            self.swap_attempts = np.zeros(self.betas.size - 1, dtype=np.int64)
        if self.swap_accepts is None:
            self.swap_accepts = np.zeros(self.betas.size - 1, dtype=np.int64)

    @property
    def n_temps(self) -> int:
        return self.betas.size

    @property
    def n_chains(self) -> int:
        return self.v.shape[1]


def make_pt_ladder(rbm: Rbm, n_chains: int, rng: np.random.Generator,
                   n_temps: int = 10, t_max: float = 100.0) -> PtLadder:
    """Geometric temperature ladder from T=1 to T=t_max, random initial states."""
    if n_temps < 1 or t_max <= 1.0:
        raise ConfigError("need n_temps >= 1 and t_max > 1")
    temps = np.geomspace(1.0, t_max, n_temps)
    betas = 1.0 / temps
    v = rng.integers(0, 2, size=(n_temps, n_chains, rbm.n_visible)).astype(np.float64)
    h = rng.integers(0, 2, size=(n_temps, n_chains, rbm.n_hidden)).astype(np.float64)
    return PtLadder(betas=betas, v=v, h=h)


def pt_step(rbm: Rbm, ladder: PtLadder, rng: np.random.Generator):
    """One tempered sweep plus one swap half-sweep.

    Every replica does a block-Gibbs update under p_beta ∝ exp(-beta E);
    then adjacent pairs (even pairs on even calls, odd pairs on odd calls)
    propose configuration swaps accepted with probability
    min(1, exp((beta_i - beta_{i+1}) (E_i - E_{i+1}))) using joint-state
    energies. Returns ((v, E[h|v]) at beta=1, ladder).
    """
    betas = ladder.betas[:, None, None]
    hp = expit(betas * (ladder.v @ rbm.W + rbm.b))
    ladder.h = (rng.random(hp.shape) < hp).astype(np.float64)
    vp = expit(betas * (ladder.h @ rbm.W.T + rbm.a))
    ladder.v = (rng.random(vp.shape) < vp).astype(np.float64)

    start = ladder.sweep_count % 2
    for r in range(start, ladder.n_temps - 1, 2):
        e_lo = energy(rbm, ladder.v[r], ladder.h[r])
        e_hi = energy(rbm, ladder.v[r + 1], ladder.h[r + 1])
        log_r = (ladder.betas[r] - ladder.betas[r + 1]) * (e_lo - e_hi)
        accept = np.log(rng.random(ladder.n_chains)) < log_r
        if np.any(accept):
            ladder.v[r, accept], ladder.v[r + 1, accept] = (
                ladder.v[r + 1, accept].copy(), ladder.v[r, accept].copy())
            ladder.h[r, accept], ladder.h[r + 1, accept] = (
                ladder.h[r + 1, accept].copy(), ladder.h[r, accept].copy())
        ladder.swap_attempts[r] += ladder.n_chains
        ladder.swap_accepts[r] += int(np.count_nonzero(accept))
    ladder.sweep_count += 1

    v0 = ladder.v[0]
    return (v0.copy(), cond_h_given_v(rbm, v0)), ladder
