"""Training loop: stochastic KL-gradient updates with CD/PCD/PT negative
phases, interleaved mode-assisted updates on a sigmoid schedule, and a
plateau-halving learning rate.

All randomness branches off the config seed through fixed-purpose
sub-streams (init, batching, sampler, schedule coin, mode solver), so the
sequence of update types and every sampled bit are reproducible and
independently swappable.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .bits import bits_to_index
from .errors import CapacityError, ConfigError, DimensionError, NumericalError
from .mode_solver import best_candidate_mode, find_mode, marginal_mode
from .rbm import (DEFAULT_ENUMERATION_CAP, Rbm, cond_h_given_v, exact_table,
                  save_checkpoint)
from .samplers import (PersistentChains, PtLadder, cd_k_sample, make_pt_ladder,
                       pcd_step, pt_step, rng_for_stream)
from .states import MeasurementDataset, TargetState

SAMPLERS = ("cd", "pcd", "pt", "exact")
MODE_SET_POLICIES = ("explicit", "top_frequency", "sample_from_data")
MODE_SEARCHES = ("marginal", "candidates", "full")
CHECKPOINT_INTERVAL = 10_000

# fixed sub-stream ids under the config seed
_S_INIT = 1
_S_BATCH = 2
_S_SAMPLER = 3
_S_SCHEDULE = 4
_S_MODE = 5


@dataclass
class ModeSchedule:
    """Sigmoid ramp for the per-iteration mode-update probability.

    P(n) = p_max * sigmoid(alpha * n / n_max - beta): negligible early,
    saturating at p_max near the end of training. p_max = 0 disables mode
    updates while keeping the coin stream in place.
    """

    p_max: float = 0.05
    alpha: float = 20.0
    beta: float = 6.0

    def __post_init__(self):
        if not 0.0 <= self.p_max <= 1.0:
            raise ConfigError(f"p_max must be in [0, 1], got {self.p_max}")


@dataclass
class TrainConfig:
    eta0: float = 0.01
    n_max: int = 200_000
    batch_size: int | None = None          # default: n_visible**2
    sampler: str = "cd"
    k: int = 1
    mode_schedule: ModeSchedule | None = None
    mode_set_policy: str = "top_frequency"
    mode_set: list | None = None           # used by the explicit policy
    mode_search: str = "marginal"
    mode_h_star: str = "binary"
    top_frequency_tau: float = 0.5
    lr_patience: int = 10_000
    n_hidden: int | None = None            # default: n_visible
    eval_every: int = 100
    seed: int = 0
    init_sigma: float = 0.01
    pt_n_temps: int = 10
    pt_t_max: float = 100.0
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ConfigError(f"eta0 must be positive, got {self.eta0}")
        if self.n_max < 0:
            raise ConfigError(f"n_max must be nonnegative, got {self.n_max}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ConfigError(
                f"unknown sampler {self.sampler!r}; choose from {SAMPLERS}")
        if self.mode_set_policy not in MODE_SET_POLICIES:
            raise ConfigError(
                f"unknown mode_set_policy {self.mode_set_policy!r}; "
                f"choose from {MODE_SET_POLICIES}")
        if self.mode_search not in MODE_SEARCHES:
            raise ConfigError(
                f"unknown mode_search {self.mode_search!r}; "
                f"choose from {MODE_SEARCHES}")
        if self.mode_h_star not in ("binary", "analytic"):
            raise ConfigError(
                f"unknown mode_h_star {self.mode_h_star!r}; "
                "choose from ('binary', 'analytic')")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.lr_patience < 1:
            raise ConfigError("lr_patience must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    nll: float
    fidelity: float | None
    kl: float | None
    lr: float
    mode_update: bool


@dataclass
class TrainTrace:
    records: list
    final_model: Rbm
    warnings: list = field(default_factory=list)
    mode_update_count: int = 0

    def to_csv(self) -> str:
        lines = ["iteration,nll,fidelity,kl,lr,mode_update"]
        for r in self.records:
            fid = "" if r.fidelity is None else f"{r.fidelity:.10g}"
            kl = "" if r.kl is None else f"{r.kl:.10g}"
            lines.append(f"{r.iteration},{r.nll:.10g},{fid},{kl},"
                         f"{r.lr:.10g},{int(r.mode_update)}")
        return "\n".join(lines) + "\n"


def mode_schedule_probability(n, cfg: TrainConfig):
    """Mode-update probability at iteration n under the config's schedule."""
    if cfg.mode_schedule is None:
        return np.zeros_like(np.asarray(n, dtype=np.float64)) if np.ndim(n) else 0.0
    s = cfg.mode_schedule
    x = s.alpha * np.asarray(n, dtype=np.float64) / cfg.n_max - s.beta
    p = s.p_max * expit(x)
    return float(p) if np.ndim(n) == 0 else p


def infer_mode_set(dataset: MeasurementDataset, policy: str,
                   tau: float = 0.5, explicit=None,
                   batch_size: int | None = None,
                   rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Candidate modes of the data distribution.

    explicit: the caller's own list. top_frequency: distinct outcomes whose
    empirical count is at least tau times the most frequent one (the data
    modes). sample_from_data: batch_size rows drawn from the empirical
    distribution, approximating the mode distribution by the data itself.
    """
    if dataset.total_count == 0:
        raise ValueError("cannot infer modes from an empty dataset")
    if policy == "explicit":
        if not explicit:
            raise ConfigError("explicit mode policy needs a nonempty mode list")
        out = [np.asarray(s, dtype=np.uint8).reshape(-1) for s in explicit]
        for s in out:
            if s.shape != (dataset.n_qubits,):
                raise DimensionError(f"mode shape {s.shape} != ({dataset.n_qubits},)")
        return out
    if policy == "top_frequency":
        rows, counts = dataset.unique()
        keep = counts >= tau * counts.max()
        return [rows[i].copy() for i in np.flatnonzero(keep)]
    if policy == "sample_from_data":
        if rng is None or batch_size is None:
            raise ConfigError("sample_from_data needs rng and batch_size")
        idx = rng.integers(0, dataset.total_count, size=batch_size)
        return [dataset.outcomes[i].copy() for i in idx]
    raise ConfigError(f"unknown mode_set_policy {policy!r}")


def _positive_phase(rbm: Rbm, v: np.ndarray):
    """Data-side statistics with analytic hidden means: (W, a, b) terms."""
    ph = cond_h_given_v(rbm, v)
    batch = v.shape[0]
    return v.T @ ph / batch, v.mean(axis=0), ph.mean(axis=0)


def _exact_negative_phase(rbm: Rbm, states: np.ndarray, cap: int):
    probs = exact_table(rbm, cap=cap).probs
    ph = cond_h_given_v(rbm, states)
    w_term = states.T @ (probs[:, None] * ph)
    return w_term, probs @ states, probs @ ph


def grad_update(rbm: Rbm, batch: np.ndarray, sampler_state, cfg: TrainConfig,
                rng: np.random.Generator, lr: float | None = None):
    """One stochastic KL-gradient ascent step on log-likelihood.

    Positive phase is exact over the data batch; the negative phase comes
    from the configured sampler (or full enumeration for sampler="exact").
    Returns (rbm, sampler_state); persistent samplers advance in place.
    """
    eta = cfg.eta0 if lr is None else lr
    v = np.asarray(batch, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != rbm.n_visible:
        raise DimensionError(f"batch must be (B, {rbm.n_visible})")
    pos_w, pos_a, pos_b = _positive_phase(rbm, v)

    if cfg.sampler == "cd":
        vk, phk = cd_k_sample(rbm, v, cfg.k, rng)
    elif cfg.sampler == "pcd":
        if not isinstance(sampler_state, PersistentChains):
            raise ConfigError("pcd sampler needs PersistentChains state")
        (vk, phk), sampler_state = pcd_step(rbm, sampler_state, cfg.k, rng)
    elif cfg.sampler == "pt":
        if not isinstance(sampler_state, PtLadder):
            raise ConfigError("pt sampler needs a PtLadder state")
        (vk, phk), sampler_state = pt_step(rbm, sampler_state, rng)
    elif cfg.sampler == "exact":
        states = sampler_state
        if states is None:
            raise ConfigError("exact sampler needs the enumerated state matrix")
        neg_w, neg_a, neg_b = _exact_negative_phase(rbm, states, cfg.enumeration_cap)
        rbm.W += eta * (pos_w - neg_w)
        rbm.a += eta * (pos_a - neg_a)
        rbm.b += eta * (pos_b - neg_b)
        return rbm, sampler_state
    else:
        raise ConfigError(f"unknown sampler {cfg.sampler!r}")

    neg_batch = vk.shape[0]
    rbm.W += eta * (pos_w - vk.T @ phk / neg_batch)
    rbm.a += eta * (pos_a - vk.mean(axis=0))
    rbm.b += eta * (pos_b - phk.mean(axis=0))
    return rbm, sampler_state


def mode_update(rbm: Rbm, mode_set, cfg: TrainConfig,
                rng: np.random.Generator | None = None,
                lr: float | None = None) -> Rbm:
    """One mode-matching step.

    Positive phase averages (v, E[h|v]) uniformly over the candidate
    modes; the negative phase is the point statistic at the model's most
    probable configuration (v*, h*), so the update pushes probability
    away from the model's current peak and toward the data modes.

    mode_search picks how the peak is found: "marginal" (default)
    enumerates the exact most probable string when the qubit count allows
    it, so background strings outside the data support get suppressed
    directly; "candidates" ranks only the mode set itself, which
    equalizes the set but never pushes on anything outside it; "full"
    solves the unrestricted joint QUBO, whose relu-shaped objective can
    disagree with the marginal ranking on diffuse models.
    """
    if len(mode_set) == 0:
        raise ConfigError("mode update needs a nonempty mode set")
    eta = cfg.eta0 if lr is None else lr
    modes = np.asarray(mode_set, dtype=np.float64)
    if modes.ndim != 2 or modes.shape[1] != rbm.n_visible:
        raise DimensionError(f"mode set must be (M, {rbm.n_visible})")
    pos_w, pos_a, pos_b = _positive_phase(rbm, modes)
    if cfg.mode_search == "marginal" and rbm.n_visible <= cfg.enumeration_cap:
        result = marginal_mode(rbm, exact_cap=cfg.enumeration_cap)
    elif cfg.mode_search == "candidates":
        result = best_candidate_mode(rbm, modes)
    else:
        # "full", or a marginal search above the enumeration cap: the
        # annealed joint solve with the mode set as polish candidates.
        result = find_mode(rbm, rng=rng, candidates=modes,
                           exact_cap=cfg.enumeration_cap)
    v_star, h_star = result.v_star, result.h_star
    if cfg.mode_h_star == "analytic":
        h_star = cond_h_given_v(rbm, v_star)
    rbm.W += eta * (pos_w - np.outer(v_star, h_star))
    rbm.a += eta * (pos_a - v_star)
    rbm.b += eta * (pos_b - h_star)
    return rbm


def _init_sampler_state(rbm: Rbm, cfg: TrainConfig, batch_size: int,
                        rng: np.random.Generator):
    if cfg.sampler == "pcd":
        return PersistentChains.initialized(rbm, batch_size, rng)
    if cfg.sampler == "pt":
        return make_pt_ladder(rbm, batch_size, rng,
                              n_temps=cfg.pt_n_temps, t_max=cfg.pt_t_max)
    if cfg.sampler == "exact":
        if rbm.n_visible > cfg.enumeration_cap:
            raise CapacityError("exact negative phase above enumeration cap")
        from .bits import all_bitstrings
        return all_bitstrings(rbm.n_visible).astype(np.float64)
    return None


def train(dataset: MeasurementDataset, target: TargetState | None,
          cfg: TrainConfig, checkpoint_dir: str | None = None) -> TrainTrace:
    """Full training run; returns the metric trace and the final model.

    Evaluates exact NLL on the dataset every eval_every iterations (plus
    fidelity and KL against `target` when given) and halves the learning
    rate when the best NLL has not improved for lr_patience iterations.
    Above the enumeration cap no exact metric exists, so the run keeps a
    constant learning rate and records a warning instead of metrics.
    """
    n = dataset.n_qubits
    if dataset.total_count == 0:
        raise ValueError("cannot train on an empty dataset")
    m = cfg.n_hidden if cfg.n_hidden is not None else n
    batch_size = cfg.batch_size if cfg.batch_size is not None else n * n

    rng_init = rng_for_stream(cfg.seed, _S_INIT)
    rng_batch = rng_for_stream(cfg.seed, _S_BATCH)
    rng_sampler = rng_for_stream(cfg.seed, _S_SAMPLER)
    rng_schedule = rng_for_stream(cfg.seed, _S_SCHEDULE)
    rng_mode = rng_for_stream(cfg.seed, _S_MODE)

    rbm = Rbm.initialized(n, m, rng_init, sigma=cfg.init_sigma)
    sampler_state = _init_sampler_state(rbm, cfg, batch_size, rng_sampler)

    data = dataset.outcomes.astype(np.float64)
    warnings = []
    can_eval = n <= cfg.enumeration_cap
    if not can_eval:
        warnings.append(
            f"n={n} exceeds enumeration cap {cfg.enumeration_cap}: exact "
            "metrics unavailable, learning rate held constant")

    fixed_modes = None
    if cfg.mode_schedule is not None and cfg.mode_schedule.p_max > 0:
        if cfg.mode_set_policy in ("explicit", "top_frequency"):
            fixed_modes = infer_mode_set(dataset, cfg.mode_set_policy,
                                         tau=cfg.top_frequency_tau,
                                         explicit=cfg.mode_set)

    target_dist = target.distribution() if target is not None else None
    data_idx = bits_to_index(dataset.outcomes) if can_eval else None

    coins = rng_schedule.random(cfg.n_max) if cfg.n_max > 0 else np.empty(0)
    probs = (mode_schedule_probability(np.arange(1, cfg.n_max + 1), cfg)
             if cfg.n_max > 0 else np.empty(0))

    records = []
    mode_count = 0
    lr = cfg.eta0
    best_nll = np.inf
    best_iter = 0

    def evaluate(iteration: int, was_mode: bool):
        nonlocal lr, best_nll, best_iter
        table = exact_table(rbm, cap=cfg.enumeration_cap)
        nll_val = float(-(np.mean(table.log_unnormalized[data_idx]) - table.log_z))
        if not np.isfinite(nll_val):
            raise NumericalError(f"non-finite NLL at iteration {iteration}")
        fid = kl = None
        if target is not None:
            amp = target.amplitudes
            overlap = float(np.sum(amp * np.exp(0.5 * table.log_probs)))
            fid = min(1.0, max(0.0, overlap * overlap))
            mask = target_dist.probs > 0
            qm = target_dist.probs[mask]
            kl = float(np.sum(qm * (np.log(qm) - table.log_probs[mask])))
        records.append(TraceRecord(iteration=iteration, nll=nll_val,
                                   fidelity=fid, kl=kl, lr=lr,
                                   mode_update=was_mode))
        # plateau reference re-anchors after each halving: a transient NLL
        # rise (mode collapse inflates NLL early) must not pin the best at
        # the init value and decay the rate to zero before mode updates act
        if nll_val < best_nll:
            best_nll = nll_val
            best_iter = iteration
        elif iteration - best_iter >= cfg.lr_patience:
            lr = lr / 2.0
            best_iter = iteration
            best_nll = nll_val

    for it in range(1, cfg.n_max + 1):
        is_mode = bool(coins[it - 1] < probs[it - 1])
        if is_mode:
            if cfg.mode_set_policy == "sample_from_data":
                modes = infer_mode_set(dataset, "sample_from_data",
                                       batch_size=batch_size, rng=rng_mode)
            else:
                modes = fixed_modes
            rbm = mode_update(rbm, modes, cfg, rng=rng_mode, lr=lr)
            mode_count += 1
        else:
            batch = data[rng_batch.integers(0, data.shape[0], size=batch_size)]
            rbm, sampler_state = grad_update(rbm, batch, sampler_state, cfg,
                                             rng_sampler, lr=lr)
        if can_eval and (it % cfg.eval_every == 0 or it == cfg.n_max):
            evaluate(it, is_mode)
        if checkpoint_dir is not None and it % CHECKPOINT_INTERVAL == 0:
            save_checkpoint(rbm, os.path.join(checkpoint_dir,
                                              f"checkpoint_{it:07d}.json"))

    if checkpoint_dir is not None:
        save_checkpoint(rbm, os.path.join(checkpoint_dir, "checkpoint_final.json"))
    return TrainTrace(records=records, final_model=rbm, warnings=warnings,
                      mode_update_count=mode_count)
