"""Reconstruction metrics and sampling diagnostics.

Metrics (fidelity, KL, NLL) compare the exact enumerated model
distribution against targets and data. Diagnostics probe how the Gibbs
kernel moves between basin states: the normalized transition-probability
experiment and the one-step distance graph.
"""

import json
from dataclasses import dataclass

import numpy as np

from .bits import all_bitstrings, bits_to_index
from .errors import CapacityError, ConfigError, DimensionError
from .rbm import (DEFAULT_ENUMERATION_CAP, ExactModelTable, Rbm,
                  cond_h_given_v, cond_v_given_h, exact_table)
from .samplers import cd_k_sample, sample_hidden
from .states import MeasurementDataset, OutcomeDistribution, TargetState

_HIDDEN_CHUNK = 1 << 14


def _table_for(rbm: Rbm, table: ExactModelTable | None,
               cap: int) -> ExactModelTable:
    if table is None:
        return exact_table(rbm, cap=cap)
    return table


def fidelity(target: TargetState, rbm: Rbm,
             table: ExactModelTable | None = None,
             cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Overlap (sum_v psi_target(v) sqrt(p(v)))^2 with the exact model marginal.

    The model wavefunction is the nonnegative square root of its visible
    distribution, so the overlap is a classical Bhattacharyya coefficient.
    Clamped to [0, 1] against rounding.
    """
    if target.n_qubits != rbm.n_visible:
        raise DimensionError(
            f"target has {target.n_qubits} qubits, model {rbm.n_visible}"
        )
    table = _table_for(rbm, table, cap)
    overlap = float(np.sum(target.amplitudes * np.exp(0.5 * table.log_probs)))
    return min(1.0, max(0.0, overlap * overlap))


def kl_divergence(q: OutcomeDistribution, rbm: Rbm,
                  table: ExactModelTable | None = None,
                  cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """KL(q || p) = sum_v q(v) log(q(v)/p(v)); zero-probability q terms drop."""
    if q.n_qubits != rbm.n_visible:
        raise DimensionError(
            f"distribution has {q.n_qubits} qubits, model {rbm.n_visible}"
        )
    table = _table_for(rbm, table, cap)
    mask = q.probs > 0
    qm = q.probs[mask]
    return float(np.sum(qm * (np.log(qm) - table.log_probs[mask])))


def nll(dataset: MeasurementDataset, rbm: Rbm,
        table: ExactModelTable | None = None,
        cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Mean negative log-likelihood of the dataset under the exact marginal."""
    if dataset.n_qubits != rbm.n_visible:
        raise DimensionError(
            f"dataset has {dataset.n_qubits} qubits, model {rbm.n_visible}"
        )
    if dataset.total_count == 0:
        raise ValueError("empty dataset has no likelihood")
    table = _table_for(rbm, table, cap)
    idx = bits_to_index(dataset.outcomes)
    return float(-(np.mean(table.log_unnormalized[idx]) - table.log_z))


@dataclass
class TransitionStats:
    """Outcome of the k-sweep return/transition experiment.

    `counts[i, j]` chains started at state i ended at state j after k
    Gibbs sweeps; the trailing column is the overflow bucket for endings
    outside `states_of_interest`, so every row sums to `repetitions`.
    `normalized[i, j]` divides the empirical transition probability by the
    model probability of the end state (a perfectly mixed chain gives 1).
    """

    states_of_interest: list
    counts: np.ndarray
    normalized: np.ndarray
    k: int
    repetitions: int

    @property
    def state_ids(self) -> list[int]:
        return [int(bits_to_index(s)) for s in self.states_of_interest]

    def to_csv(self) -> str:
        header = ",".join(str(i) for i in self.state_ids) + ",other"
        lines = [header]
        for row in self.normalized:
            lines.append(",".join(f"{x:.10g}" for x in row))
        return "\n".join(lines) + "\n"


def transition_experiment(rbm: Rbm, states_of_interest, k: int,
                          repetitions: int, rng: np.random.Generator,
                          cap: int = DEFAULT_ENUMERATION_CAP) -> TransitionStats:
    """Start `repetitions` chains at each state of interest, advance k sweeps,
    and tabulate where they end, normalized by the exact model probability
    of each end state.

    Starts get independent child rng streams in list order, so appending
    start states never perturbs an earlier start's chains.
    """
    if k < 1 or repetitions < 1:
        raise ConfigError("need k >= 1 and repetitions >= 1")
    starts = [np.asarray(s, dtype=np.float64).reshape(-1) for s in states_of_interest]
    if not starts:
        raise ConfigError("states_of_interest must be nonempty")
    for s in starts:
        if s.shape != (rbm.n_visible,):
            raise DimensionError(f"start state shape {s.shape} != ({rbm.n_visible},)")
    table = exact_table(rbm, cap=cap)
    ids = np.array([bits_to_index(s.astype(np.uint8)) for s in starts])
    n_states = len(starts)

    counts = np.zeros((n_states, n_states + 1), dtype=np.int64)
    streams = rng.spawn(n_states)
    for i, (start, stream) in enumerate(zip(starts, streams)):
        v0 = np.broadcast_to(start, (repetitions, rbm.n_visible))
        v_end, _ = cd_k_sample(rbm, v0, k, stream)
        end_idx = bits_to_index(v_end.astype(np.uint8))
        for j, id_j in enumerate(ids):
            counts[i, j] = int(np.count_nonzero(end_idx == id_j))
        counts[i, n_states] = repetitions - counts[i, :n_states].sum()

    p_end = table.probs[ids]
    p_other = max(0.0, 1.0 - float(p_end.sum()))
    raw = counts / repetitions
    normalized = np.empty_like(raw)
    normalized[:, :n_states] = raw[:, :n_states] / p_end
    if p_other > 0:
        normalized[:, n_states] = raw[:, n_states] / p_other
    else:
        normalized[:, n_states] = np.where(raw[:, n_states] > 0, np.inf, 0.0)
    return TransitionStats(states_of_interest=starts, counts=counts,
                           normalized=normalized, k=k, repetitions=repetitions)


def _log_kernel_block(rbm: Rbm, from_bits: np.ndarray,
                      to_bits: np.ndarray) -> np.ndarray:
    """K[x, y] = sum_h p(h | from_x) p(to_y | h), hidden sum enumerated in chunks."""
    m = rbm.n_hidden
    q = cond_h_given_v(rbm, from_bits)
    log_q = np.log(q)
    log_1q = np.log1p(-q)
    kernel = np.zeros((from_bits.shape[0], to_bits.shape[0]))
    hidden = all_bitstrings(m).astype(np.float64)
    for lo in range(0, hidden.shape[0], _HIDDEN_CHUNK):
        hc = hidden[lo:lo + _HIDDEN_CHUNK]
        log_ph = log_q @ hc.T + log_1q @ (1.0 - hc).T
        r = cond_v_given_h(rbm, hc)
        log_pv = np.log(r) @ to_bits.T + np.log1p(-r) @ (1.0 - to_bits).T
        kernel += np.exp(log_ph) @ np.exp(log_pv)
    return kernel


def distance(rbm: Rbm, v_i, v_j, n_samples: int | None = None,
             rng: np.random.Generator | None = None,
             cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """-log of the one-step Gibbs transition probability from v_i to v_j.

    Exact by hidden-state enumeration when `n_samples` is None (needs
    n_hidden <= cap); otherwise a Monte Carlo estimate averaging
    p(v_j | h) over h ~ p(h | v_i).
    """
    v_i = np.asarray(v_i, dtype=np.float64).reshape(-1)
    v_j = np.asarray(v_j, dtype=np.float64).reshape(-1)
    if v_i.shape != (rbm.n_visible,) or v_j.shape != (rbm.n_visible,):
        raise DimensionError("v_i and v_j must be single visible states")
    if n_samples is None:
        if rbm.n_hidden > cap:
            raise CapacityError(
                f"exact distance enumerates 2^{rbm.n_hidden} hidden states "
                f"(cap {cap}); pass n_samples for a Monte Carlo estimate"
            )
        prob = float(_log_kernel_block(rbm, v_i[None, :], v_j[None, :])[0, 0])
    else:
        if n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if rng is None:
            raise ConfigError("Monte Carlo distance needs an rng")
        v_rep = np.broadcast_to(v_i, (n_samples, rbm.n_visible))
        h = sample_hidden(rbm, v_rep, rng)
        r = cond_v_given_h(rbm, h)
        log_pv = np.log(r) @ v_j + np.log1p(-r) @ (1.0 - v_j)
        prob = float(np.mean(np.exp(log_pv)))
    with np.errstate(divide="ignore"):
        return float(-np.log(prob))


@dataclass
class StateGraph:
    """Directed graph of basis states linked by one-step transition weight.

    Vertices are basis indices with model probability at or above the
    floor; an edge (i, j, w) is the one-step Gibbs transition probability
    w = exp(-distance(v_i, v_j)), kept when w >= the edge threshold.
    """

    vertices: list[tuple[int, float]]
    edges: list[tuple[int, int, float]]

    def to_json(self) -> str:
        doc = {
            "vertices": [{"id": i, "p": p} for i, p in self.vertices],
            "edges": [{"from": a, "to": b, "w": w} for a, b, w in self.edges],
        }
        return json.dumps(doc, indent=1)

    def to_dot(self) -> str:
        lines = ["digraph states {"]
        for i, p in self.vertices:
            lines.append(f'  {i} [p="{p:.10g}"];')
        for a, b, w in self.edges:
            lines.append(f'  {a} -> {b} [weight="{w:.10g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def export_state_graph(rbm: Rbm, probability_floor: float = 1e-4,
                       edge_threshold: float = 0.01,
                       cap: int = DEFAULT_ENUMERATION_CAP) -> StateGraph:
    """Graph over the non-negligible basis states with one-step Gibbs edges.

    Vertices: exact model probability >= probability_floor, ascending by
    basis index. Edges: one-step transition probability >= edge_threshold
    between retained vertices, self-loops included.
    """
    if rbm.n_hidden > cap:
        raise CapacityError(
            f"graph export enumerates 2^{rbm.n_hidden} hidden states (cap {cap})"
        )
    table = exact_table(rbm, cap=cap)
    probs = table.probs
    keep = np.flatnonzero(probs >= probability_floor)
    vertices = [(int(i), float(probs[i])) for i in keep]
    if keep.size == 0:
        return StateGraph(vertices=[], edges=[])
    bits = all_bitstrings(rbm.n_visible)[keep].astype(np.float64)
    kernel = _log_kernel_block(rbm, bits, bits)
    edges = []
    for x in range(keep.size):
        for y in range(keep.size):
            w = float(kernel[x, y])
            if w >= edge_threshold and w > 0.0:
                edges.append((int(keep[x]), int(keep[y]), w))
    return StateGraph(vertices=vertices, edges=edges)
