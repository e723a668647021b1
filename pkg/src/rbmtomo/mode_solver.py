"""Mode search: minimize the RBM energy E(v, h) as a bipartite QUBO.

The bipartite structure makes the hidden layer trivial: for fixed v the
optimal hidden state is h_j = 1 iff b_j + (v W)_j > 0 (ties kept at 0 for
determinism), leaving a search over visible states only. The exact solver
enumerates them; the annealer runs single-bit-flip Metropolis over v with
the hidden layer always at its closed-form response.
"""

from dataclasses import dataclass, field

import numpy as np

from .bits import all_bitstrings
from .errors import CapacityError, ConfigError, DimensionError
from .rbm import Rbm, softplus

EXACT_VISIBLE_CAP = 24

_ENUM_CHUNK = 1 << 16


@dataclass
class QuboInstance:
    """Objective x.Q.x over concatenated bits x = (v, h).

    `linear` has length n_visible + n_hidden; `couplings` lists
    (visible_index, n_visible + hidden_index, weight) triples, bipartite by
    construction. The objective value on (v, h) equals the RBM energy.
    """

    n_visible: int
    n_hidden: int
    linear: np.ndarray
    couplings: list[tuple[int, int, float]]
    offset: float = 0.0

    def coupling_matrix(self) -> np.ndarray:
        """Dense (n_visible, n_hidden) block of the bipartite couplings."""
        q = np.zeros((self.n_visible, self.n_hidden))
        for i, j, w in self.couplings:
            if not (0 <= i < self.n_visible and self.n_visible <= j):
                raise ConfigError(f"coupling ({i},{j}) is not visible-to-hidden")
            q[i, j - self.n_visible] += w
        return q

    def objective(self, v: np.ndarray, h: np.ndarray) -> np.ndarray | float:
        """Evaluate the QUBO objective; batched over leading axes."""
        v = np.asarray(v, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        q = self.coupling_matrix()
        val = (v @ self.linear[: self.n_visible]
               + h @ self.linear[self.n_visible:]
               + np.sum((v @ q) * h, axis=-1) + self.offset)
        if val.ndim == 0:
            return float(val)
        return val


@dataclass
class ModeResult:
    v_star: np.ndarray
    h_star: np.ndarray
    energy: float
    method: str
    restarts_used: int = 0


@dataclass
class AnnealConfig:
    """Geometric-cooling schedule for the visible-layer annealer."""

    t_start: float = 2.0
    t_end: float = 0.01
    sweeps: int | None = None  # default 50 * n_visible
    restarts: int = 8


def to_qubo(rbm: Rbm) -> QuboInstance:
    """Encode E(v, h) = -(a.v + b.h + v^T W h) as a QUBO over (v, h) bits."""
    n, m = rbm.n_visible, rbm.n_hidden
    linear = np.concatenate([-rbm.a, -rbm.b])
    couplings = [
        (i, n + j, -rbm.W[i, j])
        for i in range(n)
        for j in range(m)
        if rbm.W[i, j] != 0.0
    ]
    return QuboInstance(n_visible=n, n_hidden=m, linear=linear,
                        couplings=couplings, offset=0.0)


def _hidden_response(fields: np.ndarray):
    """Optimal hidden bits and their objective contribution for given fields.

    `fields` holds the hidden linear term after conditioning on v (QUBO
    sign convention, so contribution of h_j = fields_j when set). Setting
    h_j = 1 exactly when fields_j < 0 minimizes; ties stay 0.
    """
    h = (fields < 0.0).astype(np.float64)
    return h, np.minimum(fields, 0.0).sum(axis=-1)


def solve_exact(q: QuboInstance) -> ModeResult:
    """Global minimum by enumerating visible states (closed-form hidden).

    Ties break toward the lexicographically smallest (v, h): visible states
    are scanned in index order (MSB-first, which is lexicographic), and the
    tie rule in the hidden response picks the smallest optimal h.
    """
    n, m = q.n_visible, q.n_hidden
    if n > EXACT_VISIBLE_CAP:
        raise CapacityError(
            f"exact mode search enumerates 2^{n} visible states "
            f"(cap {EXACT_VISIBLE_CAP}); use solve_anneal instead"
        )
    lin_v = q.linear[:n]
    lin_h = q.linear[n:]
    coup = q.coupling_matrix()

    best_e = np.inf
    best_v = None
    states = all_bitstrings(n)
    for lo in range(0, states.shape[0], _ENUM_CHUNK):
        chunk = states[lo: lo + _ENUM_CHUNK].astype(np.float64)
        fields = lin_h + chunk @ coup
        e = q.offset + chunk @ lin_v + np.minimum(fields, 0.0).sum(axis=1)
        k = int(np.argmin(e))  # argmin keeps the first (lex-smallest) minimizer
        if e[k] < best_e:
            best_e = float(e[k])
            best_v = chunk[k]
    h_star, _ = _hidden_response(lin_h + best_v @ coup)
    return ModeResult(v_star=best_v, h_star=h_star, energy=best_e,
                      method="exact", restarts_used=0)


def _greedy_descent(v, lin_v, lin_h, coup, offset, max_rounds=1000):
    """Flip the best improving visible bit until a local minimum."""
    v = v.astype(np.float64).copy()
    fields = lin_h + v @ coup
    e = float(offset + v @ lin_v + np.minimum(fields, 0.0).sum())
    for _ in range(max_rounds):
        sign = 1.0 - 2.0 * v  # flip direction per site
        cand_fields = fields[None, :] + sign[:, None] * coup
        delta = (sign * lin_v
                 + np.minimum(cand_fields, 0.0).sum(axis=1)
                 - np.minimum(fields, 0.0).sum())
        i = int(np.argmin(delta))
        if delta[i] >= -1e-15:
            break
        v[i] = 1.0 - v[i]
        fields = fields + sign[i] * coup[i]
        e += float(delta[i])
    return v, e


def _lex_less(v1, h1, v2, h2) -> bool:
    x1 = np.concatenate([v1, h1])
    x2 = np.concatenate([v2, h2])
    diff = x1 != x2
    if not np.any(diff):
        return False
    k = int(np.argmax(diff))
    return x1[k] < x2[k]


def solve_anneal(q: QuboInstance, schedule: AnnealConfig,
                 rng: np.random.Generator,
                 candidates: np.ndarray | None = None) -> ModeResult:
    """Simulated annealing over visible bits, hidden layer closed-form.

    All restarts run as one vectorized batch proposing one flip per restart
    per step; the reduction keeps the minimum with lexicographic
    tie-breaking, so the result only depends on (q, schedule, rng,
    candidates). Any `candidates` rows (e.g. frequent dataset strings) are
    polished by greedy descent and included in the best-of reduction, so
    the returned energy never exceeds theirs.
    """
    n, m = q.n_visible, q.n_hidden
    lin_v = q.linear[:n]
    lin_h = q.linear[n:]
    coup = q.coupling_matrix()
    sweeps = schedule.sweeps if schedule.sweeps is not None else 50 * n
    restarts = schedule.restarts
    n_steps = max(1, sweeps * n)

    # Each restart owns a spawned rng stream so restart r's trajectory does
    # not depend on how many restarts run alongside it; the batch dimension
    # below is pure vectorization.
    streams = rng.spawn(restarts)
    v = np.stack([s.integers(0, 2, size=n) for s in streams]).astype(np.float64)
    sites = np.stack([s.integers(0, n, size=n_steps) for s in streams])
    log_u = np.log(np.stack([s.random(n_steps) for s in streams]))

    temps = np.geomspace(schedule.t_start, schedule.t_end, n_steps)
    fields = lin_h + v @ coup  # (restarts, m), kept incrementally updated
    e = q.offset + v @ lin_v + np.minimum(fields, 0.0).sum(axis=1)

    best_v = v.copy()
    best_e = e.copy()
    rows = np.arange(restarts)
    for t in range(n_steps):
        site = sites[:, t]
        sign = 1.0 - 2.0 * v[rows, site]
        new_fields = fields + sign[:, None] * coup[site]
        delta = (sign * lin_v[site]
                 + np.minimum(new_fields, 0.0).sum(axis=1)
                 - np.minimum(fields, 0.0).sum(axis=1))
        accept = log_u[:, t] * temps[t] < -delta
        if np.any(accept):
            v[rows[accept], site[accept]] = 1.0 - v[rows[accept], site[accept]]
            fields[accept] = new_fields[accept]
            e[accept] += delta[accept]
            improved = accept & (e < best_e - 1e-15)
            best_e[improved] = e[improved]
            best_v[improved] = v[improved]

    # Polish each restart's best and any supplied candidates to local minima.
    finals = [
        _greedy_descent(best_v[r], lin_v, lin_h, coup, q.offset)
        for r in range(restarts)
    ]
    if candidates is not None:
        cand = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
        finals.extend(
            _greedy_descent(cand[i], lin_v, lin_h, coup, q.offset)
            for i in range(cand.shape[0])
        )

    out_v, out_e = finals[0]
    out_h, _ = _hidden_response(lin_h + out_v @ coup)
    for cand_v, cand_e in finals[1:]:
        cand_h, _ = _hidden_response(lin_h + cand_v @ coup)
        if cand_e < out_e - 1e-15 or (
            abs(cand_e - out_e) <= 1e-15 and _lex_less(cand_v, cand_h, out_v, out_h)
        ):
            out_v, out_e, out_h = cand_v, cand_e, cand_h
    return ModeResult(v_star=out_v, h_star=out_h, energy=float(out_e),
                      method="annealed", restarts_used=restarts)


def marginal_mode(rbm: Rbm, exact_cap: int = 20) -> ModeResult:
    """Most probable visible state of the model, by exact enumeration.

    Maximizes the unnormalized marginal log p(v) (softplus over hidden
    fields) rather than the joint min_h E(v, h), so the winner is the
    string the model actually assigns the most probability, even when its
    hidden fields are too diffuse to win the joint ranking. Ties break
    toward the lexicographically smallest state (scan order is MSB-first).
    The returned h_star is the closed-form optimal hidden response at the
    winner, and energy is the joint energy of that pair.
    """
    n = rbm.n_visible
    if n > exact_cap:
        raise CapacityError(
            f"marginal mode search enumerates 2^{n} states (cap {exact_cap})")
    best_lp = -np.inf
    best_v = None
    states = all_bitstrings(n)
    for lo in range(0, states.shape[0], _ENUM_CHUNK):
        chunk = states[lo: lo + _ENUM_CHUNK].astype(np.float64)
        lp = chunk @ rbm.a + softplus(rbm.b + chunk @ rbm.W).sum(axis=1)
        k = int(np.argmax(lp))  # argmax keeps the first (lex-smallest) maximizer
        if lp[k] > best_lp:
            best_lp = float(lp[k])
            best_v = chunk[k]
    fields = rbm.b + best_v @ rbm.W
    h_star = (fields > 0.0).astype(np.float64)
    energy = float(-(best_v @ rbm.a) - np.maximum(fields, 0.0).sum())
    return ModeResult(v_star=best_v, h_star=h_star, energy=energy,
                      method="marginal", restarts_used=0)


def best_candidate_mode(rbm: Rbm, candidates: np.ndarray) -> ModeResult:
    """Most probable visible state among a set of candidates.

    Ranks candidates by the unnormalized marginal log p(v) (softplus over
    hidden fields, i.e. the amplitude the model assigns to each string)
    and pairs the winner with its closed-form optimal hidden response;
    ties break toward the lexicographically smallest visible state. The
    marginal ranking matters: the joint energy min_h E(v, h) sees only
    saturated hidden fields (relu), so a string carrying diffuse mass
    across many near-zero fields can be the true probability leader while
    losing the joint ranking by up to m*log(2).

    This restricted search is the right tool when the modes of interest
    are known to lie on dataset strings: the unrestricted joint mode of a
    weakly coupled model can sit on a background string (all zeros for
    sparse data) whose outer product v* h*^T is zero and carries no
    weight information.
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if cand.size == 0:
        raise ConfigError("candidate mode search needs a nonempty set")
    if cand.shape[1] != rbm.n_visible:
        raise DimensionError(
            f"candidates must be (M, {rbm.n_visible}), got {cand.shape}")
    fields = rbm.b + cand @ rbm.W
    log_ptilde = cand @ rbm.a + softplus(fields).sum(axis=1)
    tied = np.flatnonzero(log_ptilde == log_ptilde.max())
    k = tied[np.lexsort(cand[tied].T[::-1])[0]] if tied.size > 1 else tied[0]
    h_star = (fields[k] > 0.0).astype(np.float64)
    energy = float(-(cand[k] @ rbm.a) - np.maximum(fields[k], 0.0).sum())
    return ModeResult(v_star=cand[k].copy(), h_star=h_star,
                      energy=energy, method="candidates",
                      restarts_used=0)


def find_mode(rbm: Rbm, rng: np.random.Generator | None = None,
              candidates: np.ndarray | None = None,
              exact_cap: int = 20) -> ModeResult:
    """Mode of p(v, h): exact enumeration when feasible, annealing otherwise."""
    q = to_qubo(rbm)
    if rbm.n_visible <= exact_cap:
        return solve_exact(q)
    if rng is None:
        raise ConfigError("annealed mode search needs an rng")
    return solve_anneal(q, AnnealConfig(), rng, candidates=candidates)
