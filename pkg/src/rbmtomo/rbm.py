"""Restricted Boltzmann machine over binary {0,1} units.

The model assigns E(v, h) = -(a.v + b.h + v^T W h) and p(v, h) = exp(-E)/Z.
Everything that touches probabilities works in log space: marginals use
softplus terms, the partition function uses a log-sum-exp over the visible
enumeration, so parameter magnitudes up to ~100 stay finite.
"""

from dataclasses import dataclass

import json
import numpy as np
from scipy.special import expit, logsumexp

from .bits import all_bitstrings
from .errors import CapacityError, DimensionError, NumericalError

# Exact enumeration over 2**n visible states is allowed up to this many
# visible units unless a caller overrides the cap explicitly.
DEFAULT_ENUMERATION_CAP = 20

WEIGHT_INIT_SIGMA = 0.01


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


class Rbm:
    """RBM parameters: visible biases `a`, hidden biases `b`, couplings `W`.

    `W` has shape (n_visible, n_hidden). Parameters are mutable (training
    updates them in place) but every update must leave them finite.
    """

    def __init__(self, a, b, W):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        W = np.asarray(W, dtype=np.float64)
        if a.ndim != 1 or b.ndim != 1 or W.shape != (a.size, b.size):
            raise DimensionError(
                f"inconsistent parameter shapes: a{a.shape}, b{b.shape}, W{W.shape}"
            )
        if a.size < 1 or b.size < 1:
            raise DimensionError("need at least one visible and one hidden unit")
        self.a = a
        self.b = b
        self.W = W
        self.check_finite()

    @property
    def n_visible(self) -> int:
        return self.a.size

    @property
    def n_hidden(self) -> int:
        return self.b.size

    def check_finite(self) -> None:
        if not (
            np.all(np.isfinite(self.a))
            and np.all(np.isfinite(self.b))
            and np.all(np.isfinite(self.W))
        ):
            raise NumericalError("RBM parameters contain NaN/Inf")

    @classmethod
    def initialized(cls, n_visible: int, n_hidden: int, rng: np.random.Generator,
                    sigma: float = WEIGHT_INIT_SIGMA) -> "Rbm":
        """Fresh model: zero biases, N(0, sigma^2) weights (near-uniform start)."""
        W = rng.normal(0.0, sigma, size=(n_visible, n_hidden))
        return cls(np.zeros(n_visible), np.zeros(n_hidden), W)

    def copy(self) -> "Rbm":
        return Rbm(self.a.copy(), self.b.copy(), self.W.copy())

    def __repr__(self):
        return f"Rbm(n_visible={self.n_visible}, n_hidden={self.n_hidden})"


@dataclass
class ExactModelTable:
    """Enumerated visible-marginal table: log p~(v) for all 2**n states.

    `log_unnormalized[i]` is log p~(v_i) for basis index i (MSB-first order);
    `log_z` normalizes so exp(log_unnormalized - log_z) sums to one.
    """

    log_unnormalized: np.ndarray
    log_z: float

    @property
    def log_probs(self) -> np.ndarray:
        return self.log_unnormalized - self.log_z

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def _check_v(rbm: Rbm, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != rbm.n_visible:
        raise DimensionError(
            f"visible vector length {v.shape[-1]} != n_visible {rbm.n_visible}"
        )
    return v


def _check_h(rbm: Rbm, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != rbm.n_hidden:
        raise DimensionError(
            f"hidden vector length {h.shape[-1]} != n_hidden {rbm.n_hidden}"
        )
    return h


def energy(rbm: Rbm, v: np.ndarray, h: np.ndarray) -> np.ndarray | float:
    """E(v, h) = -(a.v + b.h + v^T W h); batched over leading axes."""
    v = _check_v(rbm, v)
    h = _check_h(rbm, h)
    e = -(v @ rbm.a + h @ rbm.b + np.sum((v @ rbm.W) * h, axis=-1))
    if e.ndim == 0:
        return float(e)
    return e


def log_unnormalized_pv(rbm: Rbm, v: np.ndarray) -> np.ndarray | float:
    """log p~(v) = a.v + sum_j softplus(b_j + (v W)_j); batched."""
    v = _check_v(rbm, v)
    out = v @ rbm.a + np.sum(softplus(v @ rbm.W + rbm.b), axis=-1)
    if out.ndim == 0:
        return float(out)
    return out


def cond_h_given_v(rbm: Rbm, v: np.ndarray) -> np.ndarray:
    """p(h_j = 1 | v) = sigmoid(b_j + (v W)_j); batched."""
    v = _check_v(rbm, v)
    return expit(v @ rbm.W + rbm.b)


def cond_v_given_h(rbm: Rbm, h: np.ndarray) -> np.ndarray:
    """p(v_i = 1 | h) = sigmoid(a_i + (W h)_i); batched."""
    h = _check_h(rbm, h)
    return expit(h @ rbm.W.T + rbm.a)


def exact_table(rbm: Rbm, cap: int = DEFAULT_ENUMERATION_CAP) -> ExactModelTable:
    """Enumerate log p~(v) over all visible states and the log partition function.

    Cost is O(2**n_visible * n_hidden); refuses above `cap` visible units.
    """
    n = rbm.n_visible
    if n > cap:
        raise CapacityError(
            f"exact enumeration needs 2^{n} visible states (cap {cap}); "
            "use the sampling-based paths instead"
        )
    states = all_bitstrings(n).astype(np.float64)
    log_un = states @ rbm.a + np.sum(softplus(states @ rbm.W + rbm.b), axis=1)
    return ExactModelTable(log_unnormalized=log_un, log_z=float(logsumexp(log_un)))


def exact_kl_gradient(rbm: Rbm, q: np.ndarray,
                      cap: int = DEFAULT_ENUMERATION_CAP):
    """Exact gradient of KL(q || p) w.r.t. (W, a, b).

    `q` is a probability vector over all 2**n_visible basis states
    (MSB-first index order). The positive phase averages (v, E[h|v]) under
    q; the negative phase takes the same statistics under the exact model
    distribution. Returns (dW, da, db) with the KL-descent direction being
    the negative of each.
    """
    n = rbm.n_visible
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (2**n,):
        raise DimensionError(f"q must have shape ({2**n},), got {q.shape}")
    table = exact_table(rbm, cap=cap)
    p = table.probs
    states = all_bitstrings(n).astype(np.float64)
    ph = expit(states @ rbm.W + rbm.b)  # E[h|v] for every v

    pos_v = q @ states
    pos_h = q @ ph
    pos_W = states.T @ (q[:, None] * ph)

    neg_v = p @ states
    neg_h = p @ ph
    neg_W = states.T @ (p[:, None] * ph)

    dW = -pos_W + neg_W
    da = -pos_v + neg_v
    db = -pos_h + neg_h
    return dW, da, db


def save_checkpoint(rbm: Rbm, path) -> None:
    """Write the model as JSON: {"n", "m", "a", "b", "W"} with W row-indexed
    by visible unit. Floats keep full precision (exact round trip)."""
    payload = {
        "n": rbm.n_visible,
        "m": rbm.n_hidden,
        "a": rbm.a.tolist(),
        "b": rbm.b.tolist(),
        "W": rbm.W.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> Rbm:
    with open(path) as fh:
        payload = json.load(fh)
    rbm = Rbm(payload["a"], payload["b"], payload["W"])
    if rbm.n_visible != payload["n"] or rbm.n_hidden != payload["m"]:
        raise DimensionError("checkpoint dimensions do not match its arrays")
    return rbm
