"""Target quantum states (nonnegative amplitudes) and measurement datasets.

States live on the 2**n computational basis with MSB-first indexing (see
`bits`). Measurement data is synthesized by i.i.d. draws from |psi|^2 or
from an explicit outcome distribution.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .bits import all_bitstrings, bits_to_string, string_to_bits
from .errors import CapacityError, ConfigError, DimensionError, NumericalError

TFFIM_SPIN_CAP = 16
TORIC_QUBIT_CAP = 20
_DENSE_DIAG_MAX_SPINS = 12


@dataclass
class TargetState:
    """Nonnegative real amplitudes over the computational basis, L2-normalized."""

    n_qubits: int
    amplitudes: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise DimensionError(
                f"amplitude vector must have length 2^{self.n_qubits}"
            )
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")
        norm = float(np.sum(self.amplitudes**2))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"amplitudes not normalized: sum of squares {norm}")

    @classmethod
    def from_distribution(cls, dist: "OutcomeDistribution", label: str = ""):
        """Positive wavefunction psi(v) = sqrt(q(v)) matching a distribution."""
        return cls(n_qubits=dist.n_qubits, amplitudes=np.sqrt(dist.probs),
                   label=label)

    def distribution(self) -> "OutcomeDistribution":
        return OutcomeDistribution(n_qubits=self.n_qubits,
                                   probs=self.amplitudes**2)


@dataclass
class OutcomeDistribution:
    """Probability vector over all 2**n measurement outcomes."""

    n_qubits: int
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (2**self.n_qubits,):
            raise DimensionError(f"probs must have length 2^{self.n_qubits}")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")


@dataclass
class MeasurementDataset:
    """Projective measurement outcomes: one n-bit row per shot."""

    n_qubits: int
    outcomes: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.uint8)
        if self.outcomes.size == 0:
            self.outcomes = self.outcomes.reshape(0, self.n_qubits)
        if self.outcomes.ndim != 2 or self.outcomes.shape[1] != self.n_qubits:
            raise DimensionError(
                f"outcomes must be (count, {self.n_qubits}), got {self.outcomes.shape}"
            )

    @property
    def total_count(self) -> int:
        return self.outcomes.shape[0]

    def unique(self):
        """Distinct outcome rows and their multiplicities."""
        return np.unique(self.outcomes, axis=0, return_counts=True)

    def empirical_probs(self) -> np.ndarray:
        """Empirical distribution over all 2**n basis states."""
        if self.total_count == 0:
            raise ValueError("empty dataset has no empirical distribution")
        weights = 1 << np.arange(self.n_qubits - 1, -1, -1, dtype=np.int64)
        idx = self.outcomes.astype(np.int64) @ weights
        counts = np.bincount(idx, minlength=2**self.n_qubits)
        return counts / self.total_count


def ghz(n: int) -> TargetState:
    """(|0...0> + |1...1>)/sqrt(2)."""
    if n < 1:
        raise ConfigError("need n >= 1")
    amps = np.zeros(2**n)
    amps[0] = amps[-1] = 1.0 / np.sqrt(2.0)
    return TargetState(n_qubits=n, amplitudes=amps, label="ghz")


def w_state(n: int) -> TargetState:
    """Equal superposition of the n one-hot basis states."""
    if n < 1:
        raise ConfigError("need n >= 1")
    amps = np.zeros(2**n)
    for i in range(n):
        amps[1 << (n - 1 - i)] = 1.0 / np.sqrt(n)
    return TargetState(n_qubits=n, amplitudes=amps, label="w")


def depolarized_w_distribution(n: int, p: float) -> OutcomeDistribution:
    """Computational-basis outcome distribution of the depolarized W state.

    q(v) = (1-p) |<v|W>|^2 + p / 2^n: the pure W peaks on a uniform
    background of strength p.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"noise level must be in [0, 1], got {p}")
    probs = np.full(2**n, p / 2**n)
    for i in range(n):
        probs[1 << (n - 1 - i)] += (1.0 - p) / n
    return OutcomeDistribution(n_qubits=n, probs=probs)


def triangular_edges(rows: int, cols: int) -> list[tuple[int, int]]:
    """Bond list of the periodic triangular lattice (square + one diagonal).

    Every site couples to its right, down, and down-right neighbors with
    periodic wrapping. Wrapped bonds that land on the site itself are
    dropped; doubled bonds on 1- or 2-wide lattices are kept (they are the
    faithful periodic couplings).
    """
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for dr, dc in ((0, 1), (1, 0), (1, 1)):
                j = ((r + dr) % rows) * cols + (c + dc) % cols
                if i != j:
                    edges.append((min(i, j), max(i, j)))
    return edges


def _tffim_diagonal(n_spins: int, edges, J: float) -> np.ndarray:
    bits = all_bitstrings(n_spins)
    spins = 1.0 - 2.0 * bits.astype(np.float64)
    diag = np.zeros(2**n_spins)
    for i, j in edges:
        diag += J * spins[:, i] * spins[:, j]
    return diag


def _flip_indices(n_spins: int) -> list[np.ndarray]:
    dim = 2**n_spins
    idx = np.arange(dim)
    return [idx ^ (1 << (n_spins - 1 - i)) for i in range(n_spins)]


def tffim_ground_state(rows: int, cols: int, J: float = 1.0,
                       h: float = 1.0) -> TargetState:
    """Ground state of the transverse-field Ising model on the triangular
    lattice with antiferromagnetic coupling J and field h, periodic
    boundaries.

    The Hamiltonian J sum_<ij> sz_i sz_j - h sum_i sx_i has nonpositive
    off-diagonal elements, so its ground vector is nonnegative
    (Perron-Frobenius); the returned amplitudes are sign-fixed, clamped at
    zero, and renormalized. Dense diagonalization below 13 spins, Lanczos
    above. Raises on a (near-)degenerate ground space rather than
    returning an arbitrary mixture.
    """
    n_spins = rows * cols
    if n_spins > TFFIM_SPIN_CAP:
        raise CapacityError(f"{n_spins} spins exceeds the cap of {TFFIM_SPIN_CAP}")
    if rows < 1 or cols < 1:
        raise ConfigError("lattice must have at least one site")
    edges = triangular_edges(rows, cols)
    dim = 2**n_spins
    diag = _tffim_diagonal(n_spins, edges, J)
    flips = _flip_indices(n_spins)

    if n_spins <= _DENSE_DIAG_MAX_SPINS:
        ham = np.diag(diag)
        cols_idx = np.arange(dim)
        for flip in flips:
            ham[flip, cols_idx] += -h
        vals, vecs = np.linalg.eigh(ham)
        gap = float(vals[1] - vals[0]) if dim > 1 else np.inf
        ground_energy = float(vals[0])
        psi = vecs[:, 0]
    else:
        def matvec(x):
            y = diag * x
            for flip in flips:
                y -= h * x[flip]
            return y

        op = spla.LinearOperator((dim, dim), matvec=matvec, dtype=np.float64)
        v0 = np.full(dim, 1.0 / np.sqrt(dim))
        try:
            vals, vecs = spla.eigsh(op, k=2, which="SA", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"Lanczos did not converge: {exc}") from exc
        order = np.argsort(vals)
        vals = vals[order]
        vecs = vecs[:, order]
        gap = float(vals[1] - vals[0])
        ground_energy = float(vals[0])
        psi = vecs[:, 0]
        residual = np.linalg.norm(matvec(psi) - ground_energy * psi)
        if residual > 1e-8:
            raise NumericalError(f"Lanczos residual {residual:.2e} > 1e-8")

    if gap < 1e-10:
        raise NumericalError(
            f"ground space is (near-)degenerate: gap {gap:.2e}; "
            "a single target state is not well defined"
        )
    psi = psi * np.sign(psi[int(np.argmax(np.abs(psi)))])
    if psi.min() < -1e-9:
        raise NumericalError(
            f"ground vector has a negative entry {psi.min():.2e}; "
            "nonnegativity assumption violated"
        )
    psi = np.clip(psi, 0.0, None)
    psi /= np.linalg.norm(psi)
    return TargetState(n_qubits=n_spins, amplitudes=psi,
                       label=f"tffim_{rows}x{cols}")


def toric_code_ground_state(L: int) -> TargetState:
    """Loop-sector toric code ground state on an L x L periodic lattice.

    Qubits live on the 2*L^2 edges; the state is the equal superposition
    over all bitstrings reachable from |0...0> by products of vertex star
    operators (closed loop configurations).
    """
    n_qubits = 2 * L * L
    if n_qubits > TORIC_QUBIT_CAP:
        raise CapacityError(f"{n_qubits} qubits exceeds the cap of {TORIC_QUBIT_CAP}")
    if L < 1:
        raise ConfigError("need L >= 1")

    def bitmask(pos: int) -> int:
        return 1 << (n_qubits - 1 - pos)

    star_masks = []
    for r in range(L):
        for c in range(L):
            mask = 0
            # horizontal edges east and west of the vertex, vertical south and north
            for pos in (r * L + c,
                        r * L + (c - 1) % L,
                        L * L + r * L + c,
                        L * L + ((r - 1) % L) * L + c):
                mask ^= bitmask(pos)
            star_masks.append(mask)

    subsets = np.arange(2**(L * L), dtype=np.int64)
    flipped = np.zeros_like(subsets)
    for k, mask in enumerate(star_masks):
        sel = (subsets >> k) & 1
        flipped ^= np.where(sel == 1, mask, 0)
    support = np.unique(flipped)
    amps = np.zeros(2**n_qubits)
    amps[support] = 1.0 / np.sqrt(support.size)
    return TargetState(n_qubits=n_qubits, amplitudes=amps, label=f"toric_{L}x{L}")


def sample_measurements(dist_or_state, count: int,
                        rng: np.random.Generator) -> MeasurementDataset:
    """Draw `count` i.i.d. outcomes from a state (|psi|^2) or distribution."""
    if isinstance(dist_or_state, TargetState):
        probs = dist_or_state.amplitudes**2
        n = dist_or_state.n_qubits
    elif isinstance(dist_or_state, OutcomeDistribution):
        probs = dist_or_state.probs
        n = dist_or_state.n_qubits
    else:
        raise TypeError(f"cannot sample from {type(dist_or_state).__name__}")
    if count < 0:
        raise ConfigError("count must be nonnegative")
    if count == 0:
        return MeasurementDataset(n_qubits=n,
                                  outcomes=np.zeros((0, n), dtype=np.uint8))
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    idx = np.minimum(idx, probs.size - 1)
    return MeasurementDataset(n_qubits=n, outcomes=all_bitstrings(n)[idx])


def sample_ghz(n: int, count: int, rng: np.random.Generator) -> MeasurementDataset:
    """Closed-form GHZ measurement draws (works at any n)."""
    branch = rng.integers(0, 2, size=count).astype(np.uint8)
    return MeasurementDataset(n_qubits=n,
                              outcomes=np.repeat(branch[:, None], n, axis=1))


def sample_w(n: int, count: int, rng: np.random.Generator) -> MeasurementDataset:
    """Closed-form W-state measurement draws (works at any n)."""
    hot = rng.integers(0, n, size=count)
    outcomes = np.zeros((count, n), dtype=np.uint8)
    outcomes[np.arange(count), hot] = 1
    return MeasurementDataset(n_qubits=n, outcomes=outcomes)


def sample_depolarized_w(n: int, p: float, count: int,
                         rng: np.random.Generator) -> MeasurementDataset:
    """Closed-form depolarized-W draws: W outcome w.p. 1-p, uniform bits w.p. p."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"noise level must be in [0, 1], got {p}")
    noisy = rng.random(count) < p
    hot = rng.integers(0, n, size=count)
    uniform = rng.integers(0, 2, size=(count, n)).astype(np.uint8)
    outcomes = np.zeros((count, n), dtype=np.uint8)
    outcomes[np.arange(count), hot] = 1
    outcomes[noisy] = uniform[noisy]
    return MeasurementDataset(n_qubits=n, outcomes=outcomes)


def save_dataset(dataset: MeasurementDataset, path) -> None:
    """Plain-text dataset: '#' header lines, then one bitstring per line."""
    lines = [f"# n_qubits={dataset.n_qubits}"]
    for key in ("state", "seed"):
        if key in dataset.meta:
            lines.append(f"# {key}={dataset.meta[key]}")
    lines.extend(bits_to_string(row) for row in dataset.outcomes)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> MeasurementDataset:
    meta = {}
    n_qubits = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                key = key.strip()
                if key == "n_qubits":
                    n_qubits = int(value)
                elif key:
                    meta[key] = value.strip()
                continue
            rows.append(string_to_bits(line))
    if n_qubits is None:
        raise ValueError(f"{path}: missing '# n_qubits=' header")
    if rows:
        outcomes = np.stack(rows)
        if outcomes.shape[1] != n_qubits:
            raise DimensionError(
                f"{path}: outcome width {outcomes.shape[1]} != n_qubits {n_qubits}"
            )
    else:
        outcomes = np.zeros((0, n_qubits), dtype=np.uint8)
    return MeasurementDataset(n_qubits=n_qubits, outcomes=outcomes, meta=meta)
