"""Ground-state structure of an S=1 central spin.

Zero-field splitting plus electron Zeeman Hamiltonian, eigenstructure with
deterministic gauge and adiabatic level tags, field sweeps of the transition
frequencies and their field derivatives (clock-transition analysis).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.transform import Rotation

from .constants import G_FREE, electron_gamma

#: Fixed level tags, listed in B=0 ascending order for D, E > 0.
LABELS = ("0", "-", "+")
#: Ordered level pairs reported by transition tables.
PAIRS = (("0", "-"), ("0", "+"), ("-", "+"))
PAIR_NAMES = ("01", "02", "12")

DEGENERACY_GAP = 1e-9  # GHz
SEED_FIELD = 1e-3  # mT, symmetry-breaking field for degenerate labeling
MAX_TRACK_STEP = 1.0  # mT


def spin_matrices(s):
    """Return (Sx, Sy, Sz) for spin quantum number ``s`` in the |m> basis, m descending."""
    s = float(s)
    dim = int(round(2 * s + 1))
    m = s - np.arange(dim)
    sp = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        # <m+1|S+|m>
        sp[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    sx = (sp + sp.conj().T) / 2
    sy = (sp - sp.conj().T) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


@lru_cache(maxsize=None)
def _spin_ops_cached(two_s):
    return np.array(spin_matrices(two_s / 2))


def spin_ops(s):
    """Spin operators stacked into an array of shape (3, 2s+1, 2s+1)."""
    return _spin_ops_cached(int(round(2 * s)))


@dataclass(frozen=True)
class SpinSystem:
    """S=1 central spin: ZFS parameters in GHz, scalar g, Euler-angle frame.

    ``frame`` holds intrinsic ZYZ Euler angles (rad) rotating the molecular ZFS
    frame into the laboratory frame.
    """

    D: float
    E: float = 0.0
    g: float = G_FREE
    frame: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not np.isfinite(self.D) or not np.isfinite(self.E):
            raise ValueError("D and E must be finite")
        if abs(self.E) > abs(self.D) / 3 + 1e-12:
            raise ValueError(
                f"|E|={abs(self.E)} exceeds |D|/3={abs(self.D) / 3}; reorder the principal axes"
            )
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")
        object.__setattr__(self, "frame", tuple(float(a) for a in self.frame))
        if len(self.frame) != 3:
            raise ValueError("frame must hold 3 Euler angles")

    @property
    def gamma_e(self):
        """Electron gyromagnetic ratio, GHz/mT."""
        return electron_gamma(self.g)

    @property
    def rotation(self):
        """3x3 matrix taking molecular-frame vectors to the laboratory frame."""
        return Rotation.from_euler("ZYZ", self.frame).as_matrix()

    def zfs_tensor(self):
        """Traceless ZFS tensor in the laboratory frame, GHz."""
        d_mol = np.diag([-self.D / 3 + self.E, -self.D / 3 - self.E, 2 * self.D / 3])
        r = self.rotation
        return r @ d_mol @ r.T

    def molecular_z(self):
        return self.rotation[:, 2]


def as_field(b):
    """Validate a laboratory-frame field vector in mT."""
    b = np.asarray(b, dtype=float).reshape(3)
    if not np.all(np.isfinite(b)):
        raise ValueError(f"field components must be finite, got {b}")
    return b


def build_hamiltonian(sys, field):
    """S=1 Hamiltonian S.D.S + gamma_e B.S in GHz, laboratory-frame spin basis."""
    b = as_field(field)
    s = spin_ops(1)
    d = sys.zfs_tensor()
    h = np.einsum("iab,ij,jbc->ac", s, d, s) + sys.gamma_e * np.einsum("i,iab->ab", b, s)
    return (h + h.conj().T) / 2


@dataclass
class LevelSet:
    """Eigenstructure of the central spin.

    ``energies`` and the columns of ``vectors`` are listed in ``labels`` order.
    """

    energies: np.ndarray
    vectors: np.ndarray
    labels: tuple = LABELS

    def index(self, label):
        return self.labels.index(label)

    def energy(self, label):
        return float(self.energies[self.index(label)])

    def vector(self, label):
        return self.vectors[:, self.index(label)]

    def ordered(self, labels=LABELS):
        """Return a copy whose columns follow ``labels``."""
        idx = [self.index(l) for l in labels]
        return LevelSet(self.energies[idx].copy(), self.vectors[:, idx].copy(), tuple(labels))


def fix_gauge(vectors):
    """Make the largest-magnitude component of each column real and non-negative."""
    v = np.array(vectors, dtype=complex)
    for k in range(v.shape[1]):
        col = v[:, k]
        mags = np.abs(col)
        j = int(np.argmax(mags >= mags.max() - 1e-12))
        if mags[j] > 0:
            v[:, k] = col * (np.conj(col[j]) / mags[j])
    return v


def _canonical_degenerate_basis(vecs):
    """Deterministic orthonormal basis of span(vecs): Gram-Schmidt of projected unit vectors."""
    proj = vecs @ vecs.conj().T
    n = vecs.shape[0]
    out = []
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        w = proj @ e
        for u in out:
            w = w - u * (u.conj() @ w)
        nrm = np.linalg.norm(w)
        if nrm > 1e-6:
            out.append(w / nrm)
        if len(out) == vecs.shape[1]:
            break
    return np.array(out).T


def diagonalize(h, tol=1e-10):
    """Hermitian eigendecomposition with ascending energies and a fixed gauge.

    Labels are assigned in ascending order; use :func:`levels` for physically
    tagged states of a :class:`SpinSystem`.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    dev = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if dev > tol:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    # canonical bases inside degenerate blocks
    start = 0
    n = len(w)
    while start < n:
        stop = start + 1
        while stop < n and w[stop] - w[stop - 1] < DEGENERACY_GAP:
            stop += 1
        if stop - start > 1:
            v[:, start:stop] = _canonical_degenerate_basis(v[:, start:stop])
        start = stop
    v = fix_gauge(v)
    labels = LABELS if n == 3 else tuple(str(i) for i in range(n))
    return LevelSet(w, v, labels)


def _degenerate_at_zero(sys):
    w = np.linalg.eigvalsh(build_hamiltonian(sys, np.zeros(3)))
    return np.min(np.diff(w)) < DEGENERACY_GAP


def zero_field_levels(sys, axis=(0.0, 0.0, 1.0)):
    """Tagged levels at B=0.

    |0> is the level with the largest weight on the m=0 state along the
    molecular z axis; of the remaining two the lower is |->. Degenerate pairs
    are resolved by a small seed field along ``axis``.
    """
    h0 = build_hamiltonian(sys, np.zeros(3))
    base = diagonalize(h0)
    vecs = base.vectors
    energies = base.energies
    if _degenerate_at_zero(sys):
        axis = _unit(axis)
        seeded = diagonalize(build_hamiltonian(sys, SEED_FIELD * axis))
        # project seeded states onto the B=0 eigenspaces
        vecs = np.empty_like(seeded.vectors)
        for k in range(3):
            j = int(np.argmin(np.abs(base.energies - seeded.energies[k])))
            block = np.abs(base.energies - base.energies[j]) < DEGENERACY_GAP
            p = base.vectors[:, block] @ base.vectors[:, block].conj().T
            vecs[:, k] = p @ seeded.vectors[:, k]
        # Loewdin orthonormalization keeps the seeded character
        u, _, vh = np.linalg.svd(vecs)
        vecs = fix_gauge(u @ vh)
        energies = np.real(np.einsum("ak,ab,bk->k", vecs.conj(), h0, vecs))
        order = np.argsort(seeded.energies, kind="stable")
        vecs, energies = vecs[:, order], energies[order]
    # tag |0>
    s = spin_ops(1)
    sn = np.einsum("i,iab->ab", sys.molecular_z(), s)
    w, v = np.linalg.eigh(sn)
    m0 = v[:, int(np.argmin(np.abs(w)))]
    weight0 = np.abs(m0.conj() @ vecs) ** 2
    i0 = int(np.argmax(weight0))
    rest = [k for k in range(3) if k != i0]
    rest.sort(key=lambda k: (energies[k], k))
    order = [i0] + rest
    return LevelSet(np.asarray(energies)[order], fix_gauge(vecs[:, order]), LABELS)


def _unit(axis):
    a = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("axis must be non-zero")
    return a / n


def _match(prev, cur):
    """Assign current eigenvectors to previous labels by maximal overlap."""
    ov = np.abs(prev.vectors.conj().T @ cur.vectors)
    rows, cols = linear_sum_assignment(-ov)
    perm = cols[np.argsort(rows)]
    vecs = cur.vectors[:, perm]
    # keep phase continuity with the previous step
    ph = np.einsum("ak,ak->k", prev.vectors.conj(), vecs)
    ph = np.where(np.abs(ph) > 0, ph / np.abs(ph), 1.0)
    return LevelSet(cur.energies[perm], vecs * ph.conj(), prev.labels), ov[rows, cols]


def track_levels(sys, axis, b_values, start=None):
    """Tagged levels along ``b_values * axis``, continued adiabatically from B=0.

    Extra sub-steps are inserted so that no step exceeds 1 mT.
    """
    axis = _unit(axis)
    b_values = np.asarray(b_values, dtype=float)
    cur = start if start is not None else zero_field_levels(sys, axis)
    b_prev = 0.0 if start is None else None
    out = []
    for b in b_values:
        if b_prev is None:
            b_prev = b
        nsub = max(1, int(np.ceil(abs(b - b_prev) / MAX_TRACK_STEP)))
        for bb in np.linspace(b_prev, b, nsub + 1)[1:]:
            cur, _ = _match(cur, diagonalize(build_hamiltonian(sys, bb * axis)))
        out.append(LevelSet(cur.energies.copy(), fix_gauge(cur.vectors), cur.labels))
        b_prev = b
    return out


def levels(sys, field):
    """Tagged levels at a laboratory field (mT), continued from B=0 along the field direction."""
    b = as_field(field)
    mag = np.linalg.norm(b)
    if mag == 0:
        return zero_field_levels(sys)
    return track_levels(sys, b / mag, [mag])[0]


@dataclass
class TransitionTable:
    """Transition frequencies (GHz) and field derivatives along a sweep.

    Arrays are indexed [field point, pair] with pairs ordered as ``PAIRS``.
    Derivatives are ``None`` when the grid has fewer than 3 points.
    """

    b: np.ndarray
    energies: np.ndarray
    freqs: np.ndarray
    d1: np.ndarray = None
    d2: np.ndarray = None
    flags: list = field(default_factory=list)

    def column(self, pair):
        if isinstance(pair, str):
            k = PAIR_NAMES.index(pair)
        else:
            k = PAIRS.index(tuple(pair))
        return self.freqs[:, k]


def transition_map(sys, axis, b_grid):
    """Transition frequencies with adiabatically tracked labels along a field sweep."""
    b_grid = np.asarray(b_grid, dtype=float)
    if b_grid.ndim != 1 or len(b_grid) == 0:
        raise ValueError("b_grid must be a non-empty 1-D sequence")
    if np.any(np.diff(b_grid) <= 0):
        raise ValueError("b_grid must be strictly ascending")
    axis = _unit(axis)
    # continue from B=0 to the first point, then along the grid
    if b_grid[0] == 0:
        first = zero_field_levels(sys, axis)
        rest = track_levels(sys, axis, b_grid[1:], start=first) if len(b_grid) > 1 else []
        lvls = [first] + rest
    elif b_grid[0] > 0:
        lvls = track_levels(sys, axis, b_grid)
    else:
        # negative fields: continue from B=0 along -axis to the first point
        first = track_levels(sys, -axis, [-b_grid[0]])[0]
        rest = track_levels(sys, axis, b_grid[1:], start=first) if len(b_grid) > 1 else []
        lvls = [first] + rest
    energies = np.array([l.energies for l in lvls])
    idx = {lab: i for i, lab in enumerate(LABELS)}
    freqs = np.abs(
        np.stack([energies[:, idx[b]] - energies[:, idx[a]] for a, b in PAIRS], axis=1)
    )
    table = TransitionTable(b=b_grid, energies=energies, freqs=freqs)
    if len(b_grid) < 3:
        table.flags.append("derivatives unavailable: fewer than 3 grid points")
        return table
    table.d1 = np.gradient(freqs, b_grid, axis=0, edge_order=1)
    table.d2 = np.gradient(table.d1, b_grid, axis=0, edge_order=1)
    return table


@dataclass
class ClockFigure:
    """Per-transition field sensitivity at B=0 along one axis."""

    values: dict
    regime: str  # "quadratic" (GHz/mT^2) or "linear regime" (GHz/mT)
    step: float


def _tracked_freqs(sys, axis, b_values):
    """Transition frequencies at signed field values along ``axis``."""
    out = []
    for b in b_values:
        if b == 0:
            lv = zero_field_levels(sys, axis)
        elif b > 0:
            lv = track_levels(sys, axis, [b])[0]
        else:
            lv = track_levels(sys, -np.asarray(axis, float), [-b])[0]
        out.append([abs(lv.energy(q) - lv.energy(p)) for p, q in PAIRS])
    return np.array(out)


def clock_figure(sys, axis=(0.0, 0.0, 1.0), step=0.1):
    """Curvature (or slope when E=0) of each transition at B=0.

    Uses a 5-point central stencil with the given step (mT). With E=0 the
    |+-1> states carry a linear Zeeman shift, so the slope magnitude is
    reported instead, tagged "linear regime".
    """
    axis = _unit(axis)
    h = float(step)
    f = _tracked_freqs(sys, axis, [-2 * h, -h, 0.0, h, 2 * h])
    names = PAIR_NAMES
    if abs(sys.E) < 1e-12:
        # one-sided: B -> -B swaps the |+-1> tags, so only B > 0 is meaningful
        fp = _tracked_freqs(sys, axis, [h, 2 * h, 3 * h, 4 * h])
        # 4-point forward difference anchored at B=0+ (exact for cubic polynomials)
        slope = (-11 * f[2] + 18 * fp[0] - 9 * fp[1] + 2 * fp[2]) / (6 * h)
        return ClockFigure(dict(zip(names, slope)), "linear regime", h)
    curv = (-f[4] + 16 * f[3] - 30 * f[2] + 16 * f[1] - f[0]) / (12 * h**2)
    return ClockFigure(dict(zip(names, curv)), "quadratic", h)
