"""Hahn-echo coherence of the central spin by generalized cluster-correlation expansion.

Every cluster is evolved exactly together with the full S=1 central spin.
Cluster contributions are divided by their subcluster contributions (the
empty cluster included), and the product over all clusters gives the
coherence. Bath states are either fully mixed or sampled product states with
mean-field couplings to spins outside the cluster.

Propagators use U(t) = exp(-i 2 pi H t) with H in GHz and t in ns.
"""

import hashlib
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .constants import NS_PER_US
from .spin import LABELS, as_field, build_hamiltonian, levels, spin_ops

MAX_CLUSTER_DIM = 512
MAX_EXACT_DIM = 1024
DIVISOR_FLOOR = 1e-10
# sampled products above this magnitude are numerically unstable and left out of the mean
MASK_LIMIT = 1.0 + 1e-6
CHUNK_ELEMENTS = 3_000_000

# unit conversions to GHz
_MHZ = 1e-3
_KHZ = 1e-6
_GAMMA_B = 1e-6  # (MHz/T) * mT -> GHz


class LabelingError(ValueError):
    """Qubit levels cannot be resolved at the working field."""


class ClusterTooLarge(ValueError):
    """Cluster Hilbert-space dimension exceeds the configured cap."""


@dataclass(frozen=True)
class QubitSubspace:
    """Two tagged central-spin levels and their eigenvectors at the working field."""

    a: str
    b: str
    vec_a: np.ndarray
    vec_b: np.ndarray
    vec_rest: np.ndarray
    frequency: float  # GHz


def resolve_qubit(sys, field, pair=("0", "-")):
    """Resolve the qubit pair of tagged levels at ``field`` (mT)."""
    a, b = pair
    if a == b or a not in LABELS or b not in LABELS:
        raise LabelingError(f"qubit pair must be two distinct labels from {LABELS}, got {pair}")
    lv = levels(sys, field)
    gap = abs(lv.energy(a) - lv.energy(b))
    if gap < 1e-9:
        raise LabelingError(f"levels |{a}> and |{b}> are degenerate at B={list(as_field(field))} mT")
    (c,) = [l for l in LABELS if l not in pair]
    return QubitSubspace(a, b, lv.vector(a), lv.vector(b), lv.vector(c), gap)


@dataclass(frozen=True)
class EchoProtocol:
    """Hahn echo pi/2 - tau - pi - tau with ideal instantaneous pulses; ``tau`` in us."""

    tau: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tau, dtype=float).ravel()
        if np.any(t < 0):
            raise ValueError("tau values must be non-negative")
        if np.any(np.diff(t) < 0):
            raise ValueError("tau values must be ascending")
        object.__setattr__(self, "tau", t)

    @classmethod
    def from_total_time(cls, two_tau):
        return cls(np.asarray(two_tau, dtype=float) / 2)

    @property
    def two_tau(self):
        return 2 * self.tau


@dataclass
class CoherenceCurve:
    """Echo coherence L(2 tau), normalized to L(0) = 1."""

    times: np.ndarray  # 2 tau, us
    L: np.ndarray
    mode: str = "mixed"
    n_mc: int = 0
    seed: int = None
    provenance: dict = field(default_factory=dict)

    @property
    def abs(self):
        return np.abs(self.L)


@dataclass(frozen=True)
class BathState:
    """Sampled product state: projection ``m`` of each spin along unit axis ``axes``."""

    m: np.ndarray
    axes: np.ndarray


# ---------------------------------------------------------------- clusters


def enumerate_clusters(bath, max_order, r_dipole=None):
    """Singletons plus pairs/triples whose members are mutually within ``r_dipole``.

    Clusters are tuples of bath indices, sorted by order and then lexicographically.
    """
    if max_order not in (1, 2, 3):
        raise ValueError(f"max_order must be 1, 2 or 3, got {max_order}")
    r_dipole = bath.r_dipole if r_dipole is None else r_dipole
    n = len(bath)
    out = [(i,) for i in range(n)]
    if max_order == 1 or n < 2:
        return out
    tree = cKDTree(bath.positions)
    pairs = sorted(tree.query_pairs(r_dipole))
    out += pairs
    if max_order == 3:
        nbrs = [set() for _ in range(n)]
        for i, j in pairs:
            nbrs[i].add(j)
            nbrs[j].add(i)
        triples = []
        for i, j in pairs:
            for k in sorted(nbrs[i] & nbrs[j]):
                if k > j:
                    triples.append((i, j, k))
        out += sorted(triples)
    return out


def _subclusters(cluster):
    """Proper subclusters including the empty cluster."""
    for r in range(len(cluster)):
        yield from itertools.combinations(cluster, r)


# ---------------------------------------------------------------- operators


@lru_cache(maxsize=64)
def _operators(two_spins):
    """Kronecker-embedded operators for a central S=1 plus bath spins (2I values)."""
    dims = [t + 1 for t in two_spins]
    db = int(np.prod(dims)) if dims else 1
    D = 3 * db
    s = spin_ops(1)
    sop = np.array([np.kron(s[i], np.eye(db)) for i in range(3)])
    iop = np.zeros((len(dims), 3, D, D), dtype=complex)
    for k, t in enumerate(two_spins):
        ik = spin_ops(t / 2)
        left = int(np.prod(dims[:k])) if k else 1
        right = int(np.prod(dims[k + 1 :])) if k + 1 < len(dims) else 1
        for j in range(3):
            iop[k, j] = np.kron(np.eye(3 * left), np.kron(ik[j], np.eye(right)))
    si = np.einsum("iab,kjbc->kijac", sop, iop) if dims else np.zeros((0, 3, 3, D, D))
    pidx = list(itertools.combinations(range(len(dims)), 2))
    ii = (
        np.array([np.einsum("iab,jbc->ijac", iop[k], iop[l]) for k, l in pidx])
        if pidx else np.zeros((0, 3, 3, D, D))
    )
    return sop, iop, si, ii, tuple(pidx), D, db


def _spin_state(I, m, axis):
    """State with projection ``m`` of spin ``I`` along unit ``axis``."""
    ops = spin_ops(I)
    if np.allclose(axis, (0, 0, 1)):
        v = np.zeros(int(round(2 * I + 1)), dtype=complex)
        v[int(round(I - m))] = 1.0
        return v
    w, vec = np.linalg.eigh(np.einsum("i,iab->ab", axis, ops))
    return vec[:, int(np.argmin(np.abs(w - m)))]


class _Context:
    """Per-run constants shared by cluster evaluations."""

    def __init__(self, sys, field, bath, qubit=None):
        self.sys = sys
        self.field = as_field(field)
        self.bath = bath
        self.qubit = qubit
        self.hs = build_hamiltonian(sys, self.field)
        self.A = bath.A * _MHZ
        self.gam = bath.gammas
        self.two_I = np.rint(2 * bath.spin_numbers).astype(int)
        n = len(bath)
        self._keys = bath.pairs[:, 0].astype(np.int64) * max(n, 1) + bath.pairs[:, 1]
        self._order = np.argsort(self._keys, kind="stable")
        self._sorted = self._keys[self._order]
        self.Jg = bath.J * _KHZ
        if qubit is not None:
            a, b, c = qubit.vec_a, qubit.vec_b, qubit.vec_rest
            # pi pulse on the qubit pair, identity on the third level
            self.p_pi = np.outer(a, b.conj()) + np.outer(b, a.conj()) + np.outer(c, c.conj())
            self.psi_q = (a + b) / np.sqrt(2)

    def pair_J(self, i, j):
        """GHz tensors T with I_i . T . I_j for index arrays; zeros for uncoupled pairs."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        out = np.zeros(i.shape + (3, 3))
        if len(self._sorted) == 0:
            return out
        key = lo * max(len(self.bath), 1) + hi
        pos = np.clip(np.searchsorted(self._sorted, key), 0, len(self._sorted) - 1)
        hit = (self._sorted[pos] == key) & (i != j)
        T = self.Jg[self._order[pos]]
        T = np.where((i > j)[..., None, None], np.swapaxes(T, -1, -2), T)
        out[hit] = T[hit]
        return out


class _MeanField:
    """Mean-field vectors for one sampled bath state."""

    def __init__(self, ctx, state):
        self.ctx = ctx
        self.state = state
        mvec = state.m[:, None] * state.axes  # (N, 3)
        self.mvec = mvec
        self.h_tot = np.einsum("nij,nj->i", ctx.A, mvec) if len(mvec) else np.zeros(3)
        b = np.zeros((len(mvec), 3))
        P = ctx.bath.pairs
        if len(P):
            # I_i . J . I_j: spin j feels J^T m_i, spin i feels J m_j
            np.add.at(b, P[:, 1], np.einsum("pij,pi->pj", ctx.Jg, mvec[P[:, 0]]))
            np.add.at(b, P[:, 0], np.einsum("pij,pj->pi", ctx.Jg, mvec[P[:, 1]]))
        self.b_tot = b
        self._vecs = {}

    def for_clusters(self, members):
        """(qubit field (n,3), nuclear fields (n,k,3)) excluding in-cluster spins."""
        ctx = self.ctx
        n, k = members.shape
        h = np.repeat(self.h_tot[None], n, axis=0)
        if k == 0:
            return h, np.zeros((n, 0, 3))
        h -= np.einsum("nkij,nkj->ni", ctx.A[members], self.mvec[members])
        b = self.b_tot[members].copy()
        for p in range(k):
            for q in range(k):
                if p != q:
                    # spin q's term I_q . T . I_p acting on spin p
                    T = ctx.pair_J(members[:, q], members[:, p])
                    b[:, p] -= np.einsum("nij,ni->nj", T, self.mvec[members[:, q]])
        return h, b

    def spin_vectors(self, idx, I):
        """Product-state vectors (n, 2I+1) for bath indices ``idx`` of spin I."""
        st = self.state
        d = int(round(2 * I + 1))
        z = np.all(st.axes[idx] == (0.0, 0.0, 1.0), axis=1)
        out = np.zeros((len(idx), d), dtype=complex)
        out[np.arange(len(idx)), np.rint(I - st.m[idx]).astype(int)] = 1.0
        for c in np.flatnonzero(~z):
            out[c] = _spin_state(I, st.m[idx[c]], st.axes[idx[c]])
        return out


def _batch_hamiltonians(ctx, members, two_spins, mf_h=None, mf_b=None):
    """Cluster Hamiltonians (GHz) for clusters sharing the same spin structure."""
    sop, iop, si, ii, pidx, D, db = _operators(two_spins)
    n, k = members.shape
    H = np.broadcast_to(np.kron(ctx.hs, np.eye(db)), (n, D, D)).copy()
    if k:
        H += np.einsum("nkij,kijab->nab", ctx.A[members], si)
        bn = -ctx.gam[members][:, :, None] * ctx.field[None, None, :] * _GAMMA_B
        if mf_b is not None:
            bn = bn + mf_b
        H += np.einsum("nkj,kjab->nab", bn, iop)
        if pidx:
            Jt = np.stack([ctx.pair_J(members[:, u], members[:, v]) for u, v in pidx], axis=1)
            H += np.einsum("npij,pijab->nab", Jt, ii)
    if mf_h is not None:
        H += np.einsum("ni,iab->nab", mf_h, sop)
    return (H + np.conj(np.swapaxes(H, 1, 2))) / 2


def _initial_columns(ctx, members, two_spins, mf=None):
    """Initial vectors (n, D, K) and weights (K,) for the echo."""
    _, _, _, _, _, D, db = _operators(two_spins)
    n, k = members.shape
    if mf is None:
        cols = np.kron(ctx.psi_q[:, None], np.eye(db))  # (D, db)
        return np.broadcast_to(cols, (n, D, db)), np.full(db, 1.0 / db)
    v = np.ones((n, 1), dtype=complex)
    for p in range(k):
        vp = mf.spin_vectors(members[:, p], two_spins[p] / 2)
        v = np.einsum("na,nb->nab", v, vp).reshape(n, -1)
    out = np.einsum("i,nb->nib", ctx.psi_q, v).reshape(n, D, 1)
    return out, np.ones(1)


def _echo(ctx, H, psi0, weights, tau_ns, two_spins):
    """Unnormalized <a|Tr_C rho(2 tau)|b> for a batch of cluster Hamiltonians."""
    _, _, _, _, _, D, db = _operators(two_spins)
    lam, W = np.linalg.eigh(H)
    Wh = np.conj(np.swapaxes(W, 1, 2))
    n, K = psi0.shape[0], psi0.shape[2]
    T = len(tau_ns)
    c = Wh @ psi0  # (n, D, K)
    ph = np.exp(-2j * np.pi * lam[:, None, :] * tau_ns[None, :, None])[..., None]  # (n, T, D, 1)
    x = ph * c[:, None]
    y = W[:, None] @ x  # (n, T, D, K)
    # pi pulse acts on the central-spin factor
    y = (ctx.p_pi @ y.reshape(n, T, 3, db * K)).reshape(n, T, D, K)
    z = (Wh[:, None] @ y) * ph
    Wr = W.reshape(n, 3, db, D)
    wab = np.einsum("qi,nibd->nqbd", np.stack([ctx.qubit.vec_a, ctx.qubit.vec_b]).conj(), Wr)
    proj = wab.reshape(n, 1, 2 * db, D) @ z  # (n, T, 2 db, K)
    la, lb = proj[:, :, :db], proj[:, :, db:]
    return np.einsum("ntbk,ntbk,k->nt", la, lb.conj(), weights)


def _cluster_values(ctx, clusters, tau_ns, state=None, mf=None, workers=1):
    """Normalized L_C for each cluster (n_clusters, T), in the input order."""
    tau_full = np.concatenate([[0.0], tau_ns])
    out = np.empty((len(clusters), len(tau_ns)), dtype=complex)
    groups = {}
    for idx, cl in enumerate(clusters):
        key = tuple(int(ctx.two_I[i]) for i in cl)
        groups.setdefault(key, []).append(idx)
    jobs = []
    for two_spins, idxs in groups.items():
        D = 3 * int(np.prod([t + 1 for t in two_spins]))
        if D > MAX_CLUSTER_DIM:
            raise ClusterTooLarge(f"cluster dimension {D} exceeds cap {MAX_CLUSTER_DIM}")
        K = 1 if state is not None else D // 3
        step = max(1, CHUNK_ELEMENTS // (len(tau_full) * D * max(K, D // 3)))
        for s in range(0, len(idxs), step):
            jobs.append((two_spins, idxs[s : s + step]))

    def run(job):
        two_spins, idxs = job
        members = np.array([clusters[i] for i in idxs], dtype=int).reshape(len(idxs), len(two_spins))
        mf_h = mf_b = None
        if mf is not None:
            mf_h, mf_b = mf.for_clusters(members)
        H = _batch_hamiltonians(ctx, members, two_spins, mf_h, mf_b)
        psi0, w = _initial_columns(ctx, members, two_spins, mf)
        L = _echo(ctx, H, psi0, w, tau_full, two_spins)
        return idxs, L[:, 1:] / L[:, :1]

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for idxs, L in results:
        out[idxs] = L
    return out


def _gcce_product(clusters, values, stats):
    """Combine cluster values into the gCCE product, in enumeration order."""
    T = values.shape[1]
    tilde = {}
    total = np.ones(T, dtype=complex)
    for cl, v in zip(clusters, values):
        div = np.ones(T, dtype=complex)
        for sub in _subclusters(cl):
            div = div * tilde[sub]
        bad = np.abs(div) < DIVISOR_FLOOR
        lt = np.where(bad, 1.0, v / np.where(bad, 1.0, div))
        if bad.any():
            stats["skipped_divisors"] += int(bad.sum())
        tilde[cl] = lt
        total = total * lt
    return total


def masked_mean(samples, limit=MASK_LIMIT):
    """Mean over samples (fixed order) ignoring entries with |L| > ``limit``.

    Returns the mean and the per-time count of masked samples; time points
    where every sample is masked are set to 0.
    """
    arr = np.array(samples)
    ok = np.abs(arr) <= limit
    total = np.zeros(arr.shape[1], dtype=complex)
    for row, keep in zip(arr, ok):
        total += np.where(keep, row, 0)
    count = ok.sum(axis=0)
    mean = np.where(count > 0, total / np.maximum(count, 1), 0)
    return mean, (len(arr) - count).tolist()


def sample_bath_state(bath, rng, mf_axis="z"):
    """Draw each spin's projection uniformly from its 2I+1 values."""
    n = len(bath)
    I = bath.spin_numbers
    m = np.array([I[k] - rng.integers(0, int(round(2 * I[k])) + 1) for k in range(n)], dtype=float)
    return BathState(m, quantization_axes(bath, mf_axis))


def sample_bath_states(bath, n_mc, seed, mf_axis="z"):
    """``n_mc`` product states with common random numbers across bath radii.

    Uniforms are drawn spin by spin in order of distance from the center, so
    enlarging the bath keeps every inner spin's projections unchanged.
    """
    n = len(bath)
    I = bath.spin_numbers
    rank = np.lexsort((np.arange(n), np.linalg.norm(bath.positions, axis=1))) if n else np.zeros(0, int)
    u = np.empty((n, n_mc))
    u[rank] = np.random.default_rng(seed).random((n, n_mc))
    dim = np.rint(2 * np.asarray(I, dtype=float)).astype(int) + 1
    m = np.asarray(I, dtype=float)[:, None] - np.minimum(np.floor(u * dim[:, None]), dim[:, None] - 1)
    axes = quantization_axes(bath, mf_axis)
    return [BathState(m[:, j].copy(), axes) for j in range(n_mc)]


def quantization_axes(bath, mf_axis="z"):
    """Per-spin axes for sampled projections: lab z or the local hyperfine axis A^T z."""
    n = len(bath)
    if mf_axis == "z":
        return np.tile([0.0, 0.0, 1.0], (n, 1))
    if mf_axis == "hyperfine":
        v = np.einsum("nij,i->nj", bath.A, [0.0, 0.0, 1.0]) if n else np.zeros((0, 3))
        nrm = np.linalg.norm(v, axis=1)
        out = np.tile([0.0, 0.0, 1.0], (n, 1))
        ok = nrm > 0
        out[ok] = v[ok] / nrm[ok, None]
        return out
    raise ValueError(f"mf_axis must be 'z' or 'hyperfine', got {mf_axis!r}")


def bath_hash(bath):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(bath.positions).tobytes())
    h.update(np.ascontiguousarray(bath.A).tobytes())
    h.update(np.ascontiguousarray(bath.gammas).tobytes())
    return h.hexdigest()


def canonical_order(bath):
    """Spin order by (position, gamma, I); independent of how ids were assigned."""
    if len(bath) == 0:
        return np.zeros(0, dtype=int)
    pos = bath.positions
    return np.lexsort((bath.spin_numbers, bath.gammas, pos[:, 2], pos[:, 1], pos[:, 0]))


def _reindexed(bath, order):
    if np.array_equal(order, np.arange(len(bath))):
        return bath
    inv = np.argsort(order)
    pairs, J = bath.pairs, bath.J
    if len(pairs):
        pairs = np.sort(inv[pairs], axis=1)
        k = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs, J = pairs[k], J[k]
    meta = {k: v for k, v in bath.meta.items() if k != "_pair_lookup"}
    return type(bath)([bath.spins[k] for k in order], bath.A[order], pairs, J,
                      bath.r_bath, bath.r_dipole, meta)


def _ordered(clusters):
    return [()] + sorted(clusters, key=lambda c: (len(c), c))


def gcce_coherence(sys, field, bath, qubit, protocol, max_order=2, mode="mixed", n_mc=100,
                   seed=0, r_dipole=None, mf_axis="z", workers=1, clusters=None, states=None,
                   mask=True):
    """Hahn-echo coherence by generalized CCE.

    ``mode`` is "mixed" (fully mixed bath in every cluster) or "sampled"
    (product states drawn from ``seed``, arithmetic mean of ``n_mc`` products).
    In sampled mode, per-sample products with |L| > 1 + 1e-6 are unstable
    divisions and are left out of the mean unless ``mask`` is False;
    ``states`` replaces the random draws with given :class:`BathState` objects.
    """
    t0 = time.perf_counter()
    if isinstance(qubit, (tuple, list)):
        qubit = resolve_qubit(sys, field, tuple(qubit))
    # all work happens on a canonically ordered copy so that relabeling spins
    # reproduces the same floating-point operations
    order = canonical_order(bath)
    inv = np.argsort(order)
    cbath = _reindexed(bath, order)
    ctx = _Context(sys, field, cbath, qubit)
    if clusters is None:
        clusters = enumerate_clusters(cbath, max_order, r_dipole)
    else:
        clusters = [tuple(sorted(int(inv[i]) for i in c)) for c in clusters if len(c)]
    clusters = _ordered(clusters)
    tau_ns = protocol.tau * NS_PER_US
    stats = {"skipped_divisors": 0}
    if mode == "mixed":
        values = _cluster_values(ctx, clusters, tau_ns, workers=workers)
        L = _gcce_product(clusters, values, stats)
    elif mode == "sampled":
        if n_mc < 1:
            raise ValueError("n_mc must be >= 1 in sampled mode")
        if states is None:
            states = sample_bath_states(cbath, n_mc, seed, mf_axis)
        else:
            states = [BathState(np.asarray(st.m)[order], np.asarray(st.axes)[order]) for st in states]
        n_mc = len(states)

        def one(state):
            mf = _MeanField(ctx, state)
            st = {"skipped_divisors": 0}
            vals = _cluster_values(ctx, clusters, tau_ns, state=state, mf=mf)
            return _gcce_product(clusters, vals, st), st["skipped_divisors"]

        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                res = list(ex.map(one, states))
        else:
            res = [one(s) for s in states]
        L, masked = masked_mean([l for l, _ in res], MASK_LIMIT if mask else np.inf)
        stats["skipped_divisors"] += sum(sk for _, sk in res)
        stats["masked"] = masked
    else:
        raise ValueError(f"mode must be 'mixed' or 'sampled', got {mode!r}")
    counts = {}
    for c in clusters:
        counts[len(c)] = counts.get(len(c), 0) + 1
    prov = {
        "bath_hash": bath_hash(bath),
        "n_spins": len(bath),
        "cluster_counts": {str(k): v for k, v in sorted(counts.items())},
        "max_order": max_order,
        "skipped_divisors": stats["skipped_divisors"],
        "masked_samples": stats.get("masked"),
        "qubit": [qubit.a, qubit.b],
        "mf_axis": mf_axis if mode == "sampled" else None,
        "wall_time_s": time.perf_counter() - t0,
    }
    return CoherenceCurve(protocol.two_tau.copy(), L, mode, n_mc if mode == "sampled" else 0,
                          seed if mode == "sampled" else None, prov)


# ---------------------------------------------------------------- single-cluster API


def _outer_state(bath, outer_state, mf_axis="z"):
    if outer_state is None or isinstance(outer_state, BathState):
        return outer_state
    m = np.asarray(outer_state, dtype=float)
    return BathState(m, quantization_axes(bath, mf_axis))


def cluster_hamiltonian(sys, field, bath, cluster, outer_state=None, mf_axis="z", qubit=None):
    """Hamiltonian (GHz) of the central spin plus one cluster.

    ``outer_state`` (projections for every bath spin, or a :class:`BathState`)
    adds mean-field couplings from spins outside the cluster.
    """
    cluster = tuple(sorted(cluster))
    ctx = _Context(sys, field, bath, qubit)
    two_spins = tuple(int(ctx.two_I[i]) for i in cluster)
    D = 3 * int(np.prod([t + 1 for t in two_spins]))
    if D > MAX_CLUSTER_DIM:
        raise ClusterTooLarge(f"cluster dimension {D} exceeds cap {MAX_CLUSTER_DIM}")
    members = np.array([cluster], dtype=int).reshape(1, len(cluster))
    state = _outer_state(bath, outer_state, mf_axis)
    mf_h = mf_b = None
    if state is not None:
        mf_h, mf_b = _MeanField(ctx, state).for_clusters(members)
    return _batch_hamiltonians(ctx, members, two_spins, mf_h, mf_b)[0]


def cluster_coherence(sys, field, bath, cluster, qubit, protocol, outer_state=None, mf_axis="z"):
    """Normalized L_C(2 tau) of a single cluster (mixed, or sampled if ``outer_state`` given)."""
    if isinstance(qubit, (tuple, list)):
        qubit = resolve_qubit(sys, field, tuple(qubit))
    ctx = _Context(sys, field, bath, qubit)
    state = _outer_state(bath, outer_state, mf_axis)
    mf = _MeanField(ctx, state) if state is not None else None
    return _cluster_values(ctx, [tuple(sorted(cluster))], protocol.tau * NS_PER_US, state, mf)[0]


# ---------------------------------------------------------------- exact oracle


def full_hamiltonian(sys, field, bath):
    """Joint Hamiltonian of central spin and whole bath (GHz), assembled term by term."""
    b = as_field(field)
    dims = [int(round(2 * s.I + 1)) for s in bath.spins]
    D = 3 * int(np.prod(dims)) if dims else 3
    s_ops = spin_ops(1)

    def embed(op, slot):
        # slot 0 is the central spin, slot k+1 is bath spin k
        mats = [np.eye(3)] + [np.eye(d) for d in dims]
        mats[slot] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    H = embed(build_hamiltonian(sys, b), 0)
    S = [embed(s_ops[i], 0) for i in range(3)]
    I = []
    for k, sp in enumerate(bath.spins):
        ops = spin_ops(sp.I)
        I.append([embed(ops[j], k + 1) for j in range(3)])
    for k, sp in enumerate(bath.spins):
        A = bath.A[k] * _MHZ
        for i in range(3):
            for j in range(3):
                if A[i, j] != 0:
                    H = H + A[i, j] * S[i] @ I[k][j]
        for j in range(3):
            H = H - sp.gamma * b[j] * _GAMMA_B * I[k][j]
    for (p, q), J in zip(bath.pairs, bath.J * _KHZ):
        for i in range(3):
            for j in range(3):
                if J[i, j] != 0:
                    H = H + J[i, j] * I[p][i] @ I[q][j]
    assert H.shape == (D, D)
    return H


def exact_coherence(sys, field, bath, qubit, protocol, bath_state=None):
    """Echo coherence from density-matrix evolution in the full joint Hilbert space.

    Independent of the cluster machinery: explicit Kronecker Hamiltonian, dense
    matrix exponentials and a partial trace. ``bath_state`` optionally replaces
    the fully mixed bath by a product state (list of projections along lab z).
    """
    t0 = time.perf_counter()
    if isinstance(qubit, (tuple, list)):
        qubit = resolve_qubit(sys, field, tuple(qubit))
    dims = [int(round(2 * s.I + 1)) for s in bath.spins]
    db = int(np.prod(dims)) if dims else 1
    if 3 * db > MAX_EXACT_DIM:
        raise ClusterTooLarge(f"joint dimension {3 * db} exceeds oracle cap {MAX_EXACT_DIM}")
    H = full_hamiltonian(sys, field, bath)
    psi = (qubit.vec_a + qubit.vec_b) / np.sqrt(2)
    if bath_state is None:
        rho_b = np.eye(db) / db
    else:
        v = np.ones(1)
        for sp, m in zip(bath.spins, bath_state):
            e = np.zeros(int(round(2 * sp.I + 1)))
            e[int(round(sp.I - m))] = 1.0
            v = np.kron(v, e)
        rho_b = np.outer(v, v)
    rho0 = np.kron(np.outer(psi, psi.conj()), rho_b)
    a, b, c = qubit.vec_a, qubit.vec_b, qubit.vec_rest
    P = np.kron(np.outer(a, b.conj()) + np.outer(b, a.conj()) + np.outer(c, c.conj()), np.eye(db))

    def coh(t_ns):
        U = scipy.linalg.expm(-2j * np.pi * H * t_ns)
        V = U @ P @ U
        rho = V @ rho0 @ V.conj().T
        red = np.trace(rho.reshape(3, db, 3, db), axis1=1, axis2=3)
        return a.conj() @ red @ b

    l0 = coh(0.0)
    L = np.array([coh(t) for t in protocol.tau * NS_PER_US]) / l0
    return CoherenceCurve(protocol.two_tau.copy(), L, "exact", 0, None,
                          {"bath_hash": bath_hash(bath), "n_spins": len(bath),
                           "wall_time_s": time.perf_counter() - t0})
