"""Nuclear spin bath around the central spin.

Crystal specifications (JSON), supercell enumeration with seeded isotope
sampling, point-dipole coupling tensors and imported hyperfine overrides.
"""

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import G_FREE, MU0_OVER_4PI, PLANCK, electron_gamma_mhz_per_t

DEFAULT_EXCLUSION = 0.05  # nm
DEFAULT_R_BATH = 2.0  # nm
DEFAULT_R_DIPOLE = 0.8  # nm
MAX_BATH_SPINS = 20000

# mu0/(4pi) * h * (1 MHz/T)^2 / (1 nm)^3, expressed in MHz
_DIPOLAR_MHZ = MU0_OVER_4PI * PLANCK * 1e12 / 1e-27 * 1e-6


class CrystalSpecError(ValueError):
    """Malformed or invalid crystal specification."""


@dataclass(frozen=True)
class Isotope:
    label: str
    abundance: float
    I: float
    gamma: float  # MHz/T


@dataclass(frozen=True)
class Site:
    frac: tuple
    element: str
    isotopes: tuple


@dataclass(frozen=True)
class CrystalSpec:
    lattice: np.ndarray  # rows are lattice vectors, nm
    sites: tuple
    central: tuple = (0.0, 0.0, 0.0)
    exclusion_radius: float = DEFAULT_EXCLUSION

    def __eq__(self, other):
        if not isinstance(other, CrystalSpec):
            return NotImplemented
        return (
            np.array_equal(self.lattice, other.lattice)
            and self.sites == other.sites
            and self.central == other.central
            and self.exclusion_radius == other.exclusion_radius
        )

    def __hash__(self):
        return hash((self.lattice.tobytes(), self.sites, self.central, self.exclusion_radius))


def _err(where, msg):
    raise CrystalSpecError(f"{where}: {msg}")


def _vec3(value, where):
    try:
        v = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        _err(where, f"expected 3 numbers, got {value!r}")
    if len(v) != 3 or not all(np.isfinite(v)):
        _err(where, f"expected 3 finite numbers, got {value!r}")
    return v


def _is_spin_quantum(i):
    return i >= 0 and abs(2 * i - round(2 * i)) < 1e-12


def crystal_from_dict(doc):
    """Validate a decoded crystal document and build a :class:`CrystalSpec`."""
    if not isinstance(doc, dict):
        _err("document", "top level must be an object")
    for key in ("lattice_nm", "sites"):
        if key not in doc:
            _err(key, "missing required key")
    lat = doc["lattice_nm"]
    if not isinstance(lat, list) or len(lat) != 3:
        _err("lattice_nm", "expected a 3x3 array")
    lattice = np.array([_vec3(row, f"lattice_nm[{k}]") for k, row in enumerate(lat)])
    if abs(np.linalg.det(lattice)) < 1e-12:
        _err("lattice_nm", "lattice vectors are linearly dependent")
    sites = []
    if not isinstance(doc["sites"], list):
        _err("sites", "expected a list")
    for k, s in enumerate(doc["sites"]):
        where = f"sites[{k}]"
        if not isinstance(s, dict):
            _err(where, "expected an object")
        frac = _vec3(s.get("frac"), f"{where}.frac")
        if not all(0 <= x < 1 for x in frac):
            _err(f"{where}.frac", f"fractional coordinates must lie in [0, 1), got {frac}")
        element = s.get("element")
        if not isinstance(element, str) or not element:
            _err(f"{where}.element", "expected a non-empty string")
        isos = []
        total = 0.0
        for j, iso in enumerate(s.get("isotopes", [])):
            w = f"{where}.isotopes[{j}]"
            try:
                label = str(iso["label"])
                ab = float(iso["abundance"])
                spin = float(iso["I"])
                gamma = float(iso["gamma_MHz_per_T"])
            except (KeyError, TypeError, ValueError) as exc:
                _err(w, f"bad isotope entry ({exc})")
            if not 0 <= ab <= 1:
                _err(f"{w}.abundance", f"must lie in [0, 1], got {ab}")
            if not _is_spin_quantum(spin):
                _err(f"{w}.I", f"not a spin quantum number: {spin}")
            if not np.isfinite(gamma):
                _err(f"{w}.gamma_MHz_per_T", "must be finite")
            total += ab
            isos.append(Isotope(label, ab, spin, gamma))
        if total > 1 + 1e-9:
            _err(f"{where}.isotopes", f"abundances sum to {total:.6g} > 1")
        sites.append(Site(frac, element, tuple(isos)))
    central = _vec3(doc.get("central", (0, 0, 0)), "central")
    excl = float(doc.get("exclusion_radius_nm", DEFAULT_EXCLUSION))
    if excl < 0:
        _err("exclusion_radius_nm", "must be non-negative")
    return CrystalSpec(lattice, tuple(sites), central, excl)


def parse_crystal(text):
    """Parse a crystal specification from JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CrystalSpecError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return crystal_from_dict(doc)


def load_crystal(path):
    with open(path) as f:
        return parse_crystal(f.read())


def crystal_to_dict(spec):
    return {
        "lattice_nm": spec.lattice.tolist(),
        "central": list(spec.central),
        "exclusion_radius_nm": spec.exclusion_radius,
        "sites": [
            {
                "frac": list(s.frac),
                "element": s.element,
                "isotopes": [
                    {"label": i.label, "abundance": i.abundance, "I": i.I, "gamma_MHz_per_T": i.gamma}
                    for i in s.isotopes
                ],
            }
            for s in spec.sites
        ],
    }


def serialize_crystal(spec):
    return json.dumps(crystal_to_dict(spec), indent=2)


def dipolar_tensor(gamma_1, gamma_2, r):
    """Point-dipole coupling tensor in MHz.

    ``gamma_1``, ``gamma_2`` in MHz/T (signed), ``r`` in nm. Returns
    mu0 h gamma_1 gamma_2 / (4 pi |r|^3) (1 - 3 rr^T). Accepts a stack of
    vectors with shape (..., 3).
    """
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r, axis=-1)
    if np.any(d < 1e-6):
        raise ValueError(f"dipolar coupling is singular at |r| = {np.min(d):.3e} nm")
    n = r / d[..., None]
    pref = _DIPOLAR_MHZ * np.asarray(gamma_1) * np.asarray(gamma_2) / d**3
    t = np.eye(3) - 3 * n[..., :, None] * n[..., None, :]
    return pref[..., None, None] * t


@dataclass(frozen=True)
class BathSpin:
    id: int
    position: np.ndarray  # nm, relative to the central spin
    isotope: str
    I: float
    gamma: float  # MHz/T
    site_index: int = -1
    cell: tuple = (0, 0, 0)


@dataclass
class BathModel:
    """Nuclear bath with hyperfine (MHz) and pair (kHz) tensors.

    ``pairs`` holds index pairs i < j within ``r_dipole``; ``J[k]`` belongs to
    ``pairs[k]``.
    """

    spins: list
    A: np.ndarray
    pairs: np.ndarray
    J: np.ndarray
    r_bath: float
    r_dipole: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.spins)

    @property
    def positions(self):
        if not self.spins:
            return np.zeros((0, 3))
        return np.array([s.position for s in self.spins])

    @property
    def gammas(self):
        return np.array([s.gamma for s in self.spins], dtype=float)

    @property
    def spin_numbers(self):
        return np.array([s.I for s in self.spins], dtype=float)

    def pair_tensor(self, i, j):
        """J tensor for spins at indices i, j (kHz), zeros outside ``r_dipole``."""
        lookup = self.meta.setdefault("_pair_lookup", None)
        if lookup is None:
            lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(self.pairs)}
            self.meta["_pair_lookup"] = lookup
        a, b = (i, j) if i < j else (j, i)
        k = lookup.get((a, b))
        if k is None:
            return np.zeros((3, 3))
        return self.J[k]


def _translations(lattice, reach):
    inv = np.linalg.inv(lattice)  # columns are reciprocal vectors (without 2 pi)
    nmax = [int(np.ceil(reach * np.linalg.norm(inv[:, k]))) + 1 for k in range(3)]
    grid = np.mgrid[
        -nmax[0] : nmax[0] + 1, -nmax[1] : nmax[1] + 1, -nmax[2] : nmax[2] + 1
    ].reshape(3, -1).T
    return grid


def compute_pairs(positions, gammas, r_dipole):
    """Index pairs within ``r_dipole`` and their dipolar tensors in kHz."""
    n = len(positions)
    if n < 2:
        return np.zeros((0, 2), dtype=int), np.zeros((0, 3, 3))
    from scipy.spatial import cKDTree

    tree = cKDTree(positions)
    pairs = np.array(sorted(tree.query_pairs(r_dipole)), dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs, np.zeros((0, 3, 3))
    r = positions[pairs[:, 1]] - positions[pairs[:, 0]]
    J = dipolar_tensor(gammas[pairs[:, 0]], gammas[pairs[:, 1]], r) * 1e3
    return pairs, J


def point_dipole_hyperfine(positions, gammas, g=G_FREE):
    """Electron-nuclear point-dipole tensors (MHz); the electron moment is antiparallel to S."""
    if len(positions) == 0:
        return np.zeros((0, 3, 3))
    return dipolar_tensor(-electron_gamma_mhz_per_t(g), gammas, positions)


def build_bath(spins, r_bath=np.inf, r_dipole=DEFAULT_R_DIPOLE, g=G_FREE, meta=None):
    """Assemble a :class:`BathModel` with point-dipole tensors from a list of spins."""
    spins = list(spins)
    pos = np.array([s.position for s in spins], dtype=float).reshape(-1, 3)
    gam = np.array([s.gamma for s in spins], dtype=float)
    A = point_dipole_hyperfine(pos, gam, g)
    pairs, J = compute_pairs(pos, gam, r_dipole)
    return BathModel(spins, A, pairs, J, float(r_bath), float(r_dipole), dict(meta or {}))


def generate_bath(spec, r_bath=DEFAULT_R_BATH, seed=0, r_dipole=DEFAULT_R_DIPOLE, g=G_FREE,
                  max_spins=MAX_BATH_SPINS):
    """Instantiate the nuclear bath within ``r_bath`` (nm) of the central spin.

    Site instances are visited in a fixed order (cell offset, then site index);
    a site whose isotope table is a single abundance-1 entry is deterministic,
    otherwise one uniform draw from ``seed`` selects the isotope (or spinless).
    """
    if not r_bath > 0:
        raise ValueError(f"r_bath must be positive, got {r_bath}")
    lat = spec.lattice
    center = np.asarray(spec.central) @ lat
    cells = _translations(lat, r_bath)
    rng = np.random.default_rng(seed)
    spins = []
    found = []
    for k, site in enumerate(spec.sites):
        pos = (np.asarray(site.frac) + cells) @ lat - center
        d = np.linalg.norm(pos, axis=1)
        keep = (d <= r_bath) & (d >= spec.exclusion_radius)
        for c, p in zip(cells[keep], pos[keep]):
            found.append((tuple(int(x) for x in c), k, p))
    found.sort(key=lambda t: (t[0], t[1]))
    for cell, k, p in found:
        isos = spec.sites[k].isotopes
        if len(isos) == 1 and isos[0].abundance == 1.0:
            iso = isos[0]
        elif not isos:
            continue
        else:
            u = rng.random()
            cum = np.cumsum([i.abundance for i in isos])
            j = int(np.searchsorted(cum, u, side="right"))
            if j >= len(isos):
                continue
            iso = isos[j]
        if iso.I == 0:
            continue
        spins.append(BathSpin(len(spins), p, iso.label, iso.I, iso.gamma, k, cell))
        if len(spins) > max_spins:
            raise ValueError(
                f"bath exceeds the cap of {max_spins} spins (already {len(spins)} within "
                f"{r_bath} nm); reduce r_bath or raise the cap"
            )
    return build_bath(spins, r_bath, r_dipole, g, meta={"seed": seed})


def _match_override(bath, entry):
    if "id" in entry:
        hits = [k for k, s in enumerate(bath.spins) if s.id == int(entry["id"])]
        desc = f"id={entry['id']}"
    elif "site_index" in entry:
        cell = tuple(int(x) for x in entry.get("cell_offset", (0, 0, 0)))
        hits = [
            k for k, s in enumerate(bath.spins)
            if s.site_index == int(entry["site_index"]) and s.cell == cell
        ]
        desc = f"site_index={entry['site_index']}, cell_offset={cell}"
    else:
        raise ValueError(f"override entry needs 'id' or 'site_index': {entry!r}")
    if len(hits) != 1:
        cands = [(bath.spins[k].id, bath.spins[k].site_index, bath.spins[k].cell) for k in hits]
        raise ValueError(
            f"override matcher ({desc}) resolved to {len(hits)} spins; candidates: {cands}"
        )
    return hits[0]


def apply_hyperfine_overrides(bath, table):
    """Replace hyperfine tensors of matched spins with imported values (MHz), verbatim."""
    A = bath.A.copy()
    meta = {k: v for k, v in bath.meta.items() if not k.startswith("_")}
    overridden = list(meta.get("overridden", []))
    nonsym = list(meta.get("nonsymmetric_overrides", []))
    for entry in table:
        k = _match_override(bath, entry)
        t = np.asarray(entry["tensor_MHz"], dtype=float).reshape(3, 3)
        A[k] = t
        overridden.append(bath.spins[k].id)
        if not np.allclose(t, t.T, rtol=0, atol=1e-12 * max(1.0, np.abs(t).max())):
            nonsym.append(bath.spins[k].id)
    meta["overridden"] = overridden
    meta["nonsymmetric_overrides"] = nonsym
    return replace(bath, A=A, meta=meta)


def load_overrides(path):
    with open(path) as f:
        table = json.load(f)
    if not isinstance(table, list):
        raise ValueError(f"{path}: override file must hold a JSON list")
    return table


BATH_COLUMNS = ["id", "x_nm", "y_nm", "z_nm", "isotope", "I", "gamma"] + [
    f"A{a}{b}_MHz" for a in "xyz" for b in "xyz"
]


def bath_to_csv(bath):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BATH_COLUMNS)
    for s, a in zip(bath.spins, bath.A):
        w.writerow([s.id, *(repr(float(x)) for x in s.position), s.isotope, repr(float(s.I)),
                    repr(float(s.gamma)), *(repr(float(x)) for x in a.ravel())])
    return buf.getvalue()


def rotate_spec(spec, rot):
    """Rigidly rotate a crystal (lattice rows mapped by ``rot``)."""
    return replace(spec, lattice=spec.lattice @ np.asarray(rot).T)
