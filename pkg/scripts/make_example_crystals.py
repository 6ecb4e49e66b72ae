"""Regenerate the synthetic example crystal specifications in src/molqubit/data/.

molecular_cluster.json
    One tetra-aryl molecule per cell: four 2-methylphenyl ligands on a
    tetrahedral metal site, 7 protons per ligand (28 per molecule); the
    para position optionally carries 19F instead of 1H.
dense_proton.json
    Orthorhombic cell with 6 proton sites, about 48 protons / nm^3. The
    exclusion radius of 0.3 nm stands in for the metal's carbon coordination
    shell, which carries no protons.
"""

import json
from pathlib import Path

import numpy as np

H = [{"label": "1H", "abundance": 1.0, "I": 0.5, "gamma_MHz_per_T": 42.577478}]
F = [{"label": "19F", "abundance": 1.0, "I": 0.5, "gamma_MHz_per_T": 40.078}]

OUT = Path(__file__).resolve().parents[1] / "src" / "molqubit" / "data"


# ring rotations about each metal-carbon bond that keep ligands >= 0.2 nm apart
RING_ROTATIONS = (1.012, 5.135, 2.346, 0.275)


def _frame(u, rot):
    u = u / np.linalg.norm(u)
    t = np.cross(u, [0.3, 0.5, 0.8])
    t /= np.linalg.norm(t)
    w = np.cross(u, t)
    t = np.cos(rot) * t + np.sin(rot) * w
    return u, t, np.cross(u, t)


def aryl_ligand(u, para="H", rot=0.0):
    """Proton (and fluorine) positions of one 2-methylphenyl ligand along ``u`` (nm)."""
    u, t, w = _frame(u, rot)
    # ligand plane contains u and t; the ring starts at the metal-carbon bond
    ipso = 0.214 * u
    center = ipso + 0.139 * u
    atoms = []
    for k, ang in enumerate(np.deg2rad([60, 120, 180, 240, 300])):
        # ring carbons 2..6 (ortho, meta, para, meta', ortho')
        c = center - 0.139 * (np.cos(ang) * u + np.sin(ang) * t)
        d = (c - center) / np.linalg.norm(c - center)
        if k == 0:
            # ortho methyl: carbon 0.150 nm out, three protons
            cm = c + 0.150 * d
            for phi in np.deg2rad([0, 120, 240]):
                h = cm + 0.109 * (0.34 * d + 0.94 * (np.cos(phi) * w + np.sin(phi) * np.cross(d, w)))
                atoms.append(("H", h))
        elif k == 2 and para == "F":
            atoms.append(("F", c + 0.135 * d))
        else:
            atoms.append(("H", c + 0.108 * d))
    return atoms


def molecular_cluster(para="H", scale=1.0):
    lattice = np.round(np.diag([0.96, 1.0, 1.04]) * scale, 4)
    dirs = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    atoms = [a for u, r in zip(dirs, RING_ROTATIONS) for a in aryl_ligand(u, para, r)]
    inv = np.linalg.inv(lattice)
    sites = []
    for el, pos in atoms:
        frac = np.mod(pos @ inv, 1.0)
        sites.append({"frac": [round(float(x), 6) % 1.0 for x in frac], "element": el,
                      "isotopes": H if el == "H" else F})
    return {"lattice_nm": lattice.tolist(), "central": [0.0, 0.0, 0.0],
            "exclusion_radius_nm": 0.05, "sites": sites}


def dense_proton():
    lattice = np.diag([0.50, 0.52, 0.48])
    frac = [[0.10, 0.15, 0.20], [0.55, 0.20, 0.70], [0.30, 0.65, 0.45],
            [0.80, 0.70, 0.10], [0.15, 0.90, 0.85], [0.65, 0.45, 0.95]]
    sites = [{"frac": f, "element": "H", "isotopes": H} for f in frac]
    return {"lattice_nm": lattice.tolist(), "central": [0.5, 0.5, 0.5],
            "exclusion_radius_nm": 0.3, "sites": sites}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in [("molecular_cluster.json", molecular_cluster("F", 0.95)),
                      ("dense_proton.json", dense_proton())]:
        (OUT / name).write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", OUT / name, len(doc["sites"]), "sites")


if __name__ == "__main__":
    main()
