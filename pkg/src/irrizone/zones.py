"""Management-zone delineation.

Three stages: split the field by crop label, cluster each part on
normalized soil-hydraulic + elevation attributes (k chosen by the elbow
rule), then map the fine-resolution zone labels onto the irrigation
equipment's coarser cell layout by majority vote.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .soil import SoilHydraulicParams

__all__ = [
    "GridGeometry",
    "AttributeGrid",
    "ZoneMap",
    "normalize",
    "kmeans",
    "elbow_select",
    "delineate",
    "map_to_pivot",
    "read_attribute_grid",
    "write_attribute_grid",
]

ATTRIBUTE_NAMES = ("theta_r", "theta_s", "alpha", "n", "ks", "elev")
CSV_HEADER = ("cell_id", "crop", "elev", "theta_r", "theta_s", "alpha", "n", "ks")


@dataclass(frozen=True)
class GridGeometry:
    """Cell layout, row-major: (ring, sector) for a pivot, (row, col) else."""

    rows: int
    cols: int
    kind: str = "polar"

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @staticmethod
    def parse(text: str, kind: str = "polar") -> "GridGeometry":
        """Parse a '12x45'-style resolution string."""
        r, c = text.lower().split("x")
        return GridGeometry(int(r), int(c), kind)


@dataclass
class AttributeGrid:
    """Per-cell delineation attributes.

    ``features`` holds the 6 numeric attributes per cell in the order of
    :data:`ATTRIBUTE_NAMES`; cells are row-major in ``geometry`` when a
    geometry is attached.
    """

    cell_ids: list
    crops: list
    features: np.ndarray
    geometry: GridGeometry | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        n = len(self.cell_ids)
        if len(set(self.cell_ids)) != n:
            raise ValueError("cell ids must be unique")
        if self.features.shape != (n, len(ATTRIBUTE_NAMES)):
            raise ValueError(f"features must be ({n}, {len(ATTRIBUTE_NAMES)})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("all cells must carry all numeric attributes")
        if self.geometry is not None and self.geometry.n_cells != n:
            raise ValueError("geometry does not match cell count")

    def hydraulics(self, row: int) -> SoilHydraulicParams:
        tr, ts, al, vn, ks, _ = self.features[row]
        return SoilHydraulicParams(tr, ts, al, vn, ks)


@dataclass
class ZoneMap:
    """Zone assignment per cell plus the denormalized zone centroids."""

    assignments: dict
    centroids: np.ndarray  # (k, 6) attribute means per zone, 1-based rows
    k: int
    geometry: GridGeometry | None = None

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        zones = set(self.assignments.values())
        if zones != set(range(1, self.k + 1)):
            raise ValueError(f"zone indices must be 1..{self.k}, got {sorted(zones)}")
        if self.centroids.shape[0] != self.k:
            raise ValueError("need one centroid per zone")

    def labels_for(self, cell_ids) -> np.ndarray:
        return np.array([self.assignments[c] for c in cell_ids])

    def to_json(self, path) -> None:
        payload = {
            "k": self.k,
            "assignments": {str(c): int(z) for c, z in self.assignments.items()},
            "centroids": {
                str(z + 1): dict(zip(ATTRIBUTE_NAMES, map(float, row)))
                for z, row in enumerate(self.centroids)
            },
        }
        if self.geometry is not None:
            payload["geometry"] = {"rows": self.geometry.rows,
                                   "cols": self.geometry.cols,
                                   "kind": self.geometry.kind}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    @staticmethod
    def from_json(path) -> "ZoneMap":
        with open(path) as fh:
            payload = json.load(fh)
        k = int(payload["k"])
        centroids = np.array([
            [payload["centroids"][str(z)][a] for a in ATTRIBUTE_NAMES]
            for z in range(1, k + 1)])
        geometry = None
        if "geometry" in payload:
            g = payload["geometry"]
            geometry = GridGeometry(g["rows"], g["cols"], g["kind"])
        return ZoneMap({c: int(z) for c, z in payload["assignments"].items()},
                       centroids, k, geometry)


def normalize(features) -> np.ndarray:
    """Column-wise min-max scaling to [0, 1]; constant columns map to 0."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("need a nonempty 2-D feature matrix")
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    out = np.zeros_like(x)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    return out


def _wcss(data, labels, centroids) -> float:
    return float(((data - centroids[labels]) ** 2).sum())


def _kmeans_pp(data, k, rng) -> np.ndarray:
    """k-means++ seeding."""
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    centroids[0] = data[rng.integers(n)]
    d2 = ((data - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[j] = data[idx]
        d2 = np.minimum(d2, ((data - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(data, centroids, max_iter=300, tol=1e-9):
    """Lloyd iterations; returns labels, centroids, wcss and the wcss trace.

    An emptied cluster is reseeded at the point farthest from its current
    centroid.
    """
    history = []
    for _ in range(max_iter):
        dists = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        # reseed empty clusters one at a time at the worst-served point
        for j in range(centroids.shape[0]):
            if not np.any(labels == j):
                far = dists[np.arange(len(labels)), labels].argmax()
                labels[far] = j
                dists[far] = np.inf
        new_centroids = np.vstack([
            data[labels == j].mean(axis=0) for j in range(centroids.shape[0])])
        history.append(_wcss(data, labels, new_centroids))
        shift = np.abs(new_centroids - centroids).max()
        centroids = new_centroids
        if shift < tol:
            break
    dists = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = dists.argmin(axis=1)
    return labels, centroids, _wcss(data, labels, centroids), history


def kmeans(data, k: int, seed: int, restarts: int = 10):
    """Euclidean k-means with k-means++ seeding and restarts.

    Runs ``restarts`` seeded attempts and keeps the lowest within-cluster
    sum of squares (ties broken by restart order, so the reduction is
    deterministic even if the attempts run concurrently).

    Returns ``(labels, centroids, wcss)``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be 2-D")
    if not 1 <= k <= data.shape[0]:
        raise ValueError(f"need 1 <= k <= n_rows, got k={k}, rows={data.shape[0]}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        labels, centroids, wcss, _ = _lloyd(data, _kmeans_pp(data, k, rng))
        if best is None or wcss < best[2]:
            best = (labels, centroids, wcss)
    return best


def elbow_select(data, k_max: int, seed: int, threshold: float = 0.25,
                 restarts: int = 10) -> int:
    """Pick the cluster count by the elbow rule.

    Computes wcss(k) for k = 1..k_max (best of ``restarts`` seeded runs
    each) and returns the largest k whose relative wcss improvement over
    k-1 exceeds ``threshold``; 1 if no k qualifies.

    The default threshold is set above the gain a split of pure
    within-cluster noise can achieve on feature sets of a handful of
    attributes (splitting an isotropic blob in d dimensions only buys
    about (2/pi)/d of its scatter, and anisotropic jitter up to ~3x that),
    while genuine structure splits in practice recover well over half of
    the remaining scatter.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    data = np.asarray(data, dtype=float)
    k_hi = min(k_max, data.shape[0])
    wcss = [kmeans(data, k, seed, restarts)[2] for k in range(1, k_hi + 1)]
    best = 1
    for k in range(2, k_hi + 1):
        prev, cur = wcss[k - 2], wcss[k - 1]
        if prev > 0 and (prev - cur) / prev > threshold:
            best = k
    return best


def delineate(grid: AttributeGrid, k_max: int, seed: int) -> ZoneMap:
    """Run the full three-stage pipeline on an attribute grid.

    Cells are first partitioned by crop label; each partition is clustered
    on its normalized attributes with an elbow-selected k. Zone indices
    are contiguous from 1 across partitions (sorted by crop label).
    """
    crops = np.asarray(grid.crops)
    zone_of = np.empty(len(grid.cell_ids), dtype=int)
    centroid_rows = []
    offset = 0
    for crop in sorted(set(grid.crops)):
        rows = np.flatnonzero(crops == crop)
        feats = grid.features[rows]
        normed = normalize(feats)
        if len(rows) == 1 or np.all(normed == normed[0]):
            k, labels = 1, np.zeros(len(rows), dtype=int)
        else:
            k = elbow_select(normed, min(k_max, len(rows)), seed)
            labels, _, _ = kmeans(normed, k, seed)
        for j in range(k):
            members = rows[labels == j]
            centroid_rows.append(grid.features[members].mean(axis=0))
        zone_of[rows] = offset + labels + 1
        offset += k
    # insertion order follows the grid's row-major cell order
    assignments = {cid: int(z) for cid, z in zip(grid.cell_ids, zone_of)}
    return ZoneMap(assignments, np.vstack(centroid_rows), offset, grid.geometry)


def map_to_pivot(zmap: ZoneMap, target: GridGeometry,
                 cell_ids=None) -> ZoneMap:
    """Project fine-resolution zone labels onto the equipment layout.

    Every target cell takes the majority zone label of the fine cells it
    covers (index-block mapping); ties resolve to the lower zone index.
    Target cell ids are row-major integers.
    """
    if zmap.geometry is None:
        raise ValueError("zone map carries no geometry to map from")
    src = zmap.geometry
    if cell_ids is None:
        cell_ids = list(zmap.assignments)  # insertion order = row-major
    if len(cell_ids) != src.n_cells:
        raise ValueError("cell ids do not fill the source geometry")
    labels = zmap.labels_for(cell_ids).reshape(src.rows, src.cols)

    votes = np.zeros((target.rows, target.cols, zmap.k + 1), dtype=int)
    ri = np.floor(np.arange(src.rows) * target.rows / src.rows).astype(int)
    ci = np.floor(np.arange(src.cols) * target.cols / src.cols).astype(int)
    for i in range(src.rows):
        for j in range(src.cols):
            votes[ri[i], ci[j], labels[i, j]] += 1
    covered = votes.sum(axis=2)
    if np.any(covered == 0):
        raise ValueError("a pivot cell covers no fine cell; refine the input grid")
    majority = votes[:, :, 1:].argmax(axis=2) + 1  # argmax takes lowest on ties

    assignments = {int(i * target.cols + j): int(majority[i, j])
                   for i in range(target.rows) for j in range(target.cols)}
    present = sorted(set(assignments.values()))
    remap = {z: i + 1 for i, z in enumerate(present)}
    assignments = {c: remap[z] for c, z in assignments.items()}
    centroids = zmap.centroids[[z - 1 for z in present]]
    return ZoneMap(assignments, centroids, len(present), target)


def read_attribute_grid(path, geometry: GridGeometry | None = None) -> AttributeGrid:
    """Load a delineation attribute table (CSV, header ``cell_id,crop,elev,
    theta_r,theta_s,alpha,n,ks``)."""
    cell_ids, crops, feats = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"attribute CSV missing columns: {sorted(missing)}")
        for row in reader:
            cell_ids.append(row["cell_id"])
            crops.append(row["crop"])
            feats.append([float(row[a]) for a in ATTRIBUTE_NAMES[:-1]]
                         + [float(row["elev"])])
    return AttributeGrid(cell_ids, crops, np.array(feats), geometry)


def write_attribute_grid(grid: AttributeGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for cid, crop, row in zip(grid.cell_ids, grid.crops, grid.features):
            tr, ts, al, vn, ks, elev = row
            writer.writerow([cid, crop, elev, tr, ts, al, vn, ks])
