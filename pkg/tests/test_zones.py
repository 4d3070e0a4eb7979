import itertools

import numpy as np
import pytest

from irrizone.zones import (
    AttributeGrid,
    GridGeometry,
    ZoneMap,
    _lloyd,
    delineate,
    elbow_select,
    kmeans,
    map_to_pivot,
    normalize,
    read_attribute_grid,
    write_attribute_grid,
)

LOAM = (0.078, 0.43, 3.6, 1.56, 0.2496)
SANDY_CLAY_LOAM = (0.100, 0.39, 5.9, 1.48, 0.3144)


def blobs(centers, n_per, scale, seed):
    rng = np.random.default_rng(seed)
    parts = [c + rng.normal(0.0, scale, (n_per, len(c))) for c in np.atleast_2d(centers)]
    return np.vstack(parts)


def synthetic_quadrant(seed=0, rings=24, sectors=45):
    """Fine polar grid with three attribute populations: loam at 889 m,
    loam at 888 m, sandy clay loam at 888.5 m."""
    rng = np.random.default_rng(seed)
    pops = [
        (LOAM, 889.0),
        (LOAM, 888.0),
        (SANDY_CLAY_LOAM, 888.5),
    ]
    cell_ids, crops, feats, truth = [], [], [], []
    idx = 0
    for ring in range(rings):
        pop = min(ring // (rings // 3), 2)
        hyd, elev = pops[pop]
        for sector in range(sectors):
            jitter = rng.normal(0.0, 0.01, 5) * np.array(hyd)
            feats.append(list(np.array(hyd) + jitter) + [elev + rng.normal(0, 0.08)])
            cell_ids.append(idx)
            crops.append("wheat")
            truth.append(pop)
            idx += 1
    grid = AttributeGrid(cell_ids, crops, np.array(feats),
                         GridGeometry(rings, sectors))
    return grid, np.array(truth)


class TestNormalize:
    def test_hand_column(self):
        out = normalize(np.array([[2.0], [4.0], [6.0]]))
        np.testing.assert_allclose(out[:, 0], [0.0, 0.5, 1.0])

    def test_constant_column_maps_to_zero(self):
        out = normalize(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
        assert np.all(out[:, 0] == 0.0)

    def test_unit_range_column_unchanged(self):
        col = np.array([[0.0], [0.25], [1.0]])
        np.testing.assert_allclose(normalize(col), col)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(1)
        x = rng.normal(3.0, 10.0, (40, 5))
        out = normalize(x)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize(np.empty((0, 3)))


class TestKmeans:
    def test_k1_returns_column_means(self):
        data = blobs([[0.0, 0.0]], 50, 1.0, 2)
        labels, centroids, wcss = kmeans(data, 1, seed=0)
        assert np.all(labels == 0)
        np.testing.assert_allclose(centroids[0], data.mean(axis=0))

    def test_two_separated_blobs(self):
        data = blobs([[0.0, 0.0], [10.0, 10.0]], 60, 0.5, 3)
        labels, centroids, _ = kmeans(data, 2, seed=0)
        means = sorted([data[:60].mean(axis=0), data[60:].mean(axis=0)],
                       key=lambda m: m[0])
        found = sorted(centroids, key=lambda m: m[0])
        for f, m in zip(found, means):
            assert np.linalg.norm(f - m) < 0.1

    def test_k_equals_rows_gives_zero_wcss(self):
        data = blobs([[0.0, 0.0]], 12, 1.0, 4)
        _, _, wcss = kmeans(data, 12, seed=0)
        assert wcss == pytest.approx(0.0, abs=1e-18)

    def test_same_seed_reproduces_labels(self):
        data = blobs([[0, 0], [5, 5], [9, 0]], 40, 0.8, 5)
        a = kmeans(data, 3, seed=7)
        b = kmeans(data, 3, seed=7)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[2] == b[2]

    def test_wcss_nonincreasing_over_lloyd_iterations(self):
        rng = np.random.default_rng(6)
        data = rng.normal(0.0, 1.0, (80, 4))
        init = data[rng.choice(80, 5, replace=False)]
        _, _, _, history = _lloyd(data, init.copy())
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_invalid_k_rejected(self):
        data = np.zeros((3, 2))
        with pytest.raises(ValueError):
            kmeans(data, 0, seed=0)
        with pytest.raises(ValueError):
            kmeans(data, 4, seed=0)


class TestElbow:
    CORNERS = np.array([
        [0, 0, 0, 0, 0, 0],
        [10, 10, 0, 0, 0, 0],
        [0, 0, 10, 10, 0, 0],
    ], dtype=float)

    def test_three_well_separated_blobs(self):
        data = blobs(self.CORNERS, 50, 0.4, 8)
        assert elbow_select(data, k_max=8, seed=0) == 3

    def test_single_blob_gives_one(self):
        data = blobs([np.zeros(6)], 150, 1.0, 9)
        assert elbow_select(data, k_max=6, seed=0) == 1

    def test_duplicating_rows_keeps_k(self):
        data = blobs(self.CORNERS[:2], 40, 0.5, 10)
        doubled = np.vstack([data, data])
        assert elbow_select(data, 6, seed=0) == elbow_select(doubled, 6, seed=0)

    def test_kmax_must_be_at_least_two(self):
        with pytest.raises(ValueError):
            elbow_select(np.zeros((5, 2)), 1, seed=0)


class TestDelineate:
    def test_identical_attributes_single_zone(self):
        feats = np.tile([0.1, 0.4, 2.0, 1.5, 0.3, 888.0], (30, 1))
        grid = AttributeGrid(list(range(30)), ["wheat"] * 30, feats)
        zmap = delineate(grid, k_max=5, seed=0)
        assert zmap.k == 1
        assert set(zmap.assignments.values()) == {1}

    def test_two_crops_homogeneous_attributes(self):
        feats = np.tile([0.1, 0.4, 2.0, 1.5, 0.3, 888.0], (30, 1))
        crops = ["barley"] * 15 + ["wheat"] * 15
        grid = AttributeGrid(list(range(30)), crops, feats)
        zmap = delineate(grid, k_max=5, seed=0)
        assert zmap.k == 2
        labels = zmap.labels_for(range(30))
        assert len(set(labels[:15])) == 1 and len(set(labels[15:])) == 1
        assert labels[0] != labels[15]

    def test_synthetic_quadrant_recovers_three_populations(self):
        grid, truth = synthetic_quadrant(seed=0)
        zmap = delineate(grid, k_max=8, seed=0)
        assert zmap.k == 3
        labels = zmap.labels_for(grid.cell_ids)
        best = max(
            np.mean(np.array([perm[t] for t in truth]) == labels)
            for perm in itertools.permutations([1, 2, 3]))
        assert best >= 0.95

    def test_zone_count_bounded(self):
        grid, _ = synthetic_quadrant(seed=1, rings=6, sectors=10)
        zmap = delineate(grid, k_max=4, seed=0)
        assert zmap.k <= 4 * len(set(grid.crops))

    def test_centroids_are_denormalized_means(self):
        grid, truth = synthetic_quadrant(seed=0, rings=6, sectors=10)
        zmap = delineate(grid, k_max=4, seed=0)
        labels = zmap.labels_for(grid.cell_ids)
        for z in range(1, zmap.k + 1):
            members = grid.features[labels == z]
            np.testing.assert_allclose(zmap.centroids[z - 1],
                                       members.mean(axis=0))


class TestMapToPivot:
    def make_map(self, rows, cols, labels, k):
        ids = list(range(rows * cols))
        cents = np.tile(np.arange(1, k + 1)[:, None], (1, 6)).astype(float)
        return ZoneMap(dict(zip(ids, labels)), cents, k, GridGeometry(rows, cols))

    def test_identity_at_same_resolution(self):
        labels = [1, 2, 1, 2, 1, 2]
        zmap = self.make_map(2, 3, labels, 2)
        out = map_to_pivot(zmap, GridGeometry(2, 3))
        assert [out.assignments[i] for i in range(6)] == labels

    def test_majority_vote(self):
        # one pivot cell covering fine labels {1, 1, 2}
        zmap = self.make_map(1, 3, [1, 1, 2], 2)
        out = map_to_pivot(zmap, GridGeometry(1, 1))
        assert out.assignments[0] == 1

    def test_tie_takes_lower_index(self):
        zmap = self.make_map(1, 2, [2, 1], 2)
        out = map_to_pivot(zmap, GridGeometry(1, 1))
        assert out.assignments[0] == 1

    def test_no_new_labels(self):
        grid, _ = synthetic_quadrant(seed=3)
        zmap = delineate(grid, k_max=8, seed=0)
        out = map_to_pivot(zmap, GridGeometry(12, 45))
        assert set(out.assignments.values()) <= set(zmap.assignments.values())

    def test_uncovered_pivot_cell_rejected(self):
        zmap = self.make_map(2, 2, [1, 1, 2, 2], 2)
        with pytest.raises(ValueError):
            map_to_pivot(zmap, GridGeometry(4, 4))


class TestIO:
    def test_roundtrip_csv(self, tmp_path):
        grid, _ = synthetic_quadrant(seed=4, rings=6, sectors=5)
        path = tmp_path / "grid.csv"
        write_attribute_grid(grid, path)
        back = read_attribute_grid(path, GridGeometry(6, 5))
        np.testing.assert_allclose(back.features, grid.features)
        assert back.crops == grid.crops

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("cell_id,crop,elev\n1,wheat,888\n")
        with pytest.raises(ValueError):
            read_attribute_grid(path)

    def test_zonemap_json_roundtrip(self, tmp_path):
        grid, _ = synthetic_quadrant(seed=5, rings=6, sectors=5)
        zmap = delineate(grid, k_max=4, seed=0)
        path = tmp_path / "zones.json"
        zmap.to_json(path)
        back = ZoneMap.from_json(path)
        assert back.k == zmap.k
        assert back.assignments == {str(c): z for c, z in zmap.assignments.items()}
        np.testing.assert_allclose(back.centroids, zmap.centroids)
