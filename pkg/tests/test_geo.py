import math
import random
import time

import pytest

from dhlink.errors import MixedUserInput, ValidationError
from dhlink.services.geo import (
    GeoIndex,
    GpsCluster,
    GpsPoint,
    dbscan_labels,
    geohash_encode,
    gps_cluster,
    haversine_m,
)

M_PER_DEG = 6_371_000.0 * math.pi / 180


def test_haversine_examples():
    assert haversine_m(0, 0, 0, 0) == 0
    assert haversine_m(0, 0, 0.001, 0) == pytest.approx(111.195, abs=0.01)
    assert haversine_m(0, 0, 0, 180) == pytest.approx(math.pi * 6_371_000, rel=1e-12)


def test_haversine_symmetric_and_zero_only_on_equal_points():
    rng = random.Random(1)
    for _ in range(1000):
        a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert haversine_m(*a, *b) == haversine_m(*b, *a)
        assert haversine_m(*a, *a) == 0
        if a != b:
            assert haversine_m(*a, *b) > 0


def test_point_range_checked():
    with pytest.raises(ValidationError):
        GpsPoint("u", 91, 0, 0)


# -- DBSCAN --------------------------------------------------------------------

def reference_dbscan(points, eps, min_pts):
    """Textbook DBSCAN from a full distance matrix; labels -1 for noise.

    Core components come from union-find. Clusters are numbered by their
    smallest core index and a border point joins the lowest-numbered cluster
    among its core neighbours.
    """
    n = len(points)
    near = [[haversine_m(p.lat, p.lon, q.lat, q.lon) <= eps for q in points] for p in points]
    core = [sum(row) >= min_pts for row in near]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(n):
            if core[i] and core[j] and near[i][j]:
                parent[find(i)] = find(j)
    roots = sorted({find(i) for i in range(n) if core[i]}, key=lambda r: min(i for i in range(n) if core[i] and find(i) == r))
    number = {r: k for k, r in enumerate(roots)}
    labels = []
    for i in range(n):
        if core[i]:
            labels.append(number[find(i)])
        else:
            options = [number[find(j)] for j in range(n) if core[j] and near[i][j]]
            labels.append(min(options) if options else -1)
    return labels


def random_instance(rng):
    n = rng.randint(0, 50)
    centres = [(rng.uniform(-60, 60), rng.uniform(-170, 170)) for _ in range(rng.randint(1, 4))]
    pts = []
    for i in range(n):
        lat, lon = rng.choice(centres)
        spread = rng.choice([20, 80, 300])
        pts.append(GpsPoint("u", lat + rng.gauss(0, spread) / M_PER_DEG,
                            lon + rng.gauss(0, spread) / M_PER_DEG / math.cos(math.radians(lat)), i))
    return pts, rng.uniform(10, 400), rng.randint(1, 6)


def test_dbscan_matches_reference_on_1000_instances():
    rng = random.Random(6)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        pts, eps, min_pts = random_instance(rng)
        mismatches += dbscan_labels(pts, eps, min_pts) != reference_dbscan(pts, eps, min_pts)
    assert mismatches == 0
    assert time.perf_counter() - start < 5.0


def four_plus_one():
    base = (45.0, 7.0)
    offsets = [(0, 0), (20, 0), (0, 20), (20, 20)]
    pts = [GpsPoint("u", base[0] + dy / M_PER_DEG, base[1] + dx / M_PER_DEG / math.cos(math.radians(45)), i * 1000)
           for i, (dx, dy) in enumerate(offsets)]
    pts.append(GpsPoint("u", base[0] + 10_000 / M_PER_DEG, base[1], 5000))
    return pts


def test_four_plus_one_example():
    pts = four_plus_one()
    assert dbscan_labels(pts, 100, 3) == reference_dbscan(pts, 100, 3) == [0, 0, 0, 0, -1]
    (c,) = gps_cluster(pts, 100, 3)
    assert c.point_count == 4
    assert (c.t_start, c.t_end) == (0, 3000)
    assert c.centroid_lat == pytest.approx(sum(p.lat for p in pts[:4]) / 4)
    assert c.centroid_lon == pytest.approx(sum(p.lon for p in pts[:4]) / 4)


def test_gps_cluster_edge_cases():
    assert gps_cluster([]) == []
    with pytest.raises(MixedUserInput):
        gps_cluster([GpsPoint("a", 0, 0, 0), GpsPoint("b", 0, 0, 1)])
    with pytest.raises(ValidationError):
        dbscan_labels([GpsPoint("a", 0, 0, 0)], 0, 3)
    with pytest.raises(ValidationError):
        dbscan_labels([GpsPoint("a", 0, 0, 0)], 10, 0)


def test_gps_cluster_is_order_independent_and_sorted():
    rng = random.Random(2)
    for _ in range(50):
        pts, eps, min_pts = random_instance(rng)
        shuffled = pts[:]
        rng.shuffle(shuffled)
        out = gps_cluster(pts, eps, min_pts)
        assert out == gps_cluster(shuffled, eps, min_pts)
        assert out == sorted(out, key=lambda c: (c.t_start, c.cluster_id))
        assert len({c.cluster_id for c in out}) == len(out)


# -- geohash index ---------------------------------------------------------------

def test_geohash_known_value():
    assert geohash_encode(42.6, -5.6, 5) == "ezs42"
    assert geohash_encode(57.64911, 10.40744, 11) == "u4pruydqqvj"


def cluster_at(cid, lat, lon):
    return GpsCluster(cid, "u", lat, lon, 0, 1, 3)


def test_geo_index_never_misses_a_neighbour():
    rng = random.Random(3)
    index = GeoIndex(radius_m=50)
    clusters = {}
    for i in range(2000):
        lat = 51.5 + rng.uniform(-0.01, 0.01)
        lon = -0.12 + rng.uniform(-0.01, 0.01)
        clusters[f"c{i}"] = cluster_at(f"c{i}", lat, lon)
        index.add(clusters[f"c{i}"])
    for _ in range(300):
        lat = 51.5 + rng.uniform(-0.01, 0.01)
        lon = -0.12 + rng.uniform(-0.01, 0.01)
        truth = {cid for cid, c in clusters.items() if haversine_m(lat, lon, c.centroid_lat, c.centroid_lon) <= 50}
        assert truth <= index.near(lat, lon, 50)


def test_geo_index_remove_and_fallbacks():
    index = GeoIndex(radius_m=50)
    index.add(cluster_at("a", 10, 10))
    assert index.near(10, 10) == {"a"}
    index.remove("a")
    assert index.near(10, 10) == set() and len(index) == 0
    assert index.near(10, 10, 500) is None
    assert index.near(85, 10) is None
