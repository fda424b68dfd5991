import numpy as np
import pytest

from cowgraph.connect import transfer_labels
from cowgraph.graph import (
    CenterlineGraph,
    build_graph,
    extract_anatomical_nodes,
    merge_single_label_graphs,
    remove_spurious_edges,
    trim_and_smooth,
)
from cowgraph.thinning import thin_mask
from cowgraph.volume import DistanceField, LabeledMask, Volume

from phantoms import torus_mask, y_junction_mask


def make_labeled(data, spacing=(0.25, 0.25, 0.25)):
    return LabeledMask(Volume(np.asarray(data, dtype=np.uint8), spacing))


def uniform_dist(shape, value=1.0, spacing=(0.25, 0.25, 0.25)):
    return DistanceField(Volume(np.full(shape, value, dtype=np.float32), spacing))


def labeled_y_graph(child_label_offset_mm=1.5):
    mask, junction = y_junction_mask(labels=(1, 2, 3), child_label_offset_mm=child_label_offset_mm)
    skel = thin_mask(mask.volume)
    labeled = transfer_labels(skel, mask)
    return build_graph(labeled), junction


class TestBuildGraph:
    def test_straight_chain(self):
        data = np.zeros((45, 5, 5), dtype=np.uint8)
        data[2:43, 2, 2] = 1
        g = build_graph(make_labeled(data))
        assert len(g.nodes) == 2
        assert len(g.edges) == 1
        edge = next(iter(g.edges.values()))
        assert len(edge.points) == 41
        assert edge.label == 1
        g.validate()

    def test_y_structure(self):
        g, _ = labeled_y_graph(child_label_offset_mm=0.0)
        degrees = sorted(g.degree(n) for n in g.nodes)
        assert degrees.count(1) == 3
        assert degrees[-1] == 3
        g.validate()

    def test_closed_ring_gets_anchor(self):
        mask = torus_mask()
        skel = thin_mask(mask.volume)
        labeled = transfer_labels(skel, mask)
        g = build_graph(labeled)
        assert len(g.nodes) == 1
        assert len(g.edges) == 1
        edge = next(iter(g.edges.values()))
        assert edge.u == edge.v
        assert g.cycle_rank() == 1
        # anchor at the lexicographically smallest voxel
        voxels = sorted(map(tuple, np.argwhere(skel.mask())))
        assert g.nodes[edge.u].voxel == voxels[0]
        g.validate()

    def test_label_transition_creates_boundary_node(self):
        data = np.zeros((41, 5, 5), dtype=np.uint8)
        data[2:20, 2, 2] = 1
        data[20:39, 2, 2] = 2
        g = build_graph(make_labeled(data))
        assert len(g.nodes) == 3
        assert len(g.edges) == 2
        labels = sorted(e.label for e in g.edges.values())
        assert labels == [1, 2]
        g.validate()

    def test_empty_skeleton(self):
        g = build_graph(make_labeled(np.zeros((4, 4, 4))))
        assert not g.nodes and not g.edges

    def test_majority_label_tie_goes_low(self):
        data = np.zeros((10, 3, 3), dtype=np.uint8)
        data[2:4, 1, 1] = 5
        data[4:6, 1, 1] = 3
        # chain 5,5,3,3 -> split at transition; each part uniform
        g = build_graph(make_labeled(data))
        assert sorted(e.label for e in g.edges.values()) == [3, 5]


class TestAnatomicalNodes:
    def test_ba_bifurcation_named(self):
        g, junction = labeled_y_graph()
        nodes, diags = extract_anatomical_nodes(g)
        names = {(n.segment, n.name) for n in nodes}
        assert ("BA", "BA bifurcation") in names
        assert ("BA", "R-PCA boundary") in names
        assert ("BA", "L-PCA boundary") in names
        assert ("R-PCA", "BA boundary") in names
        assert ("BA", "BA start") in names
        assert ("R-PCA", "PCA end") in names
        assert not diags
        bif = [n for n in nodes if n.name == "BA bifurcation"][0]
        assert bif.degree == 3
        assert bif.node_type == "bifurcation"
        assert np.linalg.norm(np.asarray(bif.coords) - junction) < 0.6

    def test_no_pcom_no_pcom_bifurcation(self):
        g, _ = labeled_y_graph()
        nodes, _ = extract_anatomical_nodes(g)
        assert not [n for n in nodes if "Pcom" in n.name]

    def test_boundary_views_share_position(self):
        data = np.zeros((41, 5, 5), dtype=np.uint8)
        data[2:20, 2, 2] = 1
        data[20:39, 2, 2] = 2
        g = build_graph(make_labeled(data))
        nodes, _ = extract_anatomical_nodes(g)
        boundary = [n for n in nodes if n.node_type == "boundary"]
        assert len(boundary) == 2
        assert boundary[0].coords == boundary[1].coords
        assert {n.name for n in boundary} == {"R-PCA boundary", "BA boundary"}


class TestRemoveSpuriousEdges:
    def test_short_self_loop_removed(self):
        data = np.zeros((40, 40, 5), dtype=np.uint8)
        vol = Volume(data, (0.25,) * 3)
        g = CenterlineGraph(vol)
        n = g.add_node((2.5, 2.5, 0.5), (10, 10, 2))
        theta = np.linspace(0, 2 * np.pi, 25)
        r = 3.0 / (2 * np.pi)  # ~3 mm circumference
        loop = np.stack(
            [2.5 + r * np.cos(theta) - r, 2.5 + r * np.sin(theta), np.full_like(theta, 0.5)],
            axis=1,
        )
        loop[0] = loop[-1] = (2.5, 2.5, 0.5)
        g.add_edge(n, n, loop, 6)
        dist_data = np.full(data.shape, 1.5, dtype=np.float32)
        dist = DistanceField(Volume(dist_data, (0.25,) * 3))
        out = remove_spurious_edges(g, dist)
        assert len(out.edges) == 0  # 3 mm < 4 * 1.5 mm

    def test_long_self_loop_kept(self):
        data = np.zeros((60, 60, 5), dtype=np.uint8)
        vol = Volume(data, (0.25,) * 3)
        g = CenterlineGraph(vol)
        n = g.add_node((5.0, 5.0, 0.5), (20, 20, 2))
        theta = np.linspace(0, 2 * np.pi, 60)
        r = 9.0 / (2 * np.pi)
        loop = np.stack(
            [5.0 + r * np.cos(theta) - r, 5.0 + r * np.sin(theta), np.full_like(theta, 0.5)],
            axis=1,
        )
        loop[0] = loop[-1] = (5.0, 5.0, 0.5)
        g.add_edge(n, n, loop, 6)
        dist_data = np.full(data.shape, 0.5, dtype=np.float32)
        dist = DistanceField(Volume(dist_data, (0.25,) * 3))
        out = remove_spurious_edges(g, dist)
        assert len(out.edges) == 1  # 9 mm >= 4 * 0.5 mm

    @staticmethod
    def parallel_pair_graph(gap_background: bool):
        shape = (41, 21, 5)
        vol = Volume(np.zeros(shape, dtype=np.uint8), (0.25,) * 3)
        g = CenterlineGraph(vol)
        a = g.add_node((1.0, 2.5, 0.5), (4, 10, 2))
        b = g.add_node((9.0, 2.5, 0.5), (36, 10, 2))
        xs = np.linspace(1.0, 9.0, 33)
        straight = np.stack([xs, np.full_like(xs, 2.5), np.full_like(xs, 0.5)], axis=1)
        bowed = straight.copy()
        bowed[:, 1] += np.sin(np.linspace(0, np.pi, 33)) * 1.5
        g.add_edge(a, b, straight, 4)
        g.add_edge(a, b, bowed, 4)
        dist_data = np.full(shape, 1.0, dtype=np.float32)
        dist_data[:, 10, :] = 2.0  # center line is best centered
        if gap_background:
            dist_data[:, 13:16, :] = 0.0  # background stripe between the two
        return g, DistanceField(Volume(dist_data, (0.25,) * 3))

    def test_duplicate_parallel_edge_removed_by_mean_fd(self):
        g, dist = self.parallel_pair_graph(gap_background=False)
        out = remove_spurious_edges(g, dist)
        assert len(out.edges) == 1
        survivor = next(iter(out.edges.values()))
        assert np.allclose(survivor.points[:, 1], 2.5)  # the centered one

    def test_genuine_fenestration_channels_kept(self):
        g, dist = self.parallel_pair_graph(gap_background=True)
        out = remove_spurious_edges(g, dist)
        assert len(out.edges) == 2

    def test_clean_y_unchanged_and_idempotent(self):
        g, _ = labeled_y_graph()
        dist = uniform_dist(g.grid.dims, 1.0)
        once = remove_spurious_edges(g, dist)
        assert len(once.edges) == len(g.edges)
        twice = remove_spurious_edges(once, dist)
        assert len(twice.edges) == len(once.edges)
        assert once.n_components() <= g.n_components()

    def test_invalid_cross_segment_edge_removed(self):
        # triangle: ICA-MCA legit, ICA-ACA legit, plus a direct MCA-ACA edge
        # closing a cycle; MCA-ACA has no junction in the adjacency table
        vol = Volume(np.zeros((40, 40, 5), dtype=np.uint8), (0.25,) * 3)
        g = CenterlineGraph(vol)
        trunk = g.add_node((5.0, 3.0, 0.5), (20, 12, 2))
        hub = g.add_node((5.0, 5.0, 0.5), (20, 20, 2))
        m = g.add_node((7.0, 7.0, 0.5), (28, 28, 2))
        a = g.add_node((3.0, 7.0, 0.5), (12, 28, 2))
        def line(p, q, n=9):
            return np.linspace(p, q, n)
        g.add_edge(trunk, hub, line((5.0, 3.0, 0.5), (5.0, 5.0, 0.5)), 4)
        g.add_edge(hub, m, line((5.0, 5.0, 0.5), (7.0, 7.0, 0.5)), 5)
        g.add_edge(hub, a, line((5.0, 5.0, 0.5), (3.0, 7.0, 0.5)), 11)
        g.add_edge(m, a, line((7.0, 7.0, 0.5), (3.0, 7.0, 0.5)), 5)
        dist = uniform_dist((40, 40, 5), 1.0)
        out = remove_spurious_edges(g, dist)
        assert len(out.edges) == 3
        remaining = {(e.u, e.v) for e in out.edges.values()}
        assert (m, a) not in remaining and (a, m) not in remaining


class TestTrimAndSmooth:
    @staticmethod
    def chain_graph(n=21, start=(2.0, 2.0, 0.5)):
        vol = Volume(np.zeros((60, 20, 5), dtype=np.uint8), (0.25,) * 3)
        g = CenterlineGraph(vol)
        xs = start[0] + 0.25 * np.arange(n)
        pts = np.stack([xs, np.full(n, start[1]), np.full(n, start[2])], axis=1)
        u = g.add_node(pts[0], tuple(int(i) for i in vol.voxel_indices([pts[0]])[0]))
        v = g.add_node(pts[-1], tuple(int(i) for i in vol.voxel_indices([pts[-1]])[0]))
        g.add_edge(u, v, pts, 1)
        return g

    def test_trim_capped_at_one_mm(self):
        g = self.chain_graph()
        dist = uniform_dist(g.grid.dims, 2.0)  # boundary distance 2 mm at termini
        out = trim_and_smooth(g, dist)
        e = next(iter(out.edges.values()))
        # 1 mm = 4 points trimmed from each end
        assert len(e.points) == 21 - 8
        assert e.points[0, 0] == pytest.approx(3.0)
        assert e.points[-1, 0] == pytest.approx(6.0)
        out.validate()

    def test_trim_uses_local_distance_below_cap(self):
        g = self.chain_graph()
        dist = uniform_dist(g.grid.dims, 0.5)
        out = trim_and_smooth(g, dist)
        e = next(iter(out.edges.values()))
        assert len(e.points) == 21 - 4  # 0.5 mm = 2 points per end

    def test_two_point_polyline_unchanged(self):
        vol = Volume(np.zeros((10, 10, 5), dtype=np.uint8), (0.25,) * 3)
        g = CenterlineGraph(vol)
        u = g.add_node((1.0, 1.0, 0.5), (4, 4, 2))
        v = g.add_node((1.25, 1.0, 0.5), (5, 4, 2))
        g.add_edge(u, v, [(1.0, 1.0, 0.5), (1.25, 1.0, 0.5)], 1)
        out = trim_and_smooth(g, uniform_dist((10, 10, 5), 2.0))
        assert np.array_equal(next(iter(out.edges.values())).points,
                              next(iter(g.edges.values())).points)

    def test_zigzag_smoothed(self):
        vol = Volume(np.zeros((60, 20, 5), dtype=np.uint8), (0.25,) * 3)
        g = CenterlineGraph(vol)
        n = 31
        xs = 2.0 + 0.25 * np.arange(n)
        ys = 2.0 + 0.25 * (np.arange(n) % 2)  # +-1 voxel alternation
        pts = np.stack([xs, ys, np.full(n, 0.5)], axis=1)
        u = g.add_node(pts[0], (8, 8, 2))
        v = g.add_node(pts[-1], tuple(int(i) for i in vol.voxel_indices([pts[-1]])[0]))
        g.add_edge(u, v, pts, 1)
        out = trim_and_smooth(g, uniform_dist((60, 20, 5), 0.0))  # no trim
        sm = next(iter(out.edges.values())).points
        assert len(sm) == n
        interior = sm[3:-3, 1]
        mean_line = 2.0 + 0.125
        assert np.abs(interior - mean_line).max() < 0.3 * 0.25
        # endpoints fixed
        assert np.allclose(sm[0], pts[0]) and np.allclose(sm[-1], pts[-1])


class TestMergeSingleLabel:
    @staticmethod
    def main_with_boundary():
        data = np.zeros((41, 5, 5), dtype=np.uint8)
        data[2:20, 2, 2] = 4  # R-ICA
        data[20:39, 2, 2] = 8  # R-Pcom
        return build_graph(make_labeled(data))

    def test_part_spliced_at_boundary(self):
        main = self.main_with_boundary()
        vol = main.grid
        part = CenterlineGraph(vol)
        boundary_world = vol.world_coords([(20, 2, 2)])[0]
        start = boundary_world + (0.1, 0.1, 0.0)  # 0.14 mm from the boundary node
        end = boundary_world + (4.0, 1.0, 0.0)
        pts = np.linspace(start, end, 17)
        u = part.add_node(pts[0])
        v = part.add_node(pts[-1])
        part.add_edge(u, v, pts, 8)
        merged = merge_single_label_graphs(main, {8: part})
        labels = sorted(e.label for e in merged.edges.values())
        assert labels == [4, 8]
        pcom = [e for e in merged.edges.values() if e.label == 8][0]
        # spliced end snapped onto the existing boundary node
        snapped = merged.nodes[pcom.u].coords
        assert np.allclose(snapped, boundary_world)

    def test_far_part_skipped_with_diagnostic(self):
        main = self.main_with_boundary()
        part = CenterlineGraph(main.grid)
        pts = np.linspace((30.0, 10.0, 0.5), (34.0, 10.0, 0.5), 17)
        u = part.add_node(pts[0])
        v = part.add_node(pts[-1])
        part.add_edge(u, v, pts, 8)
        merged = merge_single_label_graphs(main, {8: part})
        assert sorted(e.label for e in merged.edges.values()) == [4, 8]
        # original Pcom edge retained
        assert any("merge skipped" in d for d in merged.diagnostics)

    def test_empty_parts_identity(self):
        main = self.main_with_boundary()
        merged = merge_single_label_graphs(main, {})
        assert len(merged.edges) == len(main.edges)
        assert len(merged.nodes) == len(main.nodes)
