import numpy as np
import pytest

from bscahn.mesh import (
    Mesh,
    MeshError,
    MeshFormatError,
    generate_unit_square,
    load_mesh,
    save_mesh,
)


def test_counts_on_coarsest_grid(mesh2):
    assert mesh2.num_nodes == 9
    assert mesh2.num_triangles == 8
    assert mesh2.num_surface_nodes == 8
    assert mesh2.perimeter == pytest.approx(4.0, abs=1e-14)


def test_triangle_areas_tile_the_square(mesh2):
    areas = mesh2.triangle_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(1.0, abs=1e-15)


def test_arc_lengths_by_direct_edge_summation(mesh4):
    assert mesh4.num_surface_nodes == 16
    # independent oracle: walk the loop summing Euclidean edge lengths
    loop = mesh4.surface_nodes
    total = 0.0
    sums = [0.0]
    for i in range(len(loop)):
        j = (i + 1) % len(loop)
        total += float(np.linalg.norm(mesh4.nodes[loop[j]] - mesh4.nodes[loop[i]]))
        sums.append(total)
    assert abs(mesh4.arc_lengths[-1] - 4.0) <= 1e-14
    assert np.allclose(mesh4.arc_lengths, sums, atol=1e-14)
    assert np.all(np.diff(mesh4.arc_lengths) > 0)


def test_boundary_loop_starts_at_origin_and_runs_ccw(mesh4):
    loop = mesh4.surface_nodes
    assert np.allclose(mesh4.nodes[loop[0]], [0.0, 0.0])
    # counterclockwise: the signed area of the boundary polygon is positive
    pts = mesh4.nodes[loop]
    shoelace = 0.5 * np.sum(
        pts[:, 0] * np.roll(pts[:, 1], -1) - pts[:, 1] * np.roll(pts[:, 0], -1)
    )
    assert shoelace > 0


def test_trace_map_injective_onto_boundary(mesh4):
    loop = mesh4.trace_map
    assert len(set(loop.tolist())) == len(loop)
    on_boundary = np.where(
        (np.abs(mesh4.nodes[:, 0]) < 1e-14)
        | (np.abs(mesh4.nodes[:, 0] - 1) < 1e-14)
        | (np.abs(mesh4.nodes[:, 1]) < 1e-14)
        | (np.abs(mesh4.nodes[:, 1] - 1) < 1e-14)
    )[0]
    assert set(loop.tolist()) == set(on_boundary.tolist())


def test_invalid_resolution_rejected():
    with pytest.raises(MeshError):
        generate_unit_square(1)
    with pytest.raises(MeshError):
        generate_unit_square(0)


def test_euler_characteristic(mesh4):
    edges = set()
    for tri in mesh4.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges.add((min(a, b), max(a, b)))
    v, e, t = mesh4.num_nodes, len(edges), mesh4.num_triangles
    assert v - e + t == 1


def test_shoelace_area_matches_triangle_sum(mesh8):
    pts = mesh8.nodes[mesh8.surface_nodes]
    shoelace = 0.5 * np.sum(
        pts[:, 0] * np.roll(pts[:, 1], -1) - pts[:, 1] * np.roll(pts[:, 0], -1)
    )
    total = mesh8.triangle_areas().sum()
    assert abs(total - shoelace) <= 1e-12 * abs(shoelace)


def test_boundary_edges_belong_to_one_triangle(mesh4):
    count = {}
    for tri in mesh4.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    for edge in mesh4.boundary_edges():
        assert count[edge] == 1


def test_save_load_roundtrip(tmp_path, mesh2):
    path = tmp_path / "mesh.txt"
    save_mesh(mesh2, str(path))
    back = load_mesh(str(path))
    assert np.allclose(back.nodes, mesh2.nodes)
    assert np.array_equal(back.triangles, mesh2.triangles)
    assert np.array_equal(back.surface_nodes, mesh2.surface_nodes)


def test_save_line_counts(tmp_path):
    mesh = generate_unit_square(3)
    path = tmp_path / "m3.txt"
    save_mesh(mesh, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "bsmesh 1"
    assert lines[1] == "16 18"
    assert len(lines) == 2 + 16 + 18


def test_save_empty_path_raises(mesh2):
    with pytest.raises(OSError):
        save_mesh(mesh2, "")


def test_load_reports_line_and_column(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("bsmesh 1\n3 junk\n0 0\n1 0\n0 1\n0 1 2\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(str(path))
    assert err.value.line == 2
    assert err.value.column == 3


def test_load_rejects_clockwise_triangle(tmp_path):
    path = tmp_path / "cw.txt"
    path.write_text("bsmesh 1\n3 1\n0 0\n1 0\n0 1\n0 2 1\n")
    with pytest.raises(MeshError, match="signed area"):
        load_mesh(str(path))


def test_load_rejects_multi_loop_boundary(tmp_path):
    # square ring: outer square with a square hole, valid triangles but two
    # boundary loops
    outer = [(0, 0), (3, 0), (3, 3), (0, 3)]
    inner = [(1, 1), (2, 1), (2, 2), (1, 2)]
    nodes = outer + inner
    tris = [
        (0, 1, 5), (0, 5, 4), (1, 2, 6), (1, 6, 5),
        (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7),
    ]
    lines = ["bsmesh 1", f"{len(nodes)} {len(tris)}"]
    lines += [f"{x} {y}" for x, y in nodes]
    lines += [f"{a} {b} {c}" for a, b, c in tris]
    path = tmp_path / "ring.txt"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshError, match="loop"):
        load_mesh(str(path))


def test_load_ignores_comments(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text(
        "# header comment\nbsmesh 1\n3 1  # counts\n0 0\n1 0\n0 1\n0 1 2\n"
    )
    mesh = load_mesh(str(path))
    assert mesh.num_triangles == 1


def test_mesh_arrays_are_immutable(mesh2):
    with pytest.raises(ValueError):
        mesh2.nodes[0, 0] = 5.0
