import numpy as np
import pytest

from mltet import mesh as msh
from mltet.errors import InvertedElement, NonConformingMesh, ParseError


def test_cube_subdivision_volumes():
    m = msh.build_block_mesh(1, 1, 1)
    assert m.n_tets == 6
    np.testing.assert_allclose(m.volumes, 1 / 6, rtol=1e-14)


@pytest.mark.parametrize("amp", [0.0, 0.15, 0.3])
def test_block_mesh_fills_box(amp):
    m = msh.build_block_mesh(3, 2, 4, box=((-1, 1), (0, 2), (0, 1)), distortion=amp)
    assert m.n_tets == 6 * 24
    assert m.volumes.sum() == pytest.approx(4.0, rel=1e-12)
    assert m.dets.min() > 0


def test_distortion_range():
    with pytest.raises(ValueError):
        msh.build_block_mesh(2, 2, 2, distortion=0.5)


def test_every_interior_face_shared_once():
    m = msh.build_block_mesh(2, 2, 2)
    counts = np.array(list(m.face_counts().values()))
    assert set(counts) <= {1, 2}
    # boundary faces: 6 sides x 4 squares x 2 triangles
    assert np.count_nonzero(counts == 1) == 48


def test_global_dof_counts(p2):
    # P1 counts: vertices of a 2^3 block
    m = msh.build_block_mesh(2, 2, 2)
    vertices = np.array([[0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0.0]])
    assert msh.enumerate_global_dofs(m, vertices).n_global == 27
    dm = msh.enumerate_global_dofs(m, p2.nodes)
    # 125 grid points + face centroids + tet centroids; hand count for the Kuhn block
    assert dm.n_global == 293
    assert dm.n_free == 147
    one = msh.enumerate_global_dofs(msh.TetMesh(m.vertices[m.tets[0]], [[0, 1, 2, 3]]), p2.nodes)
    assert one.n_global == 15 and one.n_free == 1


def test_two_tets_share_a_face(p2):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.0]])
    m = msh.TetMesh(v, [[0, 1, 2, 3], [1, 4, 2, 3]])
    dm = msh.enumerate_global_dofs(m, p2.nodes)
    # 15 + 15 - (3 vertices + 3 edges + 1 face centroid)
    assert dm.n_global == 23


def test_shared_nodes_have_equal_coordinates(p2):
    m = msh.build_block_mesh(2, 1, 1, distortion=0.2)
    dm = msh.enumerate_global_dofs(m, p2.nodes)
    phys = m.map_points(p2.nodes)
    np.testing.assert_allclose(dm.coords[dm.local_to_global], phys, atol=1e-12)


def test_non_conforming_face():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [0.3, 0.3, 1]])
    m = msh.TetMesh(v, [[0, 1, 2, 3], [0, 2, 1, 4], [0, 1, 2, 5]])
    with pytest.raises(NonConformingMesh):
        msh.enumerate_global_dofs(m, np.array([[0, 0, 0, 1.0], [1, 0, 0, 0], [0, 1, 0, 0],
                                               [0, 0, 1, 0]]))


def test_inverted_element_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(InvertedElement):
        msh.TetMesh(v, [[0, 2, 1, 3]])


def test_honeycomb_cell(p2):
    cell = msh.build_honeycomb_cell(p2.nodes)
    np.testing.assert_allclose(cell.mesh.volumes, msh.HONEYCOMB_VOLUME, rtol=1e-12)
    assert cell.n0 == 26
    # every tet of the honeycomb is congruent: same sorted edge lengths
    v = cell.mesh.vertices[cell.mesh.tets]
    edges = np.sort([[np.linalg.norm(t[i] - t[j]) for i in range(4) for j in range(i + 1, 4)]
                     for t in v], axis=1)
    np.testing.assert_allclose(edges, edges[0][None].repeat(6, 0), atol=1e-12)
    assert cell.shift.min() >= 0 and cell.shift.max() <= 1


def test_mesh_round_trip(tmp_path):
    m = msh.build_block_mesh(2, 2, 1, distortion=0.1)
    path = tmp_path / "m.txt"
    msh.write_mesh(path, m)
    back = msh.read_mesh(path)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.tets, m.tets)


def test_read_mesh_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("tetmesh 1\n4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 1 2 7\n")
    with pytest.raises(ParseError, match="line 7"):
        msh.read_mesh(path)
    path.write_text("tetmesh 1\n4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 2 1 3\n")
    with pytest.raises(ParseError, match="line 7"):
        msh.read_mesh(path)
    path.write_text("tetmesh 1\n4 1\n0 0 0\n1 x 0\n")
    with pytest.raises(ParseError):
        msh.read_mesh(path)
    path.write_text("mesh\n")
    with pytest.raises(ParseError, match="line 1"):
        msh.read_mesh(path)
