import numpy as np
import pytest

from nsubdiv import shapes


@pytest.fixture(scope="session")
def tetrahedron():
    return shapes.tetrahedron()


@pytest.fixture(scope="session")
def octahedron():
    return shapes.octahedron()


@pytest.fixture(scope="session")
def icosahedron():
    return shapes.icosahedron()


@pytest.fixture(scope="session")
def icosphere3():
    return shapes.icosphere(3)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def neighbor_sets_from_faces(faces, n_vertices):
    """Independent adjacency oracle: neighbor sets from the raw face list."""
    nbrs = [set() for _ in range(n_vertices)]
    for a, b, c in faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return nbrs
