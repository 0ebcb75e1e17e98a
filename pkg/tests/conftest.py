import numpy as np
import pytest

import rtvflow as rt


def _jitter(mesh, rng, rel=0.2):
    """Perturb interior vertices by a fraction of the local spacing."""
    v = np.array(mesh.vertices)
    n = int(round(np.sqrt(mesh.num_vertices))) - 1
    interior = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[interior] += rng.uniform(-rel / n, rel / n, size=(int(interior.sum()), 2))
    return rt.TriMesh(v, mesh.triangles)


@pytest.fixture()
def jitter_mesh():
    return _jitter


@pytest.fixture(scope="session")
def ref_triangle():
    """Single reference triangle with unit legs."""
    return rt.TriMesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)])


@pytest.fixture(scope="session")
def small_jittered():
    mesh = rt.generate_structured(3)
    return _jitter(mesh, np.random.default_rng(11))
