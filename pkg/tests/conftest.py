import warnings

import numpy as np
import pytest

from facemap import synthetic
from facemap.geodesics import all_pairs_geodesics, build_heat_context
from facemap.geometry_map import build_atlas
from facemap.mds import classical_mds_2d


@pytest.fixture(scope="session")
def template():
    return synthetic.face_template()


@pytest.fixture(scope="session")
def template_atlas(template):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ctx = build_heat_context(template.mesh)
    D = all_pairs_geodesics(ctx, template.mesh)
    return build_atlas(classical_mds_2d(D), template.mesh, 128)


@pytest.fixture(scope="session")
def small_model():
    return synthetic.bilinear_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
