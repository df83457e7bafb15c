import math

import pytest

from walkdiff import measures, models


@pytest.fixture(scope="session")
def rad():
    return measures.rademacher()


@pytest.fixture(scope="session")
def uniform_mu():
    return measures.uniform()


@pytest.fixture(scope="session")
def bm_qf():
    return models.QFunction(models.bm())


@pytest.fixture(scope="session")
def absorbed_bm_qf():
    return models.QFunction(models.bm(interval=(0.0, math.inf), m=0.5))


@pytest.fixture(scope="session")
def gbm_qf():
    return models.QFunction(models.gbm())


@pytest.fixture(scope="session")
def two_media_qf():
    return models.QFunction(models.two_media(A=2.0))
