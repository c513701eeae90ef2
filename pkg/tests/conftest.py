import numpy as np
import pytest

from aerialcontact.models import DemonstrationRecord, learn_models
from aerialcontact.synthetic import box_top_demo


def random_quats(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def box_demo():
    return box_top_demo()


@pytest.fixture(scope="session")
def box_bundle(box_demo):
    cloud, links = box_demo
    return learn_models(DemonstrationRecord(cloud, links, label="box"), seed=0)
