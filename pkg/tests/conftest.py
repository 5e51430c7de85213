import pytest

from flforensics.config import parse_config

SMALL = {
    "data": {"n_train": 3000, "n_test": 500, "edge_train": 40, "edge_test": 60},
    "partition": {"n_clients": 30},
    "training": {"rounds": 30, "checkpoint_every": 5},
}


def small_config(seed=0, **sections):
    doc = {"seed": seed, **{k: dict(v) for k, v in SMALL.items()}}
    for name, values in sections.items():
        doc.setdefault(name, {}).update(values)
    return parse_config(doc)


@pytest.fixture
def small():
    return small_config
