import numpy as np
import pytest

from drnet.shapes import make_shape_dataset


@pytest.fixture(scope="session")
def tiny_shape_root(tmp_path_factory):
    """Small balanced shape corpus shared by pipeline/CLI tests."""
    root = tmp_path_factory.mktemp("tinyshapes")
    make_shape_dataset(root, total=100, size=16, fractions=(0.2, 0.2, 0.2, 0.2, 0.2), seed=7)
    return root
