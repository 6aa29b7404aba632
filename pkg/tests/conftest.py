import numpy as np
import pytest

from susylab import potential as pot
from susylab import susy


@pytest.fixture
def double_well():
    return pot.quartic_double_well()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def all_specs():
    """One spec per family, built from the catalogue potentials."""
    return {
        "witten": susy.assemble_witten(1.0, pot.quartic_double_well()),
        "kfp": susy.assemble_kfp(1.0, pot.quartic_double_well()),
        "chain": susy.assemble_chain(1.0, pot.paper_sec6_V1(), pot.paper_sec6_V2(), pot.paper_sec6_Vc()),
    }
