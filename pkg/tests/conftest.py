"""Shared fixtures: small phantoms and deterministic attribute sets."""

import numpy as np
import pytest

from kgpl.core import Sex, SubjectAttributes
from kgpl.data import PhantomSpec, generate_phantom, preprocess_sample


@pytest.fixture(scope="session")
def tiny_spec():
    return PhantomSpec(size=16, num_tissues=3, num_structures=6, seed=42)


@pytest.fixture(scope="session")
def tiny_attrs():
    return SubjectAttributes(age_years=50, sex=Sex.MALE,
                             diagnosis="mild cognitive impairment")


@pytest.fixture(scope="session")
def tiny_sample(tiny_spec, tiny_attrs):
    return generate_phantom(tiny_spec, tiny_attrs)


@pytest.fixture(scope="session")
def tiny_processed(tiny_sample):
    return preprocess_sample(tiny_sample, (16, 16, 16))


@pytest.fixture(scope="session")
def tiny_cohort(tiny_spec):
    """Twelve preprocessed 16^3 samples with varied attributes."""
    rng = np.random.default_rng(7)
    out = []
    for i in range(12):
        attrs = SubjectAttributes(
            age_years=int(rng.integers(10, 90)),
            sex=Sex.MALE if rng.random() < 0.5 else Sex.FEMALE,
            diagnosis="mild cognitive impairment" if rng.random() < 0.3 else None,
        )
        spec = PhantomSpec(size=16, num_tissues=3, num_structures=6, seed=100 + i)
        out.append(preprocess_sample(generate_phantom(spec, attrs), (16, 16, 16)))
    return out
