"""Shared fixtures and tiny helper models for the test suite."""

import numpy as np
import pytest

from freqsev.data import (
    ColumnSchema,
    Dataset,
    PortfolioSpec,
    generate_synthetic_portfolio,
)


class ConstantModel:
    """predict(dataset) -> the same value everywhere."""

    def __init__(self, value):
        self.value = float(value)

    def predict(self, dataset):
        return np.full(dataset.n, self.value)


class LogLinearModel:
    """exp(intercept + sum of continuous coefficients + per-level effects)."""

    def __init__(self, intercept=0.0, cont_coefs=None, cat_coefs=None):
        self.intercept = intercept
        self.cont_coefs = cont_coefs or {}
        self.cat_coefs = cat_coefs or {}

    def predict(self, dataset):
        eta = np.full(dataset.n, self.intercept)
        for name, coef in self.cont_coefs.items():
            eta = eta + coef * dataset.columns[name]
        for name, per_level in self.cat_coefs.items():
            eta = eta + np.asarray(per_level)[dataset.columns[name]]
        return np.exp(eta)


def small_portfolio(n=600, seed=0, freq_intercept=-1.6):
    spec = PortfolioSpec(
        n=n,
        continuous={"age": (18.0, 80.0)},
        categorical={"region": {"north": 0.45, "south": 0.35, "east": 0.2}},
        freq_intercept=freq_intercept,
        freq_coefs={"age": -0.01, "region": {"south": 0.4, "east": -0.3}},
        sev_intercept=6.0,
        sev_coefs={"region": {"south": 0.3}},
    )
    return generate_synthetic_portfolio(spec, seed=seed)


def toy_dataset():
    """5-row fixed dataset with one continuous and one categorical column."""
    schema = (
        ColumnSchema("age", "continuous"),
        ColumnSchema("region", "categorical", ("a", "b", "c")),
        ColumnSchema("exposure", "exposure"),
        ColumnSchema("claims", "response"),
    )
    columns = {
        "age": np.array([20.0, 30.0, 40.0, 50.0, 60.0]),
        "region": np.array([0, 1, 2, 1, 0], dtype=np.int64),
        "exposure": np.array([1.0, 0.5, 1.0, 0.8, 1.0]),
        "claims": np.array([0.0, 1.0, 0.0, 2.0, 1.0]),
    }
    return Dataset(schema, columns)


@pytest.fixture
def portfolio():
    return small_portfolio()


@pytest.fixture
def toy():
    return toy_dataset()
