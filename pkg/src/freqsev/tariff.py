"""Technical tariffs and model-lift comparison tools.

Premiums are frequency times severity predictions. Comparison works
through risk scores (ECDF of premiums), Lorenz curves, relativities and
ordered Lorenz curves, a pairwise Gini matrix, and the min-max rule that
picks the tariff whose worst challenger Gini is smallest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset


class TariffError(ValueError):
    pass


def technical_premium(freq_model, sev_model, dataset: Dataset) -> np.ndarray:
    """Per-row expected claim count times expected severity (per unit
    exposure; multiply by exposure for a policy-period premium)."""
    freq = np.asarray(freq_model.predict(dataset), dtype=float)
    sev = np.asarray(sev_model.predict(dataset), dtype=float)
    if np.any(freq <= 0) or np.any(sev <= 0):
        raise TariffError("premium components must be strictly positive")
    return freq * sev


def balance_ratio(premiums, observed_losses) -> float:
    """Total predicted over total observed losses."""
    premiums = np.asarray(premiums, dtype=float)
    losses = np.asarray(observed_losses, dtype=float)
    if len(premiums) != len(losses):
        raise TariffError("premiums and losses must cover the same rows")
    total = losses.sum()
    if total == 0:
        raise TariffError("observed losses sum to zero")
    return float(premiums.sum() / total)


def risk_scores(premiums) -> np.ndarray:
    """Empirical CDF of the premiums evaluated at each premium
    (right-continuous; tied premiums share the upper value)."""
    p = np.asarray(premiums, dtype=float)
    if len(p) == 0:
        raise TariffError("no premiums given")
    return np.searchsorted(np.sort(p), p, side="right") / len(p)


def lorenz_curve(scores, losses, s_grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Share of losses on policies with risk score <= s, over the grid
    (default: 0 plus the distinct observed scores)."""
    r = np.asarray(scores, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if np.any(losses < 0):
        raise TariffError("losses must be non-negative")
    total = losses.sum()
    if total <= 0:
        raise TariffError("losses sum must be positive")
    if s_grid is None:
        s_grid = np.concatenate([[0.0], np.unique(r)])
    s = np.asarray(s_grid, dtype=float)
    order = np.argsort(r, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(losses[order])]) / total
    idx = np.searchsorted(r[order], s, side="right")
    return s, cum[idx]


def relativities(premiums_a, premiums_b) -> np.ndarray:
    """Per-row premium ratio of model B over model A."""
    a = np.asarray(premiums_a, dtype=float)
    b = np.asarray(premiums_b, dtype=float)
    if np.any(a <= 0):
        raise TariffError("reference premiums must be strictly positive")
    return b / a


def ordered_lorenz(premiums_a, premiums_b, losses) -> tuple[np.ndarray, np.ndarray]:
    """Ordered Lorenz curve of (premium share of A, loss share),
    accumulated in order of the relativity B/A.

    Rows with equal relativity accumulate as one block (one curve point
    per distinct relativity), which makes the B = A comparison land
    exactly on the diagonal.
    """
    a = np.asarray(premiums_a, dtype=float)
    losses = np.asarray(losses, dtype=float)
    rel = relativities(premiums_a, premiums_b)
    if np.any(losses < 0):
        raise TariffError("losses must be non-negative")
    if a.sum() <= 0 or losses.sum() <= 0:
        raise TariffError("premium and loss totals must be positive")
    order = np.argsort(rel, kind="stable")
    rel_sorted = rel[order]
    prem_cum = np.cumsum(a[order])
    prem_cum /= prem_cum[-1]  # normalize by the running total so the curve ends at 1 exactly
    loss_cum = np.cumsum(losses[order])
    loss_cum /= loss_cum[-1]
    last_of_block = np.concatenate([rel_sorted[1:] != rel_sorted[:-1], [True]])
    x = np.concatenate([[0.0], prem_cum[last_of_block]])
    y = np.concatenate([[0.0], loss_cum[last_of_block]])
    return x, y


def gini_index(x, y) -> float:
    """Twice the trapezoid area between the diagonal and the curve;
    positive when the curve lies below the diagonal."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or len(x) != len(y):
        raise TariffError("need at least two curve points")
    if np.any(np.diff(x) < 0):
        raise TariffError("curve points must be sorted by premium share")
    return float(2.0 * np.trapezoid(x - y, x))


def minmax_select(gini_matrix, model_ids=None) -> tuple[int, np.ndarray, bool]:
    """Row index whose maximum off-diagonal Gini is smallest.

    Returns (selected index or id, row maxima, tie flag); ties break to
    the first index.
    """
    g = np.asarray(gini_matrix, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise TariffError("Gini matrix must be square")
    k = g.shape[0]
    if k == 1:
        row_max = np.array([-np.inf])
        selected = 0
    else:
        masked = g.copy()
        np.fill_diagonal(masked, -np.inf)
        row_max = masked.max(axis=1)
        selected = int(np.argmin(row_max))
    tie = bool(np.sum(row_max == row_max[selected]) > 1)
    if model_ids is not None:
        return model_ids[selected], row_max, tie
    return selected, row_max, tie


@dataclass(frozen=True)
class TariffComparison:
    """Pairwise tariff comparison over a common evaluation frame."""

    models: tuple[str, ...]
    gini: np.ndarray  # row = benchmark A, column = challenger B
    balance: dict[str, float]
    lorenz: dict[str, tuple[np.ndarray, np.ndarray]]
    selected: str
    row_maxima: np.ndarray
    tie: bool = False


def compare_tariffs(premiums: dict[str, np.ndarray], losses) -> TariffComparison:
    """Full comparison: balance ratios, per-model Lorenz curves, the
    pairwise ordered-Lorenz Gini matrix, and the min-max selection."""
    models = tuple(premiums)
    if not models:
        raise TariffError("no models to compare")
    losses = np.asarray(losses, dtype=float)
    k = len(models)
    gini = np.zeros((k, k))
    for i, a in enumerate(models):
        for j, b in enumerate(models):
            if i == j:
                continue
            x, y = ordered_lorenz(premiums[a], premiums[b], losses)
            gini[i, j] = gini_index(x, y)
    balance = {m: balance_ratio(premiums[m], losses) for m in models}
    lorenz = {m: lorenz_curve(risk_scores(premiums[m]), losses) for m in models}
    selected, row_max, tie = minmax_select(gini, list(models))
    return TariffComparison(models, gini, balance, lorenz, selected, row_max, tie)


# -- artifact emission ---------------------------------------------------


def write_balance_csv(comparison: TariffComparison, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", "balance_ratio"])
        for m in comparison.models:
            writer.writerow([m, repr(comparison.balance[m])])


def write_gini_csv(comparison: TariffComparison, path) -> None:
    """Gini matrix with a flag marking each row's maximum and the
    min-max selected row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["benchmark", *comparison.models, "row_max", "selected"])
        for i, a in enumerate(comparison.models):
            row = [repr(float(comparison.gini[i, j])) for j in range(len(comparison.models))]
            writer.writerow(
                [a, *row, repr(float(comparison.row_maxima[i])), int(a == comparison.selected)]
            )


def write_lorenz_csv(comparison: TariffComparison, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", "s", "lorenz"])
        for m in comparison.models:
            s, lc = comparison.lorenz[m]
            for si, li in zip(s, lc):
                writer.writerow([m, repr(float(si)), repr(float(li))])
