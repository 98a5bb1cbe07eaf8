"""Log-link GLMs fitted by iteratively reweighted least squares.

Poisson (frequency, with log-exposure offset) and gamma (severity, with
claim-count weights) families over designs of categorical factors and
tree-binned continuous covariates. Treatment coding with the most
populous level as reference. Model export doubles as the technical
tariff table interchange format.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .data import Dataset
from .evaluation import gamma_deviance_contributions, poisson_deviance_contributions

MAX_ITER = 100
REL_TOL = 1e-8

FAMILIES = ("poisson_log", "gamma_log")


class GlmError(ValueError):
    pass


@dataclass(frozen=True)
class BinningRule:
    """Ordered cut points turning a continuous variable into intervals."""

    variable: str
    cuts: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise GlmError(f"cut points for {self.variable!r} must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.cuts) + 1

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.cuts), values, side="left")

    def labels(self) -> list[str]:
        edges = [-np.inf, *self.cuts, np.inf]
        return [f"({edges[i]:.6g},{edges[i + 1]:.6g}]" for i in range(len(edges) - 1)]


def _factor_codes(dataset: Dataset, name: str, binning: dict[str, BinningRule]):
    """Level codes and labels for a factor variable (categorical column or
    binned continuous column)."""
    col = dataset.column_schema(name)
    if col.kind == "categorical":
        return dataset.columns[name], list(col.levels)
    if col.kind == "continuous":
        if name not in binning:
            raise GlmError(f"continuous variable {name!r} needs a BinningRule in the design")
        rule = binning[name]
        return rule.apply(dataset.columns[name]), rule.labels()
    raise GlmError(f"column {name!r} of kind {col.kind} cannot enter a GLM design")


@dataclass(frozen=True)
class Design:
    """GLM design: intercept plus main effects and pairwise interactions
    over factor variables."""

    main_effects: tuple[str, ...] = ()
    interactions: tuple[tuple[str, str], ...] = ()
    binning: dict[str, BinningRule] = field(default_factory=dict)


@dataclass
class _Term:
    name: str
    labels: list[str]  # per dummy column, reference excluded
    reference: int
    level_index: dict  # level tuple/scalar -> column position or -1 for reference


def _build_term(name, codes, labels, n, reference=None):
    if reference is None:
        counts = np.bincount(codes, minlength=len(labels))
        reference = int(np.argmax(counts))
    cols = []
    col_labels = []
    level_index = {}
    pos = 0
    for lvl in range(len(labels)):
        if lvl == reference:
            level_index[lvl] = -1
            continue
        level_index[lvl] = pos
        cols.append((codes == lvl).astype(float))
        col_labels.append(labels[lvl])
        pos += 1
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    return X, _Term(name, col_labels, reference, level_index)


def _interaction_codes(codes_a, labels_a, codes_b, labels_b):
    combined = codes_a * len(labels_b) + codes_b
    labels = [f"{la}*{lb}" for la in labels_a for lb in labels_b]
    return combined, labels


def build_design_matrix(dataset: Dataset, design: Design, references=None):
    """Design matrix with intercept and treatment-coded factor dummies.

    Returns (X, column_names, terms). At fit time the reference level of
    each term is its most populous level; `references` (term name -> level
    index) freezes that choice so prediction frames reuse the training
    coding regardless of their own level counts.
    """
    n = dataset.n
    references = references or {}
    blocks = [np.ones((n, 1))]
    names = ["(Intercept)"]
    terms = []
    for var in design.main_effects:
        codes, labels = _factor_codes(dataset, var, design.binning)
        X, term = _build_term(var, codes, labels, n, references.get(var))
        blocks.append(X)
        names.extend(f"{var}[{lbl}]" for lbl in term.labels)
        terms.append(term)
    for var_a, var_b in design.interactions:
        codes_a, labels_a = _factor_codes(dataset, var_a, design.binning)
        codes_b, labels_b = _factor_codes(dataset, var_b, design.binning)
        codes, labels = _interaction_codes(codes_a, labels_a, codes_b, labels_b)
        key = f"{var_a}:{var_b}"
        X, term = _build_term(key, codes, labels, n, references.get(key))
        blocks.append(X)
        names.extend(f"{key}[{lbl}]" for lbl in term.labels)
        terms.append(term)
    return np.hstack(blocks), names, terms


@dataclass
class GlmModel:
    """A fitted log-link GLM over binned/categorical covariates."""

    design: Design
    family: str
    coef: np.ndarray
    column_names: list[str]
    deviance: float
    loglik: float
    bic: float
    n_obs: int
    dispersion: float = 1.0
    train_fold: object = None
    references: dict = field(default_factory=dict)

    def predict(self, dataset: Dataset) -> np.ndarray:
        """exp(X beta) per row; exposure is NOT applied (the losses do)."""
        X, _, _ = build_design_matrix(dataset, self.design, self.references)
        if X.shape[1] != len(self.coef):
            raise GlmError("rows do not conform to the fitted design")
        return np.exp(X @ self.coef)

    def to_json(self) -> str:
        payload = {
            "family": self.family,
            "main_effects": list(self.design.main_effects),
            "interactions": [list(p) for p in self.design.interactions],
            "binning": {
                name: list(rule.cuts) for name, rule in self.design.binning.items()
            },
            "coefficients": dict(zip(self.column_names, map(float, self.coef))),
            "deviance": self.deviance,
            "bic": self.bic,
            "n_obs": self.n_obs,
            "dispersion": self.dispersion,
            "train_fold": self.train_fold,
            "references": self.references,
        }
        return json.dumps(payload, indent=2)

    @property
    def tariff_table(self) -> dict:
        """Segments and multiplicative rating factors per design term."""
        factors = {
            name: float(np.exp(beta))
            for name, beta in zip(self.column_names, self.coef)
            if name != "(Intercept)"
        }
        return {
            "base_level": float(np.exp(self.coef[0])),
            "relativities": factors,
            "binning": {n: list(r.cuts) for n, r in self.design.binning.items()},
        }


def _check_rank(X, names):
    q, r, p = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        aliased = [names[j] for j in p[rank:]]
        raise GlmError(f"rank-deficient design; aliased columns: {aliased}")


def fit_glm(
    dataset: Dataset,
    design: Design,
    family: str,
    train_fold=None,
) -> GlmModel:
    """Fit by IRLS until the relative deviance change is below 1e-8.

    Poisson uses ln(exposure) as offset; gamma uses the claim counts as
    prior weights. Deterministic; raises on rank deficiency or
    non-convergence.
    """
    if family not in FAMILIES:
        raise GlmError(f"unknown family {family!r}")
    X, names, terms = build_design_matrix(dataset, design)
    _check_rank(X, names)
    references = {t.name: t.reference for t in terms}
    y = dataset.response
    n, k = X.shape

    if family == "poisson_log":
        exposure = dataset.exposure
        if exposure is None:
            exposure = np.ones(n)
        offset = np.log(exposure)
        prior_w = np.ones(n)
        start_mean = np.sum(y) / np.sum(exposure)
    else:
        offset = np.zeros(n)
        prior_w = dataset.weights if dataset.weights is not None else np.ones(n)
        start_mean = np.sum(prior_w * y) / np.sum(prior_w)

    beta = np.zeros(k)
    beta[0] = np.log(start_mean)

    def deviance_of(mu):
        if family == "poisson_log":
            # mu here already includes exposure
            return float(np.sum(poisson_deviance_contributions(mu, y, np.ones(n))))
        return float(np.sum(gamma_deviance_contributions(mu, y, prior_w)))

    eta = X @ beta + offset
    mu = np.exp(eta)
    dev = deviance_of(mu)
    trace = [dev]
    for _ in range(MAX_ITER):
        if family == "poisson_log":
            w = mu  # canonical link: weight = mean (incl. exposure)
        else:
            w = prior_w  # gamma with log link: weight = prior weight
        z = (eta - offset) + (y - mu) / mu
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta = X @ beta + offset
        mu = np.exp(eta)
        new_dev = deviance_of(mu)
        trace.append(new_dev)
        if abs(new_dev - dev) <= REL_TOL * (abs(dev) + 0.1):
            dev = new_dev
            break
        dev = new_dev
    else:
        raise GlmError(f"IRLS did not converge in {MAX_ITER} iterations; deviance trace {trace}")

    if family == "poisson_log":
        loglik = float(np.sum(y * np.log(mu) - mu - gammaln(y + 1)))
        dispersion = 1.0
    else:
        dispersion = dev / max(n - k, 1)  # deviance-based estimator
        shape = prior_w / dispersion
        rate = shape / mu
        loglik = float(
            np.sum(shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(y) - rate * y)
        )
    bic_value = -2.0 * loglik + k * np.log(n)
    return GlmModel(
        design=design,
        family=family,
        coef=beta,
        column_names=names,
        deviance=dev,
        loglik=loglik,
        bic=bic_value,
        n_obs=n,
        dispersion=dispersion,
        train_fold=train_fold,
        references=references,
    )


def bic(model: GlmModel) -> float:
    return model.bic


def predict_glm(model: GlmModel, dataset: Dataset) -> np.ndarray:
    return model.predict(dataset)


def glm_from_json(text: str) -> GlmModel:
    payload = json.loads(text)
    binning = {
        name: BinningRule(name, tuple(cuts)) for name, cuts in payload["binning"].items()
    }
    design = Design(
        tuple(payload["main_effects"]),
        tuple(tuple(p) for p in payload["interactions"]),
        binning,
    )
    names = list(payload["coefficients"])
    coef = np.asarray([payload["coefficients"][k] for k in names])
    return GlmModel(
        design=design,
        family=payload["family"],
        coef=coef,
        column_names=names,
        deviance=payload["deviance"],
        loglik=np.nan,
        bic=payload["bic"],
        n_obs=payload["n_obs"],
        dispersion=payload.get("dispersion", 1.0),
        train_fold=payload.get("train_fold"),
        references=payload.get("references", {}),
    )


# -- tree binning -------------------------------------------------------


def _poisson_node_deviance(y, e):
    mu = np.sum(y) / np.sum(e)
    return float(np.sum(poisson_deviance_contributions(np.full(len(y), mu), y, e)))


def _gamma_node_deviance(y, w):
    mu = np.sum(w * y) / np.sum(w)
    return float(np.sum(gamma_deviance_contributions(np.full(len(y), mu), y, w)))


def tree_bin(
    variable: np.ndarray,
    response: np.ndarray,
    exposure: np.ndarray | None = None,
    max_bins: int = 8,
    family: str = "poisson_log",
    min_share: float = 0.05,
    min_gain: float = 0.01,
    name: str = "x",
) -> BinningRule:
    """Cut points from a deviance regression tree on a single variable.

    Best-first splitting until `max_bins` leaves; a split must reduce the
    parent deviance by at least `min_gain` of the root deviance and leave
    `min_share` of the observations on each side. A constant variable
    yields a single bin with a warning.
    """
    x = np.asarray(variable, dtype=float)
    y = np.asarray(response, dtype=float)
    w = np.ones(len(y)) if exposure is None else np.asarray(exposure, dtype=float)
    if max_bins < 2:
        raise GlmError("max_bins must be >= 2")
    node_dev = _poisson_node_deviance if family == "poisson_log" else _gamma_node_deviance
    if np.all(x == x[0]):
        warnings.warn(f"variable {name!r} is constant; single bin")
        return BinningRule(name, ())

    root_dev = node_dev(y, w)
    min_count = max(1, int(np.ceil(min_share * len(y))))

    def best_split(rows):
        # deviance gain of a split reduces to prefix sums: for Poisson the
        # node deviance is const - 2*Sy*ln(Sy/Se); for gamma it is
        # const + 2*Sa*ln(Say/Sa), so only the aggregated terms matter.
        xv = x[rows]
        order = np.argsort(xv, kind="stable")
        xs, ys, ws = xv[order], y[rows][order], w[rows][order]
        boundary = np.flatnonzero(xs[:-1] < xs[1:]) + 1  # left-block sizes
        if boundary.size == 0:
            return None
        if family == "poisson_log":
            cy, ce = np.cumsum(ys), np.cumsum(ws)
            ty, te = cy[-1], ce[-1]

            def half(sy, se):
                return -2.0 * np.where(sy > 0, sy * np.log(np.maximum(sy, 1e-300) / se), 0.0)

            parent = half(ty, te)
            gain = parent - half(cy[boundary - 1], ce[boundary - 1]) - half(
                ty - cy[boundary - 1], te - ce[boundary - 1]
            )
        else:
            ca, cay = np.cumsum(ws), np.cumsum(ws * ys)
            ta, tay = ca[-1], cay[-1]

            def half(sa, say):
                return 2.0 * sa * np.log(say / sa)

            parent = half(ta, tay)
            gain = parent - half(ca[boundary - 1], cay[boundary - 1]) - half(
                ta - ca[boundary - 1], tay - cay[boundary - 1]
            )
        ok = (boundary >= min_count) & (len(xs) - boundary >= min_count)
        if not ok.any():
            return None
        gain = np.where(ok, gain, -np.inf)
        j = int(np.argmax(gain))
        cut = (xs[boundary[j] - 1] + xs[boundary[j]]) / 2.0
        return (float(gain[j]), float(cut))

    leaves = [np.arange(len(y))]
    cuts: list[float] = []
    candidates = {0: best_split(leaves[0])}
    while len(leaves) < max_bins:
        viable = {
            i: c
            for i, c in candidates.items()
            if c is not None and c[0] > min_gain * max(root_dev, 1e-12)
        }
        if not viable:
            break
        i = max(viable, key=lambda j: viable[j][0])
        gain, cut = viable[i]
        rows = leaves[i]
        left_rows = rows[x[rows] <= cut]
        right_rows = rows[x[rows] > cut]
        leaves[i] = left_rows
        leaves.append(right_rows)
        cuts.append(float(cut))
        candidates[i] = best_split(left_rows)
        candidates[len(leaves) - 1] = best_split(right_rows)
    return BinningRule(name, tuple(sorted(cuts)))
