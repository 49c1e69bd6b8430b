"""Reading survey and census CSV files and the YAML analysis manifest.

Survey CSV: a header row, a weight column, one 0/1 column per call, the
outcome and covariate columns. Outcome and co-missing covariates are blank
for final nonrespondents. Census CSV: covariate columns plus ``mass`` or
``count``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from sorcall.equations.common import WorkingModels
from sorcall.errors import ConfigurationError, DataError
from sorcall.model import (
    CovariateDistribution,
    EstimandSpec,
    FeatureMap,
    OddsRatioFeatures,
    SurveyDataset,
    balanced_distribution,
    empirical_distribution,
    linear_features,
    product_distribution,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Manifest:
    """Column roles and working-model designs for one analysis.

    Design terms are covariate names; ``"a:b"`` denotes the product of
    ``a`` and ``b``. Every design gets an intercept. ``odds_ratio`` lists the
    columns ``z`` in ``Gamma = y * (gamma_0 + z @ gamma_z)``; empty means a
    single ``gamma * y``.
    """

    outcome: str
    calls: tuple[str, ...]
    missing_covariates: tuple[str, ...]
    observed_covariates: tuple[str, ...] = ()
    weight: str | None = None
    family: str = "binary"
    designs: dict[str, tuple[str, ...]] = field(default_factory=dict)
    odds_ratio: tuple[str, ...] = ()
    odds_ratio_last: tuple[str, ...] | None = None
    design_distribution: str = "empirical"
    unsure_column: str | None = None

    @property
    def covariates(self) -> tuple[str, ...]:
        return self.missing_covariates + self.observed_covariates

    def _terms(self, terms: Sequence[str]) -> tuple[list, list[str]]:
        cols = list(self.covariates)
        out = []
        for t in terms:
            parts = [s.strip() for s in str(t).split(":")]
            for s in parts:
                if s not in cols:
                    raise ConfigurationError(f"design term {t!r}: unknown covariate {s!r}")
            idx = [cols.index(s) for s in parts]
            out.append(idx[0] if len(idx) == 1 else tuple(idx))
        return out, [str(t) for t in terms]

    def feature_map(self, terms: Sequence[str]) -> FeatureMap:
        idx, names = self._terms(terms)
        return linear_features(idx, names=names)

    def design(self, role: str, fallback: str | None = None) -> FeatureMap:
        if role in self.designs:
            return self.feature_map(self.designs[role])
        if fallback and fallback in self.designs:
            return self.feature_map(self.designs[fallback])
        return self.feature_map(self.covariates)

    def odds(self, terms: Sequence[str] | None) -> OddsRatioFeatures:
        if not terms:
            return OddsRatioFeatures()
        return OddsRatioFeatures(z=self.feature_map(terms))

    def working_models(self) -> WorkingModels:
        b2 = self.design("baseline2", "baseline1")
        return WorkingModels(
            baseline1=self.design("baseline1"),
            baseline2=b2,
            odds=self.odds(self.odds_ratio),
            outcome=self.design("outcome"),
            family=self.family,
            baseline_last=self.design("baseline_last", "baseline2"),
            odds_last=self.odds(self.odds_ratio_last if self.odds_ratio_last is not None
                                else self.odds_ratio),
            outcome_last=self.design("outcome_last", "outcome"),
        )

    def estimand(self, text: str = "mean") -> EstimandSpec:
        """``"mean"`` or ``"logit:a,b"`` (logistic regression of y on a, b)."""
        text = text.strip()
        if text == "mean":
            return EstimandSpec()
        if text.startswith("logit:"):
            cols = [c for c in text[6:].split(",") if c.strip()]
            return EstimandSpec("logistic", self.feature_map([c.strip() for c in cols]))
        raise ConfigurationError(f"unknown estimand {text!r}")


_KNOWN = {
    "outcome", "calls", "missing_covariates", "observed_covariates", "weight", "family",
    "designs", "odds_ratio", "odds_ratio_last", "design_distribution", "unsure_column",
}


def _tuple(v) -> tuple[str, ...]:
    if v is None:
        return ()
    if isinstance(v, str):
        return (v,)
    return tuple(str(s) for s in v)


def read_manifest(path: str | Path) -> Manifest:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as err:
        line = getattr(getattr(err, "problem_mark", None), "line", None)
        raise DataError(f"{path}: invalid YAML ({err})", None if line is None else line + 1)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: manifest must be a mapping")
    unknown = set(raw) - _KNOWN
    if unknown:
        raise ConfigurationError(f"unknown manifest keys: {sorted(unknown)}")
    for key in ("outcome", "calls", "missing_covariates"):
        if key not in raw:
            raise ConfigurationError(f"manifest is missing {key!r}")
    family = {"gaussian": "gaussian", "continuous": "gaussian", "binary": "binary"}.get(
        str(raw.get("family", "binary")))
    if family is None:
        raise ConfigurationError(f"unknown family {raw.get('family')!r}")
    dd = str(raw.get("design_distribution", "empirical"))
    if dd not in ("empirical", "balanced"):
        raise ConfigurationError("design_distribution must be 'empirical' or 'balanced'")
    designs = {str(k): _tuple(v) for k, v in (raw.get("designs") or {}).items()}
    orl = raw.get("odds_ratio_last")
    return Manifest(
        outcome=str(raw["outcome"]),
        calls=_tuple(raw["calls"]),
        missing_covariates=_tuple(raw["missing_covariates"]),
        observed_covariates=_tuple(raw.get("observed_covariates")),
        weight=raw.get("weight"),
        family=family,
        designs=designs,
        odds_ratio=_tuple(raw.get("odds_ratio")),
        odds_ratio_last=None if orl is None else _tuple(orl),
        design_distribution=dd,
        unsure_column=raw.get("unsure_column"),
    )


def _number(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"column {column!r}: not a number: {text!r}", line) from None
    if not math.isfinite(v):
        raise DataError(f"column {column!r}: non-finite value", line)
    return v


@dataclass(frozen=True)
class SurveyFile:
    data: SurveyDataset
    unsure: np.ndarray | None  # mask over final respondents


def read_survey(path: str | Path, manifest: Manifest) -> SurveyFile:
    """Parse a survey CSV; line numbers in errors count the header as line 1."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file", 1) from None
        needed = list(manifest.calls) + [manifest.outcome] + list(manifest.covariates)
        if manifest.weight:
            needed.append(manifest.weight)
        if manifest.unsure_column:
            needed.append(manifest.unsure_column)
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}", 1)
        col = {h: j for j, h in enumerate(header)}
        w, r, y, xm, xo, uns = [], [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(row)}", line)
            get = lambda c: row[col[c]].strip()  # noqa: E731
            calls = []
            for c in manifest.calls:
                v = get(c)
                if v not in ("0", "1"):
                    raise DataError(f"call column {c!r} must be 0 or 1, got {v!r}", line)
                calls.append(int(v))
            if any(b < a for a, b in zip(calls, calls[1:])):
                raise DataError("response indicators decrease across calls", line)
            resp = calls[-1] == 1
            wv = _number(get(manifest.weight), line, manifest.weight) if manifest.weight else 1.0
            if wv <= 0:
                raise DataError("weight must be positive", line)
            yv = get(manifest.outcome)
            unsure = bool(manifest.unsure_column) and resp and get(manifest.unsure_column) not in ("", "0")
            if unsure and not yv:
                yv = "0"  # placeholder, replaced by imputation
            if resp != bool(yv):
                what = "missing" if resp else "present"
                raise DataError(f"outcome {what} for a {'re' if resp else 'non'}spondent", line)
            mrow = []
            for c in manifest.missing_covariates:
                v = get(c)
                if resp != bool(v):
                    raise DataError(f"covariate {c!r} must be present exactly for respondents",
                                    line)
                if resp:
                    mrow.append(_number(v, line, c))
            orow = []
            for c in manifest.observed_covariates:
                v = get(c)
                if not v:
                    raise DataError(f"always-observed covariate {c!r} is blank", line)
                orow.append(_number(v, line, c))
            w.append(wv)
            r.append(calls)
            xo.append(orow)
            if resp:
                y.append(_number(yv, line, manifest.outcome))
                xm.append(mrow)
                uns.append(unsure)
    if not r:
        raise DataError(f"{path}: no data rows", 2)
    n = len(r)
    data = SurveyDataset(
        weight=np.array(w),
        r=np.array(r, dtype=np.int8),
        y=np.array(y),
        x_missing=np.array(xm, dtype=float).reshape(len(y), len(manifest.missing_covariates)),
        x_observed=np.array(xo, dtype=float).reshape(n, len(manifest.observed_covariates)),
        missing_names=manifest.missing_covariates,
        observed_names=manifest.observed_covariates,
    )
    return SurveyFile(data, np.array(uns, dtype=bool) if manifest.unsure_column else None)


def read_census(path: str | Path, columns: Sequence[str] | None = None) -> CovariateDistribution:
    """Read a weighted support table; counts are normalized to masses."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file", 1) from None
        if "mass" in header:
            wcol = "mass"
        elif "count" in header:
            wcol = "count"
        else:
            raise DataError(f"{path}: needs a 'mass' or 'count' column", 1)
        names = [h for h in header if h != wcol] if columns is None else list(columns)
        absent = [c for c in names if c not in header]
        if absent:
            raise DataError(f"{path}: missing columns {absent}", 1)
        idx = [header.index(c) for c in names]
        wj = header.index(wcol)
        rows, weights = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(row)}", line)
            rows.append([_number(row[j].strip(), line, header[j]) for j in idx])
            v = _number(row[wj].strip(), line, wcol)
            if v < 0:
                raise DataError(f"negative {wcol}", line)
            weights.append(v)
    if not rows:
        raise DataError(f"{path}: no data rows", 2)
    weights = np.array(weights)
    if weights.sum() <= 0:
        raise DataError(f"{path}: total {wcol} is zero")
    uniq, inv = np.unique(np.array(rows), axis=0, return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=weights, minlength=len(uniq))
    return CovariateDistribution(uniq, mass / mass.sum(), tuple(names))


def covariate_law(
    census: CovariateDistribution, data: SurveyDataset, manifest: Manifest
) -> CovariateDistribution:
    """Population law over ``(X1, X2)`` in the manifest's column order.

    If the census covers every covariate it is used as is (columns reordered).
    If it covers only the co-missing covariates, it is combined with the law
    of the always-observed covariates from the sample, either their weighted
    empirical frequencies or an exact balance over their observed levels.
    """
    names = list(census.names)
    want = list(manifest.covariates)
    if set(want) <= set(names):
        cols = [names.index(c) for c in want]
        support = census.support[:, cols]
        uniq, inv = np.unique(support, axis=0, return_inverse=True)
        mass = np.bincount(inv.ravel(), weights=census.mass, minlength=len(uniq))
        return CovariateDistribution(uniq, mass / mass.sum(), tuple(want))
    miss = list(manifest.missing_covariates)
    if set(miss) <= set(names) and manifest.observed_covariates:
        cols = [names.index(c) for c in miss]
        uniq, inv = np.unique(census.support[:, cols], axis=0, return_inverse=True)
        mass = np.bincount(inv.ravel(), weights=census.mass, minlength=len(uniq))
        d1 = CovariateDistribution(uniq, mass / mass.sum(), tuple(miss))
        if manifest.design_distribution == "balanced":
            d2 = balanced_distribution(data.x_observed, manifest.observed_covariates)
        else:
            d2 = empirical_distribution(data.x_observed, data.weight, manifest.observed_covariates)
        return product_distribution(d1, d2)
    raise ConfigurationError(
        f"census columns {names} do not cover the co-missing covariates {miss}"
    )


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_report(report: dict, path: str | Path) -> None:
    """Write a JSON report; non-finite numbers become ``null``."""
    body = {"schema_version": SCHEMA_VERSION, **_jsonable(report)}
    Path(path).write_text(json.dumps(body, indent=2) + "\n")


def read_report(path: str | Path) -> dict:
    body = json.loads(Path(path).read_text())
    if body.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported report schema {body.get('schema_version')!r}")
    return body


def write_survey(path: str | Path, data: SurveyDataset, manifest: Manifest) -> None:
    """Write ``data`` in the survey CSV layout named by ``manifest``.

    Floats use 17 significant digits so that reading the file back gives
    the same arrays.
    """
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    header = list(manifest.calls) + [manifest.outcome] + list(manifest.covariates)
    if manifest.weight:
        header.append(manifest.weight)
    if len(manifest.calls) != data.K:
        raise ConfigurationError(f"manifest names {len(manifest.calls)} calls, data has {data.K}")
    pos = np.cumsum(data.respondent) - 1
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            resp = bool(data.respondent[i])
            row = [str(int(v)) for v in data.r[i]]
            row.append(fmt(data.y[pos[i]]) if resp else "")
            row += [fmt(v) for v in data.x_missing[pos[i]]] if resp else [""] * data.x_missing.shape[1]
            row += [fmt(v) for v in data.x_observed[i]]
            if manifest.weight:
                row.append(fmt(data.weight[i]))
            w.writerow(row)


def write_census(path: str | Path, dist: CovariateDistribution) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dist.names) + ["mass"])
        for row, m in zip(dist.support, dist.mass):
            w.writerow([format(float(v), ".17g") for v in row] + [format(float(m), ".17g")])
