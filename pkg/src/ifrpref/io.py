"""Dataset ingestion, posterior reports and draw export."""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .diagnostics import effective_sample_size, gelman_rubin, hpd_interval
from .distributions import invert_binomial_ci
from .errors import DataError, DomainError
from .model import GroupObservation, icloglog

DATASET_COLUMNS = (
    "label", "date", "tests", "confirmed", "population", "deaths", "ir_ci_lower", "ir_ci_upper",
    "prop_over_70", "hosp_beds_per_1000", "days_since_outbreak", "days_until_lockdown", "pop_density",
)
IR_COVARIATES = ("log_days_since_outbreak", "log_days_until_lockdown_plus1", "log_pop_density")
IFR_COVARIATES = ("log_prop_over_70", "log_hosp_beds_per_1000")
REPORT_SCHEMA_VERSION = "1.0"


def bundled_path(name="europe.csv") -> Path:
    return Path(str(resources.files("ifrpref").joinpath("data").joinpath(name)))


def read_table(path=None) -> list:
    """Raw rows as dicts of strings, in file order; headers are checked."""
    path = bundled_path() if path is None else Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != DATASET_COLUMNS:
            raise DataError(f"header must be {','.join(DATASET_COLUMNS)}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if None in row or any(v is None for v in row.values()):
                raise DataError("wrong number of fields", row=i)
            rows.append(dict(row))
    return rows


def write_table(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DATASET_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in DATASET_COLUMNS})


def _num(row, key, i, cast=float, required=True):
    v = row[key].strip()
    if v == "":
        if required:
            raise DataError(f"missing {key}", row=i)
        return None
    try:
        x = cast(v)
    except ValueError:
        raise DataError(f"{key}={v!r} is not a number", row=i) from None
    if isinstance(x, float) and not math.isfinite(x):
        raise DataError(f"{key} is not finite", row=i)
    return x


def center_scale(x):
    """(x - mean) / sd with the sample (n - 1) standard deviation."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DomainError("cannot scale a constant covariate")
    return (x - x.mean()) / sd


def covariate_matrices(rows: Sequence[dict]):
    """Transformed covariates (X for IR, Z for IFR) over the given rows."""
    raw = {k: np.array([float(r[k]) for r in rows]) for k in DATASET_COLUMNS[8:]}
    if np.any(raw["days_since_outbreak"] <= 0) or np.any(raw["pop_density"] <= 0) \
            or np.any(raw["prop_over_70"] <= 0) or np.any(raw["hosp_beds_per_1000"] <= 0) \
            or np.any(raw["days_until_lockdown"] < 0):
        raise DataError("covariates must be positive (days until lockdown non-negative)")
    x = np.column_stack([center_scale(np.log(raw["days_since_outbreak"])),
                         center_scale(np.log(raw["days_until_lockdown"] + 1.0)),
                         center_scale(np.log(raw["pop_density"]))])
    z = np.column_stack([center_scale(np.log(raw["prop_over_70"])),
                         center_scale(np.log(raw["hosp_beds_per_1000"]))])
    return x, z


def load_dataset(path=None, covariates: bool = True) -> list:
    """Observations from a dataset CSV (the bundled European data by default).

    Rows carrying a reported IR confidence interval are converted to
    effective (confirmed, tests) counts and marked as representative
    (phi known to be 1).  Covariates are log-transformed and centred and
    scaled across all rows of the file.
    """
    rows = read_table(path)
    if not rows:
        raise DataError("dataset has no rows")
    obs = []
    for i, r in enumerate(rows, start=1):
        pop = _num(r, "population", i, int)
        deaths = _num(r, "deaths", i, int)
        lo = _num(r, "ir_ci_lower", i, float, required=False)
        hi = _num(r, "ir_ci_upper", i, float, required=False)
        if lo is not None or hi is not None:
            if lo is None or hi is None:
                raise DataError("both CI bounds are required", row=i)
            try:
                cc, t = invert_binomial_ci(lo, hi)
            except DomainError as e:
                raise DataError(str(e), row=i) from None
            known = True
        else:
            t = _num(r, "tests", i, int)
            cc = _num(r, "confirmed", i, int)
            known = False
        if cc > t:
            raise DataError("confirmed exceeds tests", row=i)
        try:
            obs.append(GroupObservation(label=r["label"], population=pop, tests=t, confirmed=cc,
                                        deaths=deaths, phi_known_one=known))
        except DomainError as e:
            raise DataError(str(e), row=i) from None
    if covariates:
        x, z = covariate_matrices(rows)
        for k, o in enumerate(obs):
            o.ir_covariates = tuple(x[k])
            o.ifr_covariates = tuple(z[k])
    return obs


def representative_only(groups: Sequence[GroupObservation]) -> list:
    """Groups with phi known to be 1, with covariates dropped."""
    return [GroupObservation(g.label, g.population, g.tests, g.confirmed, g.deaths, True)
            for g in groups if g.phi_known_one]


# ---------------------------------------------------------------------------
# reports


def summarize_column(draws, name, prob=0.95, scale="raw"):
    """Median, HPD, R-hat and ESS of one column shaped (chains, draws)."""
    d = np.asarray(draws, dtype=float)
    lo, hi = hpd_interval(d, prob)
    rhat = gelman_rubin(d) if d.shape[0] > 1 and d.shape[1] >= 10 else math.nan
    return dict(parameter=name, scale=scale, median=float(np.median(d)), hpd_lower=lo, hpd_upper=hi,
                hpd_prob=prob, rhat=_finite_or_none(rhat), ess=float(effective_sample_size(d)))


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _icloglog_entry(entry, name):
    return dict(parameter=name, scale="icloglog", median=float(icloglog(entry["median"])),
                hpd_lower=float(icloglog(entry["hpd_lower"])), hpd_upper=float(icloglog(entry["hpd_upper"])),
                hpd_prob=entry["hpd_prob"], rhat=entry["rhat"], ess=entry["ess"])


def build_report(result, model, prob=0.95, settings=None) -> dict:
    """JSON-serialisable posterior report for a large-P fit.

    Global parameters are summarised on their raw scale; theta and beta are
    also given mapped through icloglog (median and HPD endpoints
    transformed, so the two scales agree exactly).  The derived
    ``ifr_overall`` / ``ir_overall`` entries are summaries of the
    transformed draws themselves.
    """
    names = result.names
    col = result.column
    globals_ = []
    for name in names:
        if name.startswith(("ir[", "ifr[", "phi[")):
            continue
        entry = summarize_column(col(name), name, prob)
        globals_.append(entry)
        if name in ("theta", "beta"):
            globals_.append(_icloglog_entry(entry, name))
    data = model.data
    groups = []
    for k, label in enumerate(data.labels):
        g = dict(label=label, phi_known_one=bool(data.known[k]),
                 ir=summarize_column(col(f"ir[{k + 1}]"), f"ir[{k + 1}]", prob),
                 ifr=summarize_column(col(f"ifr[{k + 1}]"), f"ifr[{k + 1}]", prob))
        pname = f"phi[{k + 1}]"
        g["phi"] = summarize_column(col(pname), pname, prob) if pname in names else None
        groups.append(g)
    return dict(
        schema_version=REPORT_SCHEMA_VERSION,
        settings=settings or {},
        converged=bool(result.converged),
        max_rhat=_finite_or_none(result.max_rhat),
        n_restarts=int(result.n_restarts),
        draws_per_chain=int(result.draws_per_chain),
        n_chains=int(result.draws.shape[0]),
        n_retained=int(result.draws.shape[1]),
        globals=globals_,
        groups=groups,
    )


def report_schema() -> dict:
    text = resources.files("ifrpref").joinpath("data/report_schema.json").read_text()
    return json.loads(text)


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def write_draws_csv(result, path) -> None:
    """One row per retained draw (chains stacked), with a leading chain column."""
    m, n, p = result.draws.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", *result.names])
        for c in range(m):
            for i in range(n):
                w.writerow([c + 1, *(repr(float(v)) for v in result.draws[c, i])])


def read_draws_csv(path):
    """Inverse of :func:`write_draws_csv`: ``(names, draws[chains, n, p])``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [list(map(float, row)) for row in r]
    if not rows:
        raise DataError("draws file is empty")
    arr = np.array(rows)
    chains = arr[:, 0].astype(int)
    ids = np.unique(chains)
    per = [arr[chains == c, 1:] for c in ids]
    if len({x.shape[0] for x in per}) != 1:
        raise DataError("chains have unequal lengths")
    return header[1:], np.stack(per)


def write_interval_plot_data(report: dict, path) -> None:
    """Long-format CSV of group and overall medians with HPD bounds."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "quantity", "median", "hpd_lower", "hpd_upper", "hpd_prob"])
        for g in report["groups"]:
            for q in ("ir", "ifr"):
                e = g[q]
                w.writerow([g["label"], q, e["median"], e["hpd_lower"], e["hpd_upper"], e["hpd_prob"]])
        for e in report["globals"]:
            if e["parameter"] in ("ifr_overall", "ir_overall"):
                w.writerow(["Overall", e["parameter"].split("_")[0], e["median"], e["hpd_lower"],
                            e["hpd_upper"], e["hpd_prob"]])
