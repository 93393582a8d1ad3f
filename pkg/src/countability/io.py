"""Reading and writing the CSV and JSON files used by the command line."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .model import Dataset, ModelParameters, validate_dataset
from .simulator import SimulationSpec

DATASET_COLUMNS = (
    "year", "count_f", "count_m", "effort", "harvest_f", "harvest_m",
    "survey_f", "survey_m", "survey_sd_log",
)
SIMULATION_KEYS = {
    "n_years", "true_params", "initial", "effort", "harvest", "harvest_fraction",
    "survey_sd", "first_year", "seed",
}
TRUE_PARAM_KEYS = {"r", "k", "tau", "omega", "nu", "a_bar"}


class InputError(ValueError):
    """A file could not be parsed; the message names the file and line."""


def fmt(x: float) -> str:
    """Shortest round-tripping text for a number (integers without a point)."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- datasets --------------------------------------------------------------------

def _parse_number(text: str, where: str, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{where}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{where}: column {column!r} is not finite: {text!r}")
    return v


def read_dataset_csv(path: str | Path, survey_se: bool = False) -> Dataset:
    """Load and validate a dataset CSV.

    The header must be exactly ``year,count_f,count_m,effort,harvest_f,
    harvest_m,survey_f,survey_m,survey_sd_log``; empty survey cells mean no
    survey that year.  With ``survey_se`` the last column holds the
    natural-scale standard error of the total estimate, converted to a log
    scale sd by moment matching, ``sd^2 = log(1 + se^2 / est^2)``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    lines = text.splitlines()
    if not lines:
        raise InputError(f"{path}:1: empty file")
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    missing = [c for c in DATASET_COLUMNS if c not in header]
    if missing:
        raise InputError(f"{path}:1: missing column(s): {', '.join(missing)}")
    if tuple(header) != DATASET_COLUMNS:
        raise InputError(f"{path}:1: header must be exactly {','.join(DATASET_COLUMNS)}")
    rows = []
    for lineno, cells in enumerate(csv.reader(lines[1:]), start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        where = f"{path}:{lineno}"
        if len(cells) != len(DATASET_COLUMNS):
            raise InputError(f"{where}: expected {len(DATASET_COLUMNS)} fields, found {len(cells)}")
        row: dict[str, Any] = {}
        for col, cell in zip(DATASET_COLUMNS, cells):
            cell = cell.strip()
            if cell == "":
                if col.startswith("survey"):
                    row[col] = None
                    continue
                raise InputError(f"{where}: column {col!r} is empty")
            row[col] = _parse_number(cell, where, col)
        if not float(row["year"]).is_integer():
            raise InputError(f"{where}: year must be an integer")
        row["year"] = int(row["year"])
        if survey_se and row["survey_sd_log"] is not None and row["survey_f"] and row["survey_m"]:
            est = row["survey_f"] + row["survey_m"]
            row["survey_sd_log"] = math.sqrt(math.log1p((row["survey_sd_log"] / est) ** 2))
        rows.append(row)
    return validate_dataset(rows)


def dataset_rows(data: Dataset) -> list[list[str]]:
    out = []
    for i, year in enumerate(data.years):
        s = data.survey_for(int(year))
        survey = ["", "", ""] if s is None else [fmt(s.est_female), fmt(s.est_male), fmt(s.sd_log)]
        out.append([str(int(year)), fmt(data.count_f[i]), fmt(data.count_m[i]), fmt(data.effort[i]),
                    fmt(data.harvest_f[i]), fmt(data.harvest_m[i])] + survey)
    return out


def write_dataset_csv(data: Dataset, path: str | Path) -> None:
    write_text(Path(path), _csv_text(DATASET_COLUMNS, dataset_rows(data)))


# -- JSON configs ------------------------------------------------------------------

def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def read_config(path: str | Path | None, cls):
    """Build ``cls`` from a JSON object, rejecting unknown keys (defaults when ``path`` is None)."""
    if path is None:
        return cls()
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise InputError(f"{path}: expected a JSON object")
    try:
        return cls.from_dict(raw)
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def write_json(obj: Any, path: str | Path) -> None:
    write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _reject_unknown(d: Mapping, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise InputError(f"{where}: unknown key(s): {', '.join(unknown)}")


def simulation_spec_from_dict(raw: Mapping[str, Any], where: str = "spec") -> SimulationSpec:
    """Parse a simulation spec.

    Keys: ``n_years``, ``true_params`` (r, k, tau, omega, nu, a_bar),
    ``initial`` [N_F, N_M], ``effort`` (number or list), one of ``harvest``
    ([[H_F, H_M], ...]) or ``harvest_fraction`` [f_F, f_M], optional
    ``survey_sd`` {year: sd}, ``first_year`` and ``seed``.
    """
    if not isinstance(raw, Mapping):
        raise InputError(f"{where}: expected a JSON object")
    _reject_unknown(raw, SIMULATION_KEYS, where)
    try:
        T = int(raw["n_years"])
        tp = raw["true_params"]
        _reject_unknown(tp, TRUE_PARAM_KEYS, f"{where}: true_params")
        params = ModelParameters.from_dict({**tp, "a_t": [tp["a_bar"]] * T})
        effort = raw["effort"]
        effort = [float(effort)] * T if np.isscalar(effort) else [float(e) for e in effort]
        frac = raw.get("harvest_fraction")
        return SimulationSpec(
            n_years=T,
            true_params=params,
            initial=tuple(float(v) for v in raw["initial"]),
            effort=effort,
            harvest=raw.get("harvest"),
            harvest_fraction=None if frac is None else tuple(float(f) for f in frac),
            survey_sd={int(y): float(sd) for y, sd in raw.get("survey_sd", {}).items()},
            first_year=int(raw.get("first_year", 1)),
            seed=int(raw.get("seed", 0)),
        )
    except KeyError as exc:
        raise InputError(f"{where}: missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from None


def read_simulation_spec(path: str | Path) -> SimulationSpec:
    return simulation_spec_from_dict(read_json(path), str(path))


# -- draws and summaries ------------------------------------------------------------

def write_draws_csv(chains: Sequence[Mapping[str, np.ndarray]], path: str | Path) -> None:
    """One row per stored draw, prefixed by the chain index."""
    names = list(chains[0])
    rows = []
    for c, draws in enumerate(chains):
        n = len(next(iter(draws.values())))
        for i in range(n):
            rows.append([str(c)] + [fmt(draws[k][i]) for k in names])
    write_text(Path(path), _csv_text(["chain"] + names, rows))


def read_draws_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a draws CSV as float arrays (the chain column is kept)."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                raise InputError(f"{path}:1: empty file")
            cols: list[list[float]] = [[] for _ in header]
            for lineno, cells in enumerate(reader, start=2):
                if len(cells) != len(header):
                    raise InputError(f"{path}:{lineno}: expected {len(header)} fields, found {len(cells)}")
                for j, cell in enumerate(cells):
                    cols[j].append(_parse_number(cell, f"{path}:{lineno}", header[j]))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    return {h: np.array(c) for h, c in zip(header, cols)}


STATE_QUANTILES = (0.025, 0.5, 0.975)


def state_rows(years: Sequence[int], draws: Mapping[str, np.ndarray]) -> tuple[list[str], list[list[str]]]:
    """Per-year posterior quantiles of pre-hunt, post-hunt abundance and a_t."""
    series = [("NF", "NF_{y}"), ("NM", "NM_{y}"), ("NF_post", "NF_{y}.5"),
              ("NM_post", "NM_{y}.5"), ("a", "a_{y}")]
    header = ["year"]
    for label, _ in series:
        header += [f"{label}_q{q * 100:g}" for q in STATE_QUANTILES]
    rows = []
    for y in years:
        row = [str(int(y))]
        for _, pattern in series:
            key = pattern.format(y=int(y))
            vals = draws.get(key)
            if vals is None:
                vals = draws.get("a_bar") if pattern.startswith("a_") else None
            row += [fmt(v) for v in np.quantile(vals, STATE_QUANTILES)]
        rows.append(row)
    return header, rows


def write_states_csv(years: Sequence[int], draws: Mapping[str, np.ndarray], path: str | Path) -> None:
    header, rows = state_rows(years, draws)
    write_text(Path(path), _csv_text(header, rows))


def write_rows_csv(header: Sequence[str], rows: Iterable[Sequence[float]], path: str | Path) -> None:
    write_text(Path(path), _csv_text(header, ([fmt(v) for v in r] for r in rows)))
