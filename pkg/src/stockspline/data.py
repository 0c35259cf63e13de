"""Data model and file I/O for age-structured stock assessment inputs.

A stock directory holds ``obs.csv`` (observations), ``fleets.csv`` (fleet
metadata) and one CSV per auxiliary table (natural mortality, weights,
maturity, spawning proportions).  Observations carry an explicit missing
flag; missing values are written as ``NA``.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvariantViolation, MissingFile, ParseError, YearOutOfRange

CATCH_FLEET = 0

AUX_KINDS = ("natmort", "stockweight", "catchweight", "maturity", "propf", "propm")

AUX_FILES = {
    "natmort": "natmort.csv",
    "stockweight": "stockweight.csv",
    "catchweight": "catchweight.csv",
    "maturity": "maturity.csv",
    "propf": "propf.csv",
    "propm": "propm.csv",
}


@dataclass(frozen=True)
class AgeRange:
    """Inclusive range of data ages; ``max_age`` is the plus group."""

    min_age: int
    max_age: int

    def __post_init__(self):
        if self.min_age < 0:
            raise InvariantViolation("min_age must be >= 0")
        if self.max_age <= self.min_age:
            raise InvariantViolation("max_age must exceed min_age")

    @property
    def n_ages(self) -> int:
        return self.max_age - self.min_age + 1

    def index(self, age: int) -> int:
        """0-based internal index of a data age (internal age = index + 1)."""
        if age < self.min_age or age > self.max_age:
            raise InvariantViolation(f"age {age} outside range "
                                     f"[{self.min_age}, {self.max_age}]")
        return age - self.min_age

    def ages(self) -> list[int]:
        return list(range(self.min_age, self.max_age + 1))


@dataclass(frozen=True)
class ObsRecord:
    year: int
    fleet: int
    age: int
    value: float
    missing: bool = False


@dataclass(frozen=True)
class FleetMeta:
    fleet: int
    kind: str  # "catch" or "survey"
    timing: float
    first_year: int
    last_year: int


@dataclass(frozen=True)
class AuxTable:
    """Matrix of known inputs indexed (year, age).

    ``row(year)`` replicates the final year for years past the table, which
    is what forecasting needs.
    """

    kind: str
    years: tuple
    values: np.ndarray  # (n_years, n_ages)

    def row(self, year: int) -> np.ndarray:
        if year < self.years[0]:
            raise YearOutOfRange(f"{self.kind}: no data before {self.years[0]}")
        if year > self.years[-1]:
            return self.values[-1]
        return self.values[year - self.years[0]]

    def block(self, years) -> np.ndarray:
        return np.array([self.row(y) for y in years])


@dataclass(frozen=True)
class StockData:
    ages: AgeRange
    years: tuple
    fleets: tuple  # FleetMeta, ids 0..J with 0 = catch
    obs: tuple  # ObsRecord
    aux: dict = field(default_factory=dict)

    @property
    def n_ages(self) -> int:
        return self.ages.n_ages

    @property
    def n_years(self) -> int:
        return len(self.years)

    @property
    def surveys(self) -> list[FleetMeta]:
        return [f for f in self.fleets if f.kind == "survey"]

    def fleet_meta(self, fleet: int) -> FleetMeta:
        for f in self.fleets:
            if f.fleet == fleet:
                return f
        raise InvariantViolation(f"unknown fleet id {fleet}")

    def observed_ages(self, fleet: int) -> list[int]:
        """Sorted data ages with at least one record for this fleet."""
        return sorted({r.age for r in self.obs if r.fleet == fleet})

    def year_index(self, year: int) -> int:
        if year not in self.years:
            raise YearOutOfRange(f"year {year} not in data range")
        return year - self.years[0]


def mask_observations(data: StockData, year: int, fleets=None) -> StockData:
    """Copy of ``data`` with the selected records' missing flag set.

    Record count is unchanged so predictions are still produced for masked
    cells.  ``fleets=None`` masks every fleet in that year.
    """
    if year not in data.years:
        raise YearOutOfRange(f"year {year} not in data range "
                             f"{data.years[0]}..{data.years[-1]}")
    sel = set(fleets) if fleets is not None else None
    new_obs = []
    for r in data.obs:
        if r.year == year and (sel is None or r.fleet in sel):
            new_obs.append(replace(r, missing=True))
        else:
            new_obs.append(r)
    return replace(data, obs=tuple(new_obs))


def mask_years_from(data: StockData, first_masked_year: int,
                    drop_fleets=()) -> StockData:
    """Mask every record with year >= ``first_masked_year`` and every record
    of the fleets in ``drop_fleets`` (used by forward-validation folds)."""
    if first_masked_year not in data.years:
        raise YearOutOfRange(f"year {first_masked_year} not in data range")
    drop = set(drop_fleets)
    new_obs = []
    for r in data.obs:
        if r.year >= first_masked_year or r.fleet in drop:
            new_obs.append(replace(r, missing=True))
        else:
            new_obs.append(r)
    return replace(data, obs=tuple(new_obs))


def _read_rows(path: Path):
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    return rows


def _parse_float(text, path, line):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"not a number: {text!r}") from None


def _parse_int(text, path, line):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, line, f"not an integer: {text!r}") from None


def _load_aux(path: Path, kind: str) -> AuxTable:
    rows = _read_rows(path)
    header = rows[0]
    if header[0].strip().lower() != "year":
        raise ParseError(str(path), 1, "aux header must start with 'year'")
    ages = [_parse_int(c, str(path), 1) for c in header[1:]]
    years, values = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(str(path), i, "wrong number of columns")
        years.append(_parse_int(row[0], str(path), i))
        values.append([_parse_float(c, str(path), i) for c in row[1:]])
    values = np.asarray(values, dtype=np.float64)
    if sorted(years) != list(range(min(years), max(years) + 1)):
        raise InvariantViolation(f"{kind} years must be contiguous and unique",
                                 str(path))
    order = np.argsort(years)
    values = values[order]
    years = sorted(years)
    if ages != sorted(ages):
        raise ParseError(str(path), 1, "age columns must be increasing")
    _validate_aux_values(kind, values, str(path))
    return AuxTable(kind=kind, years=tuple(years), values=values), ages


def _validate_aux_values(kind, values, path):
    if not np.all(np.isfinite(values)):
        raise InvariantViolation(f"{kind} contains non-finite values", path)
    if kind in ("natmort", "stockweight", "catchweight") and np.any(values < 0):
        raise InvariantViolation(f"{kind} must be non-negative", path)
    if kind in ("maturity", "propf", "propm") and (
            np.any(values < 0) or np.any(values > 1)):
        raise InvariantViolation(f"{kind} must lie in [0, 1]", path)


def load_stock(dir_path) -> StockData:
    """Load and validate one stock directory.

    Ages are re-indexed internally to 1..A and fleets are renumbered with
    the catch fleet as 0 and surveys ordered by the year they first appear
    in the observations.
    """
    dir_path = Path(dir_path)
    obs_path = dir_path / "obs.csv"
    fleets_path = dir_path / "fleets.csv"

    fleet_rows = _read_rows(fleets_path)
    if [c.strip().lower() for c in fleet_rows[0]] != ["fleet", "kind", "timing"]:
        raise ParseError(str(fleets_path), 1, "expected header fleet,kind,timing")
    raw_fleets = {}
    for i, row in enumerate(fleet_rows[1:], start=2):
        if len(row) != 3:
            raise ParseError(str(fleets_path), i, "wrong number of columns")
        fid = _parse_int(row[0], str(fleets_path), i)
        kind = row[1].strip().lower()
        timing = _parse_float(row[2], str(fleets_path), i)
        if kind not in ("catch", "survey"):
            raise ParseError(str(fleets_path), i, f"unknown fleet kind {kind!r}")
        if kind == "catch" and timing != 0.0:
            raise InvariantViolation("catch fleet must have timing 0",
                                     f"{fleets_path}:{i}")
        if not (0.0 <= timing < 1.0):
            raise InvariantViolation("survey timing must lie in [0, 1)",
                                     f"{fleets_path}:{i}")
        if fid in raw_fleets:
            raise InvariantViolation(f"duplicate fleet id {fid}",
                                     f"{fleets_path}:{i}")
        raw_fleets[fid] = (kind, timing)
    catch_ids = [f for f, (k, _) in raw_fleets.items() if k == "catch"]
    if len(catch_ids) != 1:
        raise InvariantViolation("exactly one catch fleet required",
                                 str(fleets_path))

    obs_rows = _read_rows(obs_path)
    if [c.strip().lower() for c in obs_rows[0]] != ["year", "fleet", "age", "value"]:
        raise ParseError(str(obs_path), 1, "expected header year,fleet,age,value")
    raw_obs = []
    for i, row in enumerate(obs_rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(str(obs_path), i, "wrong number of columns")
        year = _parse_int(row[0], str(obs_path), i)
        fid = _parse_int(row[1], str(obs_path), i)
        age = _parse_int(row[2], str(obs_path), i)
        text = row[3].strip()
        if fid not in raw_fleets:
            raise InvariantViolation(f"obs references unknown fleet {fid}",
                                     f"{obs_path}:{i}")
        if text.upper() == "NA":
            value, missing = np.nan, True
        else:
            value = _parse_float(text, str(obs_path), i)
            missing = False
            if value <= 0:
                raise InvariantViolation(
                    "observation values must be positive (log is taken)",
                    f"{obs_path}:{i}")
        raw_obs.append((year, fid, age, value, missing))
    if not raw_obs:
        raise InvariantViolation("no observations", str(obs_path))

    seen = set()
    for year, fid, age, _, _ in raw_obs:
        key = (year, fid, age)
        if key in seen:
            raise InvariantViolation(f"duplicate observation {key}", str(obs_path))
        seen.add(key)

    # Fleet renumbering: catch -> 0, surveys by first year of appearance.
    first_year = {fid: min(y for y, f, *_ in raw_obs if f == fid)
                  for fid in raw_fleets}
    last_year = {fid: max(y for y, f, *_ in raw_obs if f == fid)
                 for fid in raw_fleets}
    for fid in raw_fleets:
        if fid not in first_year:
            raise InvariantViolation(f"fleet {fid} has no observations",
                                     str(obs_path))
    survey_ids = sorted(
        (f for f, (k, _) in raw_fleets.items() if k == "survey"),
        key=lambda f: (first_year[f], raw_fleets[f][1], last_year[f], f))
    renumber = {catch_ids[0]: CATCH_FLEET}
    renumber.update({fid: j + 1 for j, fid in enumerate(survey_ids)})

    ages_seen = sorted({a for _, _, a, _, _ in raw_obs})
    years_seen = sorted({y for y, *_ in raw_obs})
    if years_seen != list(range(years_seen[0], years_seen[-1] + 1)):
        raise InvariantViolation("observation years must be contiguous",
                                 str(obs_path))
    ages = AgeRange(min_age=ages_seen[0], max_age=ages_seen[-1])
    years = tuple(range(years_seen[0], years_seen[-1] + 1))

    catch_years = {y for y, f, *_ in raw_obs if renumber[f] == CATCH_FLEET}
    for y in years:
        if y not in catch_years:
            raise InvariantViolation(f"year {y} has no catch records",
                                     str(obs_path))
    if all(m for y, f, a, v, m in raw_obs if renumber[f] == CATCH_FLEET):
        raise InvariantViolation("all catch observations are missing",
                                 str(obs_path))

    fleets = []
    for fid, (kind, timing) in raw_fleets.items():
        fleets.append(FleetMeta(fleet=renumber[fid], kind=kind, timing=timing,
                                first_year=first_year[fid],
                                last_year=last_year[fid]))
    fleets.sort(key=lambda f: f.fleet)

    obs = tuple(sorted(
        (ObsRecord(year=y, fleet=renumber[f], age=a, value=v, missing=m)
         for y, f, a, v, m in raw_obs),
        key=lambda r: (r.fleet, r.year, r.age)))

    aux = {}
    age_list = ages.ages()
    for kind, fname in AUX_FILES.items():
        table, table_ages = _load_aux(dir_path / fname, kind)
        if table_ages != age_list:
            raise InvariantViolation(
                f"{kind} ages {table_ages} do not match data ages {age_list}",
                str(dir_path / fname))
        if table.years[0] > years[0] or table.years[-1] < years[-1]:
            raise InvariantViolation(
                f"{kind} must cover years {years[0]}..{years[-1]}",
                str(dir_path / fname))
        aux[kind] = table

    return StockData(ages=ages, years=years, fleets=tuple(fleets),
                     obs=obs, aux=aux)


def save_stock(data: StockData, dir_path) -> None:
    """Write the stock directory; inverse of :func:`load_stock`.

    Values are written with ``repr`` so a round trip is bit-exact.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)

    with open(dir_path / "fleets.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fleet", "kind", "timing"])
        for f in data.fleets:
            w.writerow([f.fleet, f.kind, repr(float(f.timing))])

    with open(dir_path / "obs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "fleet", "age", "value"])
        for r in data.obs:
            w.writerow([r.year, r.fleet, r.age,
                        "NA" if r.missing else repr(float(r.value))])

    for kind, fname in AUX_FILES.items():
        table = data.aux[kind]
        with open(dir_path / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["year"] + [str(a) for a in data.ages.ages()])
            for i, y in enumerate(table.years):
                w.writerow([y] + [repr(float(v)) for v in table.values[i]])


def copy_stock(data: StockData) -> StockData:
    return copy.deepcopy(data)
