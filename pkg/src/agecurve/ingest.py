"""CSV ingestion, cohort filters, and derived per-player metrics.

One row per player-season. Loading never drops a row silently: rows that
fail to parse land in a rejects list with their line number and a reason
code, and every season or player a filter removes lands in an exclusions
list the same way. Filters are pure functions of their input.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ConfigError, InvalidDate, IoError, SchemaError
from .smooth import PlayerSeries

__all__ = [
    "DEFAULT_SCHEMA",
    "SeasonRecord",
    "RejectedRow",
    "Exclusion",
    "RecordBatch",
    "SeriesBatch",
    "PowerSplit",
    "load_csv",
    "write_csv",
    "group_records",
    "assemble_series",
    "filter_by_year",
    "filter_by_exposure",
    "filter_mlb_cohort",
    "filter_nba_cohort",
    "split_power_groups",
    "age_at_reference",
    "reference_date",
]

log = logging.getLogger(__name__)

# canonical field -> default CSV header; the first four are required
DEFAULT_SCHEMA = {
    "player_id": "player_id",
    "season_year": "season_year",
    "age": "age",
    "value": "value",
    "pa": "pa",
    "slg": "slg",
    "avg": "avg",
    "position": "position",
    "birth_date": "birth_date",
}

_REQUIRED = ("player_id", "season_year", "age", "value")


@dataclass(frozen=True)
class SeasonRecord:
    """One player-season.

    ``exposure`` holds plate appearances or games when the source provides
    them. Everything else from the row (slugging, batting average, position,
    birth date, unrecognized columns) rides along in ``extra`` as strings.
    """

    player_id: str
    season_year: int
    age: float
    value: float
    exposure: Optional[float] = None
    extra: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.player_id:
            raise ValueError("player_id must be non-empty")
        if self.age <= 0:
            raise ValueError(f"age must be positive, got {self.age}")
        if self.season_year < 1871:
            raise ValueError(f"season_year {self.season_year} is implausible")
        object.__setattr__(self, "extra", dict(self.extra))


@dataclass(frozen=True)
class RejectedRow:
    """A CSV row that failed to parse. ``line`` counts from 1 at the header."""

    line: int
    reason: str
    player_id: str = ""


@dataclass(frozen=True)
class Exclusion:
    """One season (or, with season_year None, one whole player) a filter removed."""

    player_id: str
    season_year: Optional[int]
    reason_code: str


class RecordBatch(list):
    """List of SeasonRecord plus the rejects or exclusions behind it."""

    def __init__(self, records=(), rejects=(), exclusions=()):
        super().__init__(records)
        self.rejects: list = list(rejects)
        self.exclusions: list = list(exclusions)


class SeriesBatch(list):
    """List of PlayerSeries plus filter exclusions and per-age counts."""

    def __init__(self, series=(), exclusions=(), age_counts=None):
        super().__init__(series)
        self.exclusions: list = list(exclusions)
        self.age_counts: dict = dict(age_counts or {})


@dataclass(frozen=True)
class PowerSplit:
    """Power/non-power partition with the per-player averages behind it."""

    power: list
    non_power: list
    iso: Mapping[str, float]
    exclusions: list

    def __iter__(self):
        return iter((self.power, self.non_power))


# ---------------------------------------------------------------------------
# loading and writing


def _resolve_schema(schema):
    merged = dict(DEFAULT_SCHEMA)
    if schema:
        unknown = set(schema) - set(DEFAULT_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown schema fields: {sorted(unknown)}")
        merged.update(schema)
    return merged


def load_csv(path, schema=None) -> RecordBatch:
    """Read one-row-per-player-season CSV into SeasonRecords.

    ``schema`` maps canonical field names (DEFAULT_SCHEMA keys) to the
    header names actually used in the file. Rows whose required fields do
    not parse are returned in ``result.rejects`` rather than raised or
    dropped. Columns outside the schema are kept in ``extra`` under their
    own header names.
    """
    cols = _resolve_schema(schema)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError(f"{path} has no header row")
        missing = [cols[k] for k in _REQUIRED if cols[k] not in header]
        if missing:
            raise SchemaError(f"{path} lacks required columns: {missing}")
        named = {cols[k] for k in cols}
        passthrough = [h for h in header if h not in named]
        records, rejects = [], []
        for row in reader:
            parsed = _parse_row(row, cols, passthrough, reader.line_num)
            if isinstance(parsed, RejectedRow):
                rejects.append(parsed)
            else:
                records.append(parsed)
    if rejects:
        log.info("load_csv(%s): %d records, %d rejects", path, len(records),
                 len(rejects))
    return RecordBatch(records, rejects)


def _parse_row(row, cols, passthrough, line):
    def cell(key):
        return (row.get(cols[key]) or "").strip()

    pid = cell("player_id")
    if not pid:
        return RejectedRow(line, "missing_player_id")
    try:
        year = int(cell("season_year"))
    except ValueError:
        return RejectedRow(line, "bad_season_year", pid)
    try:
        age = float(cell("age"))
    except ValueError:
        return RejectedRow(line, "bad_age", pid)
    try:
        value = float(cell("value"))
    except ValueError:
        return RejectedRow(line, "bad_value", pid)
    raw_pa = cell("pa")
    exposure = None
    if raw_pa:
        try:
            exposure = float(raw_pa)
        except ValueError:
            return RejectedRow(line, "bad_pa", pid)
    if age <= 0:
        return RejectedRow(line, "age_not_positive", pid)
    if year < 1871:
        return RejectedRow(line, "implausible_year", pid)
    extra = {}
    for key in ("slg", "avg", "position", "birth_date"):
        raw = cell(key)
        if raw:
            extra[key] = raw
    for name in passthrough:
        raw = (row.get(name) or "").strip()
        if raw:
            extra[name] = raw
    return SeasonRecord(pid, year, age, value, exposure, extra)


def write_csv(path, records: Iterable[SeasonRecord], schema=None) -> None:
    """Write records in the load_csv layout; loading the file back yields
    equal records. Floats are written with repr so no precision is lost."""
    cols = _resolve_schema(schema)
    records = list(records)
    extra_keys = ("slg", "avg", "position", "birth_date")
    other = sorted({k for r in records for k in r.extra if k not in extra_keys})
    header = [cols[k] for k in ("player_id", "season_year", "age", "value", "pa")]
    header += [cols[k] for k in extra_keys] + other

    def fmt(v):
        if v is None:
            return ""
        return repr(v) if isinstance(v, float) else str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = [r.player_id, str(r.season_year), repr(r.age), repr(r.value),
                   fmt(r.exposure)]
            row += [fmt(r.extra.get(k)) for k in extra_keys]
            row += [fmt(r.extra.get(k)) for k in other]
            writer.writerow(row)


def group_records(records: Iterable[SeasonRecord]) -> dict:
    """Group records by player_id, preserving first-appearance order."""
    grouped: dict = {}
    for r in records:
        grouped.setdefault(r.player_id, []).append(r)
    return grouped


# ---------------------------------------------------------------------------
# season-level filters


def filter_by_year(records: Iterable[SeasonRecord], min_year: int) -> RecordBatch:
    """Drop seasons before ``min_year``; dropped rows become exclusions."""
    kept, excl = [], []
    for r in records:
        if r.season_year < min_year:
            excl.append(Exclusion(r.player_id, r.season_year, "early_year"))
        else:
            kept.append(r)
    return RecordBatch(kept, exclusions=excl)


def filter_by_exposure(records: Iterable[SeasonRecord], min_exposure: float) -> RecordBatch:
    """Drop seasons with exposure below ``min_exposure`` (missing counts as 0)."""
    kept, excl = [], []
    for r in records:
        if (r.exposure or 0.0) < min_exposure:
            excl.append(Exclusion(r.player_id, r.season_year, "low_pa"))
        else:
            kept.append(r)
    return RecordBatch(kept, exclusions=excl)


# ---------------------------------------------------------------------------
# cohort assembly


def _merge_duplicate_ages(seasons: Sequence[SeasonRecord]):
    """Collapse same-age seasons (split seasons after a trade) into one
    observation, averaging value weighted by exposure when available."""
    by_age: dict = {}
    for r in seasons:
        by_age.setdefault(r.age, []).append(r)
    times, values = [], []
    for age in sorted(by_age):
        rows = by_age[age]
        weights = [r.exposure for r in rows]
        if len(rows) > 1 and all(w is not None and w > 0 for w in weights):
            total = sum(weights)
            val = sum(w * r.value for w, r in zip(weights, rows)) / total
        else:
            val = sum(r.value for r in rows) / len(rows)
        times.append(float(age))
        values.append(float(val))
    return times, values


def _series_meta(seasons: Sequence[SeasonRecord]) -> dict:
    meta = {}
    for key in ("position", "birth_date"):
        for r in seasons:
            if key in r.extra:
                meta[key] = str(r.extra[key])
                break
    return meta


def _has_age_gap(present, window, strict) -> bool:
    lo, hi = window
    if not strict:
        lo, hi = min(present), max(present)
    run = 0
    for a in range(lo, hi + 1):
        run = 0 if a in present else run + 1
        if run >= 2:
            return True
    return False


def _count_ages(series_list) -> dict:
    counts: dict = {}
    for s in series_list:
        for t in s.times:
            a = int(round(float(t)))
            counts[a] = counts.get(a, 0) + 1
    return dict(sorted(counts.items()))


def assemble_series(records) -> list:
    """One series per player with no cohort rules applied: seasons sorted by
    age, same-age duplicates merged as in the cohort filters."""
    series = []
    for pid, seasons in group_records(records).items():
        times, values = _merge_duplicate_ages(seasons)
        series.append(PlayerSeries(id=pid, times=times, values=values,
                                   meta=_series_meta(seasons)))
    return series


def filter_mlb_cohort(records, min_pa=200.0, min_year=1920,
                      age_window=(24, 36), strict_gaps=False) -> SeriesBatch:
    """Apply the batting cohort rules and assemble one series per player.

    Seasons before ``min_year`` or under ``min_pa`` plate appearances are
    dropped row by row; surviving observations are clipped to integer ages
    in ``age_window``. A player is kept only if the remaining ages contain
    no two consecutive missing integers, checked across the player's
    observed span by default or across the whole window with
    ``strict_gaps``. Every removal is recorded in ``result.exclusions``.
    """
    lo, hi = age_window
    by_year = filter_by_year(records, min_year)
    by_pa = filter_by_exposure(by_year, min_pa)
    exclusions = by_year.exclusions + by_pa.exclusions
    series = []
    for pid, seasons in group_records(by_pa).items():
        in_window = []
        for r in seasons:
            if lo <= round(r.age) <= hi:
                in_window.append(r)
            else:
                exclusions.append(Exclusion(pid, r.season_year, "age_out_of_window"))
        if not in_window:
            exclusions.append(Exclusion(pid, None, "no_window_data"))
            continue
        present = {int(round(r.age)) for r in in_window}
        if _has_age_gap(present, age_window, strict_gaps):
            exclusions.append(Exclusion(pid, None, "age_gap"))
            continue
        times, values = _merge_duplicate_ages(in_window)
        series.append(PlayerSeries(id=pid, times=times, values=values,
                                   meta=_series_meta(in_window)))
    log.info("filter_mlb_cohort: kept %d players, %d exclusions (strict_gaps=%s)",
             len(series), len(exclusions), strict_gaps)
    return SeriesBatch(series, exclusions, _count_ages(series))


def filter_nba_cohort(records, min_seasons=8, age_window=(19, 39)) -> SeriesBatch:
    """Keep players with at least ``min_seasons`` distinct seasons and clip
    their observations to ``age_window``.

    Career length is counted before clipping, so a long career with a few
    seasons outside the window still qualifies. ``result.age_counts`` holds
    the number of kept observations per integer age; thin coverage is a
    diagnostic for the caller, not a filter.
    """
    lo, hi = age_window
    exclusions, series = [], []
    for pid, seasons in group_records(records).items():
        if len({r.season_year for r in seasons}) < min_seasons:
            exclusions.append(Exclusion(pid, None, "short_career"))
            continue
        in_window = []
        for r in seasons:
            if lo <= round(r.age) <= hi:
                in_window.append(r)
            else:
                exclusions.append(Exclusion(pid, r.season_year, "age_out_of_window"))
        if not in_window:
            exclusions.append(Exclusion(pid, None, "no_window_data"))
            continue
        times, values = _merge_duplicate_ages(in_window)
        series.append(PlayerSeries(id=pid, times=times, values=values,
                                   meta=_series_meta(in_window)))
    counts = _count_ages(series)
    log.info("filter_nba_cohort: kept %d players, %d exclusions", len(series),
             len(exclusions))
    return SeriesBatch(series, exclusions, counts)


# ---------------------------------------------------------------------------
# derived metrics


def _season_iso(record: SeasonRecord) -> Optional[float]:
    try:
        return float(record.extra["slg"]) - float(record.extra["avg"])
    except (KeyError, TypeError, ValueError):
        return None


def split_power_groups(series_list, iso_by_player, threshold=0.150) -> PowerSplit:
    """Partition players by early-career isolated power.

    ``iso_by_player`` maps player_id to that player's season records (see
    ``group_records``); slugging and batting average come from each record's
    ``extra``. A player's ISO is the mean of slg minus avg over their age-24
    and age-25 seasons that carry both fields; above ``threshold`` is power,
    at or below is non-power. Players with no usable age-24/25 season are
    reported in ``exclusions``.
    """
    power, non_power, exclusions = [], [], []
    iso_values = {}
    for s in series_list:
        seasons = iso_by_player.get(s.id, [])
        isos = [v for r in seasons
                if round(r.age) in (24, 25) and (v := _season_iso(r)) is not None]
        if not isos:
            exclusions.append(Exclusion(s.id, None, "no_iso_seasons"))
            continue
        iso = sum(isos) / len(isos)
        iso_values[s.id] = iso
        (power if iso > threshold else non_power).append(s)
    log.info("split_power_groups: %d power, %d non-power, %d excluded",
             len(power), len(non_power), len(exclusions))
    return PowerSplit(power, non_power, iso_values, exclusions)


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise InvalidDate(f"not a calendar date: {value!r}") from exc


def age_at_reference(birth_date, reference) -> float:
    """Age in completed years on the reference date.

    The birthday itself counts as completed: born 1988-02-01 is 22 on
    2010-02-01, while born 1988-02-02 is still 21.
    """
    born = _as_date(birth_date)
    ref = _as_date(reference)
    if ref < born:
        raise InvalidDate(f"reference {ref} precedes birth {born}")
    years = ref.year - born.year
    if (ref.month, ref.day) < (born.month, born.day):
        years -= 1
    return float(years)


def reference_date(season_year: int, month: int = 2, day: int = 1,
                   year_offset: int = 1) -> date:
    """Reference date for a season labeled by its starting year.

    Defaults follow the winter-league convention of February 1 in the
    calendar year after the season starts; summer leagues can pass
    year_offset=0 and a mid-season month."""
    return date(season_year + year_offset, month, day)
