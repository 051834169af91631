"""Country x week case-count panels: ingestion, selection, slicing, persistence."""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .epiweek import EpiWeek, week_range
from .errors import (
    CorruptPayload,
    DuplicateCell,
    EmptyPanel,
    FormatVersionMismatch,
    InvalidWeek,
    MalformedRow,
    RangeOutOfBounds,
    UnknownCountry,
)

FORMAT_MAGIC = "FLUPANEL"
FORMAT_VERSION = "v1"
MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class ColumnMapping:
    """Which CSV columns carry the panel coordinates.

    Defaults follow the FluNet country-level export, where ``ALL_INF`` is
    the total number of influenza-positive specimens.
    """

    country: str = "Country"
    year: str = "Year"
    week: str = "Week"
    count: str = "ALL_INF"
    delimiter: str = ","


class CountryPanel:
    """Immutable countries x weeks matrix of counts with a missingness mask."""

    def __init__(self, countries, start, values, missing=None):
        countries = [str(c) for c in countries]
        if len(set(countries)) != len(countries):
            raise ValueError("country identifiers must be unique")
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] != len(countries):
            raise ValueError(f"values must be {len(countries)} x weeks, got shape {values.shape}")
        if missing is None:
            missing = np.isnan(values)
        missing = np.array(missing, dtype=bool, copy=True)
        if missing.shape != values.shape:
            raise ValueError("missing mask shape does not match values")
        values[missing] = np.nan
        if np.any(values[~missing] < 0) or not np.all(np.isfinite(values[~missing])):
            raise ValueError("observed counts must be finite and non-negative")
        values.setflags(write=False)
        missing.setflags(write=False)
        self.countries = tuple(countries)
        self.start = start
        self.values = values
        self.missing = missing
        self._index = {c: i for i, c in enumerate(self.countries)}

    @property
    def n_weeks(self):
        return self.values.shape[1]

    @property
    def end(self):
        return self.start.shift(self.n_weeks - 1)

    @property
    def weeks(self):
        return week_range(self.start, self.end)

    def index_of(self, country):
        try:
            return self._index[country]
        except KeyError:
            raise UnknownCountry(country) from None

    def column_of(self, week):
        j = week - self.start
        if not 0 <= j < self.n_weeks:
            raise RangeOutOfBounds(f"week {week} outside panel [{self.start}, {self.end}]")
        return j

    def series(self, country):
        return self.values[self.index_of(country)]

    def subset(self, countries):
        """Sub-panel restricted to ``countries`` (in the given order)."""
        idx = [self.index_of(c) for c in countries]
        return CountryPanel(countries, self.start, self.values[idx], self.missing[idx])

    def with_missing(self, country, week):
        """Copy of the panel with one extra cell marked missing."""
        values = self.values.copy()
        missing = self.missing.copy()
        i, j = self.index_of(country), self.column_of(week)
        missing[i, j] = True
        return CountryPanel(self.countries, self.start, values, missing)

    def __eq__(self, other):
        if not isinstance(other, CountryPanel):
            return NotImplemented
        return (
            self.countries == other.countries
            and self.start == other.start
            and self.values.shape == other.values.shape
            and np.array_equal(self.missing, other.missing)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __repr__(self):
        return f"CountryPanel({len(self.countries)} countries, {self.start}..{self.end})"


@dataclass
class PanelSelection:
    kept: list = field(default_factory=list)
    dropped: list = field(default_factory=list)  # (country, missing-week-count)


def _parse_count(text):
    text = (text or "").strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def ingest_panel(source, mapping=None):
    """Read a long-format CSV (one row per country-week) into a panel.

    ``source`` is any text stream or an iterable of lines. Empty or
    non-numeric count fields yield missing cells; (country, week) pairs
    absent from the file are missing too.
    """
    mapping = mapping or ColumnMapping()
    reader = csv.reader(source, delimiter=mapping.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyPanel("input has no header row") from None
    header = [h.strip() for h in header]
    cols = {}
    for role in ("country", "year", "week", "count"):
        name = getattr(mapping, role)
        if name not in header:
            raise MalformedRow(1, f"header lacks {role} column {name!r}")
        cols[role] = header.index(name)

    cells = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
        country = row[cols["country"]].strip()
        if not country:
            raise MalformedRow(line, "empty country")
        try:
            week = EpiWeek(int(row[cols["year"]]), int(row[cols["week"]]))
        except (ValueError, InvalidWeek) as exc:
            raise MalformedRow(line, str(exc)) from None
        count = _parse_count(row[cols["count"]])
        if count is not None and count < 0:
            raise MalformedRow(line, f"negative count {count}")
        key = (country, week)
        if key in cells:
            raise DuplicateCell(country, week)
        cells[key] = count

    if not any(v is not None for v in cells.values()):
        raise EmptyPanel("no rows with a usable count")
    countries = sorted({c for c, _ in cells})
    weeks = [w for _, w in cells]
    start, end = min(weeks), max(weeks)
    n_weeks = end - start + 1
    values = np.full((len(countries), n_weeks), np.nan)
    row_of = {c: i for i, c in enumerate(countries)}
    for (country, week), count in cells.items():
        if count is not None:
            values[row_of[country], week - start] = count
    return CountryPanel(countries, start, values, np.isnan(values))


def select_complete_countries(panel):
    """Keep countries with no missing week over the whole panel span."""
    if not panel.countries:
        raise EmptyPanel("panel has no countries")
    n_missing = panel.missing.sum(axis=1)
    sel = PanelSelection()
    for country, k in zip(panel.countries, n_missing):
        if k == 0:
            sel.kept.append(country)
        else:
            sel.dropped.append((country, int(k)))
    return sel


def slice_panel(panel, start, end):
    if not (panel.start <= start <= end <= panel.end):
        raise RangeOutOfBounds(f"[{start}, {end}] not within [{panel.start}, {panel.end}]")
    a, b = panel.column_of(start), panel.column_of(end) + 1
    return CountryPanel(panel.countries, start, panel.values[:, a:b], panel.missing[:, a:b])


def _format_value(v):
    if v.is_integer() and math.copysign(1.0, v) > 0:
        return str(int(v))
    return repr(float(v))


def save_panel(panel) -> bytes:
    """Serialize to the versioned ``FLUPANEL v1`` text container.

    Layout: magic line, ``countries=<json list>``, ``start=``, ``end=``, one
    tab-separated row per country (name, then weekly values, ``NA`` for
    missing), and a closing ``END`` line that guards against truncation.
    """
    if not panel.countries:
        raise EmptyPanel("cannot save a panel without countries")
    out = io.StringIO()
    out.write(f"{FORMAT_MAGIC} {FORMAT_VERSION}\n")
    out.write("countries=" + json.dumps(list(panel.countries), ensure_ascii=False) + "\n")
    out.write(f"start={panel.start}\n")
    out.write(f"end={panel.end}\n")
    for i, country in enumerate(panel.countries):
        cells = [
            MISSING_TOKEN if panel.missing[i, j] else _format_value(panel.values[i, j])
            for j in range(panel.n_weeks)
        ]
        out.write(json.dumps(country, ensure_ascii=False) + "\t" + "\t".join(cells) + "\n")
    out.write("END\n")
    return out.getvalue().encode("utf-8")


def _expect_field(line, key):
    prefix = key + "="
    if not line.startswith(prefix):
        raise CorruptPayload(f"expected '{prefix}...' line, got {line[:40]!r}")
    return line[len(prefix):]


def load_panel(data) -> CountryPanel:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptPayload(str(exc)) from None
    if not data:
        raise CorruptPayload("empty payload")
    lines = data.split("\n")
    complete = lines[-1] == "" and len(lines) > 1 and lines[-2] == "END"
    if lines[-1] == "":
        lines.pop()
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != FORMAT_MAGIC:
        raise CorruptPayload("not a FLUPANEL payload")
    if magic[1] != FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported panel format {magic[1]!r}")
    if len(lines) < 5 or not complete:
        raise CorruptPayload("payload truncated")
    try:
        countries = json.loads(_expect_field(lines[1], "countries"))
        start = EpiWeek.parse(_expect_field(lines[2], "start"))
        end = EpiWeek.parse(_expect_field(lines[3], "end"))
    except (json.JSONDecodeError, InvalidWeek) as exc:
        raise CorruptPayload(str(exc)) from None
    rows = lines[4:-1]
    if not isinstance(countries, list) or len(rows) != len(countries) or end < start:
        raise CorruptPayload("header does not match body")
    n_weeks = end - start + 1
    values = np.full((len(countries), n_weeks), np.nan)
    missing = np.zeros(values.shape, dtype=bool)
    for i, (country, row) in enumerate(zip(countries, rows)):
        fields = row.split("\t")
        if len(fields) != n_weeks + 1:
            raise CorruptPayload(f"row {i} has {len(fields) - 1} cells, expected {n_weeks}")
        try:
            name = json.loads(fields[0])
        except json.JSONDecodeError as exc:
            raise CorruptPayload(str(exc)) from None
        if name != country:
            raise CorruptPayload(f"row {i} is {name!r}, header says {country!r}")
        for j, tok in enumerate(fields[1:]):
            if tok == MISSING_TOKEN:
                missing[i, j] = True
            else:
                try:
                    values[i, j] = float(tok)
                except ValueError:
                    raise CorruptPayload(f"bad value {tok!r} in row {i}") from None
    if not countries:
        raise EmptyPanel("payload has no countries")
    try:
        return CountryPanel(countries, start, values, missing)
    except ValueError as exc:
        raise CorruptPayload(str(exc)) from None
