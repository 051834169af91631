"""ISO-8601 surveillance weeks."""

import datetime as _dt
import re
from dataclasses import dataclass
from functools import total_ordering

from .errors import InvalidWeek

_WEEK_RE = re.compile(r"^\s*(\d{4})\s*-?\s*[Ww]\s*(\d{1,2})\s*$")


def iso_weeks_in_year(year: int) -> int:
    # Dec 28 always falls in the last ISO week of its year.
    return _dt.date(year, 12, 28).isocalendar()[1]


@total_ordering
@dataclass(frozen=True)
class EpiWeek:
    """A (year, ISO week) coordinate on the weekly time axis."""

    year: int
    week: int

    def __post_init__(self):
        if not isinstance(self.year, int) or not isinstance(self.week, int):
            raise InvalidWeek(f"year and week must be integers, got {self.year!r}, {self.week!r}")
        if not 1 <= self.year <= 9999:
            raise InvalidWeek(f"year {self.year} out of range")
        if not 1 <= self.week <= iso_weeks_in_year(self.year):
            raise InvalidWeek(f"{self.year} has no ISO week {self.week}")

    def __lt__(self, other):
        if not isinstance(other, EpiWeek):
            return NotImplemented
        return (self.year, self.week) < (other.year, other.week)

    def __str__(self):
        return f"{self.year:04d}-W{self.week:02d}"

    @classmethod
    def parse(cls, text: str) -> "EpiWeek":
        """Parse ``2018-W18``, ``2018W18`` or ``2018w18``."""
        m = _WEEK_RE.match(str(text))
        if m is None:
            raise InvalidWeek(f"cannot parse week {text!r}; expected YYYY-Www")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_date(cls, date: _dt.date) -> "EpiWeek":
        y, w, _ = date.isocalendar()
        return cls(int(y), int(w))

    def monday(self) -> _dt.date:
        return _dt.date.fromisocalendar(self.year, self.week, 1)

    def shift(self, weeks: int) -> "EpiWeek":
        return EpiWeek.from_date(self.monday() + _dt.timedelta(weeks=int(weeks)))

    def succ(self) -> "EpiWeek":
        return self.shift(1)

    def pred(self) -> "EpiWeek":
        return self.shift(-1)

    def __sub__(self, other: "EpiWeek") -> int:
        """Signed number of weeks from ``other`` to ``self``."""
        if not isinstance(other, EpiWeek):
            return NotImplemented
        return (self.monday() - other.monday()).days // 7


def week_range(start: EpiWeek, end: EpiWeek) -> list:
    """All weeks from ``start`` to ``end`` inclusive."""
    n = end - start + 1
    return [start.shift(k) for k in range(max(n, 0))]
