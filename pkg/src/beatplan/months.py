"""Absolute month indexing shared across the pipeline.

A month is addressed as year*12 + (month-1) so adjacent months differ by 1
across year boundaries. Call timestamps are bucketed in a fixed local offset
(default -05:00) because shift calendars follow local wall time.
"""

from __future__ import annotations

import calendar
from datetime import datetime, timedelta, timezone

DEFAULT_UTC_OFFSET_HOURS = -5.0


def month_index(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def year_month(index: int) -> tuple[int, int]:
    return index // 12, index % 12 + 1


def days_in_month(index: int) -> int:
    y, m = year_month(index)
    return calendar.monthrange(y, m)[1]


def month_of(ts: datetime, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> int:
    """Absolute month index of a UTC timestamp under the reporting offset."""
    local = ts.astimezone(timezone.utc) + timedelta(hours=utc_offset_hours)
    return month_index(local.year, local.month)


def month_bounds_utc(index: int, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> tuple[datetime, datetime]:
    """UTC instants [start, end) of a local calendar month."""
    y, m = year_month(index)
    start_local = datetime(y, m, 1)
    y2, m2 = year_month(index + 1)
    end_local = datetime(y2, m2, 1)
    off = timedelta(hours=utc_offset_hours)
    return (start_local - off).replace(tzinfo=timezone.utc), (end_local - off).replace(tzinfo=timezone.utc)


def months_of_year(year: int) -> list[int]:
    return [month_index(year, m) for m in range(1, 13)]
