"""Timestamp and duration rendering shared by queue listings and the CLI."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

# All virtual clocks render in one fixed testbed timezone, labelled GRID.
TESTBED_TZ = timezone.utc
TZ_LABEL = "GRID"


def from_epoch(epoch: int | float) -> datetime:
    return datetime.fromtimestamp(epoch, tz=TESTBED_TZ)


def fmt_ctime(dt: datetime) -> str:
    """``Thu Feb 14 01:11:48 2013`` (day of month space-padded)."""
    return f"{dt:%a %b} {dt.day:2d} {dt:%H:%M:%S} {dt.year}"


def fmt_ctime_tz(dt: datetime) -> str:
    """ctime with the testbed timezone label, as /bin/date prints."""
    return f"{dt:%a %b} {dt.day:2d} {dt:%H:%M:%S} {TZ_LABEL} {dt.year}"


def fmt_short(dt: datetime) -> str:
    """``2/13 13:02`` (no zero padding on month or day)."""
    return f"{dt.month}/{dt.day} {dt:%H:%M}"


def fmt_dhms(seconds: float) -> str:
    """``D+HH:MM:SS`` accumulated-runtime rendering."""
    total = int(seconds)
    days, rest = divmod(total, 86400)
    hours, rest = divmod(rest, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{days}+{hours:02d}:{minutes:02d}:{secs:02d}"


def fmt_hms(seconds: float) -> str:
    """``H:MM:SS`` time-remaining rendering."""
    total = int(seconds)
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{hours}:{minutes:02d}:{secs:02d}"


def add_seconds(dt: datetime, seconds: float) -> datetime:
    return dt + timedelta(seconds=seconds)
