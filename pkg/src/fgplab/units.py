"""Time units. Canonical internal unit is the trading year.

One year is 250 trading days and one trading day is 6.5 hours, so that
intraday lags and annualized variance rates line up with market data
quoted per trading day.
"""

import re

from .exceptions import ValidationError

TRADING_DAYS_PER_YEAR = 250.0
HOURS_PER_DAY = 6.5
DAY = 1.0 / TRADING_DAYS_PER_YEAR
HOUR = DAY / HOURS_PER_DAY
MINUTE = HOUR / 60.0
SECOND = MINUTE / 60.0
YEAR = 1.0

_UNITS = {
    "s": SECOND, "sec": SECOND, "second": SECOND, "seconds": SECOND,
    "min": MINUTE, "minute": MINUTE, "minutes": MINUTE,
    "h": HOUR, "hour": HOUR, "hours": HOUR,
    "d": DAY, "day": DAY, "days": DAY,
    "y": YEAR, "yr": YEAR, "year": YEAR, "years": YEAR,
}

_PATTERN = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]+)\s*$")


def parse_duration(text, field="duration"):
    """Parse a string such as ``"7.5min"`` or ``"1y"`` into years.

    Bare numbers are rejected: every time-valued input must carry a unit.
    """
    if not isinstance(text, str):
        raise ValidationError(f"{field} must be a string with explicit units, e.g. '1y'", field=field)
    m = _PATTERN.match(text)
    if m is None or m.group(2).lower() not in _UNITS:
        raise ValidationError(f"{field}: cannot parse duration {text!r}", field=field)
    return float(m.group(1)) * _UNITS[m.group(2).lower()]


def to_minutes(years):
    return years / MINUTE


def from_minutes(minutes):
    return minutes * MINUTE


def from_seconds(seconds):
    return seconds * SECOND
