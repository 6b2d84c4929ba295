"""Unit conversions between the file/CLI units and SI.

Files and CSV output speak hours, millimetres, square kilometres and
litres per second; everything inside the package is SI.
"""

from __future__ import annotations

SECONDS_PER_HOUR = 3600.0
METRES_PER_MM = 1.0e-3
SQUARE_METRES_PER_KM2 = 1.0e6
CUBIC_METRES_PER_LITRE = 1.0e-3


def hours_to_seconds(value):
    return value * SECONDS_PER_HOUR


def seconds_to_hours(value):
    return value / SECONDS_PER_HOUR


def per_hour_to_per_second(value):
    return value / SECONDS_PER_HOUR


def per_second_to_per_hour(value):
    return value * SECONDS_PER_HOUR


def mm_to_m(value):
    return value * METRES_PER_MM


def m_to_mm(value):
    return value / METRES_PER_MM


def km2_to_m2(value):
    return value * SQUARE_METRES_PER_KM2


def m2_to_km2(value):
    return value / SQUARE_METRES_PER_KM2


def lps_to_m3s(value):
    return value * CUBIC_METRES_PER_LITRE


def m3s_to_lps(value):
    return value / CUBIC_METRES_PER_LITRE


__all__ = [
    "SECONDS_PER_HOUR",
    "hours_to_seconds",
    "seconds_to_hours",
    "per_hour_to_per_second",
    "per_second_to_per_hour",
    "mm_to_m",
    "m_to_mm",
    "km2_to_m2",
    "m2_to_km2",
    "lps_to_m3s",
    "m3s_to_lps",
]
