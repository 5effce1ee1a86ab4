"""Occupant-derived HVAC setback schedules and savings estimates from WiFi
connection logs and smart-meter data."""

__version__ = "0.1.0"
