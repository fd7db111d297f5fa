"""farmmon: SNMP cluster monitor with round-robin archives and a web status server."""

__version__ = "0.1.0"
