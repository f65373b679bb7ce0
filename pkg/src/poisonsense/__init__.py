"""Traffic routing that stays robust to poisoned flow reports, with sensor allocation."""

__version__ = "0.1.0"
