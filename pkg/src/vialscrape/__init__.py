"""Desk-scale vial-scraping benchmark: environment, learners, experiments."""

__version__ = "0.1.0"
