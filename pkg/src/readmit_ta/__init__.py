"""Temporal abstraction, cohort construction and evaluation for ICU readmission prediction."""

__version__ = "0.1.0"
