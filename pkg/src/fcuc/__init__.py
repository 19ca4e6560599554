"""Frequency-constrained unit commitment toolkit.

Builds day-ahead commitment schedules whose worst single-generator trip
keeps the post-contingency frequency nadir above an under-frequency
load-shedding threshold.  Frequency security is learned from simulated
trip responses and enforced inside the commitment MILP through an exact
mixed-integer encoding of the trained ReLU networks.
"""

__version__ = "0.1.0"

# Versions of the on-disk formats; bumped on any incompatible change.
SCHEMA_VERSIONS = {
    "case": 1,
    "forecast": 1,
    "dataset": 1,
    "pool": 1,
    "model": 1,
    "lp": 1,
    "solution": 1,
    "schedule": 1,
    "verification": 1,
    "report": 1,
}
