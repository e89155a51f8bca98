"""Critical reflected/killed branching Brownian motion toolkit.

Layers: exact spectral analytics (`fwl.spectral`), the replica simulator
with genealogy (`fwl.bbm`), k-spine samplers and biased measures
(`fwl.spine`), the coalescent point process (`fwl.cpp`), and the
limit-law verification harness (`fwl.verify`).  `fwl.cli` exposes the
command line; see README.md.
"""

from .params import (ModelParams, drift_for_length, length_for_drift,
                     params_for_drift, params_for_length,
                     params_for_population)

__all__ = [
    "ModelParams", "drift_for_length", "length_for_drift",
    "params_for_drift", "params_for_length", "params_for_population",
]

__version__ = "0.1.0"
