"""Desk-scale laboratory for learned machine-to-machine message translation.

Two simulated cyber-physical systems share a thermal plant but speak
different SenML-style dialects; translators between them are engineered,
trained on aligned pairs, or learned from co-observations alone.
"""

__version__ = "0.1.0"
