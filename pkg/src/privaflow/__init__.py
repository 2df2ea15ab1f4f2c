"""Privacy-preserving traffic density aggregation toolkit.

Drivers encrypt k-anonymous grid-cell reports under per-driver functional
encryption keys; the traffic management center aggregates one ciphertext
per driver per cell and decrypts only the per-cell count. Includes a
seeded mobility simulator, spatiotemporal window construction, and a
binary dataset export for the companion forecaster.
"""

__version__ = "0.1.0"
