"""Neural routing toolkit.

Attention policies for the travelling-salesman and capacitated routing
problems with two generalization levers: a size-adaptation factor applied
inside every attention softmax, and per-distribution decoder heads over a
shared encoder. Ships with exact small-instance oracles, seeded instance
generators, benchmark-file ingestion and a reporting CLI.
"""

__version__ = "0.1.0"
