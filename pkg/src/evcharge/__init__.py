"""Machine-to-machine EV charging over TCP.

Charging stations are servers with a fixed address; vehicles are
clients that authenticate with a request document, buy metered energy,
and pay the bill. A relational registry backs authorization and the
transaction ledger; a fleet simulator produces service-provider
analytics on top.
"""

__version__ = "0.1.0"
