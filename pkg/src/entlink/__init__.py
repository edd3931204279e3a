"""entlink: simulator and protocol stack for entanglement-based free-space QKD.

The package splits into a stochastic photon/link simulator (channel,
acquisition), clock synchronization and coincidence matching (sync), the
frame-based key protocol (protocol), interactive error correction (cascade),
privacy amplification (extractors), the classical wire protocol (netlink),
and an end-to-end runner with a CLI (runner, cli).
"""

__version__ = "0.1.0"
