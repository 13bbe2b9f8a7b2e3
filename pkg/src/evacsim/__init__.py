"""Evacuation simulator coupling motion-compressed locomotion with an
agent-based pedestrian simulation: scenario geometry, signage-conditioned
route choice, session engine, metrics, and a network gateway."""

__version__ = "0.1.0"

PROTOCOL_VERSION = "evacsim/1"
