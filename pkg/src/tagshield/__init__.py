"""Hashtag location-privacy toolkit.

Infers post locations from hashtags with a random forest, measures the
privacy loss, and recommends minimal hashtag edits (hiding, replacement,
generalization) that push a post back under a chosen privacy level.
"""

__version__ = "0.1.0"
