"""Desk-scale audio-visual geometry learning: synthetic binaural scenes,
cross-view binauralization pretraining, and jointly self-supervised
sound-azimuth / camera-rotation estimators."""

__version__ = "0.1.0"
