"""Uncertainty-aware blood-pressure estimation from multi-region pulse
traces, with a synthetic physiological data generator, heteroscedastic
regression heads sampled by Monte-Carlo dropout, and inverse-uncertainty
ensemble fusion."""

__version__ = "0.1.0"
