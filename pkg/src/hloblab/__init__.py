"""Desk-scale limit order book forecasting pipeline.

Ingests LOBSTER-format tick data, builds an information-filtering graph from
pairwise mutual information between volume levels, and trains a three-head
convolutional + LSTM classifier of mid-price change direction on a
self-contained reverse-mode tensor engine.
"""

__version__ = "0.1.0"
