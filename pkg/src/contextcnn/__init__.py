"""Scene classification from ranked object boxes: CNN features, RoI pooling and a two-layer LSTM."""

__version__ = "0.1.0"
