"""Action-unit encoding and Siamese-LSTM skill evaluation on segmented activity videos."""

__version__ = "0.1.0"
