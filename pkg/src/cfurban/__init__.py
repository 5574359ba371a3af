"""UE-centric cell-free massive MIMO simulator on urban building maps."""

__version__ = "0.1.0"
