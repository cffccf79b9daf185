"""Topic-guided spatial and semantic attention for image captioning."""

__version__ = "0.1.0"
