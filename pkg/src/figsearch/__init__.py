"""Figure embedding and retrieval engine: a two-task convolutional network,
exact cosine similarity search, 2D projection, and ideation metrics."""

__version__ = "0.1.0"
