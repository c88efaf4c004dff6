"""Future instance segmentation via forecast optical flow and learned mask warping."""
__version__ = "0.1.0"
