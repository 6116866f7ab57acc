"""Zero-shot skeleton action recognition by visual-semantic mutual information
estimation, with a motion-attention temporal margin."""

__version__ = "0.1.0"
