"""Lung-sound denoising toolkit.

Heavy submodules are imported on demand so the command-line entry point
can configure threading before numpy loads.
"""

__version__ = "0.1.0"
