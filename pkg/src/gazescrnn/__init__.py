"""Event-based gaze tracking with spiking convolutional recurrent networks.

The package covers the whole path from DVS events to gaze predictions:
event I/O and a synthetic eye simulator (:mod:`events`), framing
(:mod:`framing`), gaze references (:mod:`gaze`), a small reverse-mode
autodiff engine (:mod:`autograd`), spiking neurons (:mod:`neurons`), the
network (:mod:`model`), training (:mod:`training`) and the CLI.
"""

import logging

from .errors import CheckpointError, ConfigError, DataError, EventFormatError, GazeError, NumericError

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = ["CheckpointError", "ConfigError", "DataError", "EventFormatError", "GazeError",
           "NumericError", "__version__"]
