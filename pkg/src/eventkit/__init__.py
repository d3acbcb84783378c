"""Event-camera data toolkit: storage, slicing, encoding, augmentation, flow and evaluation."""
from .core import (
    EncodedFrame,
    EventStream,
    FlowField,
    FlowSequence,
    GraySequence,
    InvariantError,
    SensorProps,
    ValidationReport,
    validate_stream,
)

__version__ = "0.1.0"

__all__ = [
    "EncodedFrame",
    "EventStream",
    "FlowField",
    "FlowSequence",
    "GraySequence",
    "InvariantError",
    "SensorProps",
    "ValidationReport",
    "validate_stream",
]
