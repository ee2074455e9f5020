"""Online dual-prototype test-time adaptation over embedding streams."""

__version__ = "0.1.0"

from .engine import Engine, EngineConfig, SampleOutcome, StreamResult, run_stream
from .stream_io import (
    ClassTextSet,
    SynthConfig,
    TestSample,
    generate_synthetic,
    read_classtext,
    read_stream,
    write_classtext,
    write_stream,
)

__all__ = [
    "Engine",
    "EngineConfig",
    "SampleOutcome",
    "StreamResult",
    "run_stream",
    "ClassTextSet",
    "SynthConfig",
    "TestSample",
    "generate_synthetic",
    "read_classtext",
    "read_stream",
    "write_classtext",
    "write_stream",
    "__version__",
]
