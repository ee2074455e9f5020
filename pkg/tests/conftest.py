import numpy as np
import pytest

from dualproto import SynthConfig, generate_synthetic, write_classtext, write_stream
from dualproto.engine import EngineConfig

# The shared benchmark fixture: data parameters plus the engine configuration
# every acceptance comparison runs under. Engine deviations from library
# defaults (lr, rho, n_steps) are deliberate and documented in the README.
BENCH_SYNTH = dict(
    classes=20,
    dim=64,
    samples=2000,
    views=8,
    shift_angle=0.6,
    sample_noise=0.25,
    seed=7,
)
BENCH_ENGINE = dict(temperature=0.01, lr=0.002, rho=0.4, n_steps=2)


def bench_config() -> EngineConfig:
    return EngineConfig(**BENCH_ENGINE)


@pytest.fixture(scope="session")
def bench_files(tmp_path_factory):
    """Benchmark classtext/stream files, generated once per session."""
    root = tmp_path_factory.mktemp("bench")
    cts, samples, labels = generate_synthetic(SynthConfig(**BENCH_SYNTH))
    classtext = root / "bench.dpec"
    stream = root / "bench.dpes"
    write_classtext(str(classtext), cts)
    write_stream(str(stream), samples)
    return {
        "classtext": str(classtext),
        "stream": str(stream),
        "labels": labels,
        "classtext_set": cts,
        "samples": samples,
    }


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
