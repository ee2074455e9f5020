"""Interchange file formats and the synthetic shift generator.

Two little-endian binary formats carry embeddings across the tool boundary;
both store float32 payloads, upcast to float64 on read.

Class-text file (.dpec):
    magic "DPEC" | version u16=1 | d u32 | C u32
    per class: name_len u16 | name utf-8 | S u16 | S*d float32

Stream file (.dpes):
    magic "DPES" | version u16=1 | flags u16 (bit0: labels present)
    | d u32 | n_samples u32
    per sample: n_views u16 | label u32 (0xFFFFFFFF = absent)
    | n_views*d float32

Vectors must be unit-L2 within 1e-4 on load. Vectors already unit within
1e-5 are kept bit-exact (so write -> read -> write round-trips to identical
bytes); anything between 1e-5 and 1e-4 is re-normalized, worse is rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .core import l2_normalize, l2_normalize_rows
from .errors import (
    BadMagic,
    ConfigInvalid,
    DimMismatch,
    NonUnitVector,
    Truncated,
    VersionMismatch,
)

CLASSTEXT_MAGIC = b"DPEC"
STREAM_MAGIC = b"DPES"
FORMAT_VERSION = 1
NO_LABEL = 0xFFFFFFFF

_KEEP_EXACT_TOL = 1e-5
_LOAD_TOL = 1e-4


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise Truncated(f"expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _read_struct(f: BinaryIO, fmt: str, what: str) -> tuple:
    size = struct.calcsize(fmt)
    return struct.unpack(fmt, _read_exact(f, size, what))


def _check_unit_rows(rows: np.ndarray, what: str) -> np.ndarray:
    """Enforce the unit-norm load invariant, keeping bit-exact rows untouched."""
    norms = np.linalg.norm(rows, axis=1)
    dev = np.abs(norms - 1.0)
    worst = float(dev.max()) if len(dev) else 0.0
    if worst > _LOAD_TOL:
        bad = int(np.argmax(dev))
        raise NonUnitVector(f"{what}: vector {bad} has norm {norms[bad]:.6f}")
    if worst > _KEEP_EXACT_TOL:
        rows = l2_normalize_rows(rows)
    return rows


@dataclass
class ClassTextSet:
    """Per-class prompt embeddings plus class names."""

    class_names: list[str]
    embeddings: list[np.ndarray]  # one (S_c, d) float64 array per class

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.embeddings[0].shape[1]

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigInvalid("a class-text set needs at least 2 classes")
        if len(self.embeddings) != self.n_classes:
            raise DimMismatch("names and embeddings disagree on class count")
        d = self.dim
        for c, emb in enumerate(self.embeddings):
            if emb.ndim != 2 or emb.shape[0] < 1:
                raise DimMismatch(f"class {c}: embeddings must be a (S, d) array")
            if emb.shape[1] != d:
                raise DimMismatch(f"class {c}: dim {emb.shape[1]} != {d}")


@dataclass
class TestSample:
    """One test instance: stacked view embeddings, view 0 is the original."""

    __test__ = False  # not a pytest class, despite the name

    views: np.ndarray  # (n_views, d) float64, unit rows
    label: int | None = None


def write_classtext(path: str, cts: ClassTextSet) -> None:
    cts.validate()
    with open(path, "wb") as f:
        f.write(CLASSTEXT_MAGIC)
        f.write(struct.pack("<HII", FORMAT_VERSION, cts.dim, cts.n_classes))
        for name, emb in zip(cts.class_names, cts.embeddings):
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<H", emb.shape[0]))
            f.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())


def read_classtext(path: str) -> ClassTextSet:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CLASSTEXT_MAGIC:
            raise BadMagic(f"expected {CLASSTEXT_MAGIC!r}, got {magic!r}")
        version, d, n_classes = _read_struct(f, "<HII", "classtext header")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"classtext version {version} unsupported")
        names: list[str] = []
        embeddings: list[np.ndarray] = []
        for c in range(n_classes):
            (name_len,) = _read_struct(f, "<H", f"class {c} name length")
            name = _read_exact(f, name_len, f"class {c} name").decode("utf-8")
            (s,) = _read_struct(f, "<H", f"class {c} prompt count")
            raw = _read_exact(f, s * d * 4, f"class {c} embeddings")
            rows = np.frombuffer(raw, dtype="<f4").reshape(s, d).astype(np.float64)
            names.append(name)
            embeddings.append(_check_unit_rows(rows, f"class {c}"))
    cts = ClassTextSet(names, embeddings)
    cts.validate()
    return cts


def write_stream(path: str, samples: Sequence[TestSample]) -> None:
    if not samples:
        dims = 0
    else:
        dims = samples[0].views.shape[1]
        for i, s in enumerate(samples):
            if s.views.ndim != 2 or s.views.shape[0] < 1:
                raise DimMismatch(f"sample {i}: views must be a (n_views, d) array")
            if s.views.shape[1] != dims:
                raise DimMismatch(f"sample {i}: dim {s.views.shape[1]} != {dims}")
    labels_present = any(s.label is not None for s in samples)
    with open(path, "wb") as f:
        f.write(STREAM_MAGIC)
        flags = 1 if labels_present else 0
        f.write(struct.pack("<HHII", FORMAT_VERSION, flags, dims, len(samples)))
        for s in samples:
            label = NO_LABEL if s.label is None else int(s.label)
            f.write(struct.pack("<HI", s.views.shape[0], label))
            f.write(np.ascontiguousarray(s.views, dtype="<f4").tobytes())


class StreamReader:
    """Sequential one-pass reader over a .dpes file.

    Usable as a context manager and iterator; samples are decoded lazily so
    arbitrarily long streams never need to fit in memory at once.
    """

    def __init__(self, path: str):
        self._f = open(path, "rb")
        try:
            magic = _read_exact(self._f, 4, "magic")
            if magic != STREAM_MAGIC:
                raise BadMagic(f"expected {STREAM_MAGIC!r}, got {magic!r}")
            version, flags, d, n = _read_struct(self._f, "<HHII", "stream header")
            if version != FORMAT_VERSION:
                raise VersionMismatch(f"stream version {version} unsupported")
        except Exception:
            self._f.close()
            raise
        self.dim = d
        self.n_samples = n
        self.has_labels = bool(flags & 1)
        self._read = 0

    def __enter__(self) -> "StreamReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._f.close()

    def __iter__(self) -> Iterator[TestSample]:
        while self._read < self.n_samples:
            yield self._next_sample()

    def _next_sample(self) -> TestSample:
        i = self._read
        n_views, label = _read_struct(self._f, "<HI", f"sample {i} header")
        raw = _read_exact(self._f, n_views * self.dim * 4, f"sample {i} views")
        views = np.frombuffer(raw, dtype="<f4").reshape(n_views, self.dim)
        views = _check_unit_rows(views.astype(np.float64), f"sample {i}")
        self._read += 1
        return TestSample(views=views, label=None if label == NO_LABEL else int(label))


def read_stream(path: str) -> list[TestSample]:
    """Load an entire .dpes file; raises Truncated if samples run short."""
    with StreamReader(path) as reader:
        samples = list(reader)
        # a well-formed file ends exactly at the last declared sample
        if reader._f.read(1):
            raise Truncated("trailing bytes after the last declared sample")
    return samples


@dataclass
class SynthConfig:
    """Parameters of the synthetic distribution-shift generator.

    Class means are unit vectors drawn inside a cone around a shared anchor:
    mean_c = normalize(cone * anchor + unit(gaussian)). `cone` = 0 gives
    isotropic means; larger values crowd the classes together the way
    encoder embedding spaces do, shrinking inter-class margins. Test
    features are the means rotated by `shift_angle` inside one random
    2-plane (shared by all classes, so the shift is coherent) plus isotropic
    noise. Noise values are per-coordinate standard deviations applied
    before re-normalization.
    """

    classes: int
    dim: int
    samples: int
    views: int = 8
    shift_angle: float = 0.0
    sample_noise: float = 0.0
    view_noise: float = 0.1
    prompts_per_class: int = 4
    prompt_noise: float = 0.2
    class_cone: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2:
            raise ConfigInvalid("classes must be >= 2")
        for name in ("dim", "samples", "views", "prompts_per_class"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive")
        for name in ("sample_noise", "view_noise", "prompt_noise", "class_cone"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        if not 0.0 <= self.shift_angle <= np.pi / 2:
            raise ConfigInvalid("shift_angle must lie in [0, pi/2]")


def _rotate_in_plane(
    x: np.ndarray, u1: np.ndarray, u2: np.ndarray, angle: float
) -> np.ndarray:
    """Rotate `x` by `angle` inside the plane spanned by orthonormal u1, u2."""
    a = float(x @ u1)
    b = float(x @ u2)
    perp = x - a * u1 - b * u2
    ca, sa = np.cos(angle), np.sin(angle)
    return perp + (a * ca - b * sa) * u1 + (a * sa + b * ca) * u2


def generate_synthetic(
    cfg: SynthConfig,
) -> tuple[ClassTextSet, list[TestSample], np.ndarray]:
    """Build a seeded (class-text set, labeled stream, labels) triple."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    anchor = l2_normalize(rng.standard_normal(cfg.dim))
    means = l2_normalize_rows(rng.standard_normal((cfg.classes, cfg.dim)))
    if cfg.class_cone > 0.0:
        means = l2_normalize_rows(cfg.class_cone * anchor + means)

    # one random 2-plane for the whole run; Gram-Schmidt two gaussians
    u1 = l2_normalize(rng.standard_normal(cfg.dim))
    u2 = rng.standard_normal(cfg.dim)
    u2 = l2_normalize(u2 - (u2 @ u1) * u1)

    names = [f"class_{c:03d}" for c in range(cfg.classes)]
    embeddings = []
    for c in range(cfg.classes):
        noise = rng.standard_normal((cfg.prompts_per_class, cfg.dim))
        embeddings.append(l2_normalize_rows(means[c] + cfg.prompt_noise * noise))
    cts = ClassTextSet(names, embeddings)

    labels = rng.integers(0, cfg.classes, size=cfg.samples)
    samples = []
    for i in range(cfg.samples):
        shifted = _rotate_in_plane(means[labels[i]], u1, u2, cfg.shift_angle)
        original = l2_normalize(
            shifted + cfg.sample_noise * rng.standard_normal(cfg.dim)
        )
        views = np.empty((cfg.views, cfg.dim))
        views[0] = original
        for v in range(1, cfg.views):
            views[v] = l2_normalize(
                original + cfg.view_noise * rng.standard_normal(cfg.dim)
            )
        samples.append(TestSample(views=views, label=int(labels[i])))
    return cts, samples, labels.astype(np.int64)
