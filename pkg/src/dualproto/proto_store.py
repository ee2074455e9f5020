"""Evolving prototype state: textual running average and visual priority queues.

Both stores are single-owner mutable objects; one engine mutates them
sequentially. Matrices handed back to callers are copies.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .core import l2_normalize, l2_normalize_rows
from .errors import (
    BadMagic,
    ClassOutOfRange,
    ConfigInvalid,
    Truncated,
    VersionMismatch,
)
from .stream_io import ClassTextSet

NO_UPDATE = "no_update"
FULL_UPDATE = "full_update"
EXPONENTIAL_AVG = "exponential_avg"
CUMULATIVE_AVG = "cumulative_avg"
UPDATE_RULES = (NO_UPDATE, FULL_UPDATE, EXPONENTIAL_AVG, CUMULATIVE_AVG)

CHECKPOINT_MAGIC = b"DPEK"
CHECKPOINT_VERSION = 1


class TextualStore:
    """Class-text prototypes evolved online by a gated update rule.

    `k` counts accepted confident updates; it increments only under the
    cumulative-average rule, where it weights the running prototype.
    """

    def __init__(
        self,
        prototypes: np.ndarray,
        rule: str = CUMULATIVE_AVG,
        ema_gamma: float = 0.99,
        k: int = 0,
    ):
        if rule not in UPDATE_RULES:
            raise ConfigInvalid(f"unknown update rule {rule!r}")
        if not 0.0 < ema_gamma < 1.0:
            raise ConfigInvalid("ema_gamma must lie in (0, 1)")
        self.prototypes = np.array(prototypes, dtype=np.float64)
        self.rule = rule
        self.ema_gamma = float(ema_gamma)
        self.k = int(k)

    @classmethod
    def from_classtext(
        cls, cts: ClassTextSet, rule: str = CUMULATIVE_AVG, ema_gamma: float = 0.99
    ) -> "TextualStore":
        """Initialize each prototype as the normalized mean of its prompts."""
        cts.validate()
        rows = np.stack([emb.mean(axis=0) for emb in cts.embeddings])
        return cls(l2_normalize_rows(rows), rule=rule, ema_gamma=ema_gamma)

    def snapshot(self) -> np.ndarray:
        return self.prototypes.copy()

    def evolve(self, optimized: np.ndarray, gate_entropy: float, tau_t: float) -> bool:
        """Apply one gated update toward `optimized`; True if prototypes moved.

        The gate accepts when the normalized entropy is <= tau_t, i.e. only
        confident samples evolve the store.
        """
        if optimized.shape != self.prototypes.shape:
            raise ConfigInvalid("optimized prototypes have the wrong shape")
        if gate_entropy > tau_t:
            return False
        if self.rule == NO_UPDATE:
            return False
        if self.rule == FULL_UPDATE:
            self.prototypes = np.array(optimized, dtype=np.float64)
        elif self.rule == EXPONENTIAL_AVG:
            g = self.ema_gamma
            self.prototypes = l2_normalize_rows(
                g * self.prototypes + (1.0 - g) * optimized
            )
        else:  # cumulative average; weight on the old prototype is k-before
            self.prototypes = l2_normalize_rows(
                self.k * self.prototypes + optimized
            )
            self.k += 1
        return True


class VisualStore:
    """Per-class bounded queues of confident features and their prototypes.

    Each queue holds at most `capacity` (feature, self-entropy) entries,
    sorted ascending by entropy with FIFO tie-breaking. A full queue accepts
    a new feature only when strictly more confident than its worst entry,
    which the feature then replaces, so a queue always holds the capacity
    lowest-entropy features ever offered to its class.

    `placeholder` provides the prototype row reported for classes whose
    queue is still empty (callers typically pass the initial textual
    prototypes so downstream consumers always see unit rows).
    """

    def __init__(
        self,
        placeholder: np.ndarray,
        capacity: int,
        normalize_prototypes: bool = True,
    ):
        if capacity < 1:
            raise ConfigInvalid("queue capacity must be >= 1")
        placeholder = np.array(placeholder, dtype=np.float64)
        if placeholder.ndim != 2:
            raise ConfigInvalid("placeholder must be a (C, d) matrix")
        self.capacity = int(capacity)
        self.normalize_prototypes = bool(normalize_prototypes)
        self.n_classes, self.dim = placeholder.shape
        self._protos = placeholder
        self._has = np.zeros(self.n_classes, dtype=bool)
        # queue entry: (entropy, arrival_seq, feature); seq breaks ties FIFO
        self._queues: list[list[tuple[float, int, np.ndarray]]] = [
            [] for _ in range(self.n_classes)
        ]
        self._seq = 0

    def queue_lengths(self) -> list[int]:
        return [len(q) for q in self._queues]

    def queue_entropies(self, label: int) -> list[float]:
        return [h for h, _, _ in self._queues[label]]

    def update(self, label: int, feature: np.ndarray, h: float) -> bool:
        """Offer (feature, h) to class `label`'s queue; True if it was stored."""
        if not 0 <= label < self.n_classes:
            raise ClassOutOfRange(f"class {label} outside [0, {self.n_classes})")
        q = self._queues[label]
        entry = (float(h), self._seq, np.array(feature, dtype=np.float64))
        self._seq += 1
        if len(q) < self.capacity:
            q.append(entry)
        elif h < q[-1][0]:
            q[-1] = entry
        else:
            return False
        q.sort(key=lambda e: (e[0], e[1]))
        self._recompute(label)
        return True

    def _recompute(self, label: int) -> None:
        q = self._queues[label]
        mean = np.mean([f for _, _, f in q], axis=0)
        self._protos[label] = l2_normalize(mean) if self.normalize_prototypes else mean
        self._has[label] = True

    def prototypes(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (prototype matrix, has_prototype mask) as copies."""
        return self._protos.copy(), self._has.copy()


_RULE_IDS = {rule: i for i, rule in enumerate(UPDATE_RULES)}


def _write_matrix(f: BinaryIO, m: np.ndarray) -> None:
    f.write(struct.pack("<II", m.shape[0], m.shape[1]))
    f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def _read_matrix(f: BinaryIO, what: str) -> np.ndarray:
    raw = f.read(8)
    if len(raw) != 8:
        raise Truncated(f"missing shape for {what}")
    rows, cols = struct.unpack("<II", raw)
    body = f.read(rows * cols * 8)
    if len(body) != rows * cols * 8:
        raise Truncated(f"missing payload for {what}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def save_checkpoint(
    path: str,
    textual: TextualStore,
    visual: VisualStore,
    initial_textual: np.ndarray,
) -> None:
    """Serialize adaptation state; float64 throughout, unlike interchange files."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(
            struct.pack(
                "<IIQHBdBQ",
                visual.n_classes,
                visual.dim,
                textual.k,
                visual.capacity,
                _RULE_IDS[textual.rule],
                textual.ema_gamma,
                1 if visual.normalize_prototypes else 0,
                visual._seq,
            )
        )
        _write_matrix(f, textual.prototypes)
        _write_matrix(f, initial_textual)
        _write_matrix(f, visual._protos)
        f.write(visual._has.astype("<u1").tobytes())
        for q in visual._queues:
            f.write(struct.pack("<H", len(q)))
            for h, seq, feat in q:
                f.write(struct.pack("<dQ", h, seq))
                f.write(np.ascontiguousarray(feat, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[TextualStore, VisualStore, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagic(f"expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
        raw = f.read(2)
        if len(raw) != 2:
            raise Truncated("missing checkpoint version")
        (version,) = struct.unpack("<H", raw)
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint version {version} unsupported")
        head_fmt = "<IIQHBdBQ"
        raw = f.read(struct.calcsize(head_fmt))
        if len(raw) != struct.calcsize(head_fmt):
            raise Truncated("missing checkpoint header")
        n_classes, dim, k, capacity, rule_id, gamma, norm_flag, seq = struct.unpack(
            head_fmt, raw
        )
        textual_protos = _read_matrix(f, "textual prototypes")
        initial_textual = _read_matrix(f, "initial textual prototypes")
        visual_protos = _read_matrix(f, "visual prototypes")
        has_raw = f.read(n_classes)
        if len(has_raw) != n_classes:
            raise Truncated("missing queue mask")
        textual = TextualStore(
            textual_protos, rule=UPDATE_RULES[rule_id], ema_gamma=gamma, k=k
        )
        visual = VisualStore(
            visual_protos, capacity=capacity, normalize_prototypes=bool(norm_flag)
        )
        visual._has = np.frombuffer(has_raw, dtype="<u1").astype(bool)
        visual._seq = seq
        for c in range(n_classes):
            raw = f.read(2)
            if len(raw) != 2:
                raise Truncated(f"missing queue length for class {c}")
            (n_entries,) = struct.unpack("<H", raw)
            for _ in range(n_entries):
                head = f.read(16)
                body = f.read(dim * 8)
                if len(head) != 16 or len(body) != dim * 8:
                    raise Truncated(f"missing queue entry for class {c}")
                h, entry_seq = struct.unpack("<dQ", head)
                feat = np.frombuffer(body, dtype="<f8").astype(np.float64)
                visual._queues[c].append((h, entry_seq, feat))
    return textual, visual, initial_textual
