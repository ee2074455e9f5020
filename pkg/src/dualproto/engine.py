"""Per-sample adaptation engine and the sequential stream loop.

One `Engine` owns its prototype stores and processes samples strictly in
order. A step never sees ground-truth labels; evaluation joins labels with
outcomes downstream. Each step:

  1. snapshots the current prototype state,
  2. optimizes per-sample residuals on that snapshot (when enabled),
  3. reports the aggregated multi-view prediction under the optimized state,
  4. derives a pseudo-label and self-entropy from the original view,
  5. offers that feature to the matching visual queue,
  6. gates the textual store's evolution toward the optimized prototypes.

The state left by 5-6 is the initialization for the next sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import proto_store
from .core import entropy, normalized_entropy, softmax
from .errors import (
    ConfigInvalid,
    DimMismatch,
    EngineError,
    NonFinite,
    NumericAbort,
)
from .inference import aggregate_views, predict, view_probs
from .proto_store import CUMULATIVE_AVG, UPDATE_RULES, TextualStore, VisualStore
from .residual_opt import LossBreakdown, optimize_sample
from .stream_io import ClassTextSet

SOURCES = ("zeroshot", "proto", "dpe")

_BOOL_FIELDS = frozenset(
    {"enable_vpe", "enable_tpe", "enable_prl", "normalize_visual_proto"}
)
_INT_FIELDS = frozenset({"queue_capacity", "n_steps", "seed"})
_STR_FIELDS = frozenset({"update_rule", "pseudo_label_source", "gate_source"})


@dataclass
class EngineConfig:
    """Every knob of the adaptation engine, with paper-default values."""

    temperature: float = 0.01
    alpha: float = 6.0
    beta: float = 5.0
    lam: float = 0.5
    tau_t: float = 0.1
    queue_capacity: int = 3
    rho: float = 0.1
    n_steps: int = 1
    lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    align_temperature: float = 1.0
    update_rule: str = CUMULATIVE_AVG
    ema_gamma: float = 0.99
    enable_vpe: bool = True
    enable_tpe: bool = True
    enable_prl: bool = True
    pseudo_label_source: str = "dpe"
    gate_source: str = "dpe"
    normalize_visual_proto: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigInvalid("temperature must be positive")
        if self.align_temperature <= 0:
            raise ConfigInvalid("align_temperature must be positive")
        if self.alpha < 0:
            raise ConfigInvalid("alpha must be >= 0")
        if self.beta <= 0:
            raise ConfigInvalid("beta must be positive")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigInvalid("rho must lie in (0, 1]")
        if not 0.0 <= self.tau_t <= 1.0:
            raise ConfigInvalid("tau_t must lie in [0, 1]")
        if self.queue_capacity < 1:
            raise ConfigInvalid("queue_capacity must be >= 1")
        if self.n_steps < 0:
            raise ConfigInvalid("n_steps must be >= 0")
        if self.lr <= 0:
            raise ConfigInvalid("lr must be positive")
        if not 0.0 < self.ema_gamma < 1.0:
            raise ConfigInvalid("ema_gamma must lie in (0, 1)")
        if self.update_rule not in UPDATE_RULES:
            raise ConfigInvalid(f"update_rule must be one of {UPDATE_RULES}")
        if self.pseudo_label_source not in SOURCES:
            raise ConfigInvalid(f"pseudo_label_source must be one of {SOURCES}")
        if self.gate_source not in SOURCES:
            raise ConfigInvalid(f"gate_source must be one of {SOURCES}")

    def with_overrides(self, **overrides) -> "EngineConfig":
        cfg = replace(self, **overrides)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_dict(cls, mapping: dict) -> "EngineConfig":
        known = set(cls.field_names())
        unknown = set(mapping) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in mapping.items():
            if key in _BOOL_FIELDS:
                kwargs[key] = _parse_bool(value)
            elif key in _INT_FIELDS:
                kwargs[key] = int(value)
            elif key in _STR_FIELDS:
                kwargs[key] = str(value)
            else:
                kwargs[key] = float(value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes", "on"):
        return True
    if text in ("false", "0", "no", "off"):
        return False
    raise ConfigInvalid(f"cannot parse boolean from {value!r}")


@dataclass
class SampleOutcome:
    """Everything the engine can say about one processed sample."""

    predicted: int
    probs: np.ndarray = field(repr=False)
    pseudo_label: int
    entropy: float
    gate_entropy: float
    textual_updated: bool
    queue_mutated: bool
    loss: LossBreakdown
    wall_time: float


@dataclass
class StreamResult:
    """Outcome list plus abort bookkeeping for one sequential pass."""

    outcomes: list[SampleOutcome]
    aborted_at: int | None = None
    abort_reason: str | None = None

    @property
    def n_samples(self) -> int:
        return len(self.outcomes)

    def predictions(self) -> np.ndarray:
        return np.array([o.predicted for o in self.outcomes], dtype=np.int64)


class Engine:
    """Sequential dual-prototype adaptation over a stream of view sets."""

    def __init__(self, classtext: ClassTextSet, config: EngineConfig):
        config.validate()
        self.config = config
        self.textual = TextualStore.from_classtext(
            classtext, rule=config.update_rule, ema_gamma=config.ema_gamma
        )
        self.initial_textual = self.textual.snapshot()
        self.visual = VisualStore(
            placeholder=self.initial_textual,
            capacity=config.queue_capacity,
            normalize_prototypes=config.normalize_visual_proto,
        )
        self.n_classes, self.dim = self.initial_textual.shape
        self.samples_seen = 0

    @classmethod
    def from_checkpoint(cls, path: str, config: EngineConfig) -> "Engine":
        engine = cls.__new__(cls)
        config.validate()
        engine.config = config
        engine.textual, engine.visual, engine.initial_textual = (
            proto_store.load_checkpoint(path)
        )
        engine.n_classes, engine.dim = engine.initial_textual.shape
        engine.samples_seen = 0
        return engine

    def save_checkpoint(self, path: str) -> None:
        proto_store.save_checkpoint(
            path, self.textual, self.visual, self.initial_textual
        )

    def _source_probs(
        self,
        f0: np.ndarray,
        source: str,
        snap_t: np.ndarray,
        snap_v: np.ndarray,
        snap_has: np.ndarray,
        t_star: np.ndarray,
        v_star: np.ndarray,
    ) -> np.ndarray:
        cfg = self.config
        if source == "zeroshot":
            return softmax(self.initial_textual @ f0, cfg.temperature)
        if source == "proto":
            return predict(
                f0, snap_t, snap_v, snap_has, cfg.alpha, cfg.beta, cfg.temperature
            )
        return predict(
            f0, t_star, v_star, snap_has, cfg.alpha, cfg.beta, cfg.temperature
        )

    def step(self, views: np.ndarray) -> SampleOutcome:
        start = time.perf_counter()
        cfg = self.config
        views = np.asarray(views, dtype=np.float64)
        if views.ndim != 2 or views.shape[1] != self.dim:
            raise DimMismatch(
                f"sample views {views.shape} do not match engine dim {self.dim}"
            )
        if not np.all(np.isfinite(views)):
            raise NonFinite("sample views contain NaN or Inf")

        snap_t = self.textual.snapshot()
        snap_v, snap_has = self.visual.prototypes()

        n_steps = cfg.n_steps if cfg.enable_prl else 0
        t_star, v_star, final, breakdown = optimize_sample(
            views, snap_t, snap_v, snap_has,
            n_steps=n_steps,
            alpha=cfg.alpha,
            beta=cfg.beta,
            temperature=cfg.temperature,
            rho=cfg.rho,
            lam=cfg.lam,
            align_temperature=cfg.align_temperature,
            lr=cfg.lr,
            adam_beta1=cfg.adam_beta1,
            adam_beta2=cfg.adam_beta2,
            adam_eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )
        probs = final.mean_probs
        predicted = int(np.argmax(probs))

        f0 = views[0]
        pl_probs = self._source_probs(
            f0, cfg.pseudo_label_source, snap_t, snap_v, snap_has, t_star, v_star
        )
        pseudo_label = int(np.argmax(pl_probs))
        h = entropy(pl_probs)
        if cfg.gate_source == cfg.pseudo_label_source:
            gate_probs = pl_probs
        else:
            gate_probs = self._source_probs(
                f0, cfg.gate_source, snap_t, snap_v, snap_has, t_star, v_star
            )
        gate_h = normalized_entropy(gate_probs)

        queue_mutated = False
        if cfg.enable_vpe:
            queue_mutated = self.visual.update(pseudo_label, f0, h)
        textual_updated = False
        if cfg.enable_tpe:
            textual_updated = self.textual.evolve(t_star, gate_h, cfg.tau_t)

        self.samples_seen += 1
        return SampleOutcome(
            predicted=predicted,
            probs=probs,
            pseudo_label=pseudo_label,
            entropy=h,
            gate_entropy=gate_h,
            textual_updated=textual_updated,
            queue_mutated=queue_mutated,
            loss=breakdown,
            wall_time=time.perf_counter() - start,
        )


def run_stream(
    engine: Engine,
    views_iter,
    checkpoint_every: int | None = None,
    checkpoint_path: str | None = None,
) -> StreamResult:
    """Drive the engine over an iterable of view matrices.

    Numeric failures stop the pass and are reported in the result rather
    than skipped, so accumulation comparisons never silently diverge.
    """
    outcomes: list[SampleOutcome] = []
    for i, views in enumerate(views_iter):
        try:
            outcomes.append(engine.step(views))
        except EngineError as exc:
            abort = NumericAbort(i, exc)
            return StreamResult(
                outcomes, aborted_at=i, abort_reason=str(abort)
            )
        if (
            checkpoint_every
            and checkpoint_path
            and (i + 1) % checkpoint_every == 0
        ):
            engine.save_checkpoint(checkpoint_path)
    return StreamResult(outcomes)
