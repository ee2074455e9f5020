"""Evaluation, ablation orchestration, gradient checking, and reports.

Reports are flat structured text: one `key = value` per line with
JSON-encoded values, human-diffable and trivially machine-parseable.
Timing keys are the only fields allowed to differ between reruns of an
identical configuration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .engine import Engine, EngineConfig, StreamResult, run_stream
from .errors import EngineError, LabelMissing
from .residual_opt import apply_residuals, finite_diff_grads, grad_total, select_views
from .core import l2_normalize_rows
from .stream_io import read_classtext, read_stream

TIMING_KEYS = ("mean_wall_time_ms", "total_wall_time_s")


def file_digest(path: str) -> str:
    with open(path, "rb") as f:
        return "sha256:" + hashlib.sha256(f.read()).hexdigest()


@dataclass
class RunReport:
    """Metrics of one stream evaluation plus its full config echo."""

    engine_version: str
    stream_digest: str
    classtext_digest: str
    n_samples: int
    n_classes: int
    window_size: int
    accuracy: float | None
    windowed_accuracy: list[float]
    per_class_accuracy: list[float | None]
    loss_aug_windows: list[float]
    loss_align_windows: list[float]
    confident_updates: int
    queue_fill: int
    aborted_at: int | None
    abort_reason: str | None
    mean_wall_time_ms: float
    total_wall_time_s: float
    config: dict
    # carried for downstream consumers, never serialized
    result: StreamResult | None = field(default=None, repr=False, compare=False)
    labels: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_lines(self) -> list[str]:
        lines = ["# dualproto run report v1"]
        scalar_keys = (
            "engine_version",
            "stream_digest",
            "classtext_digest",
            "n_samples",
            "n_classes",
            "window_size",
            "accuracy",
            "windowed_accuracy",
            "per_class_accuracy",
            "loss_aug_windows",
            "loss_align_windows",
            "confident_updates",
            "queue_fill",
            "aborted_at",
            "abort_reason",
            "mean_wall_time_ms",
            "total_wall_time_s",
        )
        for key in scalar_keys:
            lines.append(f"{key} = {json.dumps(getattr(self, key))}")
        for key, value in self.config.items():
            lines.append(f"config.{key} = {json.dumps(value)}")
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"


def parse_report(text: str) -> dict:
    """Parse `key = value` lines back into a dict (sections flattened)."""
    out: dict = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("["):
            continue
        key, _, raw = line.partition(" = ")
        out[key] = json.loads(raw)
    return out


def reports_equivalent(a: str, b: str, ignore_timing: bool = True) -> bool:
    """Field-level equality of two report texts, optionally modulo timing."""
    da, db = parse_report(a), parse_report(b)
    if ignore_timing:
        for key in TIMING_KEYS:
            da.pop(key, None)
            db.pop(key, None)
    return da == db


def _windows(values: list[float], window: int) -> list[list[float]]:
    return [values[i : i + window] for i in range(0, len(values), window)]


def build_report(
    result: StreamResult,
    labels: np.ndarray | None,
    config: EngineConfig,
    engine: Engine,
    window: int,
    stream_digest: str,
    classtext_digest: str,
) -> RunReport:
    n = result.n_samples
    preds = result.predictions()
    accuracy = None
    windowed: list[float] = []
    per_class: list[float | None] = []
    if labels is not None and n > 0:
        labels = np.asarray(labels[:n])
        correct = preds == labels
        accuracy = float(correct.mean())
        windowed = [float(np.mean(w)) for w in _windows(correct.tolist(), window)]
        for c in range(engine.n_classes):
            hit = labels == c
            per_class.append(float(correct[hit].mean()) if hit.any() else None)
    l_aug = [o.loss.l_aug for o in result.outcomes]
    l_align = [o.loss.l_align for o in result.outcomes]
    times = [o.wall_time for o in result.outcomes]
    return RunReport(
        engine_version=__version__,
        stream_digest=stream_digest,
        classtext_digest=classtext_digest,
        n_samples=n,
        n_classes=engine.n_classes,
        window_size=window,
        accuracy=accuracy,
        windowed_accuracy=windowed,
        per_class_accuracy=per_class,
        loss_aug_windows=[float(np.mean(w)) for w in _windows(l_aug, window)],
        loss_align_windows=[float(np.mean(w)) for w in _windows(l_align, window)],
        confident_updates=engine.textual.k,
        queue_fill=sum(engine.visual.queue_lengths()),
        aborted_at=result.aborted_at,
        abort_reason=result.abort_reason,
        mean_wall_time_ms=float(np.mean(times) * 1e3) if times else 0.0,
        total_wall_time_s=float(np.sum(times)),
        config=config.to_dict(),
        result=result,
        labels=labels,
    )


def evaluate(
    stream_path: str,
    classtext_path: str,
    config: EngineConfig,
    window: int = 250,
    checkpoint_every: int | None = None,
    checkpoint_path: str | None = None,
) -> RunReport:
    """Run one engine over a labeled stream file and score it."""
    classtext = read_classtext(classtext_path)
    samples = read_stream(stream_path)
    if any(s.label is None for s in samples):
        raise LabelMissing("evaluation requires a fully labeled stream")
    labels = np.array([s.label for s in samples], dtype=np.int64)
    engine = Engine(classtext, config)
    result = run_stream(
        engine,
        (s.views for s in samples),
        checkpoint_every=checkpoint_every,
        checkpoint_path=checkpoint_path,
    )
    report = build_report(
        result,
        labels,
        config,
        engine,
        window,
        stream_digest=file_digest(stream_path),
        classtext_digest=file_digest(classtext_path),
    )
    # double-entry check: the headline number must match a recount
    if report.accuracy is not None:
        recount = float(np.mean(result.predictions() == labels[: result.n_samples]))
        assert abs(recount - report.accuracy) == 0.0
    return report


# --- ablation grids ---------------------------------------------------------

Arm = tuple[str, dict]

PRESETS: dict[str, list[Arm]] = {
    "components": [
        ("full", {}),
        ("no-vpe", {"enable_vpe": False}),
        ("no-tpe", {"enable_tpe": False}),
        ("no-prl", {"enable_prl": False}),
        ("zero-shot", {"enable_vpe": False, "enable_tpe": False, "enable_prl": False}),
    ],
    "update-rules": [
        ("cumulative", {"update_rule": "cumulative_avg"}),
        ("no-update", {"update_rule": "no_update"}),
        ("full-update", {"update_rule": "full_update"}),
        ("ema-0.99", {"update_rule": "exponential_avg", "ema_gamma": 0.99}),
        ("ema-0.95", {"update_rule": "exponential_avg", "ema_gamma": 0.95}),
    ],
    "lambda": [
        (f"lam-{v}", {"lam": v}) for v in (0.0, 0.25, 0.5, 1.0, 2.0)
    ],
    "queue-size": [
        (f"M-{m}", {"queue_capacity": m}) for m in (1, 2, 3, 5, 7)
    ],
    "steps": [
        (f"steps-{s}", {"n_steps": s}) for s in (0, 1, 2, 3, 5)
    ],
    "affinity": [
        (f"alpha-{a}", {"alpha": a}) for a in (0.0, 2.5, 6.0, 10.0)
    ] + [
        (f"beta-{b}", {"beta": b}) for b in (2.0, 5.0, 7.0)
    ],
}


def parse_grid_file(path: str) -> list[Arm]:
    """One arm per line: `name key=value key=value ...` (# comments ok)."""
    arms: list[Arm] = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            name, overrides = parts[0], {}
            for token in parts[1:]:
                key, _, raw = token.partition("=")
                overrides[key] = raw
            arms.append((name, overrides))
    return arms


@dataclass
class AblationReport:
    """Per-arm run reports plus a ranking over the shared stream."""

    arms: list[tuple[str, RunReport]]
    failures: list[tuple[str, str]]
    ranking: list[tuple[str, float]]
    stream_digest: str
    classtext_digest: str

    def to_text(self) -> str:
        lines = ["# dualproto ablation report v1"]
        lines.append(f"n_arms = {json.dumps(len(self.arms) + len(self.failures))}")
        lines.append(f"stream_digest = {json.dumps(self.stream_digest)}")
        lines.append(f"classtext_digest = {json.dumps(self.classtext_digest)}")
        lines.append(f"ranking = {json.dumps([[n, a] for n, a in self.ranking])}")
        lines.append(f"failures = {json.dumps([[n, e] for n, e in self.failures])}")
        for name, report in self.arms:
            lines.append("")
            lines.append(f"[arm {name}]")
            lines.extend(report.to_lines()[1:])
        return "\n".join(lines) + "\n"

    def accuracy(self, arm: str) -> float:
        for name, report in self.arms:
            if name == arm:
                return report.accuracy
        raise KeyError(arm)


def ablate(
    stream_path: str,
    classtext_path: str,
    base_config: EngineConfig,
    arms: list[Arm],
    window: int = 250,
) -> AblationReport:
    """Evaluate every arm on the identical stream; failures don't cascade."""
    reports: list[tuple[str, RunReport]] = []
    failures: list[tuple[str, str]] = []
    for name, overrides in arms:
        try:
            merged = dict(base_config.to_dict())
            merged.update(overrides)
            config = EngineConfig.from_dict(merged)
            reports.append((name, evaluate(stream_path, classtext_path, config, window)))
        except EngineError as exc:
            failures.append((name, f"{type(exc).__name__}: {exc}"))
    digests = {(r.stream_digest, r.classtext_digest) for _, r in reports}
    assert len(digests) <= 1, "ablation arms consumed differing input bytes"
    ranking = sorted(
        ((n, r.accuracy) for n, r in reports if r.accuracy is not None),
        key=lambda item: (-item[1], item[0]),
    )
    return AblationReport(
        arms=reports,
        failures=failures,
        ranking=ranking,
        stream_digest=reports[0][1].stream_digest if reports else "",
        classtext_digest=reports[0][1].classtext_digest if reports else "",
    )


# --- gradient checking ------------------------------------------------------


@dataclass
class GradcheckResult:
    trials: int
    tolerance: float
    max_rel_error: float
    worst_trial: int
    passed: bool

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: {self.trials} trials, "
            f"max relative error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.1e}, worst trial {self.worst_trial})\n"
        )


def gradcheck(
    trials: int = 100,
    seed: int = 0,
    tolerance: float = 1e-3,
    h: float = 1e-5,
    _perturb: float = 0.0,
) -> GradcheckResult:
    """Compare analytic residual gradients against central finite differences
    over randomized instances; `_perturb` deliberately corrupts the analytic
    side so tests can confirm the detector trips."""
    rng = np.random.default_rng(seed)
    worst, worst_trial = 0.0, -1
    for trial in range(trials):
        n_cls = int(rng.choice([3, 10]))
        d = int(rng.choice([8, 32]))
        n_views = int(rng.choice([4, 8]))
        views = l2_normalize_rows(rng.standard_normal((n_views, d)))
        base_t = l2_normalize_rows(rng.standard_normal((n_cls, d)))
        base_v = l2_normalize_rows(rng.standard_normal((n_cls, d)))
        has = rng.random(n_cls) < 0.7
        t_hat = 0.05 * rng.standard_normal((n_cls, d))
        v_hat = 0.05 * rng.standard_normal((n_cls, d))
        alpha = float(rng.uniform(0.0, 8.0))
        beta = float(rng.uniform(1.0, 6.0))
        temperature = float(rng.uniform(0.2, 1.0))
        lam = float(rng.choice([0.0, 0.5, 2.0]))
        rho = float(rng.uniform(0.25, 1.0))

        tproto, vproto = apply_residuals(base_t, base_v, t_hat, v_hat)
        selected = select_views(
            views, tproto, vproto, has, alpha, beta, temperature, rho
        )
        _, g_t, g_v = grad_total(
            views, base_t, base_v, has, t_hat, v_hat, selected,
            alpha, beta, temperature, lam,
        )
        fd_t, fd_v = finite_diff_grads(
            views, base_t, base_v, has, t_hat, v_hat, selected,
            alpha, beta, temperature, lam, h=h,
        )
        scale = max(np.abs(fd_t).max(), np.abs(fd_v).max(), 1e-12)
        err = max(
            np.abs(g_t + _perturb - fd_t).max(),
            np.abs(g_v + _perturb - fd_v).max(),
        ) / scale
        if err > worst:
            worst, worst_trial = err, trial
    return GradcheckResult(
        trials=trials,
        tolerance=tolerance,
        max_rel_error=worst,
        worst_trial=worst_trial,
        passed=worst < tolerance,
    )


# --- plotting (static SVG artifacts) ----------------------------------------


def _svg_polyline(points: list[tuple[float, float]], color: str) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
        f'points="{coords}"/>'
    )


def _line_chart(
    series: list[tuple[str, list[float], str]], title: str, y_label: str
) -> str:
    width, height, pad = 640, 360, 48
    all_vals = [v for _, vals, _ in series for v in vals]
    n = max(len(vals) for _, vals, _ in series)
    lo = min(all_vals + [0.0])
    hi = max(all_vals + [1e-12])
    span = (hi - lo) or 1.0

    def sx(i: int) -> float:
        return pad + (width - 2 * pad) * (i / max(n - 1, 1))

    def sy(v: float) -> float:
        return height - pad - (height - 2 * pad) * ((v - lo) / span)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
        f'<text x="12" y="{height/2:.0f}" font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 12 {height/2:.0f})" text-anchor="middle">{y_label}</text>',
        f'<text x="{pad}" y="{height-pad+16}" font-family="sans-serif" font-size="10">'
        f"{lo:.3g}</text>",
        f'<text x="{pad-6}" y="{pad}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{hi:.3g}</text>',
    ]
    for idx, (label, vals, color) in enumerate(series):
        pts = [(sx(i), sy(v)) for i, v in enumerate(vals)]
        parts.append(_svg_polyline(pts, color))
        parts.append(
            f'<text x="{width-pad}" y="{pad + 14*idx}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_report(report_text: str, out_prefix: str) -> list[str]:
    """Emit accuracy-vs-window and loss-trace SVGs for a run report."""
    data = parse_report(report_text)
    written = []
    acc = data.get("windowed_accuracy") or []
    if acc:
        path = f"{out_prefix}_accuracy.svg"
        with open(path, "w") as f:
            f.write(_line_chart(
                [("windowed accuracy", acc, "#1f77b4")],
                "Accuracy per window", "top-1 accuracy",
            ))
        written.append(path)
    aug = data.get("loss_aug_windows") or []
    align = data.get("loss_align_windows") or []
    if aug:
        path = f"{out_prefix}_loss.svg"
        series = [("self-entropy", aug, "#d62728")]
        if align:
            series.append(("alignment", align, "#2ca02c"))
        with open(path, "w") as f:
            f.write(_line_chart(series, "Loss per window", "mean loss"))
        written.append(path)
    return written


# --- file inspection ---------------------------------------------------------


def inspect_file(path: str) -> str:
    """Header fields and digest of any interchange/checkpoint file."""
    with open(path, "rb") as f:
        magic = f.read(4)
    digest = file_digest(path)
    lines = [f"path = {json.dumps(path)}", f"digest = {json.dumps(digest)}"]
    if magic == b"DPEC":
        cts = read_classtext(path)
        prompts = [emb.shape[0] for emb in cts.embeddings]
        lines += [
            'format = "classtext"',
            f"classes = {cts.n_classes}",
            f"dim = {cts.dim}",
            f"prompts_min = {min(prompts)}",
            f"prompts_max = {max(prompts)}",
        ]
    elif magic == b"DPES":
        from .stream_io import StreamReader

        with StreamReader(path) as reader:
            lines += [
                'format = "stream"',
                f"samples = {reader.n_samples}",
                f"dim = {reader.dim}",
                f"labels = {json.dumps(reader.has_labels)}",
            ]
    elif magic == b"DPEK":
        from .proto_store import load_checkpoint

        textual, visual, _ = load_checkpoint(path)
        lines += [
            'format = "checkpoint"',
            f"classes = {visual.n_classes}",
            f"dim = {visual.dim}",
            f"confident_updates = {textual.k}",
            f"queue_fill = {sum(visual.queue_lengths())}",
            f"update_rule = {json.dumps(textual.rule)}",
        ]
    else:
        from .errors import BadMagic

        raise BadMagic(f"unrecognized magic {magic!r}")
    return "\n".join(lines) + "\n"
