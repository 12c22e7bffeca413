"""Image-quality metrics, report aggregation and the timing/memory harness."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .errors import UsageError
from .tensor_ops import Tensor, memory, no_grad

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PSNR_CAP = 100.0


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = correlate1d(img, g, axis=-1, mode="constant")
    out = correlate1d(out, g, axis=-2, mode="constant")
    return out[..., half:img.shape[-2] - half, half:img.shape[-1] - half]


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise UsageError(f"ssim: shapes differ {a.shape} vs {b.shape}")
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise UsageError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, valid region)."""
    return float(ssim_map(a, b, data_range).mean())


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for [0, 1] images, capped at 100 dB."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise UsageError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def aggregate(values: Iterable[float]) -> Tuple[float, float]:
    """(mean, population standard deviation)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise UsageError("aggregate needs at least one value")
    return float(arr.mean()), float(arr.std())


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class SequenceRecord:
    id: str
    frames: int
    ssim_mean: float
    ssim_std: float
    psnr_mean: float
    psnr_std: float
    seconds: Optional[float] = None
    peak_bytes: Optional[int] = None


@dataclass
class EvalReport:
    records: List[SequenceRecord] = field(default_factory=list)
    label: str = ""
    per_frame_ssim: List[float] = field(default_factory=list)
    per_frame_psnr: List[float] = field(default_factory=list)

    @property
    def ssim(self) -> Tuple[float, float]:
        return aggregate(r.ssim_mean for r in self.records)

    @property
    def psnr(self) -> Tuple[float, float]:
        return aggregate(r.psnr_mean for r in self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=False) + "\n" for r in self.records)

    def to_table(self) -> str:
        header = ("id", "frames", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std", "seconds", "peak_bytes")
        rows = [header]
        for r in self.records:
            rows.append((
                r.id,
                str(r.frames),
                f"{r.ssim_mean:.6f}",
                f"{r.ssim_std:.6f}",
                f"{r.psnr_mean:.4f}",
                f"{r.psnr_std:.4f}",
                "-" if r.seconds is None else f"{r.seconds:.4f}",
                "-" if r.peak_bytes is None else str(r.peak_bytes),
            ))
        sm, ss = self.ssim
        pm, ps = self.psnr
        rows.append(("ALL", str(sum(r.frames for r in self.records)), f"{sm:.6f}", f"{ss:.6f}", f"{pm:.4f}", f"{ps:.4f}", "-", "-"))
        return format_table(rows, title=self.label)


def format_table(rows: Sequence[Sequence[str]], title: str = "") -> str:
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(rows[0]))]
    lines = [title] if title else []
    for k, row in enumerate(rows):
        cells = [str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def sequence_record(seq_id: str, group_scores: Sequence[Sequence[Tuple[float, float]]]) -> SequenceRecord:
    """Fold per-group lists of (ssim, psnr) at each target position.

    Each group is first averaged over its interpolated positions; mean and
    STD are then taken across groups.
    """
    ssims = [float(np.mean([s for s, _ in g])) for g in group_scores]
    psnrs = [float(np.mean([p for _, p in g])) for g in group_scores]
    sm, ss = aggregate(ssims)
    pm, ps = aggregate(psnrs)
    frames = sum(len(g) for g in group_scores)
    return SequenceRecord(seq_id, frames, sm, ss, pm, ps)


# ---------------------------------------------------------------------------
# timing / memory
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    n_frames: int
    seconds: float
    peak_bytes: int
    timings: List[float]


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def benchmark(run, pairs: Sequence, schedules: Sequence[Sequence[float]], repeats: int = 3, warmup: int = 1) -> List[BenchRow]:
    """Median wall-clock seconds per pair and peak tracked bytes for each schedule.

    ``run(I0, I1, sched)`` produces the frames. Warm-up runs are not timed.
    Peak bytes are measured above the live allocation at the start of a run.
    """
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    if not pairs:
        raise UsageError("benchmark needs at least one frame pair")
    rows = []
    with _single_thread(), no_grad():
        for sched in schedules:
            for _ in range(warmup):
                run(*pairs[0], sched)
            timings = []
            peak = 0
            for _ in range(repeats):
                elapsed = 0.0
                for I0, I1 in pairs:
                    base = memory.current
                    memory.reset_peak()
                    start = time.perf_counter()
                    out = run(I0, I1, sched)
                    elapsed += time.perf_counter() - start
                    peak = max(peak, memory.peak - base)
                    del out
                timings.append(elapsed / len(pairs))
            rows.append(BenchRow(len(sched), float(np.median(timings)), int(peak), timings))
    return rows


def bench_table(rows: Sequence[BenchRow], res: Tuple[int, int]) -> str:
    table = [("frames", "seconds", "peak_bytes", "peak_MB", "time_ratio", "mem_ratio")]
    base = rows[0]
    for row in rows:
        table.append((
            str(row.n_frames),
            f"{row.seconds:.4f}",
            str(row.peak_bytes),
            f"{row.peak_bytes / 2 ** 20:.2f}",
            f"{row.seconds / base.seconds:.3f}",
            f"{row.peak_bytes / max(base.peak_bytes, 1):.3f}",
        ))
    return format_table(table, title=f"benchmark at {res[0]}x{res[1]}")


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

def evaluate(predict, sequences: Sequence[Tuple[str, np.ndarray]], n_interp: int, label: str = "") -> EvalReport:
    """Score ``predict(I0, I1, times) -> frames`` on every group of every sequence.

    Predictions are quantised to 8 bits before scoring, like written images.
    """
    from .synth_dsa import group_times, make_groups

    times = group_times(n_interp)
    report = EvalReport(label=label)
    for seq_id, seq in sequences:
        scores = []
        for g in make_groups(seq, n_interp):
            frames = predict(seq[g[0]], seq[g[-1]], times)
            pos = []
            for k, pred in enumerate(frames):
                pred = quantize(pred)
                target = seq[g[k + 1]]
                s, p = ssim(pred, target), psnr(pred, target)
                report.per_frame_ssim.append(s)
                report.per_frame_psnr.append(p)
                pos.append((s, p))
            scores.append(pos)
        report.records.append(sequence_record(seq_id, scores))
    return report


def quantize(img) -> np.ndarray:
    """Round-trip through 8-bit storage."""
    arr = np.asarray(img.data if isinstance(img, Tensor) else img, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255) / 255.0


def frame_average(I0, I1, times):
    """Baseline: time-weighted linear blend of the two inputs."""
    a, b = np.asarray(I0, np.float64), np.asarray(I1, np.float64)
    return [(1.0 - t) * a + t * b for t in times]
