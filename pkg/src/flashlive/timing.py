"""Timing verification: ROI distillation, part-wise regression, decision.

For every lighting challenge the verifier locates the camera columns that
were being exposed while the screen painted the belt, divides that window
of the lighting response by the preceding background response pixel by
pixel, reduces the window to per-part row profiles, and asks four linear
models (one per vertical quarter of the frame) where the belt center was.
The per-challenge deviations between estimate and truth accumulate into
``mean_d`` and ``std_d``; a session is timing-genuine iff
``|mean_d| * std_d < exp(Th)``.

Model parameterization: the 64-bin profile rides on a unit baseline
(ratio 1 means no signal), so a model applies its weights to the profile's
deviation from 1 plus a small penalized bias feature.  An empty or delayed
window therefore predicts near zero rather than the training mean, which
is exactly what makes forged responses land far from the true center.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

N_PARTS = 4
N_BINS = 64
RIDGE_LAMBDA = 1.0
#: Scale of the penalized bias feature (LIBLINEAR-style regularized bias).
BIAS_FEATURE = 0.01
#: Background pixels below this are treated as dark and excluded.
ZERO_FLOOR = 0.05
#: Columns whose expected painted fraction is below this are excluded: early
#: window columns only ever saw a sliver of the belt, so their profile shape
#: is slice-dependent and their equalization amplifies noise.
MIN_COLUMN_WEIGHT = 0.7
#: Equalization divisor floor; kept equal to the exclusion threshold so every
#: used column is boosted consistently.
COLUMN_WEIGHT_FLOOR = 0.7


@dataclass(frozen=True)
class DistilledRoi:
    """Ratio window of one lighting challenge within its captured frame.

    ``values`` holds the per-pixel per-channel lighting/background ratio
    with NaN where pixels were excluded (saturated, dark background, or a
    reference cell the previous picture had not yet repainted).
    ``channel_mask`` marks the informative channels of the color pair;
    ``column_weight`` is the expected painted fraction of the belt at each
    window column, used to equalize early against late columns.
    """

    columns: tuple[int, int]
    values: np.ndarray  # (rows, window, 3), NaN-masked
    part_spans: tuple[float, float, float, float]
    channel_mask: np.ndarray  # (3,) bool
    column_weight: np.ndarray  # (window,)
    frame_width: int

    def __post_init__(self) -> None:
        if self.columns[1] <= self.columns[0]:
            raise ValueError("ROI column span is empty")
        if self.values.shape[1] != self.columns[1] - self.columns[0]:
            raise ValueError("values width disagrees with column span")


def part_bounds(frame_width: int, part: int) -> tuple[int, int]:
    """Column band of one of the four equal vertical frame parts (1-based)."""
    if not 1 <= part <= N_PARTS:
        raise ValueError(f"part must be 1..{N_PARTS}")
    step = frame_width / N_PARTS
    return int(round((part - 1) * step)), int(round(part * step))


def distill(
    lighting: np.ndarray,
    background: np.ndarray,
    roi_start: float,
    roi_width: int,
    *,
    lighting_saturated: np.ndarray | None = None,
    background_saturated: np.ndarray | None = None,
    reference_exclude: np.ndarray | None = None,
    channel_mask: np.ndarray | None = None,
    column_weight: np.ndarray | None = None,
    max_excluded: float = 0.5,
) -> DistilledRoi:
    """Per-pixel lighting/background ratio over the ROI window.

    The window spans ``roi_width`` columns anchored at the scan shift
    ``roi_start`` and is clipped to the frame.  Saturated pixels in either
    frame, dark background pixels and explicitly excluded reference cells
    come back NaN; if more than half the window is excluded the ROI is
    unusable.
    """
    if lighting.shape != background.shape:
        raise ValueError("frames must be dimension-matched")
    if lighting.ndim != 3 or lighting.shape[2] != 3:
        raise ValueError("frames must be (rows, cols, 3)")
    rows, cols = lighting.shape[:2]
    c0 = int(round(roi_start))
    c1 = min(cols, c0 + int(roi_width))
    c0 = max(0, c0)
    if c1 <= c0:
        raise ValueError("ROI unusable: window outside the frame")

    light = np.asarray(lighting[:, c0:c1, :], dtype=float)
    ref = np.asarray(background[:, c0:c1, :], dtype=float)
    exclude = ~np.isfinite(light) | ~np.isfinite(ref) | (ref <= ZERO_FLOOR)
    if lighting_saturated is not None:
        exclude |= lighting_saturated[:, c0:c1, :]
    if background_saturated is not None:
        exclude |= background_saturated[:, c0:c1, :]
    if reference_exclude is not None:
        exclude |= reference_exclude[:, c0:c1, :]

    mask = channel_mask if channel_mask is not None else np.ones(3, dtype=bool)
    considered = exclude[:, :, mask]
    if considered.size == 0 or considered.mean() > max_excluded:
        raise ValueError("ROI unusable: too many excluded pixels")

    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(exclude, np.nan, light / ref)

    weight = (
        np.asarray(column_weight, dtype=float)[: c1 - c0]
        if column_weight is not None
        else np.ones(c1 - c0)
    )
    spans = tuple(
        float(max(0, min(c1, part_bounds(cols, p)[1]) - max(c0, part_bounds(cols, p)[0])))
        for p in range(1, N_PARTS + 1)
    )
    return DistilledRoi(
        columns=(c0, c1),
        values=values,
        part_spans=spans,  # type: ignore[arg-type]
        channel_mask=np.asarray(mask, dtype=bool),
        column_weight=weight,
        frame_width=cols,
    )


def featurize(roi: DistilledRoi, part: int, *, bins: int = N_BINS) -> np.ndarray:
    """Per-row signal profile of the ROI columns lying in one frame part.

    Folds the per-channel deviation magnitude ``|ratio - 1|`` over the
    informative channels, equalizes each column by its expected painted
    fraction, averages the part's columns into one per-row vector and bins
    it.  The result rides on the unit baseline: a constant-ratio window
    maps to the all-ones feature vector.
    """
    p0, p1 = part_bounds(roi.frame_width, part)
    c0, c1 = roi.columns
    lo = max(p0, c0) - c0
    hi = min(p1, c1) - c0
    if hi <= lo:
        raise ValueError("empty overlap between ROI and part")

    window = roi.values[:, lo:hi, :][:, :, roi.channel_mask]
    weight = roi.column_weight[lo:hi]
    finite = np.isfinite(window)
    counts = finite.sum(axis=2)
    chan_mean = np.where(finite, window, 0.0).sum(axis=2) / np.maximum(counts, 1)
    dev = (chan_mean - 1.0)  # signed per-pixel deviation, (rows, cols)
    usable = (weight >= MIN_COLUMN_WEIGHT) & (counts.sum(axis=0) > 0)
    if not usable.any():
        raise ValueError("empty overlap between ROI and part")
    dev = np.where(counts > 0, dev, 0.0)[:, usable] / np.maximum(
        weight[usable], COLUMN_WEIGHT_FLOOR
    )[None, :]
    valid_cols = (counts[:, usable] > 0).sum(axis=1)
    # fold to a magnitude only after averaging, so zero-mean sensor noise
    # cancels first; a color pair's informative channels deviate with one
    # sign, so the fold loses nothing
    profile = np.abs(dev.sum(axis=1) / np.maximum(valid_cols, 1))

    rows = len(profile)
    edges = np.linspace(0, rows, bins + 1)
    binned = np.empty(bins)
    for b in range(bins):
        s0, s1 = int(edges[b]), max(int(edges[b]) + 1, int(edges[b + 1]))
        binned[b] = profile[s0:s1].mean()
    return 1.0 + binned


@dataclass(frozen=True)
class RegressionModel:
    """One part's linear estimator of the belt center."""

    part: int
    weights: np.ndarray  # (bins + 1,): profile weights plus bias weight

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def bins(self) -> int:
        return len(self.weights) - 1

    def predict(self, feature: np.ndarray) -> float:
        x = np.asarray(feature, dtype=float)
        if x.shape != (self.bins,):
            raise ValueError(f"expected {self.bins} feature bins")
        return float(self.weights[:-1] @ (x - 1.0) + self.weights[-1] * BIAS_FEATURE)


@dataclass
class TrainingReport:
    per_part: dict[int, dict[str, float]] = field(default_factory=dict)

    def summary(self) -> str:
        lines = []
        for part in sorted(self.per_part):
            s = self.per_part[part]
            lines.append(
                f"model {part}: n={s['n']:.0f} mean={s['residual_mean']:.4f} "
                f"std={s['residual_std']:.4f} cond={s['condition']:.1e}"
            )
        return "\n".join(lines)


def train(
    samples: dict[int, tuple[np.ndarray, np.ndarray]],
    *,
    lam: float = RIDGE_LAMBDA,
    min_samples: int = 100,
) -> tuple[dict[int, RegressionModel], TrainingReport]:
    """Closed-form ridge regression per part.

    ``samples[part] = (X, y)`` with X the (n, bins) feature matrix.  The
    report carries each model's training residual mean-magnitude and
    standard deviation plus the normal-equation condition number.
    """
    models: dict[int, RegressionModel] = {}
    report = TrainingReport()
    for part, (x, y) in sorted(samples.items()):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(x) < min_samples:
            raise ValueError(f"part {part}: need >= {min_samples} samples, got {len(x)}")
        design = np.column_stack([x - 1.0, np.full(len(x), BIAS_FEATURE)])
        gram = design.T @ design + lam * np.eye(design.shape[1])
        w = np.linalg.solve(gram, design.T @ y)
        models[part] = RegressionModel(part=part, weights=w)
        resid = design @ w - y
        report.per_part[part] = {
            "n": float(len(x)),
            "residual_mean": float(np.abs(resid).mean()),
            "residual_std": float(resid.std(ddof=1)),
            "condition": float(np.linalg.cond(gram)),
        }
    return models, report


def gather(estimates: np.ndarray, overlap_widths: np.ndarray) -> float:
    """Overlap-weighted combination of the part estimates."""
    m = np.asarray(estimates, dtype=float)
    w = np.asarray(overlap_widths, dtype=float)
    if m.shape != w.shape:
        raise ValueError("estimates and widths must align")
    total = w.sum()
    if total <= 0:
        raise ValueError("total overlap width must be positive")
    return float((w * m).sum() / total)


@dataclass(frozen=True)
class TimingStats:
    deviations: np.ndarray
    mean_d: float
    std_d: float
    criterion: float
    threshold: float
    accept: bool


def decide(deviations: np.ndarray, th: float) -> TimingStats:
    """Accumulate deviations and apply the ``|mean_d| * std_d < exp(Th)`` rule.

    The product uses ``|mean_d|``: a signed product could go negative and
    trivially pass for systematically early estimates.
    """
    d = np.asarray(deviations, dtype=float)
    if len(d) < 2:
        raise ValueError("insufficient challenges: need >= 2 deviations")
    mean_d = float(d.mean())
    std_d = float(d.std(ddof=1))
    criterion = abs(mean_d) * std_d
    threshold = float(np.exp(th))
    return TimingStats(
        deviations=d,
        mean_d=mean_d,
        std_d=std_d,
        criterion=criterion,
        threshold=threshold,
        accept=criterion < threshold,
    )


_MODEL_HEADER = struct.Struct("<4sHBH")
MODEL_MAGIC = b"FFRM"
MODEL_VERSION = 1


def encode_model(model: RegressionModel) -> bytes:
    header = _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.part, model.bins)
    return header + np.ascontiguousarray(model.weights, dtype="<f8").tobytes()


def decode_model(data: bytes) -> RegressionModel:
    if len(data) < _MODEL_HEADER.size:
        raise ValueError("model blob shorter than header")
    magic, version, part, bins = _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise ValueError("bad model magic")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    expected = _MODEL_HEADER.size + 8 * (bins + 1)
    if len(data) != expected:
        raise ValueError("model blob length mismatch")
    weights = np.frombuffer(data[_MODEL_HEADER.size :], dtype="<f8").copy()
    return RegressionModel(part=part, weights=weights)


def save_models(models: dict[int, RegressionModel], prefix: str) -> list[str]:
    paths = []
    for part, model in sorted(models.items()):
        path = f"{prefix}.part{part}.ffrm"
        with open(path, "wb") as fh:
            fh.write(encode_model(model))
        paths.append(path)
    return paths


def load_models(prefix: str) -> dict[int, RegressionModel]:
    models = {}
    for part in range(1, N_PARTS + 1):
        with open(f"{prefix}.part{part}.ffrm", "rb") as fh:
            models[part] = decode_model(fh.read())
    return models
