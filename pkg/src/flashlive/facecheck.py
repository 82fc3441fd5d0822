"""Face-shape verification on anchor-normalized reflection images.

Pipeline: split the face region into 20 vertical bands and reduce each to
a per-row profile, smooth every profile with a degree-20 least-squares
polynomial, resize the stack to a 20x20x3 tensor by bicubic interpolation,
and classify genuine-vs-attack with a small convolutional network.  Real
faces produce a bright central band from the nose ridge against darker
cheeks; flat glossy surfaces do not.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

from . import nn

POLY_DEGREE = 20
N_REGIONS = 20
NET_INPUT = (20, 20, 3)
REGION_MARGIN = 0.05  # landmark bounding box grown by 5% per side

#: Anchor-normalized ratios hover around 1; the net sees them clipped (a bad
#: anchor can produce huge ratios) and centered at 0 so the hot base learning
#: rate stays stable.
INPUT_CENTER = 1.0
INPUT_CLIP = 3.0


def _net_preprocess(batch: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(batch, dtype=float), 0.0, INPUT_CLIP) - INPUT_CENTER

WEIGHTS_MAGIC = b"FFNN"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class AbstractImage:
    """20 smoothed per-row region profiles, one column per region."""

    profiles: np.ndarray  # (rows, 20, 3)

    def __post_init__(self) -> None:
        if self.profiles.ndim != 3 or self.profiles.shape[1] != N_REGIONS or self.profiles.shape[2] != 3:
            raise ValueError("profiles must be (rows, 20, 3)")
        if not np.all(np.isfinite(self.profiles)):
            raise ValueError("profiles must be finite")


def face_region(landmarks: np.ndarray, shape: tuple[int, int]) -> tuple[int, int, int, int]:
    """Landmark bounding box grown by the margin, clipped to the frame."""
    h, w = shape
    x0, y0 = landmarks.min(axis=0)
    x1, y1 = landmarks.max(axis=0)
    mx = (x1 - x0) * REGION_MARGIN
    my = (y1 - y0) * REGION_MARGIN
    c0 = int(np.clip(np.floor(x0 - mx), 0, w - 1))
    c1 = int(np.clip(np.ceil(x1 + mx), c0 + 1, w))
    r0 = int(np.clip(np.floor(y0 - my), 0, h - 1))
    r1 = int(np.clip(np.ceil(y1 + my), r0 + 1, h))
    return r0, r1, c0, c1


def abstract(midterm: np.ndarray, landmarks: np.ndarray) -> AbstractImage:
    """Region abstraction of an anchor-normalized grid.

    The face columns split into 20 equal-width vertical regions; each
    region is averaged across its width into a per-row vector which is then
    replaced by its least-squares degree-20 polynomial evaluation.
    """
    if midterm.ndim != 3 or midterm.shape[2] != 3:
        raise ValueError("midterm grid must be (height, width, 3)")
    r0, r1, c0, c1 = face_region(landmarks, midterm.shape[:2])
    face = midterm[r0:r1, c0:c1, :]
    rows, cols = face.shape[:2]
    if cols < N_REGIONS:
        raise ValueError("face too small")
    if rows < POLY_DEGREE + 1:
        raise ValueError("face too small")

    ys = np.linspace(-1.0, 1.0, rows)
    profiles = np.empty((rows, N_REGIONS, 3))
    bounds = np.linspace(0, cols, N_REGIONS + 1).astype(int)
    for r in range(N_REGIONS):
        band = face[:, bounds[r] : bounds[r + 1], :]
        finite = np.isfinite(band)
        counts = finite.sum(axis=1)
        vec = np.where(finite, band, 0.0).sum(axis=1) / np.maximum(counts, 1)  # (rows, 3)
        present = counts > 0
        col_mean = np.where(
            present.any(axis=0),
            vec.sum(axis=0) / np.maximum(present.sum(axis=0), 1),
            1.0,
        )
        vec = np.where(present, vec, col_mean[None, :])
        for c in range(3):
            coef = chebyshev.chebfit(ys, vec[:, c], POLY_DEGREE)
            profiles[:, r, c] = chebyshev.chebval(ys, coef)
    return AbstractImage(profiles=profiles)


def _bicubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    w = np.zeros_like(at)
    inner = at <= 1
    outer = (at > 1) & (at < 2)
    w[inner] = (a + 2) * at[inner] ** 3 - (a + 3) * at[inner] ** 2 + 1
    w[outer] = a * at[outer] ** 3 - 5 * a * at[outer] ** 2 + 8 * a * at[outer] - 4 * a
    return w


def _resample_axis(values: np.ndarray, out_len: int) -> np.ndarray:
    """Bicubic resample along axis 0 with clamped edges (a = -0.5)."""
    src = values.shape[0]
    coords = (np.arange(out_len) + 0.5) * src / out_len - 0.5
    base = np.floor(coords).astype(int)
    frac = coords - base
    out = np.zeros((out_len,) + values.shape[1:])
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, src - 1)
        w = _bicubic_kernel(frac - k)
        out += w.reshape((-1,) + (1,) * (values.ndim - 1)) * values[idx]
    return out


def resize_bicubic(image: np.ndarray, out_hw: tuple[int, int] = NET_INPUT[:2]) -> np.ndarray:
    """Standard bicubic resample (a = -0.5) to the network input size."""
    if image.ndim != 3:
        raise ValueError("image must be (height, width, channels)")
    if image.shape[0] < 4 or image.shape[1] < 4:
        raise ValueError("source region too small for bicubic resampling")
    out = _resample_axis(image, out_hw[0])
    out = _resample_axis(np.swapaxes(out, 0, 1), out_hw[1])
    return np.swapaxes(out, 0, 1)


def abstract_to_input(img: AbstractImage) -> np.ndarray:
    """Resize an abstract image to the fixed 20x20x3 network input."""
    out = resize_bicubic(img.profiles, NET_INPUT[:2])
    if out.shape != NET_INPUT:
        raise ValueError("unexpected network input shape")
    return out


def build_net(seed: int = 0) -> nn.Network:
    """The verification network; layer stack and shapes follow the fixed
    20x20x3 -> 16x16x16 -> 16x16x16 -> 8x8x16 -> 8x8x32 -> 512 -> 2 chain,
    with a rectifier after each convolution and a softmax head."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    layers: list[nn.Layer] = [
        nn.Conv2D(3, 16, kernel=5, padding=0, rng=rng),
        nn.ReLU(),
        nn.Conv2D(16, 16, kernel=3, padding=1, rng=rng),
        nn.ReLU(),
        nn.MaxPool2x2(),
        nn.Conv2D(16, 32, kernel=3, padding=1, rng=rng),
        nn.ReLU(),
        nn.MaxPool2x2(),
        nn.Flatten(),
        nn.Linear(512, 2, rng=rng),
    ]
    return nn.Network(layers)


def expected_shape_chain() -> list[tuple[int, ...]]:
    """Layer-table chain; rectifiers are shape-preserving pass-throughs."""
    return [
        (20, 20, 3),
        (16, 16, 16),  # conv 5x5, stride 1, pad 0
        (16, 16, 16),  # relu
        (16, 16, 16),  # conv 3x3, stride 1, pad 1
        (16, 16, 16),  # relu
        (8, 8, 16),  # pool 2x2
        (8, 8, 32),  # conv 3x3, stride 1, pad 1
        (8, 8, 32),  # relu
        (4, 4, 32),  # pool 2x2
        (512,),  # flatten: 1x512
        (2,),  # inner product head
    ]


def forward(net: nn.Network, batch: np.ndarray) -> np.ndarray:
    """Class scores (genuine, attack) for a batch of 20x20x3 inputs."""
    arr = np.asarray(batch, dtype=float)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.shape[1:] != NET_INPUT:
        raise ValueError(f"input shape {arr.shape[1:]} != {NET_INPUT}")
    out = net.forward(_net_preprocess(arr))
    return out[0] if single else out


def genuine_probability(net: nn.Network, batch: np.ndarray) -> np.ndarray:
    logits = forward(net, np.asarray(batch, dtype=float))
    if logits.ndim == 1:
        logits = logits[None]
    return nn.softmax(logits)[:, 0]


@dataclass
class FaceTrainResult:
    report: nn.TrainReport
    holdout_accuracy: float | None = None
    attack_accept_rate: float | None = None


def train_classifier(
    net: nn.Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    *,
    config: nn.SGDConfig | None = None,
    seed: int = 0,
    holdout: tuple[np.ndarray, np.ndarray] | None = None,
) -> FaceTrainResult:
    """Train genuine(0)-vs-attack(1) and optionally score a holdout split."""
    cfg = config or nn.SGDConfig()
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    report = nn.train_sgd(net, _net_preprocess(inputs), np.asarray(labels), cfg, rng)
    result = FaceTrainResult(report=report)
    if holdout is not None:
        hx, hy = holdout
        preds = nn.predict(net, _net_preprocess(hx))
        result.holdout_accuracy = float((preds == hy).mean())
        attacks = hy == 1
        if attacks.any():
            result.attack_accept_rate = float((preds[attacks] == 0).mean())
    return result


_LAYER_TAGS = {nn.Conv2D: 1, nn.ReLU: 2, nn.MaxPool2x2: 3, nn.Flatten: 4, nn.Linear: 5}
_WEIGHTS_HEADER = struct.Struct("<4sHB")


def encode_weights(net: nn.Network) -> bytes:
    """Serialize: magic, version, layer count, then per layer a type tag and
    each parameter tensor as (ndims, dims..., float64 data)."""
    out = [_WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(net.layers))]
    for layer in net.layers:
        out.append(struct.pack("<B", _LAYER_TAGS[type(layer)]))
        out.append(struct.pack("<B", len(layer.params)))
        for p in layer.params:
            out.append(struct.pack("<B", p.ndim))
            out.append(struct.pack(f"<{p.ndim}H", *p.shape))
            out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(out)


def decode_weights(data: bytes, net: nn.Network) -> nn.Network:
    """Load serialized parameters into a structurally matching network."""
    if len(data) < _WEIGHTS_HEADER.size:
        raise ValueError("weights blob shorter than header")
    magic, version, n_layers = _WEIGHTS_HEADER.unpack_from(data, 0)
    if magic != WEIGHTS_MAGIC:
        raise ValueError("bad weights magic")
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {version}")
    if n_layers != len(net.layers):
        raise ValueError("layer count mismatch")
    offset = _WEIGHTS_HEADER.size
    for layer in net.layers:
        (tag,) = struct.unpack_from("<B", data, offset)
        offset += 1
        if tag != _LAYER_TAGS[type(layer)]:
            raise ValueError("layer type mismatch")
        (n_params,) = struct.unpack_from("<B", data, offset)
        offset += 1
        if n_params != len(layer.params):
            raise ValueError("parameter count mismatch")
        for p in layer.params:
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{ndim}H", data, offset)
            offset += 2 * ndim
            if dims != p.shape:
                raise ValueError("parameter shape mismatch")
            count = int(np.prod(dims))
            p[...] = np.frombuffer(data[offset : offset + 8 * count], dtype="<f8").reshape(dims)
            offset += 8 * count
    if offset != len(data):
        raise ValueError("trailing bytes after weights")
    return net


def save_weights(net: nn.Network, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(net))


def load_weights(path: str, seed: int = 0) -> nn.Network:
    net = build_net(seed)
    with open(path, "rb") as fh:
        decode_weights(fh.read(), net)
    return net
