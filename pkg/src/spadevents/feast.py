"""Event-driven feature learning with adaptive selection thresholds.

Competing neurons hold unit-norm weight vectors over the flattened
(polarity, row, col) binary ROI around each event.  The neuron with the
smallest cosine distance to the ROI wins, provided that distance is below
its own selection threshold; the winner mixes its weights toward the ROI
and contracts its threshold, while a network-wide miss widens every
threshold.  The push-pull between contraction and widening balances win
rates across neurons, so the trained set covers the most common local
spatio-temporal patterns in the stream.

After training, each neuron's largest weights are set to 1 (the same count
per neuron, keeping AND/popcount matching unbiased) and the binary set runs
as an event-based convolutional layer: every input event is re-emitted with
the best-matching neuron index as its polarity.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import EventStream, StreamKind, TimeSurface, make_events
from .dataio import BadMagicError, TruncatedError


@dataclass
class FeastParams:
    n_neurons: int
    polarity_count: int
    roi_side: int = 5
    window_us: int = 2000
    mix_rate: float = 0.001      # weight pull toward the winning ROI
    shrink_step: float = 0.002   # threshold contraction per win
    grow_step: float = 0.004     # threshold widening per network miss
    seed: int = 0

    def __post_init__(self):
        if self.n_neurons < 1 or self.polarity_count < 1:
            raise ValueError("n_neurons and polarity_count must be positive")
        if self.roi_side % 2 != 1 or self.roi_side < 1:
            raise ValueError(f"roi_side must be odd, got {self.roi_side}")
        if not 0.0 < self.mix_rate < 1.0:
            raise ValueError(f"mix_rate must lie strictly in (0, 1), got {self.mix_rate}")
        if self.shrink_step <= 0 or self.grow_step <= 0:
            raise ValueError("shrink_step and grow_step must be positive")
        if self.window_us <= 0:
            raise ValueError("window_us must be positive")

    @property
    def weight_length(self) -> int:
        return self.polarity_count * self.roi_side * self.roi_side


@dataclass
class ContinuousFeatureSet:
    """Unit-norm continuous weights plus per-neuron selection thresholds."""

    weights: np.ndarray          # (N, P*D*D), rows unit Euclidean norm
    thresholds: np.ndarray       # (N,), cosine-distance space [0, 2]
    polarity_count: int
    roi_side: int
    win_counts: np.ndarray | None = None  # training diagnostic

    @property
    def n_neurons(self) -> int:
        return self.weights.shape[0]

    def validate(self, atol: float = 1e-9) -> None:
        norms = np.linalg.norm(self.weights, axis=1)
        if not np.allclose(norms, 1.0, atol=atol):
            raise ValueError(f"weight norms deviate from 1 by up to {np.abs(norms - 1).max():.3g}")
        if self.thresholds.min() < 0.0 or self.thresholds.max() > 2.0:
            raise ValueError("thresholds left the [0, 2] cosine-distance range")


@dataclass
class BinaryFeatureSet:
    """Binarized features: each neuron has exactly n_active bits set."""

    bits: np.ndarray             # (N, P*D*D) uint8 in {0, 1}
    n_active: int
    polarity_count: int
    roi_side: int

    def __post_init__(self):
        pops = self.bits.sum(axis=1)
        if not np.all(pops == self.n_active):
            raise ValueError(f"every neuron must have exactly {self.n_active} active bits, "
                             f"got counts {np.unique(pops)}")

    @property
    def n_neurons(self) -> int:
        return self.bits.shape[0]


def initial_features(params: FeastParams) -> ContinuousFeatureSet:
    """Seeded uniform-random unit weight vectors, thresholds at 1."""
    rng = np.random.default_rng(params.seed)
    weights = rng.random((params.n_neurons, params.weight_length))
    weights /= np.linalg.norm(weights, axis=1, keepdims=True)
    return ContinuousFeatureSet(weights=weights,
                                thresholds=np.ones(params.n_neurons),
                                polarity_count=params.polarity_count,
                                roi_side=params.roi_side,
                                win_counts=np.zeros(params.n_neurons, dtype=np.int64))


def _as_stream_list(stream) -> list[EventStream]:
    if isinstance(stream, EventStream):
        return [stream]
    return list(stream)


def feast_train(stream: EventStream | Iterable[EventStream], params: FeastParams,
                roi_includes_self: bool = False,
                check_invariants: bool = False,
                features: ContinuousFeatureSet | None = None) -> ContinuousFeatureSet:
    """Single ordered pass over the stream(s); returns the adapted features.

    Each event's binary ROI is read from a running time surface (by default
    before the event itself is written, so the event predicts its context),
    skipped if all-zero, L2-normalized and matched against all neurons by
    cosine distance.  The surface resets between streams; weights and
    thresholds persist.  Deterministic for a fixed seed and stream order.

    Passing a feature set continues training from it (on a copy) instead of
    the seeded random initialization.
    """
    streams = _as_stream_list(stream)
    if features is None:
        features = initial_features(params)
    else:
        features = ContinuousFeatureSet(
            weights=features.weights.astype(np.float64).copy(),
            thresholds=features.thresholds.astype(np.float64).copy(),
            polarity_count=features.polarity_count, roi_side=features.roi_side,
            win_counts=np.zeros(features.weights.shape[0], dtype=np.int64))
    weights = features.weights
    thresholds = features.thresholds
    wins = features.win_counts
    mix = params.mix_rate
    shrink = params.shrink_step
    grow = params.grow_step
    side = params.roi_side
    window = params.window_us
    total_events = 0

    for s in streams:
        if s.polarity_count != params.polarity_count:
            raise ValueError(f"stream has {s.polarity_count} polarities, "
                             f"params expect {params.polarity_count}")
        surface = TimeSurface(s.grid_width, s.grid_height, params.polarity_count,
                              roi_pad=side // 2)
        ev = s.events
        total_events += len(ev)
        xs = ev["x"].astype(np.int64)
        ys = ev["y"].astype(np.int64)
        ps = ev["p"].astype(np.int64)
        ts = ev["t"]
        for i in range(len(ev)):
            x, y, p, t = int(xs[i]), int(ys[i]), int(ps[i]), int(ts[i])
            if roi_includes_self:
                surface.update(x, y, p, t)
            roi = surface.binary_roi(x, y, side, t, window)
            if not roi_includes_self:
                surface.update(x, y, p, t)
            flat = roi.reshape(-1)
            active = int(flat.sum())
            if active == 0:
                continue
            roi_n = flat.astype(np.float64) / np.sqrt(active)
            dist = 1.0 - weights @ roi_n
            eligible = dist < thresholds
            if eligible.any():
                winner = int(np.argmin(np.where(eligible, dist, np.inf)))
                wins[winner] += 1
                mixed = (1.0 - mix) * weights[winner] + mix * roi_n
                weights[winner] = mixed / np.linalg.norm(mixed)
                thresholds[winner] = max(thresholds[winner] - shrink, 0.0)
            else:
                np.minimum(thresholds + grow, 2.0, out=thresholds)
            if check_invariants:
                norms = np.linalg.norm(weights, axis=1)
                assert np.abs(norms - 1.0).max() <= 1e-9, "weight norm drifted"
                assert thresholds.min() >= 0.0 and thresholds.max() <= 2.0, "threshold out of range"

    if total_events == 0:
        warnings.warn("feast_train saw no events; returning the initial random features",
                      stacklevel=2)
    return features


def binarize(features: ContinuousFeatureSet, n_active: int) -> BinaryFeatureSet:
    """Set the n_active largest-magnitude weights of each neuron to 1.

    Ties at the cut are broken toward the lowest flat index, so all-equal
    weights binarize to the first n_active positions.
    """
    n, length = features.weights.shape
    if not 1 <= n_active <= length:
        raise ValueError(f"n_active must lie in 1..{length}, got {n_active}")
    order = np.argsort(-np.abs(features.weights), axis=1, kind="stable")
    bits = np.zeros((n, length), dtype=np.uint8)
    rows = np.repeat(np.arange(n), n_active)
    bits[rows, order[:, :n_active].reshape(-1)] = 1
    return BinaryFeatureSet(bits=bits, n_active=n_active,
                            polarity_count=features.polarity_count,
                            roi_side=features.roi_side)


def random_binary_features(params: FeastParams, n_active: int) -> BinaryFeatureSet:
    """Untrained baseline: binarize the seeded random initial weights."""
    return binarize(initial_features(params), n_active)


def feast_infer(stream: EventStream, features: BinaryFeatureSet,
                window_us: int = 2000, roi_includes_self: bool = True) -> EventStream:
    """Run the binary features as an event-based convolutional layer.

    Every input event updates the running input surface (by default before
    the ROI read, so the ROI is never empty), is scored against each neuron
    by popcount(bits AND roi), and is re-emitted at the same location and
    time with the argmax neuron as polarity (ties to the lowest index).
    Emits exactly one feature event per input event.
    """
    if stream.polarity_count != features.polarity_count:
        raise ValueError(f"stream has {stream.polarity_count} polarities, "
                         f"features expect {features.polarity_count}")
    side = features.roi_side
    bits = features.bits.astype(np.int64)
    surface = TimeSurface(stream.grid_width, stream.grid_height, stream.polarity_count,
                          roi_pad=side // 2)
    ev = stream.events
    out_p = np.empty(len(ev), dtype=np.uint8)
    xs = ev["x"].astype(np.int64)
    ys = ev["y"].astype(np.int64)
    ps = ev["p"].astype(np.int64)
    ts = ev["t"]
    for i in range(len(ev)):
        x, y, p, t = int(xs[i]), int(ys[i]), int(ps[i]), int(ts[i])
        if roi_includes_self:
            surface.update(x, y, p, t)
        roi = surface.binary_roi(x, y, side, t, window_us)
        if not roi_includes_self:
            surface.update(x, y, p, t)
        scores = bits @ roi.reshape(-1).astype(np.int64)
        out_p[i] = np.argmax(scores)
    events = make_events(ev["t"].copy(), ev["y"].copy(), ev["x"].copy(), out_p)
    return EventStream(kind=StreamKind.FEATURE, grid_width=stream.grid_width,
                       grid_height=stream.grid_height, events=events,
                       polarity_count=features.n_neurons)


# ---------------------------------------------------------------------------
# Feature set files
#
# "SPDFEA01" header (little-endian): magic (8 bytes), u16 n_neurons,
# u16 polarity_count, u16 roi_side, u16 n_active.  n_active = 0 marks a
# continuous set whose payload is n_neurons * P * D^2 float32 weights;
# n_active > 0 marks a binary set stored as n_neurons rows of
# ceil(P * D^2 / 8) bytes, LSB-first.  Selection thresholds are a training
# artifact and are not persisted.
# ---------------------------------------------------------------------------

FEATURE_MAGIC = b"SPDFEA01"
_FEATURE_HEADER = struct.Struct("<8sHHHH")


def save_features(features: ContinuousFeatureSet | BinaryFeatureSet, path) -> None:
    if isinstance(features, ContinuousFeatureSet):
        n_active = 0
        payload = features.weights.astype("<f4").tobytes()
    else:
        n_active = features.n_active
        payload = np.packbits(features.bits, axis=1, bitorder="little").tobytes()
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, features.n_neurons,
                                  features.polarity_count, features.roi_side, n_active)
    Path(path).write_bytes(header + payload)


def load_features(path) -> ContinuousFeatureSet | BinaryFeatureSet:
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the SPDFEA01 header")
    magic, n, polarity_count, roi_side, n_active = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    length = polarity_count * roi_side * roi_side
    body = raw[_FEATURE_HEADER.size:]
    if n_active == 0:
        expected = n * length * 4
        if len(body) < expected:
            raise TruncatedError(f"{path}: {len(body)} payload bytes, need {expected}")
        weights = np.frombuffer(body[:expected], dtype="<f4").reshape(n, length).astype(np.float64)
        return ContinuousFeatureSet(weights=weights, thresholds=np.ones(n),
                                    polarity_count=polarity_count, roi_side=roi_side)
    row_bytes = (length + 7) // 8
    expected = n * row_bytes
    if len(body) < expected:
        raise TruncatedError(f"{path}: {len(body)} payload bytes, need {expected}")
    packed = np.frombuffer(body[:expected], dtype=np.uint8).reshape(n, row_bytes)
    bits = np.unpackbits(packed, axis=1, bitorder="little")[:, :length]
    return BinaryFeatureSet(bits=bits, n_active=n_active,
                            polarity_count=polarity_count, roi_side=roi_side)
