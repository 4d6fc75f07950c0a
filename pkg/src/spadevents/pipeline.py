"""End-to-end evaluation pipelines over in-memory datasets.

A pipeline turns each recording into classifier samples: convert frames to
the chosen event stream (or keep raw frames), optionally pass events
through a binary feature layer, replay them into a time surface, and at
each classification instant select the active region and pool it into a
fixed-length vector.  Feature vectors are built once; randomized
recording-level splits then only retrain the linear readout, so split
randomness is the sole source of accuracy variance.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .classify import (PoolConfig, SampleSet, EvalReport, SAMPLE_EVERY_EVENTS,
                       SAMPLE_EVERY_FRAMES, event_sample_indices, frame_sample_times,
                       evaluate_samples, pool, region_from_activity)
from .core import EventStream, Recording, TimeSurface
from .dataio import split_indices
from .eventgen import FirstAndParams, datarate_stats, firstand_convert, onoff_convert, oobu_convert
from .feast import (BinaryFeatureSet, FeastParams, binarize, feast_infer, feast_train,
                    random_binary_features)

EVENT_KINDS = ("firstand", "onoff", "oobu")
KINDS = ("frames",) + EVENT_KINDS

# Raw depth codes are scaled into [0, 1] for the frame-based pipeline so the
# ridge regularizer acts on comparable magnitudes across pipelines.
FRAME_CODE_SCALE = 65535.0


@dataclass
class ConversionParams:
    firstand: FirstAndParams = field(default_factory=FirstAndParams)
    change_threshold: int = 2
    uni_count_threshold: int = 2
    bi_count_threshold: int = 1
    on_is_increase: bool = True


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Order-preserving map, optionally across processes.

    Work items must be independent and fn deterministic, so results do not
    depend on the worker count.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        chunk = max(1, len(items) // (jobs * 4))
        return list(executor.map(fn, items, chunksize=chunk))


def convert_recording(recording: Recording, kind: str,
                      conv: ConversionParams | None = None) -> EventStream:
    conv = conv if conv is not None else ConversionParams()
    if kind == "firstand":
        return firstand_convert(recording, params=conv.firstand)
    if kind == "onoff":
        return onoff_convert(recording, change_threshold=conv.change_threshold,
                             on_is_increase=conv.on_is_increase)
    if kind == "oobu":
        return oobu_convert(recording, change_threshold=conv.change_threshold,
                            uni_count_threshold=conv.uni_count_threshold,
                            bi_count_threshold=conv.bi_count_threshold,
                            on_is_increase=conv.on_is_increase)
    raise ValueError(f"unknown event kind {kind!r} (expected one of {EVENT_KINDS})")


def convert_all(recordings: list[Recording], kind: str,
                conv: ConversionParams | None = None, jobs: int = 1) -> list[EventStream]:
    return parallel_map(partial(convert_recording, kind=kind, conv=conv), recordings, jobs)


def datarate_table(recordings: list[Recording], streams: list[EventStream]) -> list:
    return [datarate_stats(rec, s) for rec, s in zip(recordings, streams)]


# ---------------------------------------------------------------------------
# Feature layer
# ---------------------------------------------------------------------------


def make_feast_params(stream: EventStream, n_neurons: int, roi_side: int = 5,
                      window_us: int = 2000, mix_rate: float = 0.001,
                      shrink_step: float = 0.002, grow_step: float = 0.004,
                      seed: int = 0) -> FeastParams:
    return FeastParams(n_neurons=n_neurons, polarity_count=stream.polarity_count,
                       roi_side=roi_side, window_us=window_us, mix_rate=mix_rate,
                       shrink_step=shrink_step, grow_step=grow_step, seed=seed)


def prepare_binary_features(streams: list[EventStream], mode: str, params: FeastParams,
                            n_active: int = 32,
                            train_indices: np.ndarray | None = None) -> BinaryFeatureSet:
    """Trained or random binary feature set under the same seed protocol.

    "trained" runs the adaptive-threshold pass over the training-split
    streams (in index order) and binarizes the result; "random" binarizes
    the same seeded initial weights untouched.
    """
    if mode == "random":
        return random_binary_features(params, n_active)
    if mode == "trained":
        if train_indices is None:
            train_indices = np.arange(len(streams))
        trained = feast_train([streams[i] for i in train_indices], params)
        return binarize(trained, n_active)
    raise ValueError(f"unknown feature mode {mode!r} (expected 'random' or 'trained')")


def infer_feature_streams(streams: list[EventStream], features: BinaryFeatureSet,
                          window_us: int = 2000, jobs: int = 1) -> list[EventStream]:
    return parallel_map(partial(feast_infer, features=features, window_us=window_us),
                        streams, jobs)


# ---------------------------------------------------------------------------
# Sample building
# ---------------------------------------------------------------------------


def stream_sample_rows(stream: EventStream, pool_config: PoolConfig, every: int,
                       window_us: int = 2000, activity_fraction: float = 0.1) -> np.ndarray:
    """Classifier inputs for one stream, one row per classification instant.

    The surface is replayed up to and including each sampled event; the
    binary readout at that event's time is region-selected and pooled.
    """
    channels = stream.polarity_count
    width = pool_config.vector_length(channels)
    instants = event_sample_indices(len(stream), every)
    if len(instants) == 0:
        return np.empty((0, width), dtype=np.float64)
    surface = TimeSurface(stream.grid_width, stream.grid_height, channels)
    rows = np.empty((len(instants), width), dtype=np.float64)
    ev = stream.events
    done = 0
    for row, idx in enumerate(instants):
        surface.update_many(ev[done:idx + 1])
        done = idx + 1
        t_now = int(ev["t"][idx])
        grid = surface.binary(t_now, window_us)
        region = region_from_activity(grid.sum(axis=0), activity_fraction)
        rows[row] = pool(region.crop(grid), pool_config)
    return rows


def frame_sample_rows(recording: Recording, pool_config: PoolConfig,
                      every: int = SAMPLE_EVERY_FRAMES,
                      activity_fraction: float = 0.1) -> np.ndarray:
    """Frame-based baseline samples: the depth frame nearest each instant,
    region-selected on pixel occupancy and pooled as one channel of scaled
    codes."""
    width = pool_config.vector_length(1)
    times = frame_sample_times(recording.n_frames, recording.pulse_period, every)
    if len(times) == 0:
        return np.empty((0, width), dtype=np.float64)
    rows = np.empty((len(times), width), dtype=np.float64)
    for row, t_now in enumerate(times):
        idx = min(int(t_now) // recording.pulse_period, recording.n_frames - 1)
        frame = recording.frames[idx]
        region = region_from_activity((frame > 0).astype(np.int64), activity_fraction)
        values = region.crop(frame[None, :, :]).astype(np.float64) / FRAME_CODE_SCALE
        rows[row] = pool(values, pool_config)
    return rows


def build_sample_set(sources: list, labels, pool_config: PoolConfig, *,
                     sample_every: int | None = None, window_us: int = 2000,
                     activity_fraction: float = 0.1, jobs: int = 1) -> SampleSet:
    """Stack per-source sample rows into one SampleSet.

    sources are either Recordings (frame pipeline) or EventStreams; for
    streams sample_every must be set (or derivable from the stream kind).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(sources) != len(labels):
        raise ValueError("one label per source required")
    if isinstance(sources[0], Recording):
        every = sample_every if sample_every is not None else SAMPLE_EVERY_FRAMES
        fn = partial(frame_sample_rows, pool_config=pool_config, every=every,
                     activity_fraction=activity_fraction)
    else:
        every = sample_every
        if every is None:
            raise ValueError("sample_every must be given for event streams")
        fn = partial(stream_sample_rows, pool_config=pool_config, every=every,
                     window_us=window_us, activity_fraction=activity_fraction)
    row_blocks = parallel_map(fn, sources, jobs)
    features = np.concatenate(row_blocks, axis=0) if row_blocks else np.empty((0, 0))
    rec_index = np.concatenate([np.full(len(block), i, dtype=np.int64)
                                for i, block in enumerate(row_blocks)])
    sample_labels = labels[rec_index] if len(rec_index) else np.empty(0, dtype=np.int64)
    return SampleSet(features=features, labels=sample_labels,
                     recording_index=rec_index, recording_labels=labels)


# ---------------------------------------------------------------------------
# Full pipeline evaluation
# ---------------------------------------------------------------------------


@dataclass
class PipelineSpec:
    """One evaluation cell: stream kind, optional feature layer, pooling."""

    kind: str = "oobu"
    feature_mode: str = "raw"          # raw | random | trained
    n_neurons: int = 16
    pool: PoolConfig = field(default_factory=PoolConfig)
    conversion: ConversionParams = field(default_factory=ConversionParams)
    window_us: int = 2000
    activity_fraction: float = 0.1
    ridge_lambda: float = 0.1
    train_fraction: float = 0.9
    sample_every: int | None = None    # None -> cadence of the (parent) kind
    roi_side: int = 5
    n_active: int = 32
    mix_rate: float = 0.001
    shrink_step: float = 0.002
    grow_step: float = 0.004
    seed: int = 0
    retrain_per_trial: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r} (expected one of {KINDS})")
        if self.feature_mode not in ("raw", "random", "trained"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")
        if self.kind == "frames" and self.feature_mode != "raw":
            raise ValueError("feature layers operate on event streams, not frames")

    def effective_sample_every(self) -> int:
        if self.sample_every is not None:
            return self.sample_every
        if self.kind == "frames":
            return SAMPLE_EVERY_FRAMES
        # feature streams emit one event per input event, so they inherit
        # the parent stream's cadence
        return SAMPLE_EVERY_EVENTS[self.kind]


def trial_seeds(base_seed: int, n_trials: int) -> list[int]:
    return [base_seed + trial for trial in range(n_trials)]


def _pipeline_sources(recordings: list[Recording], spec: PipelineSpec, jobs: int,
                      streams: list[EventStream] | None = None,
                      feature_train_indices: np.ndarray | None = None) -> list:
    """Sources feeding the sample builder (frames, raw streams or feature streams)."""
    if spec.kind == "frames":
        return recordings
    if streams is None:
        streams = convert_all(recordings, spec.kind, spec.conversion, jobs)
    if spec.feature_mode == "raw":
        return streams
    params = make_feast_params(streams[0], spec.n_neurons, roi_side=spec.roi_side,
                               window_us=spec.window_us, mix_rate=spec.mix_rate,
                               shrink_step=spec.shrink_step, grow_step=spec.grow_step,
                               seed=spec.seed)
    features = prepare_binary_features(streams, spec.feature_mode, params,
                                       n_active=min(spec.n_active, params.weight_length),
                                       train_indices=feature_train_indices)
    return infer_feature_streams(streams, features, window_us=spec.window_us, jobs=jobs)


def run_pipeline(recordings: list[Recording], spec: PipelineSpec, n_classes: int,
                 seeds: list[int], jobs: int = 1,
                 streams: list[EventStream] | None = None) -> EvalReport:
    """Evaluate one pipeline cell over randomized splits.

    Trained feature layers learn from the first trial's training split and
    stay frozen for the remaining trials unless retrain_per_trial is set,
    in which case every trial trains its own features and samples are
    rebuilt per trial.
    """
    labels = np.array([rec.class_id for rec in recordings], dtype=np.int64)
    every = spec.effective_sample_every()

    def build(sources):
        return build_sample_set(sources, labels, spec.pool, sample_every=every,
                                window_us=spec.window_us,
                                activity_fraction=spec.activity_fraction, jobs=jobs)

    needs_split_features = spec.feature_mode == "trained"
    if spec.retrain_per_trial and needs_split_features:
        reports = []
        for seed in seeds:
            train_idx, _ = split_indices(len(recordings), spec.train_fraction, seed)
            sources = _pipeline_sources(recordings, spec, jobs, streams=streams,
                                        feature_train_indices=train_idx)
            reports.append(evaluate_samples(build(sources), n_classes, [seed],
                                            spec.ridge_lambda, spec.train_fraction))
        return _merge_single_trial_reports(reports)

    feature_train_indices = None
    if needs_split_features:
        feature_train_indices, _ = split_indices(len(recordings), spec.train_fraction, seeds[0])
    sources = _pipeline_sources(recordings, spec, jobs, streams=streams,
                                feature_train_indices=feature_train_indices)
    return evaluate_samples(build(sources), n_classes, seeds,
                            spec.ridge_lambda, spec.train_fraction)


def _merge_single_trial_reports(reports: list[EvalReport]) -> EvalReport:
    trials = []
    for i, rep in enumerate(reports):
        t = rep.trials[0]
        t.trial = i
        trials.append(t)
    pf = np.array([t.per_frame_accuracy for t in trials])
    pr = np.array([t.per_recording_accuracy for t in trials])
    last = reports[-1]
    return EvalReport(per_frame_mean=float(pf.mean()), per_frame_std=float(pf.std()),
                      per_recording_mean=float(pr.mean()), per_recording_std=float(pr.std()),
                      n_trials=len(trials), trials=trials, confusion=last.confusion,
                      samples_per_recording_mean=last.samples_per_recording_mean,
                      samples_per_recording_std=last.samples_per_recording_std,
                      n_no_sample_recordings=last.n_no_sample_recordings)
