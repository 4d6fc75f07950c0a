"""Shared domain types: depth recordings, event streams, time surfaces, AER words.

Timestamps are integer microseconds counted from the start of a recording.
A depth frame is the grid of 16-bit time-of-flight codes produced by one
laser pulse; frame k therefore sits at t = k * pulse_period.  Code 0 is
reserved for "no photon detected this pulse".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

# Depth code reserved for "no photon return on this pulse".
NO_RETURN = 0

# Laser pulsed at 100 kHz -> 10 us between depth frames.
DEFAULT_PULSE_PERIOD_US = 10

# last-event timestamp for cells that have never fired.  Large negative
# (not int64 min) so that `t_now - NEVER` cannot overflow for any sane t_now.
NEVER = -(1 << 62)

# Packed event record: time in microseconds, grid location, polarity.
# Canonical stream order sorts by (t, y, x, p).
EVENT_DTYPE = np.dtype([("t", "<i8"), ("y", "<u2"), ("x", "<u2"), ("p", "<u1")])


class FormatError(ValueError):
    """A serialized artifact is malformed (magic, truncation, field range)."""


class StreamKind(IntEnum):
    """Event stream flavors and their polarity conventions.

    FIRST_AND: 0=N 1=S 2=E 3=W gate identities, on the receptive-field grid.
    ON_OFF:    0=On (depth code increased) 1=Off (decreased).
    OOBU:      On/Off as above plus 2=Bi-polar, 3=Uni-polar cluster events.
    FEATURE:   one polarity per feature-extractor neuron, on the pixel grid.
    """

    FIRST_AND = 0
    ON_OFF = 1
    OOBU = 2
    FEATURE = 3


# FEATURE streams carry an explicit per-stream polarity count instead.
KIND_POLARITIES = {
    StreamKind.FIRST_AND: 4,
    StreamKind.ON_OFF: 2,
    StreamKind.OOBU: 4,
}


@dataclass(frozen=True)
class DepthFrame:
    """One laser pulse worth of time-of-flight codes, row-major uint16."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.uint16)
        if codes.ndim != 2 or codes.shape[0] < 1 or codes.shape[1] < 1:
            raise ValueError(f"depth frame must be a non-empty 2D grid, got shape {codes.shape}")
        object.__setattr__(self, "codes", codes)

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


@dataclass
class Recording:
    """A stack of depth frames from consecutive laser pulses.

    frames has shape (n_frames, height, width), dtype uint16.  All frames
    share one grid; pulse_period is the microsecond spacing between them.
    """

    frames: np.ndarray
    pulse_period: int = DEFAULT_PULSE_PERIOD_US
    class_id: int = 0
    recording_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.uint16)
        if frames.ndim != 3:
            raise ValueError(f"frames must be (n_frames, height, width), got shape {frames.shape}")
        if frames.shape[1] < 1 or frames.shape[2] < 1:
            raise ValueError(f"frame grid must be non-empty, got shape {frames.shape}")
        if self.pulse_period <= 0:
            raise ValueError(f"pulse_period must be positive, got {self.pulse_period}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def frame(self, k: int) -> DepthFrame:
        return DepthFrame(self.frames[k])


class Event(NamedTuple):
    """One event: grid location, microsecond timestamp, stream-kind polarity."""

    x: int
    y: int
    t: int
    polarity: int


@dataclass
class EventStream:
    """Time-sorted events on a fixed grid.

    events is a structured array with fields t, y, x, p.  Canonical order is
    nondecreasing t with ties broken row-major (y, then x), then polarity,
    so identical inputs always serialize identically.
    """

    kind: StreamKind
    grid_width: int
    grid_height: int
    events: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=EVENT_DTYPE))
    polarity_count: int = 0

    def __post_init__(self):
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValueError("stream grid must be non-empty")
        if self.events.dtype != EVENT_DTYPE:
            raise ValueError(f"events must use EVENT_DTYPE, got {self.events.dtype}")
        if self.polarity_count == 0:
            self.polarity_count = KIND_POLARITIES.get(self.kind, 0)
        if self.polarity_count < 1:
            raise ValueError("polarity_count must be set for FEATURE streams")

    def __len__(self) -> int:
        return len(self.events)

    def is_canonical(self) -> bool:
        """Single-pass check of the (t, y, x, p) stream ordering."""
        ev = self.events
        if len(ev) < 2:
            return True
        a, b = ev[:-1], ev[1:]
        lt = a["t"] < b["t"]
        eq_t = a["t"] == b["t"]
        lt_y = eq_t & (a["y"] < b["y"])
        eq_y = eq_t & (a["y"] == b["y"])
        lt_x = eq_y & (a["x"] < b["x"])
        eq_x = eq_y & (a["x"] == b["x"])
        le_p = eq_x & (a["p"] <= b["p"])
        return bool(np.all(lt | lt_y | lt_x | le_p))

    def validate(self) -> None:
        ev = self.events
        if len(ev) == 0:
            return
        if ev["x"].max(initial=0) >= self.grid_width or ev["y"].max(initial=0) >= self.grid_height:
            raise ValueError("event coordinates fall outside the stream grid")
        if int(ev["p"].max(initial=0)) >= self.polarity_count:
            raise ValueError("event polarity exceeds the stream's polarity count")
        if not self.is_canonical():
            raise ValueError("events are not in canonical (t, y, x, p) order")


def make_events(t, y, x, p) -> np.ndarray:
    """Pack parallel coordinate arrays into an EVENT_DTYPE record array."""
    t = np.asarray(t)
    out = np.empty(len(t), dtype=EVENT_DTYPE)
    out["t"] = t
    out["y"] = y
    out["x"] = x
    out["p"] = p
    return out


def canonical_sort(events: np.ndarray) -> np.ndarray:
    """Return events sorted by (t, y, x, p); stable, copies."""
    order = np.lexsort((events["p"], events["x"], events["y"], events["t"]))
    return events[order]


# ---------------------------------------------------------------------------
# AER word codec
#
# 32-bit readout word: [31:25] row, [24:18] column, [17:16] feature class
# (0=N 1=S 2=E 3=W), [15:0] timestamp code.  The timestamp code is a
# free-running 16-bit counter, i.e. the word carries time modulo 2^16.
# Serialized little-endian.
# ---------------------------------------------------------------------------

AER_ROW_SHIFT = 25
AER_COL_SHIFT = 18
AER_CLASS_SHIFT = 16
AER_TIME_MASK = 0xFFFF
AER_MAX_ROW = 127
AER_MAX_COL = 127
AER_MAX_CLASS = 3


def encode_aer(row: int, col: int, feature_class: int, pulse_index: int) -> int:
    """Pack one event into a 32-bit AER word.

    Row, column and feature class must fit their fields; pulse_index is a
    free-running counter and is reduced modulo 2^16.
    """
    if not 0 <= row <= AER_MAX_ROW:
        raise ValueError(f"row {row} out of range 0..{AER_MAX_ROW}")
    if not 0 <= col <= AER_MAX_COL:
        raise ValueError(f"col {col} out of range 0..{AER_MAX_COL}")
    if not 0 <= feature_class <= AER_MAX_CLASS:
        raise ValueError(f"feature_class {feature_class} out of range 0..{AER_MAX_CLASS}")
    if pulse_index < 0:
        raise ValueError(f"pulse_index {pulse_index} must be non-negative")
    return ((row << AER_ROW_SHIFT) | (col << AER_COL_SHIFT)
            | (feature_class << AER_CLASS_SHIFT) | (pulse_index & AER_TIME_MASK))


def decode_aer(word: int) -> tuple[int, int, int, int]:
    """Unpack a 32-bit AER word into (row, col, feature_class, pulse_index)."""
    word &= 0xFFFFFFFF
    return (word >> AER_ROW_SHIFT,
            (word >> AER_COL_SHIFT) & AER_MAX_COL,
            (word >> AER_CLASS_SHIFT) & AER_MAX_CLASS,
            word & AER_TIME_MASK)


def encode_aer_array(rows, cols, classes, pulses) -> np.ndarray:
    """Vectorized encode_aer; returns uint32 words. Same range checks."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    pulses = np.asarray(pulses, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() > AER_MAX_ROW):
        raise ValueError("row out of range 0..127")
    if cols.size and (cols.min() < 0 or cols.max() > AER_MAX_COL):
        raise ValueError("col out of range 0..127")
    if classes.size and (classes.min() < 0 or classes.max() > AER_MAX_CLASS):
        raise ValueError("feature_class out of range 0..3")
    if pulses.size and pulses.min() < 0:
        raise ValueError("pulse_index must be non-negative")
    words = ((rows << AER_ROW_SHIFT) | (cols << AER_COL_SHIFT)
             | (classes << AER_CLASS_SHIFT) | (pulses & AER_TIME_MASK))
    return words.astype(np.uint32)


def decode_aer_array(words) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    words = np.asarray(words, dtype=np.uint32)
    w = words.astype(np.int64)
    return ((w >> AER_ROW_SHIFT).astype(np.int64),
            ((w >> AER_COL_SHIFT) & AER_MAX_COL).astype(np.int64),
            ((w >> AER_CLASS_SHIFT) & AER_MAX_CLASS).astype(np.int64),
            (w & AER_TIME_MASK).astype(np.int64))


# ---------------------------------------------------------------------------
# Time surface
# ---------------------------------------------------------------------------


class TimeSurface:
    """Per-polarity grid of last-event timestamps with a binary readout.

    A cell reads 1 at time t_now iff it has ever fired and its age
    (t_now - last_t) is strictly below the window.  Reads never mutate
    the surface.  Updates must be serialized by the caller (single writer).

    roi_pad reserves a halo of off-grid cells so centered ROI reads up to
    side 2*roi_pad+1 are plain slices; it never changes readout semantics
    (the halo always reads 0).
    """

    def __init__(self, grid_width: int, grid_height: int, polarity_count: int,
                 roi_pad: int = 0):
        if grid_width < 1 or grid_height < 1 or polarity_count < 1:
            raise ValueError("surface dimensions must be positive")
        if roi_pad < 0:
            raise ValueError("roi_pad must be non-negative")
        self.grid_width = grid_width
        self.grid_height = grid_height
        self.polarity_count = polarity_count
        self._pad = roi_pad
        self._buf = np.full((polarity_count, grid_height + 2 * roi_pad, grid_width + 2 * roi_pad),
                            NEVER, dtype=np.int64)

    @property
    def last_t(self) -> np.ndarray:
        """Last-event timestamps, shape (P, H, W); NEVER where unfired."""
        p = self._pad
        return self._buf[:, p:p + self.grid_height, p:p + self.grid_width]

    def update(self, x: int, y: int, polarity: int, t: int) -> None:
        """Record one event: last_t[p, y, x] := t. Other cells untouched."""
        if not (0 <= x < self.grid_width and 0 <= y < self.grid_height):
            raise ValueError(f"event at ({x}, {y}) outside {self.grid_width}x{self.grid_height} grid")
        if not 0 <= polarity < self.polarity_count:
            raise ValueError(f"polarity {polarity} out of range 0..{self.polarity_count - 1}")
        self._buf[polarity, y + self._pad, x + self._pad] = t

    def update_event(self, event) -> None:
        self.update(int(event["x"]), int(event["y"]), int(event["p"]), int(event["t"]))

    def update_many(self, events: np.ndarray) -> None:
        """Apply a time-sorted batch of events.

        Duplicate cells within the batch resolve to the latest entry, which
        matches sequential application because the batch is time-sorted.
        """
        if len(events) == 0:
            return
        if (events["x"].max() >= self.grid_width or events["y"].max() >= self.grid_height
                or events["p"].max() >= self.polarity_count):
            raise ValueError("event batch falls outside the surface")
        p = self._pad
        self._buf[events["p"], events["y"].astype(np.int64) + p,
                  events["x"].astype(np.int64) + p] = events["t"]

    def binary(self, t_now: int, window_us: int) -> np.ndarray:
        """Full-grid binary readout, shape (P, H, W) uint8."""
        last = self.last_t
        return (((t_now - last) < window_us) & (last != NEVER)).astype(np.uint8)

    def binary_roi(self, x: int, y: int, roi_side: int, t_now: int, window_us: int) -> np.ndarray:
        """Binary readout of the roi_side x roi_side window centered on (x, y).

        roi_side must be odd; cells outside the grid read 0 (zero padding).
        Returns shape (P, roi_side, roi_side) uint8.
        """
        if roi_side % 2 != 1 or roi_side < 1:
            raise ValueError(f"roi_side must be odd and positive, got {roi_side}")
        if window_us <= 0:
            raise ValueError(f"window_us must be positive, got {window_us}")
        if not (0 <= x < self.grid_width and 0 <= y < self.grid_height):
            raise ValueError(f"ROI center ({x}, {y}) outside the grid")
        r = roi_side // 2
        if r <= self._pad:
            off = self._pad - r
            sub = self._buf[:, y + off:y + off + roi_side, x + off:x + off + roi_side]
            return (((t_now - sub) < window_us) & (sub != NEVER)).astype(np.uint8)
        patch = np.zeros((self.polarity_count, roi_side, roi_side), dtype=np.uint8)
        y0, y1 = max(0, y - r), min(self.grid_height, y + r + 1)
        x0, x1 = max(0, x - r), min(self.grid_width, x + r + 1)
        if y0 >= y1 or x0 >= x1:
            return patch
        sub = self.last_t[:, y0:y1, x0:x1]
        lit = ((t_now - sub) < window_us) & (sub != NEVER)
        patch[:, y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r] = lit
        return patch

    def copy(self) -> "TimeSurface":
        dup = TimeSurface(self.grid_width, self.grid_height, self.polarity_count, roi_pad=self._pad)
        dup._buf = self._buf.copy()
        return dup
