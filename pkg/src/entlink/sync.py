"""Clock-offset recovery and coincidence matching.

Offset recovery cross-correlates the publicly shared detection channels in
81 ps bins over a +-40 ns search range; the histogram peak, refined by a
local centroid, gives the relative clock offset.  Coincidences are then
matched greedily in time order within the acceptance window, each event used
at most once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import TDC_TICK_PS
from .quantum import ALICE_LABELS, BOB_LABELS

SEARCH_HALF_WIDTH_NS = 40.0
WINDOW_NS_DEFAULT = 1.3
PEAK_OVER_MEDIAN = 5.0
CENTROID_HALF_BINS = 6


class SyncFailed(RuntimeError):
    """No significant cross-correlation peak; the acquisition is unusable."""


@dataclass(frozen=True)
class ClockModel:
    """Relative clock offset of Bob's time tagger, in ticks."""

    offset_ticks: int = 0
    drift_ticks_per_s: float = 0.0

    def shift(self, ticks: np.ndarray, t0_s: float = 0.0) -> np.ndarray:
        shift = self.offset_ticks + self.drift_ticks_per_s * t0_s
        return np.maximum(ticks + np.int64(round(shift)), 0)


def _ticks_of(stream) -> np.ndarray:
    ticks = stream.ticks if hasattr(stream, "ticks") else np.asarray(stream)
    return np.asarray(ticks, dtype=np.int64)


def _pair_differences(ticks_a: np.ndarray, ticks_b: np.ndarray, half_width: int) -> np.ndarray:
    """All tick differences t_b - t_a with |diff| <= half_width."""
    lo = np.searchsorted(ticks_a, ticks_b - half_width, side="left")
    hi = np.searchsorted(ticks_a, ticks_b + half_width, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    b_idx = np.repeat(np.arange(len(ticks_b)), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    a_idx = np.repeat(lo, counts) + offsets
    return ticks_b[b_idx] - ticks_a[a_idx]


def recover_offset(public_a, public_b, search_half_width_ns: float = SEARCH_HALF_WIDTH_NS) -> int:
    """Clock offset (ticks to subtract from Bob) from public channels.

    Histogram the pairwise time differences in TDC bins; the peak must
    exceed five times the median bin (at least five counts), otherwise
    SyncFailed is raised and the caller discards the acquisition.  The
    returned offset is the centroid of the peak neighborhood rounded to the
    nearest tick.
    """
    ticks_a = np.sort(_ticks_of(public_a))
    ticks_b = np.sort(_ticks_of(public_b))
    half_width = int(round(search_half_width_ns * 1000.0 / TDC_TICK_PS))
    if len(ticks_a) == 0 or len(ticks_b) == 0:
        raise SyncFailed("a public stream is empty")
    diffs = _pair_differences(ticks_a, ticks_b, half_width)
    if diffs.size == 0:
        raise SyncFailed("no event pairs inside the search range")
    hist = np.bincount(diffs + half_width, minlength=2 * half_width + 1)
    peak = int(np.argmax(hist))
    median = float(np.median(hist))
    if hist[peak] < PEAK_OVER_MEDIAN * max(median, 1.0):
        raise SyncFailed(f"peak {hist[peak]} not significant over median {median:.1f}")
    lo = max(0, peak - CENTROID_HALF_BINS)
    hi = min(len(hist), peak + CENTROID_HALF_BINS + 1)
    weights = np.maximum(hist[lo:hi].astype(float) - median, 0.0)
    bins = np.arange(lo, hi) - half_width
    centroid = float(np.dot(weights, bins) / weights.sum())
    return int(round(centroid))


@dataclass
class CoincidenceSet:
    """Matched event pairs as parallel arrays.

    Setting indices follow the label order (A_k, A_0, A_1) and (B_0, B_1);
    outcomes are 0 for "+" and 1 for "-".  ``delta`` is the residual tick
    difference t_a - (t_b - offset).
    """

    setting_a: np.ndarray
    outcome_a: np.ndarray
    setting_b: np.ndarray
    outcome_b: np.ndarray
    delta: np.ndarray
    tick_a: np.ndarray
    frame_id: np.ndarray

    def __len__(self) -> int:
        return len(self.delta)

    @staticmethod
    def empty() -> "CoincidenceSet":
        z8 = np.zeros(0, np.int8)
        z64 = np.zeros(0, np.int64)
        return CoincidenceSet(z8, z8, z8, z8, z64.copy(), z64.copy(), np.zeros(0, np.int32))

    @staticmethod
    def concat(parts: list["CoincidenceSet"]) -> "CoincidenceSet":
        if not parts:
            return CoincidenceSet.empty()
        return CoincidenceSet(
            *(np.concatenate([getattr(p, f) for p in parts]) for f in (
                "setting_a", "outcome_a", "setting_b", "outcome_b", "delta", "tick_a", "frame_id"))
        )

    def labels(self) -> list[tuple[str, int, str, int, int]]:
        """Readable view (label_a, outcome_a, label_b, outcome_b, delta)."""
        return [
            (
                ALICE_LABELS[self.setting_a[i]],
                int(self.outcome_a[i]),
                BOB_LABELS[self.setting_b[i]],
                int(self.outcome_b[i]),
                int(self.delta[i]),
            )
            for i in range(len(self))
        ]


def _greedy_match_indices(ticks_a: np.ndarray, ticks_b: np.ndarray, half: int):
    """Greedy earliest-first matching; each event used at most once.

    Equivalent to walking both sorted streams with two pointers and pairing
    the earliest compatible events.  Runs of B events closer than the full
    window are resolved sequentially; isolated events vectorize.
    """
    nb = len(ticks_b)
    if nb == 0 or len(ticks_a) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    first = np.searchsorted(ticks_a, ticks_b - half, side="left")
    match_a = np.full(nb, -1, dtype=np.int64)

    isolated = np.ones(nb, dtype=bool)
    if nb > 1:
        close = (ticks_b[1:] - ticks_b[:-1]) <= 2 * half
        isolated[1:] &= ~close
        isolated[:-1] &= ~close

    can = first < len(ticks_a)
    ok = isolated & can
    ok[ok] &= ticks_a[first[ok]] <= ticks_b[ok] + half
    match_a[ok] = first[ok]

    # sequential pass over runs of mutually close B events
    run_members = np.flatnonzero(~isolated)
    pos = 0
    while pos < len(run_members):
        end = pos
        while end + 1 < len(run_members) and run_members[end + 1] == run_members[end] + 1:
            end += 1
        pointer = first[run_members[pos]]
        for j in run_members[pos : end + 1]:
            pointer = max(pointer, first[j])
            if pointer < len(ticks_a) and ticks_a[pointer] <= ticks_b[j] + half:
                match_a[j] = pointer
                pointer += 1
        pos = end + 1

    b_idx = np.flatnonzero(match_a >= 0)
    return match_a[b_idx], b_idx


def match_coincidences(stream_a, stream_b, offset_ticks: int, window_ns: float = WINDOW_NS_DEFAULT) -> CoincidenceSet:
    """Match detections with |t_a - (t_b - offset)| within half the window.

    Streams must be time-sorted.  The window is a total width: 1.3 ns keeps
    pairs up to 650 ps (8 ticks) apart.
    """
    ticks_a = stream_a.ticks
    ticks_b = stream_b.ticks - np.int64(offset_ticks)
    for name, t in (("A", ticks_a), ("B", ticks_b)):
        if len(t) > 1 and np.any(np.diff(t) < 0):
            raise ValueError(f"stream {name} is not time-sorted")
    half = int(window_ns * 1000.0 / 2.0 / TDC_TICK_PS)
    a_idx, b_idx = _greedy_match_indices(ticks_a, ticks_b, half)
    return CoincidenceSet(
        setting_a=(stream_a.channels[a_idx] >> 1).astype(np.int8),
        outcome_a=(stream_a.channels[a_idx] & 1).astype(np.int8),
        setting_b=(stream_b.channels[b_idx] >> 1).astype(np.int8),
        outcome_b=(stream_b.channels[b_idx] & 1).astype(np.int8),
        delta=ticks_a[a_idx] - ticks_b[b_idx],
        tick_a=ticks_a[a_idx].copy(),
        frame_id=np.zeros(len(a_idx), dtype=np.int32),
    )
