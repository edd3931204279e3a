"""Frame-based key protocol: statistics, gating, sifting, and rate formulas.

A frame is a batch of matched coincidences.  From the CHSH-basis records the
frame computes correlation coefficients and the CHSH parameter S; frames with
S < 2 are discarded.  Key bits come from the (A_k, B_0) records; a fixed
fraction is disclosed to estimate the error rate, and frames above the
error threshold are discarded.  The secure fraction combines the error rate
and S into the asymptotic key rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quantum import ALICE_LABELS, BOB_LABELS, CHSH_TERMS, TSIRELSON

QBER_MAX_DEFAULT = 0.11
DISCLOSURE_FRAC_DEFAULT = 0.30
MIN_CHSH_RECORDS_DEFAULT = 100

KEY_PAIR = ("A_k", "B_0")

#: forward-only life cycle of a key buffer
KEY_STAGES = ("sifted", "disclosed", "corrected", "secure")


class EmptyBasisPair(ValueError):
    """A correlation was requested for a basis pair with zero counts."""


class FrameTooSparse(ValueError):
    """Too few CHSH-basis records to gate the frame."""


class InconsistentStats(ValueError):
    """Q + S/(2*sqrt(2)) exceeded 1, so the stats cannot come from a state."""


def binary_entropy(x: float) -> float:
    """Shannon entropy of a bit with bias x; h(0) = h(1) = 0."""
    if x < 0.0 or x > 1.0:
        raise ValueError(f"entropy argument must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def correlation(counts4) -> float:
    """Correlation coefficient from coincidence counts.

    ``counts4`` is (n_pp, n_mm, n_mp, n_pm): both-plus, both-minus, and the
    two mismatch combinations.  E = (n_pp + n_mm - n_mp - n_pm) / total.
    """
    n_pp, n_mm, n_mp, n_pm = (float(c) for c in counts4)
    total = n_pp + n_mm + n_mp + n_pm
    if total <= 0:
        raise EmptyBasisPair("all four outcome counts are zero")
    return (n_pp + n_mm - n_mp - n_pm) / total


def qber_from_correlation(e: float) -> float:
    """Key-basis error rate Q = (1 - E)/2."""
    if abs(e) > 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {e}")
    return (1.0 - e) / 2.0


@dataclass
class FrameStats:
    """Per-frame count tensor and derived statistics."""

    counts: dict  # (a_label, b_label) -> (n_pp, n_mm, n_mp, n_pm)
    correlations: dict  # (a_label, b_label) -> E
    s_value: float
    s_err: float
    q_est: float | None
    accepted: bool
    frame_id: int
    duration_s: float
    sifted_bits: int = 0
    status: str = "ok"


@dataclass
class KeyBuffer:
    """Bit string with a life-cycle stage tag and a leakage ledger.

    ``leaked_bits`` counts every key-relevant bit that crossed the classical
    channel for this buffer: disclosed sample bits, reconciliation parities
    and verification hash bits.
    """

    bits: np.ndarray
    stage: str = "sifted"
    leaked_bits: int = 0
    frame_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.stage not in KEY_STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    def advance(self, stage: str, bits: np.ndarray | None = None):
        if KEY_STAGES.index(stage) < KEY_STAGES.index(self.stage):
            raise ValueError(f"stage may only move forward, {self.stage!r} -> {stage!r}")
        self.stage = stage
        if bits is not None:
            self.bits = np.asarray(bits, dtype=np.uint8)


@dataclass(frozen=True)
class FrameDiscard:
    """Marker returned instead of a key when a frame fails a gate."""

    reason: str  # "bell_fail" | "qber_fail"


def counts_from_records(setting_a, outcome_a, setting_b, outcome_b) -> np.ndarray:
    """Count tensor n[a, b, oa, ob] over setting and outcome indices."""
    counts = np.zeros((len(ALICE_LABELS), len(BOB_LABELS), 2, 2), dtype=np.int64)
    np.add.at(counts, (setting_a, setting_b, outcome_a, outcome_b), 1)
    return counts


def counts4_of(counts: np.ndarray, a_idx: int, b_idx: int):
    """(n_pp, n_mm, n_mp, n_pm) for one basis pair of the count tensor."""
    c = counts[a_idx, b_idx]
    return (int(c[0, 0]), int(c[1, 1]), int(c[1, 0]), int(c[0, 1]))


def chsh_from_counts(counts: np.ndarray) -> tuple[float, float]:
    """CHSH parameter and its Poisson-propagated standard error.

    Var(E) per basis pair is (1 - E^2)/N; the four variances add in
    quadrature with unit weights.
    """
    s = 0.0
    var = 0.0
    for a_label, b_label, sign in CHSH_TERMS:
        a = ALICE_LABELS.index(a_label)
        b = BOB_LABELS.index(b_label)
        c4 = counts4_of(counts, a, b)
        n = sum(c4)
        if n == 0:
            raise EmptyBasisPair(f"no records for basis pair ({a_label}, {b_label})")
        e = correlation(c4)
        s += sign * e
        var += (1.0 - e * e) / n
    return s, math.sqrt(var)


def sift_key_bits(setting_a, outcome_a, setting_b, outcome_b):
    """Key bits from (A_k, B_0) records; outcome + is bit 0, - is bit 1."""
    a_k = ALICE_LABELS.index(KEY_PAIR[0])
    b_0 = BOB_LABELS.index(KEY_PAIR[1])
    mask = (np.asarray(setting_a) == a_k) & (np.asarray(setting_b) == b_0)
    return (
        np.asarray(outcome_a)[mask].astype(np.uint8),
        np.asarray(outcome_b)[mask].astype(np.uint8),
    )


def choose_disclosure(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted positions of the publicly disclosed sample, ceil(fraction*n) long."""
    k = min(n, math.ceil(fraction * n))
    return np.sort(rng.choice(n, size=k, replace=False))


def process_frame(
    setting_a,
    outcome_a,
    setting_b,
    outcome_b,
    frame_id: int = 0,
    duration_s: float = 0.0,
    disclosure_frac: float = DISCLOSURE_FRAC_DEFAULT,
    qber_max: float = QBER_MAX_DEFAULT,
    seed: int = 0,
    min_chsh_records: int = MIN_CHSH_RECORDS_DEFAULT,
):
    """Gate one frame and sift its key.

    Returns (FrameStats, KeyBuffer) on acceptance or (FrameStats,
    FrameDiscard) when the Bell gate or the error-rate gate fails.  Raises
    FrameTooSparse when fewer than ``min_chsh_records`` CHSH-basis records
    are present.  The disclosed positions are drawn from a PRNG seeded with
    ``seed`` so both parties can derive the identical sample.
    """
    setting_a = np.asarray(setting_a)
    setting_b = np.asarray(setting_b)
    outcome_a = np.asarray(outcome_a)
    outcome_b = np.asarray(outcome_b)

    counts = counts_from_records(setting_a, outcome_a, setting_b, outcome_b)
    n_chsh = int(counts[1:, :, :, :].sum())
    if n_chsh < min_chsh_records:
        raise FrameTooSparse(f"{n_chsh} CHSH records < minimum {min_chsh_records}")

    s, s_err = chsh_from_counts(counts)
    correlations = {}
    for a, a_label in enumerate(ALICE_LABELS):
        for b, b_label in enumerate(BOB_LABELS):
            c4 = counts4_of(counts, a, b)
            if sum(c4) > 0:
                correlations[(a_label, b_label)] = correlation(c4)
    counts_map = {
        (a_label, b_label): counts4_of(counts, a, b)
        for a, a_label in enumerate(ALICE_LABELS)
        for b, b_label in enumerate(BOB_LABELS)
    }

    stats = FrameStats(
        counts=counts_map,
        correlations=correlations,
        s_value=s,
        s_err=s_err,
        q_est=None,
        accepted=False,
        frame_id=frame_id,
        duration_s=duration_s,
    )
    if s < 2.0:
        stats.status = "bell_fail"
        return stats, FrameDiscard("bell_fail")

    bits_a, bits_b = sift_key_bits(setting_a, outcome_a, setting_b, outcome_b)
    stats.sifted_bits = len(bits_a)
    rng = np.random.default_rng(seed)
    disclosed = choose_disclosure(len(bits_a), disclosure_frac, rng)
    q_est = estimate_qber(bits_a[disclosed], bits_b[disclosed])
    stats.q_est = q_est

    keep = np.ones(len(bits_a), dtype=bool)
    keep[disclosed] = False
    if q_est > qber_max:
        stats.status = "qber_fail"
        return stats, FrameDiscard("qber_fail")

    stats.accepted = True
    key = KeyBuffer(bits=bits_b[keep], stage="disclosed", frame_ids=[frame_id])
    key.leaked_bits += len(disclosed)
    return stats, key


def estimate_qber(bits_a: np.ndarray, bits_b: np.ndarray) -> float:
    """Mismatch fraction of a disclosed sample; 0 for an empty sample."""
    if len(bits_a) == 0:
        return 0.0
    return float(np.mean(bits_a != bits_b))


def daylight_counts(n_night, n_acc_ref, irradiance_wm2: float, ref_irradiance_wm2: float = 120.0):
    """Model daytime counts: night counts plus linearly scaled accidentals.

    n_day = n_night + n_acc_ref * irradiance / ref_irradiance, componentwise
    over any matching array shapes.
    """
    if irradiance_wm2 < 0:
        raise ValueError("irradiance must be non-negative")
    night = np.asarray(n_night, dtype=float)
    acc = np.asarray(n_acc_ref, dtype=float)
    return night + acc * (irradiance_wm2 / ref_irradiance_wm2)


def coincidence_snr(singles_snr: float, p_pair: float, window_ns: float, rep_period_ns: float) -> float:
    """Signal-to-noise ratio on coincidences given the singles-level ratio.

    Pairing suppresses accidentals by the pair-generation probability and by
    the coincidence window relative to half the pulse period:
    snr_coinc = snr_singles / (p_pair * window / (period/2)).
    """
    if min(singles_snr, p_pair, window_ns, rep_period_ns) <= 0:
        raise ValueError("all inputs must be positive")
    return singles_snr / (p_pair * window_ns / (rep_period_ns / 2.0))


def secure_fraction(
    q: float,
    s: float,
    f_ec: float = 1.2,
    qber_max: float = QBER_MAX_DEFAULT,
) -> float | None:
    """Asymptotic secure fraction r = 1 - f_ec*h(Q) - h(Q + S/(2*sqrt(2))).

    Returns None (no key) when Q exceeds the threshold or the rate is not
    positive.  Raises InconsistentStats when Q + S/(2*sqrt(2)) > 1, which no
    physical state can produce.
    """
    if not 0.0 <= q <= 0.5:
        raise ValueError(f"error rate must lie in [0, 0.5], got {q}")
    if not 0.0 <= s <= TSIRELSON + 1e-12:
        raise ValueError(f"CHSH value must lie in [0, 2*sqrt(2)], got {s}")
    arg = q + s / TSIRELSON
    if arg > 1.0 + 1e-12:
        raise InconsistentStats(f"Q + S/(2*sqrt(2)) = {arg:.6f} exceeds 1")
    arg = min(arg, 1.0)
    rate = 1.0 - f_ec * binary_entropy(q) - binary_entropy(arg)
    if q > qber_max or rate <= 0.0:
        return None
    return rate


@dataclass
class RateReport:
    """Aggregate figures of merit for a run."""

    wall_time_s: float = 0.0
    sifted_bits: int = 0
    corrected_bits: int = 0
    secure_bits: int = 0
    sifted_bps: float = 0.0
    corrected_bps: float = 0.0
    secure_bps: float = 0.0
    mean_s: float = 0.0
    mean_q: float = 0.0
    f_ec_realized: float = 0.0
    frames_total: int = 0
    frames_accepted: int = 0
    frames_bell_fail: int = 0
    frames_qber_fail: int = 0
    frames_sparse: int = 0
    acquisitions_total: int = 0
    acquisitions_sync_failed: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def rate_report(
    frames: list[FrameStats],
    corrected_bits: int,
    secure_bits: int,
    wall_time_s: float,
    cascade_leaked_bits: int = 0,
    cascade_shannon_bits: float = 0.0,
    acquisitions_total: int = 0,
    acquisitions_sync_failed: int = 0,
) -> RateReport:
    """Aggregate sifted/corrected/secure rates and discard statistics."""
    report = RateReport(wall_time_s=wall_time_s)
    accepted = [f for f in frames if f.accepted]
    report.frames_total = len(frames)
    report.frames_accepted = len(accepted)
    report.frames_bell_fail = sum(1 for f in frames if f.status == "bell_fail")
    report.frames_qber_fail = sum(1 for f in frames if f.status == "qber_fail")
    report.frames_sparse = sum(1 for f in frames if f.status == "sparse")
    report.sifted_bits = sum(f.sifted_bits for f in frames)
    report.corrected_bits = corrected_bits
    report.secure_bits = secure_bits
    if wall_time_s > 0:
        report.sifted_bps = report.sifted_bits / wall_time_s
        report.corrected_bps = corrected_bits / wall_time_s
        report.secure_bps = secure_bits / wall_time_s
    if accepted:
        report.mean_s = float(np.mean([f.s_value for f in accepted]))
        report.mean_q = float(np.mean([f.q_est for f in accepted if f.q_est is not None]))
    if cascade_shannon_bits > 0:
        report.f_ec_realized = cascade_leaked_bits / cascade_shannon_bits
    report.acquisitions_total = acquisitions_total
    report.acquisitions_sync_failed = acquisitions_sync_failed
    return report
