"""Monte-Carlo generation of time-tagged detection streams.

Each pump pulse emits an entangled pair with the source's pair probability;
each photon then independently survives its arm, picks a measurement setting
at the beam splitters, and produces an outcome by the Born rule.  Detection
times get Gaussian jitter at 1 ps granularity and are quantized to 81 ps TDC
ticks.  Background events are Poisson per detector.

Channel numbering: Alice 0..5 = (A_k, A_0, A_1) x (+, -), Bob 0..3 =
(B_0, B_1) x (+, -); outcome + is index 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ALICE_BASIS_PROBS,
    ALICE_CHANNEL_COUNT,
    BOB_BASIS_PROBS,
    BOB_CHANNEL_COUNT,
    FWHM_TO_SIGMA,
    TDC_TICK_PS,
    ChannelParams,
    SourceParams,
    WeatherSample,
    background_rate,
    pair_probability,
    rain_transmission,
)
from .quantum import (
    ALICE_LABELS,
    BOB_LABELS,
    SETTING_ANGLES,
    TwoQubitState,
    depolarize_bob,
    joint_outcome_probs,
    outcome_projectors,
)
from .rngstreams import substream

ALICE_ANGLES = tuple(SETTING_ANGLES[label] for label in ALICE_LABELS)
BOB_ANGLES = tuple(SETTING_ANGLES[label] for label in BOB_LABELS)

#: channels whose timestamps may be shared publicly for synchronization:
#: the CHSH-only detectors, whose outcomes are announced during the Bell
#: test anyway and never enter the key.
ALICE_PUBLIC_CHANNELS = (2, 3, 4, 5)  # (A_0, +-), (A_1, +-)
BOB_PUBLIC_CHANNELS = (2, 3)  # (B_1, +-)


@dataclass
class TagStream:
    """Time-sorted detection events of one party."""

    party: str  # "A" or "B"
    channels: np.ndarray  # uint8 detector ids
    ticks: np.ndarray  # int64 TDC ticks

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.ticks = np.asarray(self.ticks, dtype=np.int64)
        if self.channels.shape != self.ticks.shape:
            raise ValueError("channels and ticks must have equal length")
        n_ch = ALICE_CHANNEL_COUNT if self.party == "A" else BOB_CHANNEL_COUNT
        if len(self.channels) and int(self.channels.max()) >= n_ch:
            raise ValueError(f"channel id out of range for party {self.party}")
        if len(self.ticks) and int(self.ticks.min()) < 0:
            raise ValueError("ticks must be non-negative")

    def __len__(self) -> int:
        return len(self.ticks)

    def sorted(self) -> "TagStream":
        order = np.argsort(self.ticks, kind="stable")
        return TagStream(self.party, self.channels[order], self.ticks[order])

    def shifted(self, offset_ticks: int) -> "TagStream":
        return TagStream(self.party, self.channels, np.maximum(self.ticks + offset_ticks, 0))

    def subset(self, channel_ids) -> "TagStream":
        mask = np.isin(self.channels, np.asarray(channel_ids, dtype=np.uint8))
        return TagStream(self.party, self.channels[mask], self.ticks[mask])

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for ch, tick in zip(self.channels, self.ticks):
                fh.write(json.dumps({"party": self.party, "ch": int(ch), "tick": int(tick)}) + "\n")

    @staticmethod
    def from_jsonl(path) -> "TagStream":
        channels, ticks, party = [], [], None
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                party = rec["party"]
                channels.append(rec["ch"])
                ticks.append(rec["tick"])
        if party is None:
            raise ValueError("empty stream file")
        return TagStream(party, np.array(channels), np.array(ticks))

    def to_packed(self, path):
        """Packed binary: 1 byte channel, 8 bytes little-endian tick per event."""
        rec = np.zeros(len(self), dtype=[("ch", "u1"), ("tick", "<i8")])
        rec["ch"] = self.channels
        rec["tick"] = self.ticks
        rec.tofile(path)

    @staticmethod
    def from_packed(path, party: str) -> "TagStream":
        rec = np.fromfile(path, dtype=[("ch", "u1"), ("tick", "<i8")])
        return TagStream(party, rec["ch"].copy(), rec["tick"].copy())


@dataclass
class TruthLog:
    """Ground truth of emitted pairs, for oracle tests only.

    Holds one row per emitted pair with at least one detected photon; lost
    photons carry setting/outcome -1.  ``emitted_pairs`` counts every
    emission including fully undetected ones.
    """

    pulse_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    setting_a: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    outcome_a: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    setting_b: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    outcome_b: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    detected_a: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    detected_b: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    tick_a: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    tick_b: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    emitted_pairs: int = 0

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"emitted_pairs": int(self.emitted_pairs)}) + "\n")
            for i in range(len(self.pulse_index)):
                fh.write(
                    json.dumps(
                        {
                            "pulse": int(self.pulse_index[i]),
                            "sa": int(self.setting_a[i]),
                            "oa": int(self.outcome_a[i]),
                            "sb": int(self.setting_b[i]),
                            "ob": int(self.outcome_b[i]),
                            "da": bool(self.detected_a[i]),
                            "db": bool(self.detected_b[i]),
                        }
                    )
                    + "\n"
                )


def _distinct_uniform(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """k distinct uniform draws from range(n), sorted."""
    if k > n:
        raise ValueError("cannot draw more distinct pulses than exist")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    got = np.zeros(0, dtype=np.int64)
    while got.size < k:
        need = k - got.size
        cand = rng.integers(0, n, size=need + max(16, need // 16), dtype=np.int64)
        got = np.unique(np.concatenate([got, cand]))
    if got.size > k:
        drop = rng.choice(got.size, size=got.size - k, replace=False)
        got = np.delete(got, drop)
    return got


def _marginal_plus_probs(marginal: np.ndarray, angles) -> np.ndarray:
    """P(outcome +) per setting angle for a single-photon reduced state."""
    probs = np.empty(len(angles))
    for i, ang in enumerate(angles):
        proj_plus, _ = outcome_projectors(ang)
        probs[i] = np.real(np.trace(proj_plus @ marginal))
    return np.clip(probs, 0.0, 1.0)


def _quantize(pulse_idx: np.ndarray, period_ps: float, jitter_ps: np.ndarray) -> np.ndarray:
    t_ps = pulse_idx.astype(np.float64) * period_ps + jitter_ps
    return np.maximum(np.rint(t_ps / TDC_TICK_PS).astype(np.int64), 0)


@dataclass
class AcquisitionResult:
    stream_a: TagStream
    stream_b: TagStream
    truth: TruthLog


def simulate_acquisition(
    src: SourceParams,
    ch: ChannelParams,
    state: TwoQubitState,
    weather: WeatherSample,
    duration_s: float,
    seed: int,
    coupling: float | None = None,
    alice_basis_probs=ALICE_BASIS_PROBS,
    bob_basis_probs=BOB_BASIS_PROBS,
    collect_truth: bool = False,
) -> AcquisitionResult:
    """Generate both parties' detection streams for one acquisition window.

    Deterministic in ``seed``.  ``coupling`` overrides the mean fiber
    coupling with a realized value from the coupling process.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng_emit = substream(seed, "emission")
    rng_bases = substream(seed, "bases")
    rng_out = substream(seed, "outcomes")
    rng_jit = substream(seed, "jitter")
    rng_bg = substream(seed, "background")

    coupling_val = ch.coupling_mean if coupling is None else coupling
    period_ps = src.rep_period_ps
    n_pulses = int(round(duration_s * src.rep_rate_hz))
    p_pair = pair_probability(src)
    surv_a = ch.alice_arm_efficiency * ch.detector_efficiency
    surv_b = (
        ch.bob_arm_efficiency
        * ch.link_efficiency
        * coupling_val
        * ch.detector_efficiency
        * rain_transmission(ch, weather.rain_mmhr)
    )

    p_both = p_pair * surv_a * surv_b
    p_only_a = p_pair * surv_a * (1.0 - surv_b)
    p_only_b = p_pair * (1.0 - surv_a) * surv_b
    p_lost = p_pair - p_both - p_only_a - p_only_b
    n_both, n_only_a, n_only_b, n_lost, _ = rng_emit.multinomial(
        n_pulses, [p_both, p_only_a, p_only_b, p_lost, 1.0 - p_pair]
    )

    state_b = depolarize_bob(state, ch.depolarization)
    plus_a = _marginal_plus_probs(state_b.alice_marginal(), ALICE_ANGLES)
    plus_b = _marginal_plus_probs(state_b.bob_marginal(), BOB_ANGLES)
    joint = {
        (i, j): joint_outcome_probs(state_b, ALICE_ANGLES[i], BOB_ANGLES[j])
        for i in range(len(ALICE_ANGLES))
        for j in range(len(BOB_ANGLES))
    }

    n_detected = int(n_both + n_only_a + n_only_b)
    pulses = _distinct_uniform(rng_emit, n_pulses, n_detected)
    pulses = pulses[rng_emit.permutation(n_detected)]
    pulses_both = np.sort(pulses[:n_both])
    pulses_a = np.sort(pulses[n_both : n_both + n_only_a])
    pulses_b = np.sort(pulses[n_both + n_only_a :])

    sigma_ps = ch.jitter_fwhm_ps * FWHM_TO_SIGMA

    # coincident pairs: joint settings and Born-rule outcome pairs
    set_a_both = rng_bases.choice(len(ALICE_ANGLES), size=n_both, p=alice_basis_probs)
    set_b_both = rng_bases.choice(len(BOB_ANGLES), size=n_both, p=bob_basis_probs)
    out_a_both = np.zeros(n_both, dtype=np.int8)
    out_b_both = np.zeros(n_both, dtype=np.int8)
    for (i, j), probs in joint.items():
        mask = (set_a_both == i) & (set_b_both == j)
        k = int(mask.sum())
        if k == 0:
            continue
        pair_idx = rng_out.choice(4, size=k, p=probs)
        out_a_both[mask] = pair_idx >> 1
        out_b_both[mask] = pair_idx & 1

    # singles: settings plus marginal outcomes
    set_a_only = rng_bases.choice(len(ALICE_ANGLES), size=n_only_a, p=alice_basis_probs)
    out_a_only = (rng_out.random(n_only_a) >= plus_a[set_a_only]).astype(np.int8)
    set_b_only = rng_bases.choice(len(BOB_ANGLES), size=n_only_b, p=bob_basis_probs)
    out_b_only = (rng_out.random(n_only_b) >= plus_b[set_b_only]).astype(np.int8)

    tick_a_both = _quantize(pulses_both, period_ps, rng_jit.normal(0.0, sigma_ps, n_both))
    tick_b_both = _quantize(pulses_both, period_ps, rng_jit.normal(0.0, sigma_ps, n_both))
    tick_a_only = _quantize(pulses_a, period_ps, rng_jit.normal(0.0, sigma_ps, int(n_only_a)))
    tick_b_only = _quantize(pulses_b, period_ps, rng_jit.normal(0.0, sigma_ps, int(n_only_b)))

    ch_a = np.concatenate([set_a_both * 2 + out_a_both, set_a_only * 2 + out_a_only]).astype(np.uint8)
    tk_a = np.concatenate([tick_a_both, tick_a_only])
    ch_b = np.concatenate([set_b_both * 2 + out_b_both, set_b_only * 2 + out_b_only]).astype(np.uint8)
    tk_b = np.concatenate([tick_b_both, tick_b_only])

    # background: Poisson per detector, uniform in the window
    max_tick = int(duration_s * 1e12 / TDC_TICK_PS)
    bob_bg_rate = background_rate(ch, weather)
    alice_bg_rate = ch.dark_rate_cps
    if ch.multiphoton:
        # uncorrelated extra events from residual multiphoton emission
        alice_bg_rate = alice_bg_rate + src.g2_x * src.rep_rate_hz * p_pair * surv_a / ALICE_CHANNEL_COUNT
        bob_bg_rate = bob_bg_rate + src.g2_xx * src.rep_rate_hz * p_pair * surv_b / BOB_CHANNEL_COUNT
    bg_ch_a, bg_tk_a = _background_events(rng_bg, ALICE_CHANNEL_COUNT, alice_bg_rate, duration_s, max_tick)
    bg_ch_b, bg_tk_b = _background_events(rng_bg, BOB_CHANNEL_COUNT, bob_bg_rate, duration_s, max_tick)

    stream_a = TagStream("A", np.concatenate([ch_a, bg_ch_a]), np.concatenate([tk_a, bg_tk_a])).sorted()
    stream_b = TagStream("B", np.concatenate([ch_b, bg_ch_b]), np.concatenate([tk_b, bg_tk_b])).sorted()

    truth = TruthLog(emitted_pairs=int(n_both + n_only_a + n_only_b + n_lost))
    if collect_truth:
        truth.pulse_index = np.concatenate([pulses_both, pulses_a, pulses_b])
        truth.setting_a = np.concatenate([set_a_both, set_a_only, np.full(int(n_only_b), -1, np.int8)]).astype(np.int8)
        truth.outcome_a = np.concatenate([out_a_both, out_a_only, np.full(int(n_only_b), -1, np.int8)]).astype(np.int8)
        truth.setting_b = np.concatenate([set_b_both, np.full(int(n_only_a), -1, np.int8), set_b_only]).astype(np.int8)
        truth.outcome_b = np.concatenate([out_b_both, np.full(int(n_only_a), -1, np.int8), out_b_only]).astype(np.int8)
        truth.detected_a = np.concatenate([np.ones(n_both, bool), np.ones(int(n_only_a), bool), np.zeros(int(n_only_b), bool)])
        truth.detected_b = np.concatenate([np.ones(n_both, bool), np.zeros(int(n_only_a), bool), np.ones(int(n_only_b), bool)])
        truth.tick_a = np.concatenate([tick_a_both, tick_a_only, np.full(int(n_only_b), -1, np.int64)])
        truth.tick_b = np.concatenate([tick_b_both, np.full(int(n_only_a), -1, np.int64), tick_b_only])
    return AcquisitionResult(stream_a=stream_a, stream_b=stream_b, truth=truth)


def _background_events(rng, n_channels: int, rate_cps: float, duration_s: float, max_tick: int):
    channels = []
    ticks = []
    for det in range(n_channels):
        count = rng.poisson(rate_cps * duration_s)
        channels.append(np.full(count, det, dtype=np.uint8))
        ticks.append(rng.integers(0, max(max_tick, 1), size=count, dtype=np.int64))
    return np.concatenate(channels), np.concatenate(ticks)


def public_streams(stream_a: TagStream, stream_b: TagStream) -> tuple[TagStream, TagStream]:
    """Duplicate the publicly shared synchronization channels of each stream."""
    return stream_a.subset(ALICE_PUBLIC_CHANNELS), stream_b.subset(BOB_PUBLIC_CHANNELS)
