"""Alice and Bob session engines over the service channel.

The transmitter engine owns the symbol stream and the interferometer
correction; the receiver engine owns detection records and the drift
estimate.  They interact only through framed messages, so a session
transcript is a complete record of the classical dialogue.  The photon
path itself is simulated by the orchestrator in ``run_session``, which
walks both engines chunk by chunk until the sifted block is full.

Sifting discloses, per detection: the qubit slot, whether the receiver
measured in the monitor basis, and (for monitor events) which output port
fired.  Measured key bins are never announced.  Because of that, the
receiver-side error tally for the key basis only becomes known to the
transmitter later, during reconciliation; ``run_session`` fills that one
field of the returned statistics by comparing the two sifted blocks
directly, standing in for the count the error-correction stage reveals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelState,
    DetectionBatch,
    DetectorSpec,
    LinkModel,
    ReceiverSpec,
    simulate_slots,
)
from .distill import DistillationParams, MonitorStats
from .errors import (
    FrameError,
    HandshakeError,
    ParameterError,
    SessionAbort,
    TransportError,
)
from .framing import (
    ANNOUNCE_ERROR_PORT,
    ANNOUNCE_MONITOR_BASIS,
    SIFT_DECOY,
    SIFT_KEEP,
    SIFT_MONITOR_BASIS,
    MessageType,
    pack_abort,
    pack_detection_announce,
    pack_session_params,
    pack_sift_reply,
    pack_stabilizer_note,
    unpack_abort,
    unpack_detection_announce,
    unpack_session_params,
    unpack_sift_reply,
    unpack_stabilizer_note,
)
from .optics import FiberSpec, PulseSpec, TimeBinGrid
from .transmitter import Basis, EmissionConfig, Intensity, SymbolStream
from .transport import FrameChannel, transport_pair

__all__ = [
    "AliceEngine",
    "BobEngine",
    "DriftProcess",
    "MonitorStats",
    "RawBlock",
    "SessionConfig",
    "StabilizerConfig",
    "StabilizerState",
    "run_session",
    "stabilize_step",
    "wrap_phase",
]

ABORT_DUPLICATE_ANNOUNCE = 1
ABORT_PARAM_MISMATCH = 2
ABORT_PROTOCOL = 3


def wrap_phase(phi: float) -> float:
    """Fold an angle into (-pi, pi]."""
    out = math.fmod(phi + math.pi, 2.0 * math.pi)
    if out <= 0.0:
        out += 2.0 * math.pi
    return out - math.pi


@dataclass(frozen=True, slots=True)
class StabilizerConfig:
    """Dither-and-descend feedback on the transmitter interferometer.

    The error-rate observable is even in the phase offset, so the
    controller alternates measurement blocks at +/- ``dither_step_rad``
    around its current centre and steps toward whichever side reported
    fewer monitor errors.  ``update_block`` counts monitor-basis
    detections per estimate.  The drift fields describe the environment
    the loop fights: a Brownian walk plus a slow diurnal swing.
    """

    enabled: bool = True
    dither_step_rad: float = 0.05
    gain: float = 0.5
    update_block: int = 200
    random_walk_sigma: float = 0.0
    diurnal_amplitude_rad: float = 0.0
    diurnal_period_s: float = 86_400.0

    def __post_init__(self) -> None:
        if self.dither_step_rad <= 0:
            raise ParameterError(f"dither step must be positive, got {self.dither_step_rad}")
        if self.update_block <= 0:
            raise ParameterError(f"update block must be positive, got {self.update_block}")
        if self.gain <= 0:
            raise ParameterError(f"gain must be positive, got {self.gain}")
        if self.random_walk_sigma < 0 or self.diurnal_amplitude_rad < 0:
            raise ParameterError("drift magnitudes must be >= 0")
        if self.diurnal_period_s <= 0:
            raise ParameterError("diurnal period must be positive")


@dataclass(frozen=True)
class SessionConfig:
    """Everything both engines must agree on for one sifted block."""

    block_target_n: int
    emission: EmissionConfig
    receiver: ReceiverSpec
    detector_z: DetectorSpec
    detector_x: DetectorSpec
    fiber: FiberSpec
    pulse: PulseSpec
    stabilization: StabilizerConfig = field(default_factory=StabilizerConfig)
    distillation: DistillationParams = field(default_factory=DistillationParams)
    grid: TimeBinGrid = field(default_factory=TimeBinGrid)
    bin_flip_prob: float = 0.0
    interferometer_offset_rad: float = 0.0
    announce_chunk: int = 1 << 17
    timeout_slots: int = 1_000_000_000

    def __post_init__(self) -> None:
        if self.block_target_n <= 0:
            raise ParameterError(f"block target must be positive, got {self.block_target_n}")
        if self.announce_chunk <= 0:
            raise ParameterError(f"announce chunk must be positive, got {self.announce_chunk}")
        if self.timeout_slots <= 0:
            raise ParameterError("timeout must be positive")

    def link_model(self) -> LinkModel:
        return LinkModel(
            pulse=self.pulse,
            fiber=self.fiber,
            receiver=self.receiver,
            detector_z=self.detector_z,
            detector_x=self.detector_x,
            emission=self.emission,
            grid=self.grid,
            bin_flip_prob=self.bin_flip_prob,
        )

    @property
    def qubit_rate_hz(self) -> float:
        return 1e12 / self.grid.period_ps


@dataclass(frozen=True)
class RawBlock:
    """Sifted key bits with the qubit slot each one came from."""

    bits: np.ndarray
    slots: np.ndarray

    def __len__(self) -> int:
        return int(self.bits.size)


class DriftProcess:
    """Interferometer phase drift along simulated time.

    A Brownian walk (per-step sigma scales with the square root of the
    time step) plus a deterministic diurnal sinusoid.  Query times must
    not go backwards; the walk state advances with each call.
    """

    def __init__(self, sigma: float, amplitude_rad: float, period_s: float, seed: int = 0):
        if sigma < 0 or amplitude_rad < 0 or period_s <= 0:
            raise ParameterError("bad drift parameters")
        self.sigma = sigma
        self.amplitude_rad = amplitude_rad
        self.period_s = period_s
        self._rng = np.random.default_rng(seed)
        self._t = 0.0
        self._walk = 0.0

    @classmethod
    def from_config(cls, config: StabilizerConfig, seed: int = 0) -> "DriftProcess":
        return cls(
            config.random_walk_sigma,
            config.diurnal_amplitude_rad,
            config.diurnal_period_s,
            seed,
        )

    def phase_at(self, t: float) -> float:
        if t < self._t:
            raise ParameterError(f"drift queried backwards: {t} < {self._t}")
        dt = t - self._t
        if dt > 0.0 and self.sigma > 0.0:
            self._walk += self.sigma * math.sqrt(dt) * float(self._rng.standard_normal())
        self._t = t
        return self._walk + self.amplitude_rad * math.sin(2.0 * math.pi * t / self.period_s)


@dataclass
class StabilizerState:
    """Controller memory carried across update blocks (and sessions)."""

    center_rad: float = 0.0
    dither_sign: int = 1
    pending_error: float | None = None
    update_index: int = 0

    def applied_phase(self, config: StabilizerConfig) -> float:
        return wrap_phase(self.center_rad + self.dither_sign * config.dither_step_rad)


def stabilize_step(
    state: StabilizerState, error_rate: float, config: StabilizerConfig
) -> float:
    """Consume one block's error estimate, return the next phase to apply.

    Estimates alternate between the two dither sides; once a pair is
    complete the centre moves by gain x step toward the lower-error side
    (no move on a tie, which is what makes the dither necessary).
    """
    if state.pending_error is None:
        state.pending_error = error_rate
        state.dither_sign = -1
    else:
        if state.pending_error < error_rate:
            direction = 1
        elif error_rate < state.pending_error:
            direction = -1
        else:
            direction = 0
        state.center_rad = wrap_phase(
            state.center_rad + direction * config.gain * config.dither_step_rad
        )
        state.pending_error = None
        state.dither_sign = 1
    state.update_index += 1
    return state.applied_phase(config)


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------


@dataclass
class _SiftRecords:
    """Per-detection columns accumulated over a session, one row per
    announced event, so the final statistics can be cut at an exact slot."""

    slot: list = field(default_factory=list)
    keep: list = field(default_factory=list)
    monitor: list = field(default_factory=list)
    decoy: list = field(default_factory=list)
    x_error: list = field(default_factory=list)
    bit: list = field(default_factory=list)

    def append(self, slot, keep, monitor, decoy, x_error, bit) -> None:
        self.slot.append(slot)
        self.keep.append(keep)
        self.monitor.append(monitor)
        self.decoy.append(decoy)
        self.x_error.append(x_error)
        self.bit.append(bit)

    def concatenated(self):
        if not self.slot:
            empty_u64 = np.zeros(0, dtype=np.uint64)
            empty_b = np.zeros(0, dtype=bool)
            empty_u8 = np.zeros(0, dtype=np.uint8)
            return empty_u64, empty_b, empty_b, empty_b, empty_b, empty_u8
        return (
            np.concatenate(self.slot),
            np.concatenate(self.keep),
            np.concatenate(self.monitor),
            np.concatenate(self.decoy),
            np.concatenate(self.x_error),
            np.concatenate(self.bit),
        )


def _finalize(records: _SiftRecords, target: int, rate_hz: float, fallback_slots: int):
    """Cut the record at the slot where the target was reached and tally.

    Returns ``(block, stats)``.  When the target was never reached the
    partial block and the tallies cover everything seen before timeout.
    """
    slot, keep, monitor, decoy, x_error, bit = records.concatenated()
    kept_idx = np.flatnonzero(keep)
    if target > 0 and kept_idx.size >= target:
        kept_idx = kept_idx[:target]
        cutoff = int(slot[kept_idx[-1]])
        window = slot <= cutoff
        elapsed_slots = cutoff + 1
    else:
        window = np.ones(slot.shape, dtype=bool)
        elapsed_slots = fallback_slots
    kz = keep & window
    mx = monitor & window
    stats = MonitorStats(
        n_z_signal=int(np.count_nonzero(kz & ~decoy)),
        n_z_decoy=int(np.count_nonzero(kz & decoy)),
        n_x_signal=int(np.count_nonzero(mx & ~decoy)),
        n_x_decoy=int(np.count_nonzero(mx & decoy)),
        m_x_signal=int(np.count_nonzero(mx & x_error & ~decoy)),
        m_x_decoy=int(np.count_nonzero(mx & x_error & decoy)),
        elapsed_qubit_slots=int(elapsed_slots),
        elapsed_time_s=elapsed_slots / rate_hz,
    )
    block = RawBlock(bits=bit[kept_idx].copy(), slots=slot[kept_idx].copy())
    return block, stats


class AliceEngine:
    """Transmitter side: answers announcements with verdicts and trims her
    interferometer phase from the receiver's error reports."""

    def __init__(
        self,
        config: SessionConfig,
        channel: FrameChannel,
        stream_seed: int,
        stabilizer_state: StabilizerState | None = None,
    ):
        self.config = config
        self.channel = channel
        self.stream = SymbolStream(stream_seed, config.emission)
        self.records = _SiftRecords()
        self.keep_count = 0
        self.stabilizer = stabilizer_state if stabilizer_state is not None else StabilizerState()
        self.phase_correction = (
            self.stabilizer.applied_phase(config.stabilization)
            if config.stabilization.enabled
            else 0.0
        )
        self._last_slot = -1
        self._params_sent: bytes | None = None

    # -- handshake --------------------------------------------------------

    def _session_params(self, session_id: int) -> bytes:
        c = self.config
        return pack_session_params(
            session_id,
            c.emission.mu_signal,
            c.emission.mu_decoy,
            c.emission.p_z,
            c.emission.p_signal,
            c.distillation.eps_sec,
            c.distillation.eps_cor,
            c.block_target_n,
            c.announce_chunk,
            c.distillation.cascade_passes,
            c.stabilization.update_block,
            c.stabilization.gain,
            c.stabilization.dither_step_rad,
        )

    def say_hello(self) -> None:
        self.channel.send(MessageType.HELLO, b"")

    def propose_session(self, session_id: int) -> None:
        msg_type, _ = self._recv_handshake()
        if msg_type != MessageType.HELLO:
            raise HandshakeError(f"expected a greeting, got {msg_type!r}")
        self._params_sent = self._session_params(session_id)
        self.channel.send(MessageType.SESSION_PARAMS, self._params_sent)

    def confirm_session(self) -> None:
        msg_type, payload = self._recv_handshake()
        if msg_type != MessageType.SESSION_PARAMS or payload != self._params_sent:
            self.abort(ABORT_PARAM_MISMATCH, "session parameter echo mismatch")
        self._params_sent = None

    def _recv_handshake(self):
        try:
            return self.channel.recv()
        except (FrameError, TransportError) as exc:
            raise HandshakeError(f"cannot understand the peer: {exc}") from exc

    # -- session ----------------------------------------------------------

    def abort(self, reason: int, text: str):
        self.channel.send(MessageType.ABORT, pack_abort(reason, text))
        raise SessionAbort(text)

    def handle_frame(self, msg_type: MessageType, payload: bytes) -> None:
        if msg_type == MessageType.DETECTION_ANNOUNCE:
            self._handle_announce(payload)
        elif msg_type == MessageType.STABILIZER_NOTE:
            self._handle_note(payload)
        elif msg_type == MessageType.ABORT:
            reason, text = unpack_abort(payload)
            raise SessionAbort(f"peer aborted ({reason}): {text}")
        else:
            self.abort(ABORT_PROTOCOL, f"unexpected {msg_type!r} during sifting")

    def _handle_announce(self, payload: bytes) -> None:
        slots, flags = unpack_detection_announce(payload)
        if slots.size:
            signed = slots.astype(np.int64)
            if signed[0] <= self._last_slot or np.any(np.diff(signed) <= 0):
                self.abort(ABORT_DUPLICATE_ANNOUNCE, "duplicate or out-of-order qubit index")
            self._last_slot = int(signed[-1])
        basis, bit, intensity = self.stream.fields_at(slots)
        bob_monitor = (flags & ANNOUNCE_MONITOR_BASIS) != 0
        bob_error = (flags & ANNOUNCE_ERROR_PORT) != 0
        keep = (basis == Basis.Z) & ~bob_monitor
        monitor = (basis == Basis.X) & bob_monitor
        decoy = intensity == Intensity.DECOY
        verdicts = (
            keep.astype(np.uint8) * SIFT_KEEP
            | monitor.astype(np.uint8) * SIFT_MONITOR_BASIS
            | decoy.astype(np.uint8) * SIFT_DECOY
        )
        self.records.append(slots, keep, monitor, decoy, monitor & bob_error, bit)
        self.keep_count += int(np.count_nonzero(keep))
        self.channel.send(MessageType.SIFT_REPLY, pack_sift_reply(verdicts))

    def _handle_note(self, payload: bytes) -> None:
        _, error_rate, samples = unpack_stabilizer_note(payload)
        if samples < self.config.stabilization.update_block:
            return
        self.phase_correction = stabilize_step(
            self.stabilizer, error_rate, self.config.stabilization
        )


class BobEngine:
    """Receiver side: announces detections, applies the verdicts, and
    reports monitor error estimates for the feedback loop."""

    def __init__(self, config: SessionConfig, channel: FrameChannel):
        self.config = config
        self.channel = channel
        self.records = _SiftRecords()
        self.keep_count = 0
        self._pending: tuple[np.ndarray, ...] | None = None
        self._x_events = 0
        self._x_errors = 0
        self._update_index = 0

    # -- handshake --------------------------------------------------------

    def answer_hello(self) -> None:
        msg_type, _ = self._recv_handshake()
        if msg_type != MessageType.HELLO:
            raise HandshakeError(f"expected a greeting, got {msg_type!r}")
        self.channel.send(MessageType.HELLO, b"")

    def accept_session(self) -> None:
        msg_type, payload = self._recv_handshake()
        if msg_type != MessageType.SESSION_PARAMS:
            raise HandshakeError(f"expected session parameters, got {msg_type!r}")
        fields = unpack_session_params(payload)
        c = self.config
        expected = (
            c.emission.mu_signal, c.emission.mu_decoy, c.emission.p_z,
            c.emission.p_signal, c.distillation.eps_sec, c.distillation.eps_cor,
            c.block_target_n, c.announce_chunk, c.distillation.cascade_passes,
            c.stabilization.update_block, c.stabilization.gain,
            c.stabilization.dither_step_rad,
        )
        if tuple(fields[1:]) != expected:
            self.channel.send(
                MessageType.ABORT, pack_abort(ABORT_PARAM_MISMATCH, "parameter disagreement")
            )
            raise HandshakeError("session parameters disagree with local configuration")
        self.channel.send(MessageType.SESSION_PARAMS, payload)

    def _recv_handshake(self):
        try:
            return self.channel.recv()
        except (FrameError, TransportError) as exc:
            raise HandshakeError(f"cannot understand the peer: {exc}") from exc

    # -- session ----------------------------------------------------------

    def announce(self, batch: DetectionBatch) -> None:
        slot, bins, detector, _offset, error_port, _dark = batch.kept_arrays()
        monitor = detector == Basis.X
        flags = (
            monitor.astype(np.uint8) * ANNOUNCE_MONITOR_BASIS
            | (monitor & error_port).astype(np.uint8) * ANNOUNCE_ERROR_PORT
        )
        self._pending = (slot.astype(np.uint64), bins.astype(np.uint8), monitor, error_port)
        self.channel.send(
            MessageType.DETECTION_ANNOUNCE, pack_detection_announce(slot, flags)
        )

    def handle_frame(self, msg_type: MessageType, payload: bytes) -> None:
        if msg_type == MessageType.SIFT_REPLY:
            self._handle_reply(payload)
        elif msg_type == MessageType.ABORT:
            reason, text = unpack_abort(payload)
            raise SessionAbort(f"peer aborted ({reason}): {text}")
        else:
            raise SessionAbort(f"unexpected {msg_type!r} during sifting")

    def _handle_reply(self, payload: bytes) -> None:
        if self._pending is None:
            raise SessionAbort("verdicts arrived with nothing announced")
        slot, bins, monitor, error_port = self._pending
        self._pending = None
        verdicts = unpack_sift_reply(payload)
        if verdicts.size != slot.size:
            raise SessionAbort("verdict count does not match the announcement")
        keep = (verdicts & SIFT_KEEP) != 0
        sender_monitor = (verdicts & SIFT_MONITOR_BASIS) != 0
        decoy = (verdicts & SIFT_DECOY) != 0
        if np.any(keep & monitor):
            raise SessionAbort("keep verdict for a monitor-basis detection")
        counted = sender_monitor & monitor
        self.records.append(slot, keep, counted, decoy, counted & error_port, bins)
        self.keep_count += int(np.count_nonzero(keep))
        self._x_events += int(np.count_nonzero(counted))
        self._x_errors += int(np.count_nonzero(counted & error_port))
        self._maybe_report()

    def _maybe_report(self) -> None:
        block = self.config.stabilization.update_block
        if self.config.stabilization.enabled:
            while self._x_events >= block:
                estimate = self._x_errors / self._x_events
                self.channel.send(
                    MessageType.STABILIZER_NOTE,
                    pack_stabilizer_note(self._update_index, estimate, self._x_events),
                )
                self._update_index += 1
                self._x_events = 0
                self._x_errors = 0
        # Zero-sample heartbeat: the peer discards it, but its presence
        # means every pump point in the chunk loop has a frame to read,
        # which keeps blocking transports in lockstep.
        self.channel.send(
            MessageType.STABILIZER_NOTE, pack_stabilizer_note(self._update_index, 0.0, 0)
        )


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _exchange_chunk(chan_a: FrameChannel, alice, chan_b: FrameChannel, bob) -> None:
    """Complete one announce/verdict/report round with blocking reads.

    Each round is exactly one announcement, one verdict frame, and a
    stabilizer-note sequence that always ends with a zero-sample
    heartbeat, so both sides know precisely how many frames to wait for.
    Single-read polling would starve here on stream sockets, which are
    free to fragment the megabyte-scale announcements.
    """
    alice.handle_frame(*chan_a.recv())
    bob.handle_frame(*chan_b.recv())
    while True:
        msg_type, payload = chan_a.recv()
        alice.handle_frame(msg_type, payload)
        if msg_type == MessageType.STABILIZER_NOTE:
            if unpack_stabilizer_note(payload)[2] == 0:
                break


def run_session(
    config: SessionConfig,
    seed: int = 0,
    transport=None,
    drift: DriftProcess | None = None,
    time_origin_s: float = 0.0,
    stabilizer_state: StabilizerState | None = None,
) -> tuple[RawBlock, RawBlock, MonitorStats]:
    """Drive one sifted block end to end and return aligned raw keys.

    The photon path is simulated here, chunk by chunk; every classical
    word between the engines crosses the transport as frames.  ``drift``
    (shared with the caller so its walk persists across sessions) sets
    the interferometer phase error at each chunk's start time, measured
    from ``time_origin_s``.  The returned statistics are the
    transmitter's view; its key-basis error count is filled by direct
    comparison of the two blocks, which reconciliation would otherwise
    reveal.  Raises on transport failure or protocol violations with a
    frame-level abort where possible.
    """
    endpoints = transport if transport is not None else transport_pair("loopback")
    chan_a, chan_b = FrameChannel(endpoints[0]), FrameChannel(endpoints[1])
    roots = np.random.SeedSequence(seed).spawn(3)
    stream_seed, channel_seed, session_id = (
        int(r.generate_state(1, dtype=np.uint64)[0]) for r in roots
    )

    alice = AliceEngine(config, chan_a, stream_seed, stabilizer_state)
    bob = BobEngine(config, chan_b)

    alice.say_hello()
    bob.answer_hello()
    alice.propose_session(session_id)
    bob.accept_session()
    alice.confirm_session()

    model = config.link_model()
    state = ChannelState()
    rng = np.random.default_rng(channel_seed)
    rate = config.qubit_rate_hz
    slot = 0
    timed_out = False
    while alice.keep_count < config.block_target_n:
        if slot >= config.timeout_slots:
            timed_out = True
            break
        n = min(config.announce_chunk, config.timeout_slots - slot)
        base = config.interferometer_offset_rad
        if drift is not None:
            base += drift.phase_at(time_origin_s + slot / rate)
        phi = base + alice.phase_correction

        def phase_fn(slots, value=phi):
            return np.full(np.shape(slots), value)

        batch = simulate_slots(model, alice.stream, slot, n, rng, state, phase_fn)
        bob.announce(batch)
        _exchange_chunk(chan_a, alice, chan_b, bob)
        slot += n

    target = 0 if timed_out else config.block_target_n
    block_a, stats_a = _finalize(alice.records, target, rate, slot)
    block_b, stats_b = _finalize(bob.records, target, rate, slot)

    if len(block_a) != len(block_b) or not np.array_equal(block_a.slots, block_b.slots):
        raise SessionAbort("sifted blocks are misaligned")

    # Key-basis error tallies, split by intensity the same way the decoy
    # flags were disclosed.  stats_b gets the same numbers: the receiver
    # learns them when reconciliation corrects its block.
    if len(block_a):
        _, keep, _, decoy, _, _ = alice.records.concatenated()
        kept_decoy = decoy[np.flatnonzero(keep)[: len(block_a)]]
        disagree = block_a.bits != block_b.bits
        for stats in (stats_a, stats_b):
            stats.m_z_signal = int(np.count_nonzero(disagree & ~kept_decoy))
            stats.m_z_decoy = int(np.count_nonzero(disagree & kept_decoy))
            stats.check()
    if stats_a != stats_b:
        raise SessionAbort("the two engines disagree on the session statistics")
    return block_a, block_b, stats_a
