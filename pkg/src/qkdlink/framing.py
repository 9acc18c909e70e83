"""Service-channel wire format.

Every message travels in one frame::

    magic   4 bytes  51 4B 44 53 ("QKDS")
    version 1 byte   0x01
    type    1 byte   MessageType value
    length  4 bytes  payload size, big-endian unsigned
    payload `length` bytes
    crc32   4 bytes  CRC-32 of header + payload, big-endian unsigned

All multi-byte integers anywhere in this module are big-endian, and packed
bit arrays are most-significant-bit first.  Payload layouts by type:

==================  ===========================================================
HELLO               empty; opens the conversation in either direction.
SESSION_PARAMS      session_id u64; mu_signal, mu_decoy, p_z, p_signal,
                    eps_sec, eps_cor f64; block_target u32; announce_chunk u32;
                    cascade_passes u16; stabilizer_update_block u32;
                    stabilizer_gain f64; stabilizer_step_rad f64.  Sent by the
                    initiator; the responder echoes it byte-for-byte to accept.
DETECTION_ANNOUNCE  count u32, then `count` entries of slot u64 + flags u8.
                    Flag bit 0: click was on the monitor arm; bit 1: it landed
                    on the monitor's error port.  Key-arm entries never reveal
                    which bin fired.
SIFT_REPLY          count u32, then `count` verdict bytes, same order as the
                    announcement.  Bit 0: keep (bases matched); bit 1: sender
                    used the monitor basis; bit 2: sender used the decoy level.
CASCADE_PARITY_REQ  count u32, then `count` entries of pass u8 + lo u32 +
                    hi u32, each naming the half-open range [lo, hi) in that
                    pass's shuffled order.
CASCADE_PARITY_RESP count u32, then ceil(count / 8) bytes of parity bits in
                    request order.
SHUFFLE_SEED        pass u8, seed u64 for that pass's permutation.
VERIFY_HASH         seed u64, n_bits u16, then packed hash bits.
PA_SEED             seed u64, final_len_bits u32, raw_len_bits u32.
KEY_ACK             status u8 (0 = accepted), final_len_bits u32.
STABILIZER_NOTE     update_index u32, phase_estimate_rad f64, sample_count u32.
ABORT               reason u16, text_len u16, UTF-8 text.
==================  ===========================================================

An optional keyed-hash trailer (16 bytes, HMAC-SHA256 truncated) can be
appended after the checksum when both ends share an authentication key; it
is off by default and no session in this package turns it on.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import struct
import zlib
from enum import IntEnum

import numpy as np

from .errors import CorruptFrameError, DesyncError, FrameError, IncompleteFrameError

MAGIC = b"QKDS"
VERSION = 0x01
HEADER = struct.Struct(">4sBBI")
CRC = struct.Struct(">I")
AUTH_TRAILER_LEN = 16
MAX_WIRE_PAYLOAD = (1 << 32) - 1
DEFAULT_MAX_PAYLOAD = 1 << 24


class MessageType(IntEnum):
    HELLO = 0x01
    SESSION_PARAMS = 0x02
    DETECTION_ANNOUNCE = 0x10
    SIFT_REPLY = 0x11
    CASCADE_PARITY_REQ = 0x20
    CASCADE_PARITY_RESP = 0x21
    SHUFFLE_SEED = 0x22
    VERIFY_HASH = 0x30
    PA_SEED = 0x40
    KEY_ACK = 0x41
    STABILIZER_NOTE = 0x50
    ABORT = 0x60


def encode_frame(
    msg_type: MessageType | int,
    payload: bytes = b"",
    auth_key: bytes | None = None,
) -> bytes:
    """Serialize one frame, including the checksum (and trailer if keyed)."""
    msg_type = MessageType(msg_type)
    if len(payload) > MAX_WIRE_PAYLOAD:
        raise FrameError(f"payload of {len(payload)} bytes exceeds the 32-bit length field")
    head = HEADER.pack(MAGIC, VERSION, msg_type, len(payload))
    body = head + payload
    frame = body + CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)
    if auth_key is not None:
        frame += hmac_mod.new(auth_key, body, hashlib.sha256).digest()[:AUTH_TRAILER_LEN]
    return frame


def decode_frame(
    data: bytes | bytearray | memoryview,
    offset: int = 0,
    auth_key: bytes | None = None,
    max_payload: int = DEFAULT_MAX_PAYLOAD,
) -> tuple[MessageType, bytes, int]:
    """Decode the frame starting at ``offset``.

    Returns ``(msg_type, payload, next_offset)``.  Raises DesyncError off a
    frame boundary, IncompleteFrameError when bytes are still missing, and
    CorruptFrameError for checksum, version, length, or type problems.
    """
    view = memoryview(data)
    if len(view) - offset < HEADER.size:
        if view[offset : offset + 4] != MAGIC[: len(view) - offset]:
            raise DesyncError("not at a frame boundary")
        raise IncompleteFrameError("frame header truncated")
    magic, version, type_byte, length = HEADER.unpack_from(view, offset)
    if magic != MAGIC:
        raise DesyncError("not at a frame boundary")
    if version != VERSION:
        raise CorruptFrameError(f"unsupported frame version 0x{version:02x}")
    if length > max_payload:
        raise CorruptFrameError(f"implausible payload length {length}")
    trailer = AUTH_TRAILER_LEN if auth_key is not None else 0
    end = offset + HEADER.size + length + CRC.size + trailer
    if len(view) < end:
        raise IncompleteFrameError("frame body truncated")
    body = bytes(view[offset : offset + HEADER.size + length])
    crc_at = offset + HEADER.size + length
    (crc,) = CRC.unpack_from(view, crc_at)
    if crc != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CorruptFrameError("checksum mismatch")
    if auth_key is not None:
        want = hmac_mod.new(auth_key, body, hashlib.sha256).digest()[:AUTH_TRAILER_LEN]
        got = bytes(view[crc_at + CRC.size : end])
        if not hmac_mod.compare_digest(want, got):
            raise CorruptFrameError("authentication trailer mismatch")
    try:
        msg_type = MessageType(type_byte)
    except ValueError as exc:
        raise CorruptFrameError(f"unknown message type 0x{type_byte:02x}") from exc
    return msg_type, body[HEADER.size :], end


class FrameDecoder:
    """Incremental decoder that self-synchronizes after garbage.

    Feed arbitrary byte chunks; complete frames come out in order.  On a bad
    magic or failed checksum the decoder slides forward to the next magic
    and keeps going, counting what it threw away.
    """

    def __init__(self, auth_key: bytes | None = None, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self._buf = bytearray()
        self._auth_key = auth_key
        self._max_payload = max_payload
        self.frames_decoded = 0
        self.bytes_discarded = 0
        self.corrupt_frames = 0

    def feed(self, data: bytes) -> list[tuple[MessageType, bytes]]:
        self._buf.extend(data)
        out: list[tuple[MessageType, bytes]] = []
        pos = 0
        while True:
            try:
                msg_type, payload, pos = decode_frame(
                    self._buf, pos, self._auth_key, self._max_payload
                )
                out.append((msg_type, payload))
                self.frames_decoded += 1
            except IncompleteFrameError:
                break
            except DesyncError:
                nxt = self._buf.find(MAGIC, pos + 1)
                if nxt < 0:
                    # Keep a partial magic at the tail, drop the rest.
                    keep = max(len(self._buf) - (len(MAGIC) - 1), pos)
                    self.bytes_discarded += keep - pos
                    pos = keep
                    break
                self.bytes_discarded += nxt - pos
                pos = nxt
            except CorruptFrameError:
                self.corrupt_frames += 1
                self.bytes_discarded += 1
                pos += 1
        del self._buf[:pos]
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


_SESSION_PARAMS = struct.Struct(">Q6dIIHIdd")
_ANNOUNCE_ENTRY = np.dtype([("slot", ">u8"), ("flags", "u1")])
_PARITY_ENTRY = np.dtype([("pass", "u1"), ("lo", ">u4"), ("hi", ">u4")])
_COUNT = struct.Struct(">I")

ANNOUNCE_MONITOR_BASIS = 0x01
ANNOUNCE_ERROR_PORT = 0x02
SIFT_KEEP = 0x01
SIFT_MONITOR_BASIS = 0x02
SIFT_DECOY = 0x04


def pack_session_params(
    session_id: int,
    mu_signal: float,
    mu_decoy: float,
    p_z: float,
    p_signal: float,
    eps_sec: float,
    eps_cor: float,
    block_target: int,
    announce_chunk: int,
    cascade_passes: int,
    stabilizer_update_block: int,
    stabilizer_gain: float,
    stabilizer_step_rad: float,
) -> bytes:
    return _SESSION_PARAMS.pack(
        session_id,
        mu_signal,
        mu_decoy,
        p_z,
        p_signal,
        eps_sec,
        eps_cor,
        block_target,
        announce_chunk,
        cascade_passes,
        stabilizer_update_block,
        stabilizer_gain,
        stabilizer_step_rad,
    )


def unpack_session_params(payload: bytes) -> tuple:
    try:
        return _SESSION_PARAMS.unpack(payload)
    except struct.error as exc:
        raise FrameError(f"bad SESSION_PARAMS payload: {exc}") from exc


def pack_detection_announce(slots: np.ndarray, flags: np.ndarray) -> bytes:
    entries = np.empty(len(slots), dtype=_ANNOUNCE_ENTRY)
    entries["slot"] = slots
    entries["flags"] = flags
    return _COUNT.pack(len(slots)) + entries.tobytes()


def unpack_detection_announce(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    (count,) = _COUNT.unpack_from(payload)
    body = payload[_COUNT.size :]
    if len(body) != count * _ANNOUNCE_ENTRY.itemsize:
        raise FrameError("DETECTION_ANNOUNCE length does not match its count")
    entries = np.frombuffer(body, dtype=_ANNOUNCE_ENTRY)
    return entries["slot"].astype(np.uint64), entries["flags"].copy()


def pack_sift_reply(verdicts: np.ndarray) -> bytes:
    return _COUNT.pack(len(verdicts)) + np.asarray(verdicts, dtype=np.uint8).tobytes()


def unpack_sift_reply(payload: bytes) -> np.ndarray:
    (count,) = _COUNT.unpack_from(payload)
    body = payload[_COUNT.size :]
    if len(body) != count:
        raise FrameError("SIFT_REPLY length does not match its count")
    return np.frombuffer(body, dtype=np.uint8).copy()


def pack_parity_request(passes: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bytes:
    entries = np.empty(len(lo), dtype=_PARITY_ENTRY)
    entries["pass"] = passes
    entries["lo"] = lo
    entries["hi"] = hi
    return _COUNT.pack(len(lo)) + entries.tobytes()


def unpack_parity_request(payload: bytes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    (count,) = _COUNT.unpack_from(payload)
    body = payload[_COUNT.size :]
    if len(body) != count * _PARITY_ENTRY.itemsize:
        raise FrameError("CASCADE_PARITY_REQ length does not match its count")
    entries = np.frombuffer(body, dtype=_PARITY_ENTRY)
    return (
        entries["pass"].copy(),
        entries["lo"].astype(np.int64),
        entries["hi"].astype(np.int64),
    )


def pack_parity_response(bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return _COUNT.pack(len(bits)) + np.packbits(bits).tobytes()


def unpack_parity_response(payload: bytes) -> np.ndarray:
    (count,) = _COUNT.unpack_from(payload)
    body = payload[_COUNT.size :]
    if len(body) != (count + 7) // 8:
        raise FrameError("CASCADE_PARITY_RESP length does not match its count")
    return np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=count)


_SHUFFLE = struct.Struct(">BQ")


def pack_shuffle_seed(pass_index: int, seed: int) -> bytes:
    return _SHUFFLE.pack(pass_index, seed)


def unpack_shuffle_seed(payload: bytes) -> tuple[int, int]:
    try:
        return _SHUFFLE.unpack(payload)
    except struct.error as exc:
        raise FrameError(f"bad SHUFFLE_SEED payload: {exc}") from exc


_VERIFY_HEAD = struct.Struct(">QH")


def pack_verify_hash(seed: int, bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return _VERIFY_HEAD.pack(seed, len(bits)) + np.packbits(bits).tobytes()


def unpack_verify_hash(payload: bytes) -> tuple[int, np.ndarray]:
    try:
        seed, n_bits = _VERIFY_HEAD.unpack_from(payload)
    except struct.error as exc:
        raise FrameError(f"bad VERIFY_HASH payload: {exc}") from exc
    body = payload[_VERIFY_HEAD.size :]
    if len(body) != (n_bits + 7) // 8:
        raise FrameError("VERIFY_HASH length does not match its bit count")
    return seed, np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n_bits)


_PA_SEED = struct.Struct(">QII")


def pack_pa_seed(seed: int, final_len_bits: int, raw_len_bits: int) -> bytes:
    return _PA_SEED.pack(seed, final_len_bits, raw_len_bits)


def unpack_pa_seed(payload: bytes) -> tuple[int, int, int]:
    try:
        return _PA_SEED.unpack(payload)
    except struct.error as exc:
        raise FrameError(f"bad PA_SEED payload: {exc}") from exc


_KEY_ACK = struct.Struct(">BI")


def pack_key_ack(status: int, final_len_bits: int) -> bytes:
    return _KEY_ACK.pack(status, final_len_bits)


def unpack_key_ack(payload: bytes) -> tuple[int, int]:
    try:
        return _KEY_ACK.unpack(payload)
    except struct.error as exc:
        raise FrameError(f"bad KEY_ACK payload: {exc}") from exc


_STAB_NOTE = struct.Struct(">IdI")


def pack_stabilizer_note(update_index: int, phase_estimate_rad: float, sample_count: int) -> bytes:
    return _STAB_NOTE.pack(update_index, phase_estimate_rad, sample_count)


def unpack_stabilizer_note(payload: bytes) -> tuple[int, float, int]:
    try:
        return _STAB_NOTE.unpack(payload)
    except struct.error as exc:
        raise FrameError(f"bad STABILIZER_NOTE payload: {exc}") from exc


_ABORT_HEAD = struct.Struct(">HH")


def pack_abort(reason: int, text: str = "") -> bytes:
    raw = text.encode("utf-8")
    return _ABORT_HEAD.pack(reason, len(raw)) + raw


def unpack_abort(payload: bytes) -> tuple[int, str]:
    try:
        reason, text_len = _ABORT_HEAD.unpack_from(payload)
    except struct.error as exc:
        raise FrameError(f"bad ABORT payload: {exc}") from exc
    raw = payload[_ABORT_HEAD.size :]
    if len(raw) != text_len:
        raise FrameError("ABORT length does not match its text length")
    return reason, raw.decode("utf-8", errors="replace")
