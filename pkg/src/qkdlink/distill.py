"""Classical distillation of sifted bits into secret key.

The pipeline: interactive parity reconciliation with exact leakage
accounting, a seeded universal-hash verification exchange, one-decoy
finite-statistics bounds on the vacuum and single-photon yields, the
final key-length rule, and Toeplitz privacy amplification.

Everything interactive speaks real service-channel frames, so a captured
transcript replays the whole dialogue bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ParameterError, ReconciliationError
from .framing import (
    MessageType,
    pack_parity_request,
    pack_parity_response,
    pack_shuffle_seed,
    pack_verify_hash,
    unpack_parity_request,
    unpack_parity_response,
    unpack_shuffle_seed,
    unpack_verify_hash,
)
from .transmitter import EmissionConfig, Intensity
from .transport import FrameChannel, transport_pair

_VERIFY_BITS = 64


def binary_entropy(p: float) -> float:
    """Shannon entropy of a bit with bias ``p``, in bits."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


@dataclass(frozen=True, slots=True)
class DistillationParams:
    """Knobs for reconciliation and the finite-key bound."""

    ec_block_size: int = 8192
    ec_efficiency_target: float = 1.05
    eps_sec: float = 1e-9
    eps_cor: float = 1e-9
    cascade_passes: int = 4

    def __post_init__(self) -> None:
        if self.ec_block_size < 2 or self.ec_block_size & (self.ec_block_size - 1):
            raise ParameterError(f"ec_block_size must be a power of two, got {self.ec_block_size}")
        if self.ec_efficiency_target < 1.0:
            raise ParameterError("ec_efficiency_target below the Shannon limit")
        for name in ("eps_sec", "eps_cor"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {value}")
        if self.cascade_passes < 1:
            raise ParameterError("need at least one reconciliation pass")


@dataclass
class MonitorStats:
    """Sifted counts and error tallies accumulated during a session."""

    n_z_signal: int = 0
    n_z_decoy: int = 0
    m_z_signal: int = 0
    m_z_decoy: int = 0
    n_x_signal: int = 0
    n_x_decoy: int = 0
    m_x_signal: int = 0
    m_x_decoy: int = 0
    elapsed_qubit_slots: int = 0
    elapsed_time_s: float = 0.0

    def __post_init__(self) -> None:
        self.check()

    def check(self) -> None:
        pairs = (
            (self.m_z_signal, self.n_z_signal),
            (self.m_z_decoy, self.n_z_decoy),
            (self.m_x_signal, self.n_x_signal),
            (self.m_x_decoy, self.n_x_decoy),
        )
        for m, n in pairs:
            if not 0 <= m <= n:
                raise ParameterError(f"error tally {m} outside [0, {n}]")

    def n_z_of(self, intensity: Intensity) -> int:
        return self.n_z_signal if intensity == Intensity.SIGNAL else self.n_z_decoy

    def n_x_of(self, intensity: Intensity) -> int:
        return self.n_x_signal if intensity == Intensity.SIGNAL else self.n_x_decoy

    def m_x_of(self, intensity: Intensity) -> int:
        return self.m_x_signal if intensity == Intensity.SIGNAL else self.m_x_decoy

    @property
    def n_z(self) -> int:
        return self.n_z_signal + self.n_z_decoy

    @property
    def m_z(self) -> int:
        return self.m_z_signal + self.m_z_decoy

    @property
    def n_x(self) -> int:
        return self.n_x_signal + self.n_x_decoy

    @property
    def m_x(self) -> int:
        return self.m_x_signal + self.m_x_decoy

    @property
    def q_z(self) -> float:
        return self.m_z / self.n_z if self.n_z else 0.0

    @property
    def q_x(self) -> float:
        return self.m_x / self.n_x if self.n_x else 0.0


@dataclass(frozen=True, slots=True)
class DecoyBounds:
    """Finite-statistics bounds feeding the key-length rule."""

    s_z0_lower: float
    s_z1_lower: float
    phi_z_upper: float
    lambda_ec: int


@dataclass(frozen=True)
class SecretKeyResult:
    """Final key material plus its headline rate."""

    key: np.ndarray
    length_l: int
    skr: float


def toeplitz_gf2(seed_bits: np.ndarray, key_bits: np.ndarray, n_out: int) -> np.ndarray:
    """Multiply a seeded Toeplitz matrix into a bit vector over GF(2).

    Row i, column j of the matrix is ``seed_bits[i - j + n_in - 1]``, so the
    product is a slice of the linear convolution of seed and key.  The
    convolution runs in float64 through an FFT for long inputs; every count
    is a small integer, so the rounding guard below is belt and braces.
    """
    n_in = len(key_bits)
    if n_out == 0:
        return np.zeros(0, dtype=np.uint8)
    if len(seed_bits) != n_out + n_in - 1:
        raise ParameterError(
            f"seed must hold {n_out + n_in - 1} bits for a {n_out}x{n_in} matrix"
        )
    if n_in == 0:
        return np.zeros(n_out, dtype=np.uint8)
    if n_in * n_out <= 1 << 22:
        conv = np.convolve(seed_bits.astype(np.int64), key_bits.astype(np.int64))
        return (conv[n_in - 1 : n_in - 1 + n_out] & 1).astype(np.uint8)
    conv = fftconvolve(seed_bits.astype(np.float64), key_bits.astype(np.float64))
    window = conv[n_in - 1 : n_in - 1 + n_out]
    rounded = np.rint(window)
    if np.max(np.abs(window - rounded)) > 0.01:
        raise ReconciliationError("convolution lost integer precision")
    return (rounded.astype(np.int64) & 1).astype(np.uint8)


def _expand_seed(seed: int, n_bits: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=n_bits, dtype=np.uint8)


def _hash_key(key_bits: np.ndarray, seed: int, n_out: int = _VERIFY_BITS) -> np.ndarray:
    """Toeplitz hash of a key, bit-sliced for speed.

    Row i of the matrix, applied to the key, is the parity of the key ANDed
    with an n-bit window of the reversed seed starting at bit ``n_out-1-i``.
    Working on packed bytes with popcounts makes each row a handful of
    vector operations; the result equals ``toeplitz_gf2`` on the same seed.
    """
    n = len(key_bits)
    if n == 0:
        return np.zeros(n_out, dtype=np.uint8)
    seed_bits = _expand_seed(seed, n_out + n - 1)
    packed_rev = np.packbits(seed_bits[::-1])
    packed_rev = np.concatenate([packed_rev, np.zeros(2, dtype=np.uint8)])
    packed_key = np.packbits(np.asarray(key_bits, dtype=np.uint8))
    width = len(packed_key)
    out = np.empty(n_out, dtype=np.uint8)
    for i in range(n_out):
        o = n_out - 1 - i
        byte, r = divmod(o, 8)
        win = packed_rev[byte : byte + width]
        if r:
            win = (win << r) | (packed_rev[byte + 1 : byte + 1 + width] >> (8 - r))
        out[i] = int(np.bitwise_count(win & packed_key).sum()) & 1
    return out


def privacy_amplify(
    key: np.ndarray, l: int, seed: int, elapsed_s: float | None = None
) -> SecretKeyResult:
    """Compress the verified key to ``l`` bits with a seeded Toeplitz map."""
    key = np.asarray(key, dtype=np.uint8)
    if l < 0:
        raise ParameterError(f"key length must be >= 0, got {l}")
    if l > len(key):
        raise ParameterError(f"cannot stretch {len(key)} bits to {l}")
    if l == 0:
        final = np.zeros(0, dtype=np.uint8)
    else:
        final = toeplitz_gf2(_expand_seed(seed, l + len(key) - 1), key, l)
    skr = l / elapsed_s if elapsed_s and elapsed_s > 0 else 0.0
    return SecretKeyResult(key=final, length_l=l, skr=skr)


# ---------------------------------------------------------------------------
# Interactive reconciliation
# ---------------------------------------------------------------------------


def _permutation(seed: int, n: int) -> np.ndarray:
    """Uniform shuffle both endpoints derive from an announced seed."""
    return np.random.default_rng(seed).permutation(n)


class _ResponderPass:
    __slots__ = ("prefix",)

    def __init__(self, key: np.ndarray, seed: int | None):
        permuted = key if seed is None else key[_permutation(seed, len(key))]
        self.prefix = np.zeros(len(key) + 1, dtype=np.uint8)
        self.prefix[1:] = np.cumsum(permuted, dtype=np.int64) & 1


class CascadeResponder:
    """Reference side of reconciliation: answers parity and hash queries.

    The key held here never changes; the peer fixes its own copy.  Plug
    ``handle`` into a frame loop; it returns an optional reply frame.
    """

    def __init__(self, key: np.ndarray):
        self.key = np.ascontiguousarray(key, dtype=np.uint8)
        self._passes: dict[int, _ResponderPass] = {0: _ResponderPass(self.key, None)}
        self.parities_disclosed = 0

    def handle(self, msg_type: MessageType, payload: bytes):
        if msg_type == MessageType.SHUFFLE_SEED:
            pass_index, seed = unpack_shuffle_seed(payload)
            self._passes[pass_index] = _ResponderPass(self.key, seed)
            return None
        if msg_type == MessageType.CASCADE_PARITY_REQ:
            passes, lo, hi = unpack_parity_request(payload)
            bits = np.empty(len(lo), dtype=np.uint8)
            for p in np.unique(passes):
                state = self._passes.get(int(p))
                if state is None:
                    raise ReconciliationError(f"parity request for unknown pass {p}")
                sel = passes == p
                bits[sel] = state.prefix[hi[sel]] ^ state.prefix[lo[sel]]
            self.parities_disclosed += len(bits)
            return MessageType.CASCADE_PARITY_RESP, pack_parity_response(bits)
        if msg_type == MessageType.VERIFY_HASH:
            seed, _their_hash = unpack_verify_hash(payload)
            ours = _hash_key(self.key, seed)
            return MessageType.VERIFY_HASH, pack_verify_hash(seed, ours)
        raise ReconciliationError(f"responder cannot handle {msg_type!r}")


class _InitiatorPass:
    __slots__ = (
        "perm", "posmap", "prefix", "lo", "hi",
        "block_size", "alice_parity", "mismatch", "flips", "_pending",
    )

    def __init__(self, key: np.ndarray, seed: int | None, block: int):
        n = len(key)
        if seed is None:
            self.perm = self.posmap = None
            permuted = key
        else:
            self.perm = _permutation(seed, n)
            self.posmap = np.empty(n, dtype=np.int64)
            self.posmap[self.perm] = np.arange(n, dtype=np.int64)
            permuted = key[self.perm]
        self.prefix = np.zeros(n + 1, dtype=np.uint8)
        self.prefix[1:] = np.cumsum(permuted, dtype=np.int64) & 1
        self.lo = np.arange(0, n, block, dtype=np.int64)
        self.hi = np.minimum(self.lo + block, n)
        self.block_size = block
        self.alice_parity: np.ndarray | None = None
        # Per-block parity disagreement with the peer, kept current as bits
        # flip so the backtracking scan never recomputes parities.
        self.mismatch: np.ndarray | None = None
        self.flips = np.zeros(0, dtype=np.int64)
        self._pending: list[np.ndarray] = []

    def to_global(self, local: np.ndarray) -> np.ndarray:
        return local if self.perm is None else self.perm[local]

    def to_local(self, global_idx: np.ndarray) -> np.ndarray:
        return global_idx if self.posmap is None else self.posmap[global_idx]

    def own_parity(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        if self._pending:
            self.flips = np.sort(np.concatenate([self.flips, *self._pending]))
            self._pending.clear()
        base = self.prefix[hi] ^ self.prefix[lo]
        inside = np.searchsorted(self.flips, hi) - np.searchsorted(self.flips, lo)
        return base ^ (inside & 1).astype(np.uint8)

    def note_flips(self, global_indices: np.ndarray) -> None:
        local = self.to_local(global_indices)
        self._pending.append(local)
        if self.mismatch is not None:
            counts = np.bincount(local // self.block_size, minlength=self.mismatch.size)
            self.mismatch ^= (counts & 1).astype(np.uint8)


class CascadeInitiator:
    """Correcting side of reconciliation: drives the parity dialogue.

    Runs the scheduled passes, binary-searches odd blocks level by level in
    batched frames, cascades corrections back through earlier passes, and
    closes with hash-verified recovery passes when needed.
    """

    def __init__(
        self,
        key: np.ndarray,
        q_estimate: float,
        params: DistillationParams,
        channel: FrameChannel,
        rng: np.random.Generator,
        pump=None,
    ):
        self.key = np.array(key, dtype=np.uint8)
        self.params = params
        self.channel = channel
        self.rng = rng
        self._pump = pump or (lambda: None)
        self._passes: list[_InitiatorPass] = []
        self.leakage = 0
        self.verified = False
        q = min(max(q_estimate, 0.0), 0.49)
        if q > 0.0:
            self.first_block = max(2, min(params.ec_block_size, math.ceil(0.73 / q)))
        else:
            self.first_block = params.ec_block_size

    # -- frame plumbing ----------------------------------------------------

    def _exchange(self, msg_type: MessageType, payload: bytes) -> tuple[MessageType, bytes]:
        self.channel.send(msg_type, payload)
        self._pump()
        return self.channel.recv()

    def _ask_parities(self, pass_idx: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        reply_type, reply = self._exchange(
            MessageType.CASCADE_PARITY_REQ, pack_parity_request(pass_idx, lo, hi)
        )
        if reply_type != MessageType.CASCADE_PARITY_RESP:
            raise ReconciliationError(f"expected parities, got {reply_type!r}")
        self.leakage += len(lo)
        return unpack_parity_response(reply)

    # -- reconciliation core ----------------------------------------------

    def _start_pass(self, index: int, block: int) -> None:
        seed = None
        if index > 0:
            seed = int(self.rng.integers(0, 2**63))
            self.channel.send(MessageType.SHUFFLE_SEED, pack_shuffle_seed(index, seed))
            self._pump()
        state = _InitiatorPass(self.key, seed, block)
        self._passes.append(state)
        idx = np.full(len(state.lo), index, dtype=np.uint8)
        state.alice_parity = self._ask_parities(idx, state.lo, state.hi)
        state.mismatch = state.own_parity(state.lo, state.hi) ^ state.alice_parity

    def _odd_blocks(self) -> tuple[int, np.ndarray, np.ndarray] | None:
        for index, state in enumerate(self._passes):
            odd = np.flatnonzero(state.mismatch)
            if odd.size:
                return index, state.lo[odd], state.hi[odd]
        return None

    def _apply_flips(self, state: _InitiatorPass, positions: np.ndarray) -> None:
        global_idx = state.to_global(positions)
        self.key[global_idx] ^= 1
        for st in self._passes:
            st.note_flips(global_idx)

    def _search_blocks(self, index: int, lo: np.ndarray, hi: np.ndarray) -> None:
        """Locate one error in each odd block via lockstep binary search."""
        state = self._passes[index]
        while lo.size:
            single = hi - lo == 1
            if np.any(single):
                self._apply_flips(state, lo[single])
                lo, hi = lo[~single], hi[~single]
            if not lo.size:
                break
            mid = (lo + hi) // 2
            alice_left = self._ask_parities(
                np.full(lo.size, index, dtype=np.uint8), lo, mid
            )
            go_left = state.own_parity(lo, mid) != alice_left
            lo = np.where(go_left, lo, mid)
            hi = np.where(go_left, mid, hi)

    def _settle(self) -> None:
        while (found := self._odd_blocks()) is not None:
            index, lo, hi = found
            self._search_blocks(index, lo, hi)

    def _check_hash(self) -> bool:
        seed = int(self.rng.integers(0, 2**63))
        mine = _hash_key(self.key, seed)
        reply_type, reply = self._exchange(
            MessageType.VERIFY_HASH, pack_verify_hash(seed, mine)
        )
        if reply_type != MessageType.VERIFY_HASH:
            raise ReconciliationError(f"expected a hash reply, got {reply_type!r}")
        _seed, theirs = unpack_verify_hash(reply)
        return bool(np.array_equal(mine, theirs))

    def run(self) -> tuple[np.ndarray, int]:
        n = len(self.key)
        if n == 0:
            self.verified = True
            return self.key, 0
        # Block sizes grow fourfold per pass, capped so every pass keeps at
        # least two blocks: with the small first block the later passes'
        # top-level parities dominate the leakage budget, and measured
        # efficiency lands near 1.07 at 2% error versus ~1.15 for doubling.
        block = self.first_block
        for index in range(self.params.cascade_passes):
            self._start_pass(index, min(block, n))
            self._settle()
            block = min(block * 4, max(2, n // 2))
        self.verified = self._check_hash()
        # An even error pattern confined to matching blocks can survive the
        # schedule.  Extra shuffled passes with halving blocks hunt it down;
        # at block size one every remaining difference is disclosed outright,
        # so the ladder always ends with equal keys and the full cost on the
        # leakage ledger.
        index = self.params.cascade_passes
        recovery = min(self.params.ec_block_size, n)
        while not self.verified:
            self._start_pass(index, recovery)
            self._settle()
            self.verified = self._check_hash()
            index += 1
            if recovery == 1:
                break
            recovery = max(1, recovery // 2)
        return self.key, self.leakage


def _loopback_with_responder(key_a: np.ndarray):
    end_a, end_b = transport_pair("loopback")
    chan_a, chan_b = FrameChannel(end_a), FrameChannel(end_b)
    responder = CascadeResponder(key_a)

    def pump() -> None:
        msg_type, payload = chan_a.recv()
        reply = responder.handle(msg_type, payload)
        if reply is not None:
            chan_a.send(*reply)

    return chan_b, pump, responder


def cascade_reconcile(
    key_a: np.ndarray,
    key_b: np.ndarray,
    q_estimate: float,
    params: DistillationParams | None = None,
    transport=None,
    seed: int = 0,
) -> tuple[np.ndarray, int]:
    """Reconcile ``key_b`` against ``key_a`` over framed parity exchanges.

    Returns Bob's corrected key and the number of parity bits disclosed.
    ``transport`` may supply a ``(channel, pump)`` pair already wired to a
    live responder; by default the dialogue runs over an internal loopback.
    Verification hashes steer the recovery passes but are not part of the
    parity leakage; the key-length rule charges them to its own term.
    """
    key_a = np.asarray(key_a, dtype=np.uint8)
    key_b = np.asarray(key_b, dtype=np.uint8)
    if len(key_a) != len(key_b):
        raise ParameterError("keys must have equal length")
    params = params or DistillationParams()
    if transport is None:
        channel, pump, _responder = _loopback_with_responder(key_a)
    else:
        channel, pump = transport
    initiator = CascadeInitiator(
        key_b, q_estimate, params, channel, np.random.default_rng(seed), pump
    )
    return initiator.run()


def verify_keys(key_a: np.ndarray, key_b: np.ndarray, transport=None, seed: int = 1) -> bool:
    """Compare keys by a seeded universal hash over VERIFY_HASH frames."""
    key_a = np.asarray(key_a, dtype=np.uint8)
    key_b = np.asarray(key_b, dtype=np.uint8)
    if len(key_a) != len(key_b):
        raise ParameterError("keys must have equal length")
    if transport is None:
        channel, pump, _responder = _loopback_with_responder(key_a)
    else:
        channel, pump = transport
    mine = _hash_key(key_b, seed)
    channel.send(MessageType.VERIFY_HASH, pack_verify_hash(seed, mine))
    pump()
    reply_type, reply = channel.recv()
    if reply_type != MessageType.VERIFY_HASH:
        raise ReconciliationError(f"expected a hash reply, got {reply_type!r}")
    _seed, theirs = unpack_verify_hash(reply)
    return bool(np.array_equal(mine, theirs))


# ---------------------------------------------------------------------------
# One-decoy bounds and the key-length rule
# ---------------------------------------------------------------------------


def _tau_n(n: int, emission: EmissionConfig) -> float:
    """Probability that a slot carries exactly n photons, mixing intensities."""
    total = 0.0
    for intensity, p_k in (
        (Intensity.SIGNAL, emission.p_signal),
        (Intensity.DECOY, 1.0 - emission.p_signal),
    ):
        mu = emission.mu_of(intensity)
        total += p_k * math.exp(-mu) * mu**n / math.factorial(n)
    return total


def _gamma_penalty(a: float, b: float, c: float, d: float) -> float:
    """Statistical distance between the X estimate and the Z phase error."""
    if c <= 0.0 or d <= 0.0:
        return math.inf
    b = min(max(b, 1e-12), 1.0 - 1e-12)
    front = (c + d) * (1.0 - b) * b / (c * d * math.log(2.0))
    inside = (c + d) / (c * d * (1.0 - b) * b) / (a * a)
    if inside <= 1.0:
        return 0.0
    return math.sqrt(front * math.log2(inside))


def decoy_bounds(
    stats: MonitorStats,
    emission: EmissionConfig,
    params: DistillationParams,
    lambda_ec: int = 0,
    finite_stats: bool = True,
) -> DecoyBounds:
    """One-decoy lower bounds on vacuum and single-photon yields, plus the
    phase-error upper bound.

    ``finite_stats=False`` drops every statistical penalty, giving the
    infinite-sample limit used by the bound-tightness checks.
    """
    mu1 = emission.mu_of(Intensity.SIGNAL)
    mu2 = emission.mu_of(Intensity.DECOY)
    if not mu1 > mu2:
        raise ParameterError("decoy analysis needs distinct intensities, signal above decoy")
    p1, p2 = emission.p_signal, 1.0 - emission.p_signal
    eps_prime = params.eps_sec / 19.0

    def delta(total: int) -> float:
        if not finite_stats or total <= 0:
            return 0.0
        return math.sqrt(0.5 * total * math.log(1.0 / eps_prime))

    def scaled(count: int, mu: float, p_k: float, shift: float) -> float:
        return math.exp(mu) / p_k * (count + shift)

    insecure = DecoyBounds(0.0, 0.0, 0.5, lambda_ec)
    n_z, n_x, m_x = stats.n_z, stats.n_x, stats.m_x
    if n_z == 0:
        return insecure

    tau0, tau1 = _tau_n(0, emission), _tau_n(1, emission)
    d_nz, d_nx, d_mx = delta(n_z), delta(n_x), delta(m_x)

    # Vacuum yield: the decoy/signal count difference isolates tau_0.
    nz1_hi = scaled(stats.n_z_signal, mu1, p1, +d_nz)
    nz2_lo = scaled(stats.n_z_decoy, mu2, p2, -d_nz)
    s_z0 = tau0 * (mu1 * nz2_lo - mu2 * nz1_hi) / (mu1 - mu2)
    s_z0 = min(max(s_z0, 0.0), float(n_z))

    # Single-photon yield needs a vacuum ceiling; half of all vacuum clicks
    # land on the wrong bit, so twice the error count caps it.
    s_z0_cap = 2.0 * (stats.m_z + d_nz)
    nz1_lo = scaled(stats.n_z_signal, mu1, p1, -d_nz)
    nz2_hi = scaled(stats.n_z_decoy, mu2, p2, +d_nz)
    ratio = mu2 * mu2 / (mu1 * mu1)
    s_z1 = (
        tau1
        * mu1
        / (mu2 * (mu1 - mu2))
        * (nz2_lo - ratio * nz1_hi - (1.0 - ratio) * s_z0_cap / tau0)
    )
    s_z1 = min(max(s_z1, 0.0), float(n_z) - s_z0)

    if n_x == 0:
        return DecoyBounds(s_z0, s_z1, 0.5, lambda_ec)

    nx1_hi = scaled(stats.n_x_signal, mu1, p1, +d_nx)
    nx2_lo = scaled(stats.n_x_decoy, mu2, p2, -d_nx)
    nx1_lo = scaled(stats.n_x_signal, mu1, p1, -d_nx)
    s_x0_cap = 2.0 * (m_x + d_nx)
    s_x1 = (
        tau1
        * mu1
        / (mu2 * (mu1 - mu2))
        * (nx2_lo - ratio * nx1_hi - (1.0 - ratio) * s_x0_cap / tau0)
    )
    s_x1 = min(max(s_x1, 0.0), float(n_x))

    mx1_hi = scaled(stats.m_x_signal, mu1, p1, +d_mx)
    mx2_lo = scaled(stats.m_x_decoy, mu2, p2, -d_mx)
    m_x1 = max(tau1 * (mx1_hi - mx2_lo) / (mu1 - mu2), 0.0)

    if s_x1 <= 0.0:
        return DecoyBounds(s_z0, s_z1, 0.5, lambda_ec)
    phi = m_x1 / s_x1
    if finite_stats:
        phi += _gamma_penalty(eps_prime, phi, s_z1, s_x1)
    phi = min(max(phi, 0.0), 0.5)
    return DecoyBounds(s_z0, s_z1, phi, lambda_ec)


def key_length(bounds: DecoyBounds, params: DistillationParams) -> int:
    """Extractable secret bits for one block under the adopted bound."""
    secure_fraction = 1.0 - binary_entropy(min(max(bounds.phi_z_upper, 0.0), 0.5))
    raw = (
        bounds.s_z0_lower
        + bounds.s_z1_lower * secure_fraction
        - bounds.lambda_ec
        - 6.0 * math.log2(19.0 / params.eps_sec)
        - math.log2(2.0 / params.eps_cor)
    )
    return max(0, math.floor(raw))
