"""Sliding-window streaming code and a systematic block-code baseline.

Information packets are sent systematically.  A coded packet is a random
linear combination over GF(2^8) of the information packets in the current
coding window ``[L, next_seq - 1]``; ``L`` advances on cumulative acks.

Decoders come in two flavours:

``real``
    actual Gaussian elimination on the received coefficients, so a coded
    packet fails to add a degree of freedom with probability about 1/256.
``ideal``
    every coded packet whose window still contains an unresolved erasure
    repairs one of them.  This is the generic-rank model: a set of coded
    windows resolves a set of erasures iff there is a matching between them.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import gf256

DEFAULT_SYMBOLS = 8


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class InfoPacket:
    seq: int
    payload: np.ndarray | None


@dataclass(frozen=True)
class CodedPacket:
    lo: int
    hi: int
    coeffs: np.ndarray
    payload: np.ndarray | None

    def __post_init__(self):
        if len(self.coeffs) != self.hi - self.lo + 1:
            raise CodecError("coefficient count does not match window")


# -- wire format (test utility) ------------------------------------------------

_INFO, _CODED = 0, 1


def serialize(pkt) -> bytes:
    """Deterministic layout: kind byte, window bounds as big-endian uint32,
    then coefficients (coded only) and payload."""
    pay = b"" if pkt.payload is None else bytes(np.asarray(pkt.payload, np.uint8))
    if isinstance(pkt, InfoPacket):
        return struct.pack(">BII", _INFO, pkt.seq, pkt.seq) + pay
    return struct.pack(">BII", _CODED, pkt.lo, pkt.hi) + bytes(pkt.coeffs) + pay


def deserialize(data: bytes):
    kind, lo, hi = struct.unpack(">BII", data[:9])
    body = np.frombuffer(data[9:], dtype=np.uint8).copy()
    if kind == _INFO:
        return InfoPacket(lo, body)
    if kind != _CODED:
        raise CodecError(f"unknown packet kind {kind}")
    w = hi - lo + 1
    if len(body) < w:
        raise CodecError("truncated coefficient vector")
    return CodedPacket(lo, hi, body[:w], body[w:])


# -- streaming encoder ----------------------------------------------------------


class Encoder:
    """Holds the coding window; ``buffered[i]`` is packet ``L + i``."""

    def __init__(self):
        self.L = 1
        self.next_seq = 1
        self.buffered: list[np.ndarray | None] = []

    @property
    def window(self) -> tuple[int, int]:
        return self.L, self.next_seq - 1

    def encode_info(self, payload=None) -> InfoPacket:
        pay = None if payload is None else np.asarray(payload, dtype=np.uint8)
        pkt = InfoPacket(self.next_seq, pay)
        self.buffered.append(pay)
        self.next_seq += 1
        return pkt

    def encode_coded(self, rng: np.random.Generator) -> CodedPacket:
        if not self.buffered:
            raise CodecError("empty coding window: nothing to protect")
        lo, hi = self.window
        coeffs = rng.integers(0, 256, size=hi - lo + 1, dtype=np.uint8)
        if self.buffered[0] is None:
            payload = None
        else:
            payload = gf256.dot(coeffs, self.buffered)
        return CodedPacket(lo, hi, coeffs, payload)

    def retransmit(self, seq: int) -> InfoPacket:
        """Resend information packet ``seq``; it must still be in the window."""
        if not self.L <= seq < self.next_seq:
            raise CodecError(f"packet {seq} is outside the window {self.window}")
        return InfoPacket(seq, self.buffered[seq - self.L])

    def advance_window(self, ack_through: int) -> None:
        if ack_through < self.L - 1:
            raise CodecError(f"ack regressed: {ack_through} < {self.L - 1}")
        ack_through = min(ack_through, self.next_seq - 1)
        drop = ack_through + 1 - self.L
        if drop > 0:
            del self.buffered[:drop]
            self.L = ack_through + 1


# -- streaming decoder ----------------------------------------------------------


class Decoder:
    """In-order streaming decoder.

    ``receive`` returns ``(delivered, dof_gain)`` where ``delivered`` lists the
    information packets released to the application by this call, in order.
    Recovered packets carry ``payload=None`` in ideal mode.
    """

    def __init__(self, mode: str = "real"):
        if mode not in ("real", "ideal"):
            raise CodecError(f"unknown decoder mode {mode!r}")
        self.mode = mode
        self.delivered_through = 0
        self.hi = 0
        self.known: dict[int, np.ndarray | None] = {}
        self.history: dict[int, np.ndarray | None] = {}
        self.matrix = gf256.CoeffMatrix(0, col_offset=1)
        self.windows: list[tuple[int, int]] = []  # ideal mode coded windows
        self.dof_failures = 0
        self.needed_coded = 0

    # bookkeeping shared by both modes

    def _unknowns(self) -> list[int]:
        return [j for j in range(self.delivered_through + 1, self.hi + 1) if j not in self.known]

    def _grow(self, hi: int) -> None:
        if hi > self.hi:
            self.hi = hi
            if self.mode == "real":
                self.matrix.widen(self.hi - self.delivered_through)

    def _release(self) -> list[InfoPacket]:
        out = []
        while self.delivered_through + 1 in self.known:
            j = self.delivered_through + 1
            pay = self.known.pop(j)
            self.history[j] = pay
            out.append(InfoPacket(j, pay))
            self.delivered_through = j
        if out and self.mode == "real":
            self.matrix.drop_left(len(out))
        return out

    def _value(self, j: int):
        if j in self.known:
            return self.known[j]
        return self.history.get(j)

    @property
    def pending(self) -> int:
        return len(self._unknowns())

    def receive(self, pkt) -> tuple[list[InfoPacket], bool]:
        if isinstance(pkt, InfoPacket):
            return self._receive_info(pkt)
        if not isinstance(pkt, CodedPacket):
            raise CodecError(f"not a packet: {pkt!r}")
        if len(pkt.coeffs) != pkt.hi - pkt.lo + 1:
            raise CodecError("malformed coefficient vector")
        if self.mode == "ideal":
            return self._receive_coded_ideal(pkt)
        return self._receive_coded_real(pkt)

    def _receive_info(self, pkt):
        j = pkt.seq
        if j <= self.delivered_through or j in self.known:
            return [], False
        self._grow(j)
        self.known[j] = pkt.payload
        if self.mode == "real":
            col = j - self.matrix.col_offset
            pay = None if pkt.payload is None else np.asarray(pkt.payload, np.uint8)
            self.matrix.substitute(col, pay)
            self._harvest()
        else:
            self._resolve_ideal()
        return self._release(), True

    # real mode

    def _receive_coded_real(self, pkt):
        self._grow(pkt.hi)
        need = len(self._unknowns()) > self.matrix.rank
        pay = None if pkt.payload is None else np.array(pkt.payload, np.uint8)
        row = np.zeros(self.matrix.ncols, dtype=np.uint8)
        for i, c in enumerate(pkt.coeffs):
            c = int(c)
            if not c:
                continue
            j = pkt.lo + i
            v = self._value(j)
            if j <= self.delivered_through or j in self.known:
                if pay is not None:
                    if v is None:
                        raise CodecError(f"coded packet references discarded packet {j}")
                    pay ^= gf256.MUL_TABLE[c][v]
            else:
                row[j - self.matrix.col_offset] = c
        gain = self.matrix.insert(row, pay)
        if need:
            self.needed_coded += 1
            if not gain:
                self.dof_failures += 1
        self._harvest()
        return self._release(), gain

    def _harvest(self):
        for col, p in self.matrix.pop_solved():
            j = col + self.matrix.col_offset
            self.known[j] = p

    # ideal mode

    def _receive_coded_ideal(self, pkt):
        self._grow(pkt.hi)
        before = self._matching_size()
        self.windows.append((pkt.lo, pkt.hi))
        gain = self._matching_size() > before
        if not gain:
            self.windows.pop()
        else:
            self.needed_coded += 1
        delivered_before = self.delivered_through
        self._resolve_ideal()
        out = self._release()
        if self.delivered_through > delivered_before:
            self.windows = [w for w in self.windows if w[1] > self.delivered_through]
        return out, gain

    def _matching_size(self, windows=None, unknowns=None) -> int:
        # interval/point matching: earliest right edge takes the smallest free unknown
        windows = self.windows if windows is None else windows
        unknowns = self._unknowns() if unknowns is None else unknowns
        free = list(unknowns)
        n = 0
        for lo, hi in sorted(windows, key=lambda w: w[1]):
            for idx, u in enumerate(free):
                if u > hi:
                    break
                if u >= lo:
                    del free[idx]
                    n += 1
                    break
        return n

    def _resolve_ideal(self):
        while self._resolve_prefix():
            pass

    def _resolve_prefix(self) -> bool:
        unknowns = self._unknowns()
        if not unknowns:
            self.windows = []
            return False
        if not self.windows:
            return False
        # smallest prefix of erasures fully covered by windows that end inside it
        wins = sorted(self.windows, key=lambda w: w[1])
        n_in = 0
        for t in range(1, len(unknowns) + 1):
            bound = unknowns[t] if t < len(unknowns) else math.inf
            while n_in < len(wins) and wins[n_in][1] < bound:
                n_in += 1
            if n_in < t:
                continue
            prefix = unknowns[:t]
            inside = wins[:n_in]
            if self._matching_size(inside, prefix) == t:
                for u in prefix:
                    self.known[u] = None
                self.windows = [w for w in self.windows if w[1] >= bound]
                return True
        return False


# -- systematic block code --------------------------------------------------------


def block_redundancy(k: int, p: float) -> int:
    """Coded packets per block that match the code rate to loss rate ``p``."""
    return max(1, math.ceil(k * p / (1.0 - p) - 1e-12))


class BlockEncoder:
    """Emits k systematic packets then n-k coded packets per block."""

    def __init__(self, k: int, n: int):
        if k < 1 or n <= k:
            raise CodecError(f"invalid block parameters k={k}, n={n}")
        self.k, self.n = k, n
        self.next_seq = 1
        self.block: list[np.ndarray | None] = []
        self.coded_left = 0

    @property
    def block_start(self) -> int:
        return self.next_seq - len(self.block)

    @property
    def wants_coded(self) -> bool:
        return self.coded_left > 0

    def encode_info(self, payload=None) -> InfoPacket:
        if self.coded_left:
            raise CodecError("block is full; send its coded packets first")
        pay = None if payload is None else np.asarray(payload, dtype=np.uint8)
        pkt = InfoPacket(self.next_seq, pay)
        self.block.append(pay)
        self.next_seq += 1
        if len(self.block) == self.k:
            self.coded_left = self.n - self.k
        return pkt

    def encode_coded(self, rng: np.random.Generator) -> CodedPacket:
        if not self.coded_left:
            raise CodecError("no coded packets due")
        lo = self.block_start
        coeffs = rng.integers(0, 256, size=self.k, dtype=np.uint8)
        payload = None if self.block[0] is None else gf256.dot(coeffs, self.block)
        self.coded_left -= 1
        pkt = CodedPacket(lo, lo + self.k - 1, coeffs, payload)
        if not self.coded_left:
            self.block = []
        return pkt


def block_encode(payloads, k: int, n: int, rng: np.random.Generator) -> list:
    """Encode a whole stream; a trailing partial block is left uncoded."""
    enc = BlockEncoder(k, n)
    out = []
    for pay in payloads:
        out.append(enc.encode_info(pay))
        while enc.wants_coded:
            out.append(enc.encode_coded(rng))
    return out


class BlockDecoder:
    """Per-block decoder with in-order release.

    A block decodes once it holds k degrees of freedom.  ``close_block`` is
    called when the block's last packet slot has passed; if it is still
    undecodable the received systematic packets are released (with gaps) and
    the failure is counted.
    """

    def __init__(self, k: int, n: int, mode: str = "real"):
        if k < 1 or n <= k:
            raise CodecError(f"invalid block parameters k={k}, n={n}")
        self.k, self.n, self.mode = k, n, mode
        self.delivered_through = 0
        self.failures = 0
        self.rank_failures = 0
        self.lost: list[int] = []
        self._reset(1)

    def _reset(self, start: int):
        self.start = start
        self.known: dict[int, np.ndarray | None] = {}
        self.matrix = gf256.CoeffMatrix(self.k, col_offset=start)
        self.ncoded = 0

    def _decodable(self) -> bool:
        if self.mode == "ideal":
            return len(self.known) + self.ncoded >= self.k
        return len(self.known) == self.k

    def _flush(self):
        out = []
        while self.delivered_through + 1 in self.known:
            j = self.delivered_through + 1
            out.append(InfoPacket(j, self.known[j]))
            self.delivered_through = j
        return out

    def receive(self, pkt) -> tuple[list[InfoPacket], bool]:
        if isinstance(pkt, InfoPacket):
            j = pkt.seq
            if j < self.start or j in self.known:
                return [], False
            self.known[j] = pkt.payload
            if self.mode == "real" and pkt.payload is not None:
                self.matrix.substitute(j - self.start, np.asarray(pkt.payload, np.uint8))
                self._harvest()
            gain = True
        else:
            if pkt.lo != self.start:
                return [], False
            row = np.array(pkt.coeffs, dtype=np.uint8)
            pay = None if pkt.payload is None else np.array(pkt.payload, np.uint8)
            for j, v in self.known.items():
                c = int(row[j - self.start])
                if c:
                    row[j - self.start] = 0
                    if pay is not None and v is not None:
                        pay ^= gf256.MUL_TABLE[c][v]
            if self.mode == "ideal":
                gain = len(self.known) + self.ncoded < self.k
                self.ncoded += gain
            else:
                needed = len(self.known) + self.matrix.rank < self.k
                gain = self.matrix.insert(row, pay)
                if needed and not gain:
                    self.rank_failures += 1
                self._harvest()
        if self._decodable():
            for j in range(self.start, self.start + self.k):
                self.known.setdefault(j, None)
        out = self._flush()
        if self.delivered_through == self.start + self.k - 1:
            self._reset(self.start + self.k)
        return out, gain

    def _harvest(self):
        for col, p in self.matrix.pop_solved():
            self.known[self.start + col] = p

    def close_block(self, block_start: int | None = None) -> list[InfoPacket]:
        """Give up on the block starting at ``block_start`` (default: current).

        Releases what arrived and skips the rest.  A block that already
        decoded is left alone.
        """
        if block_start is None:
            block_start = self.start
        if block_start < self.start or self.delivered_through >= block_start + self.k - 1:
            return []
        if block_start != self.start:
            raise CodecError(f"block {block_start} is not the open block {self.start}")
        self.failures += 1
        out = []
        for j in range(self.start, self.start + self.k):
            if j <= self.delivered_through:
                continue
            if j in self.known:
                out.append(InfoPacket(j, self.known[j]))
            else:
                self.lost.append(j)
        self.delivered_through = self.start + self.k - 1
        self._reset(self.start + self.k)
        return out


def block_decode(packets, k: int, n: int, mode: str = "real") -> tuple[list[InfoPacket], int]:
    """Decode a stream of received block-code packets (``None`` = erased).

    ``packets`` is in transmission order with erasures marked ``None``.
    Returns the delivered packets and the number of failed blocks.
    """
    dec = BlockDecoder(k, n, mode)
    out = []
    for pos, pkt in enumerate(packets):
        if pkt is not None:
            got, _ = dec.receive(pkt)
            out.extend(got)
        if (pos + 1) % n == 0:
            out.extend(dec.close_block(pos // n * k + 1))
    return out, dec.failures
