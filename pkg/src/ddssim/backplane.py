"""Master-to-card serial link: 48-bit word codec, delivery timing, triggers.

One word carries a 4-bit geographic address (slot 0..7 or broadcast 0xF),
a 4-bit register bank / channel selector, a 16-bit memory address and a
24-bit payload, packed msb first.  Delivery is fire-and-forget with a pure
deterministic latency: serialization time plus a fixed commit latency, so
repeated simulations produce identical timelines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

WORD_BITS = 48
BROADCAST = 0xF

_GEO_SHIFT = 44
_BANK_SHIFT = 40
_MEM_SHIFT = 24


class FrameError(ValueError):
    """Invalid field value or malformed frame."""


@dataclass(frozen=True)
class WireWord:
    """One combined address/instruction word."""

    geo_addr: int
    bank: int
    mem_addr: int
    payload: int

    def __post_init__(self):
        if self.geo_addr != BROADCAST and not 0 <= self.geo_addr <= 7:
            raise FrameError(f"geo_addr {self.geo_addr:#x} is reserved (use 0..7 or 0xF)")
        if not 0 <= self.bank < 16:
            raise FrameError(f"bank {self.bank} does not fit in 4 bits")
        if not 0 <= self.mem_addr < (1 << 16):
            raise FrameError(f"mem_addr {self.mem_addr:#x} does not fit in 16 bits")
        if not 0 <= self.payload < (1 << 24):
            raise FrameError(f"payload {self.payload:#x} does not fit in 24 bits")


def encode_word(w: WireWord) -> bytes:
    """Pack a word into its 6-byte frame, msb first."""
    value = ((w.geo_addr << _GEO_SHIFT) | (w.bank << _BANK_SHIFT)
             | (w.mem_addr << _MEM_SHIFT) | w.payload)
    return value.to_bytes(6, "big")


def decode_word(frame: bytes) -> WireWord:
    """Unpack a 6-byte frame.  Inverse of :func:`encode_word`."""
    if len(frame) != 6:
        raise FrameError(f"frame must be {WORD_BITS} bits, got {8 * len(frame)}")
    value = int.from_bytes(frame, "big")
    return WireWord(
        geo_addr=value >> _GEO_SHIFT,
        bank=(value >> _BANK_SHIFT) & 0xF,
        mem_addr=(value >> _MEM_SHIFT) & 0xFFFF,
        payload=value & 0xFFFFFF,
    )


def format_word(w: WireWord) -> str:
    """Hex dump of one decoded word for timelines and debug listings."""
    target = "broadcast" if w.geo_addr == BROADCAST else f"slot {w.geo_addr}"
    return (f"{encode_word(w).hex()}  {target} bank={w.bank:x} "
            f"addr={w.mem_addr:#06x} data={w.payload:#08x}")


def dump_frames(data: bytes) -> str:
    """Decode a stream of concatenated 6-byte frames into a readable listing."""
    if len(data) % 6:
        raise FrameError(f"{len(data)} bytes is not a whole number of 48-bit frames")
    return "\n".join(format_word(decode_word(data[i:i + 6])) for i in range(0, len(data), 6))


@dataclass(frozen=True)
class LinkModel:
    """Serial-link timing: bit rate and the word-commit latency."""

    bitrate_bps: float = 166e6
    commit_latency_ns: float = 16.0  # 2 cycles of the 8 ns event grain

    def __post_init__(self):
        if self.bitrate_bps <= 0:
            raise ValueError("bitrate must be positive")
        if self.commit_latency_ns > 20.0:
            raise ValueError("commit latency above the 20 ns bound")

    @property
    def serialization_ns(self) -> float:
        """Time to clock one 48-bit word onto the link."""
        return WORD_BITS / self.bitrate_bps * 1e9

    def commit_time_ns(self, t_send_ns: float) -> float:
        return t_send_ns + self.serialization_ns + self.commit_latency_ns


@dataclass
class BusEvent:
    t_ns: float
    kind: str
    detail: str


class Backplane:
    """Deterministic bus simulation: 8 card slots, broadcast, trigger lane.

    Registered cards must provide ``commit_write(bank, mem_addr, payload,
    t_ns)`` and ``on_trigger(t_ns)``.
    """

    def __init__(self, link: LinkModel | None = None):
        self.link = link if link is not None else LinkModel()
        self.slots: dict[int, object] = {}
        self.events: list[BusEvent] = []

    def register(self, slot: int, card) -> None:
        if not 0 <= slot <= 7:
            raise FrameError(f"slot {slot} outside 0..7")
        if slot in self.slots:
            raise FrameError(f"slot {slot} already occupied")
        self.slots[slot] = card

    def deliver(self, w: WireWord, t_send_ns: float) -> list[tuple[int, float]]:
        """Send one word at t_send; returns (slot, commit time) per recipient.

        A unicast to an empty slot commits nowhere and logs a delivery-error
        event (fire-and-forget, matching the unacknowledged wire protocol).
        """
        t_commit = self.link.commit_time_ns(t_send_ns)
        if w.geo_addr == BROADCAST:
            targets = sorted(self.slots)
        elif w.geo_addr in self.slots:
            targets = [w.geo_addr]
        else:
            self.events.append(BusEvent(t_send_ns, "delivery-error",
                                        f"no card in slot {w.geo_addr}"))
            return []
        for slot in targets:
            self.slots[slot].commit_write(w.bank, w.mem_addr, w.payload, t_commit)
        self.events.append(BusEvent(t_send_ns, "wireword", format_word(w)))
        return [(slot, t_commit) for slot in targets]

    def send_trigger(self, t_ns: float) -> None:
        """Pulse the shared trigger lane: every card (re)starts at the same instant."""
        for slot in sorted(self.slots):
            self.slots[slot].on_trigger(t_ns)
        self.events.append(BusEvent(t_ns, "trigger", f"{len(self.slots)} cards"))
