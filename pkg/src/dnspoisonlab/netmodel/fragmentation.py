"""IPv4 fragmentation and a first-arrival-wins defragmentation cache."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from ..simcore import seconds
from .packets import IP_HEADER_LEN, Fragment, SimPacket

MIN_FRAGMENT_MTU = IP_HEADER_LEN + 8
DEFAULT_DEFRAG_CAPACITY = 64
DEFAULT_DEFRAG_TIMEOUT = seconds(30)


class FragmentationNeeded(Exception):
    """DF packet larger than the path MTU; carries the MTU to report."""

    def __init__(self, mtu: int):
        super().__init__(f"fragmentation needed, mtu={mtu}")
        self.mtu = mtu


def fragment_payload_size(mtu: int) -> int:
    """Largest multiple of 8 that fits after the IPv4 header."""
    return (mtu - IP_HEADER_LEN) // 8 * 8


def fragment_packet(packet: SimPacket, mtu: int) -> list[Fragment]:
    if mtu < MIN_FRAGMENT_MTU:
        raise ValueError(f"mtu {mtu} below {MIN_FRAGMENT_MTU}")
    payload = packet.payload
    if packet.total_length <= mtu:
        return [Fragment(packet.src_ip, packet.dst_ip, packet.protocol, packet.ipid, 0, False, payload)]
    if packet.dont_fragment:
        raise FragmentationNeeded(mtu)
    step = fragment_payload_size(mtu)
    frags = []
    for start in range(0, len(payload), step):
        chunk = payload[start:start + step]
        last = start + step >= len(payload)
        frags.append(Fragment(packet.src_ip, packet.dst_ip, packet.protocol, packet.ipid,
                              start // 8, not last, chunk))
    return frags


@dataclass(slots=True)
class _Entry:
    frags: list = field(default_factory=list)  # arrival order
    end: int | None = None
    deadline: int = 0


@dataclass
class ReassemblyBuffer:
    """Pending fragments keyed by ``(src, dst, protocol, ipid)``.

    Overlapping bytes are taken from the fragment that arrived first.  A
    full buffer evicts its oldest entry to admit a new key; expired entries
    are purged before that check.
    """

    capacity: int = DEFAULT_DEFRAG_CAPACITY
    timeout: int = DEFAULT_DEFRAG_TIMEOUT
    entries: OrderedDict = field(default_factory=OrderedDict)
    evictions: int = 0
    expirations: int = 0
    completed: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def purge(self, now: int) -> None:
        stale = [k for k, e in self.entries.items() if e.deadline <= now]
        for k in stale:
            del self.entries[k]
        self.expirations += len(stale)

    def insert(self, frag: Fragment, now: int) -> SimPacket | None:
        off = frag.offset_units
        mf = frag.more_fragments
        if not off and not mf:
            return SimPacket(frag.src_ip, frag.dst_ip, frag.protocol, frag.ipid, frag.data)
        key = (frag.src_ip, frag.dst_ip, frag.protocol, frag.ipid)
        entries = self.entries
        entry = entries.get(key)
        if entry is not None and entry.deadline <= now:
            del entries[key]
            self.expirations += 1
            entry = None
        frag.arrival_time = now
        if entry is None:
            if len(entries) >= self.capacity:
                self.purge(now)
                while len(entries) >= self.capacity:
                    entries.popitem(last=False)
                    self.evictions += 1
            # a lone non-whole fragment never completes a datagram
            entries[key] = _Entry([frag], None if mf else off * 8 + len(frag.data), now + self.timeout)
            return None
        entry.frags.append(frag)
        if not mf and entry.end is None:
            entry.end = off * 8 + len(frag.data)
        if entry.end is None or not _covers(entry.frags, entry.end):
            return None
        del entries[key]
        self.completed += 1
        return SimPacket(frag.src_ip, frag.dst_ip, frag.protocol, frag.ipid,
                         _assemble(entry.frags, entry.end))


def _covers(frags: list, end: int) -> bool:
    reach = 0
    for start, stop in sorted((f.start, f.end) for f in frags):
        if start > reach:
            return False
        if stop > reach:
            reach = stop
            if reach >= end:
                return True
    return reach >= end


def _assemble(frags: list, end: int) -> bytes:
    buf = bytearray(end)
    # later arrivals first so earlier bytes overwrite them
    for f in reversed(frags):
        start = f.start
        if start >= end:
            continue
        data = f.data[:end - start]
        buf[start:start + len(data)] = data
    return bytes(buf)


def reassemble(buffer: ReassemblyBuffer, frag: Fragment, now: int) -> SimPacket | None:
    return buffer.insert(frag, now)
