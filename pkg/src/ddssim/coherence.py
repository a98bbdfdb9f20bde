"""Deterministic phase bookkeeping for phase-coherent pulse edges.

Every edge can be made phase-coherent with a reference frame that has been
rotating at the edge's frequency since the last global trigger: the phase
word is computed as frequency word times elapsed cycle count, reduced
modulo one turn, entirely in integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .timebase import FTW_WRAP, POW_WRAP


def coherent_pow(ftw: int, total_cycles: int, user_pow: int = 0) -> int:
    """Phase offset word that continues a frame rotating at `ftw` since cycle 0.

    Computes ``((ftw * total_cycles) mod 2**32) >> 16`` exactly, then adds the
    caller's phase offset modulo 2**16.  The 16 discarded low bits make the
    result agree with a free-running accumulator to within one POW LSB.
    """
    phase32 = (ftw * total_cycles) % FTW_WRAP
    return ((phase32 >> 16) + user_pow) % POW_WRAP


@dataclass
class CoherenceClock:
    """Sysclk cycles elapsed since the last global trigger."""

    total_cycles: int = 0

    def advance(self, cycles: int) -> None:
        if cycles < 0:
            raise ValueError("cannot advance backwards")
        self.total_cycles += cycles

    def reset(self) -> None:
        self.total_cycles = 0
