"""Immutable traffic report produced by simulator runs."""

import io
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class TrafficReport:
    levels: tuple          # level names, inner to outer
    hits: tuple
    misses: tuple
    bytes_read_mem: int
    bytes_written_mem: int
    line_size: int
    work_count: int | None = None

    def refs(self, level: int) -> int:
        """References that reached a level (hits + misses there)."""
        return self.hits[level] + self.misses[level]

    def hit_rate(self, level: int) -> float:
        r = self.refs(level)
        return self.hits[level] / r if r else 0.0

    @property
    def llc_hit_rate(self) -> float:
        return self.hit_rate(len(self.levels) - 1)

    # kept under the hardware-counter-style name users expect
    l3_hit_rate = llc_hit_rate

    @property
    def bytes_total(self) -> int:
        return self.bytes_read_mem + self.bytes_written_mem

    @property
    def bytes_per_work(self) -> float:
        if not self.work_count:
            raise ValueError("report carries no work count")
        return self.bytes_total / self.work_count

    def to_dict(self) -> dict:
        d = {
            "levels": list(self.levels),
            "hits": list(self.hits),
            "misses": list(self.misses),
            "bytes_read_mem": self.bytes_read_mem,
            "bytes_written_mem": self.bytes_written_mem,
            "bytes_total": self.bytes_total,
            "line_size": self.line_size,
            "llc_hit_rate": self.llc_hit_rate,
        }
        if self.work_count:
            d["work_count"] = self.work_count
            d["bytes_per_work"] = self.bytes_per_work
        return d

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["level", "hits", "misses", "hit_rate"]
        buf.write(",".join(cols) + "\n")
        for l, name in enumerate(self.levels):
            buf.write(f"{name},{self.hits[l]},{self.misses[l]},{self.hit_rate(l):.6f}\n")
        buf.write(f"mem_read_bytes,{self.bytes_read_mem},,\n")
        buf.write(f"mem_written_bytes,{self.bytes_written_mem},,\n")
        if self.work_count:
            buf.write(f"bytes_per_work,{self.bytes_per_work:.6f},,\n")
        return buf.getvalue()
