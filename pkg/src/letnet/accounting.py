"""Parameter and multiply-accumulate accounting.

Conventions: a convolution costs ``output_elements * kh * kw * Cin / groups``
MACs, a linear layer ``rows * in * out``, attention ``Q K^T`` and
``weights @ V`` per segment and head, and pooling one MAC-equivalent per
input element read (global average pooling = H*W*C adds).  Normalisation,
activations, gates, residual adds and resizing are not counted.  FLOPs are
reported as 2 * MACs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import LETNet
from .nn import LayerRow
from .tensor import Tensor, mac_trace, no_grad


@dataclass
class AccountingReport:
    rows: list[LayerRow]
    resolution: tuple[int, int] | None = None
    batch: int = 1
    notes: list[str] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "params", "macs", "flops"])
        for r in self.rows:
            writer.writerow([r.name, r.kind, r.params, r.macs, 2 * r.macs])
        writer.writerow(["total", "", self.total_params, self.total_macs, self.total_flops])
        return buf.getvalue()

    def summary(self) -> str:
        res = f"{self.resolution[0]}x{self.resolution[1]}" if self.resolution else "n/a"
        return (
            f"params: {self.total_params:,} ({self.total_params / 1e6:.3f} M)\n"
            f"MACs @ {res}: {self.total_macs:,} ({self.total_macs / 1e9:.3f} G)\n"
            f"FLOPs (2*MACs) @ {res}: {self.total_flops:,} ({self.total_flops / 1e9:.3f} G)"
        )

    def table(self) -> str:
        width = max([len(r.name) for r in self.rows] + [5])
        lines = [f"{'layer':<{width}}  {'kind':<9}  {'params':>10}  {'MACs':>15}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.kind:<9}  {r.params:>10,}  {r.macs:>15,}")
        lines.append(f"{'total':<{width}}  {'':<9}  {self.total_params:>10,}  {self.total_macs:>15,}")
        return "\n".join(lines)


def count_params(model: LETNet) -> AccountingReport:
    """Closed-form per-layer parameter counts (MAC column filled at the configured resolution)."""
    return count_macs(model, model.cfg.resolution)


def count_macs(model: LETNet, resolution: tuple[int, int] | None = None, batch: int = 1) -> AccountingReport:
    h, w = resolution if resolution is not None else model.cfg.resolution
    rows, _ = model.profile((batch, 3, h, w))
    return AccountingReport(rows, (h, w), batch)


def enumerate_params(model: LETNet) -> int:
    """Count scalars actually stored in the model's parameter tensors."""
    return sum(p.data.size for p in model.parameters())


def traced_macs(model: LETNet, resolution: tuple[int, int], batch: int = 1, seed: int = 0) -> int:
    """Run a real eval-mode forward and add up the MACs each primitive reports."""
    h, w = resolution
    images = Tensor(np.random.default_rng(seed).random((batch, 3, h, w), dtype=np.float32))
    was_training = model.training
    model.eval()
    try:
        with no_grad(), mac_trace() as trace:
            model(images)
    finally:
        model.train(was_training)
    return sum(m for _, m in trace)
