"""
Operation counts

Analytic per-layer cost model for a NetworkConfig, per sample and forward pass:

    conv      K^2 * H_out * W_out * C_in * C_out real multiplies
    eml       4 * H * W * C_in * C_out real multiplies (complex product = 4),
              C_out * (C_in - 1) * 2 * H * W real adds
    dense     in * out multiplies, twice for per-branch head layers
    DFT/iDFT  c_fft * H * W * C * log2(H * W) per transform, for bridges and
              for the two transforms inside a frequency-domain max pool

BatchNorm, activations and pooling comparisons count zero multiplies. The
headline total is real multiplies; DFT operations sit in their own column and
the grand total is their sum. Weight Fixation costs two transforms per filter
pair per training step and is reported apart from the forward pass.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import zip_longest
from typing import Dict, List

from tfdmnet.config import NetworkConfig
from tfdmnet.validate import LayerGeometry, check_config

__all__ = ["C_FFT", "OpRow", "OpCountReport", "Comparison", "count_ops", "compare_report", "dft_ops"]

C_FFT = 5.0
CSV_COLUMNS = ("layer", "kind", "domain", "mult_ops", "dft_ops")


def dft_ops(height: int, width: int, channels: int, c_fft: float = C_FFT) -> int:
    points = height * width
    if points <= 1:
        return 0
    return int(round(c_fft * points * channels * math.log2(points)))


@dataclass(frozen=True)
class OpRow:
    name: str
    kind: str
    domain: str
    mult_ops: int = 0
    add_ops: int = 0
    dft_ops: int = 0
    params: int = 0
    free_params: int = 0
    fixation_ops: int = 0

    @property
    def total(self) -> int:
        return self.mult_ops + self.dft_ops


@dataclass
class OpCountReport:
    name: str
    rows: List[OpRow] = field(default_factory=list)
    c_fft: float = C_FFT

    @property
    def convention(self) -> str:
        return (
            f"real multiplies per sample (complex multiply = 4); "
            f"DFT ops = {self.c_fft:g} * H * W * C * log2(H * W)"
        )

    @property
    def mult_total(self) -> int:
        return sum(row.mult_ops for row in self.rows)

    @property
    def add_total(self) -> int:
        return sum(row.add_ops for row in self.rows)

    @property
    def dft_total(self) -> int:
        return sum(row.dft_ops for row in self.rows)

    @property
    def grand_total(self) -> int:
        return sum(row.total for row in self.rows)

    @property
    def param_total(self) -> int:
        return sum(row.params for row in self.rows)

    @property
    def free_param_total(self) -> int:
        return sum(row.free_params for row in self.rows)

    @property
    def fixation_total(self) -> int:
        return sum(row.fixation_ops for row in self.rows)

    def domain_totals(self) -> Dict[str, int]:
        totals: Dict[str, int] = {}
        for row in self.rows:
            totals[row.domain] = totals.get(row.domain, 0) + row.total
        return totals

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([row.name, row.kind, row.domain, row.mult_ops, row.dft_ops])
        return buffer.getvalue()

    def render_text(self) -> str:
        lines = [
            f"# {self.name}",
            f"# convention: {self.convention}",
            f"{'layer':<22} {'kind':<14} {'domain':<6} {'mult_ops':>15} {'dft_ops':>13} {'params':>12} {'free':>12}",
        ]
        for row in self.rows:
            lines.append(
                f"{row.name:<22} {row.kind:<14} {row.domain:<6} {row.mult_ops:>15,} "
                f"{row.dft_ops:>13,} {row.params:>12,} {row.free_params:>12,}"
            )
        lines.append(
            f"{'total':<22} {'':<14} {'':<6} {self.mult_total:>15,} {self.dft_total:>13,} "
            f"{self.param_total:>12,} {self.free_param_total:>12,}"
        )
        for domain, total in sorted(self.domain_totals().items()):
            lines.append(f"domain {domain}: {total:,}")
        lines.append(f"adds (not in totals): {self.add_total:,}")
        lines.append(f"grand total (mult + dft): {self.grand_total:,}")
        lines.append(f"training cost, Weight Fixation DFTs per step: {self.fixation_total:,}")
        return "\n".join(lines)


def _row(geom: LayerGeometry, c_fft: float) -> OpRow:
    spec = geom.spec
    name = f"{geom.index:02d}.{geom.kind}"
    kind = geom.kind
    base = dict(name=name, kind=kind, domain=geom.domain)

    if kind == "conv":
        _, _, c_in = geom.in_shape
        h_out, w_out, c_out = geom.out_shape
        mults = spec.k * spec.k * h_out * w_out * c_in * c_out
        params = spec.k * spec.k * c_in * c_out + c_out
        return OpRow(**base, mult_ops=mults, add_ops=mults, params=params, free_params=params)

    if kind == "eml":
        height, width, c_in = geom.in_shape
        c_out = geom.out_shape[2]
        points = height * width
        stored = 2 * points * c_in * c_out
        free = spec.k * spec.k * c_in * c_out if spec.fixation else stored
        fixation = 0
        if spec.fixation and points > 1:
            fixation = int(round(2 * c_fft * points * c_in * c_out * math.log2(points)))
        return OpRow(
            **base,
            mult_ops=4 * points * c_in * c_out,
            add_ops=c_out * (c_in - 1) * 2 * points,
            params=stored,
            free_params=free,
            fixation_ops=fixation,
        )

    if kind == "dense":
        copies = 2 if geom.branch else 1
        n_in, n_out = geom.in_shape[0], geom.out_shape[0]
        params = copies * (n_in * n_out + n_out)
        return OpRow(**base, mult_ops=copies * n_in * n_out, add_ops=copies * n_in * n_out,
                     params=params, free_params=params)

    if kind in ("bn", "freq_bn"):
        branches = 2 if kind == "freq_bn" else 1
        params = 2 * branches * geom.in_shape[-1]
        return OpRow(**base, params=params, free_params=params)

    if kind in ("bridge_to_freq", "bridge_to_time"):
        return OpRow(**base, dft_ops=dft_ops(*geom.in_shape, c_fft=c_fft))

    if kind == "freq_maxpool":
        return OpRow(**base, dft_ops=dft_ops(*geom.in_shape, c_fft=c_fft) + dft_ops(*geom.out_shape, c_fft=c_fft))

    return OpRow(**base)


def count_ops(cfg: NetworkConfig, c_fft: float = C_FFT) -> OpCountReport:
    """Per-layer op counts of a valid config; a config with no layers counts zero."""
    report = OpCountReport(name=cfg.name, c_fft=c_fft)
    if not cfg.layers:
        return report
    for geom in check_config(cfg):
        report.rows.append(_row(geom, c_fft))
    return report


@dataclass
class Comparison:
    first: OpCountReport
    second: OpCountReport

    @staticmethod
    def _ratio(a: int, b: int) -> float:
        if b == 0:
            return 1.0 if a == 0 else math.inf
        return a / b

    @property
    def ratio(self) -> float:
        """Headline (multiply) total of the first config over the second."""
        return self._ratio(self.first.mult_total, self.second.mult_total)

    @property
    def grand_ratio(self) -> float:
        return self._ratio(self.first.grand_total, self.second.grand_total)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["row", "first_layer", "first_kind", "first_mult_ops", "first_dft_ops",
                         "second_layer", "second_kind", "second_mult_ops", "second_dft_ops"])
        pairs = zip_longest(self.first.rows, self.second.rows)
        for i, (a, b) in enumerate(pairs):
            writer.writerow([
                i,
                a.name if a else "", a.kind if a else "", a.mult_ops if a else "", a.dft_ops if a else "",
                b.name if b else "", b.kind if b else "", b.mult_ops if b else "", b.dft_ops if b else "",
            ])
        writer.writerow(["total", self.first.name, "", self.first.mult_total, self.first.dft_total,
                         self.second.name, "", self.second.mult_total, self.second.dft_total])
        return buffer.getvalue()

    def render_text(self) -> str:
        a, b = self.first, self.second
        width = 44
        lines = [f"{a.name:<{width}} | {b.name}"]
        for left, right in zip_longest(a.rows, b.rows):
            left_text = f"{left.name:<20} {left.mult_ops:>15,} {left.dft_ops:>7,}" if left else ""
            right_text = f"{right.name:<20} {right.mult_ops:>15,} {right.dft_ops:>7,}" if right else ""
            lines.append(f"{left_text:<{width}} | {right_text}")
        lines.append(f"{'mult total ' + format(a.mult_total, ','):<{width}} | mult total {b.mult_total:,}")
        lines.append(f"{'grand total ' + format(a.grand_total, ','):<{width}} | grand total {b.grand_total:,}")
        lines.append(f"ratio (mult): {self.ratio:.4f}")
        lines.append(f"ratio (mult + dft): {self.grand_ratio:.4f}")
        return "\n".join(lines)


def compare_report(cfg_a: NetworkConfig, cfg_b: NetworkConfig, c_fft: float = C_FFT) -> Comparison:
    return Comparison(count_ops(cfg_a, c_fft), count_ops(cfg_b, c_fft))
