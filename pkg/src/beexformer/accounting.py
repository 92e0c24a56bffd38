"""Closed-form FLOP counts and checkpoint size accounting.

FLOP convention (stored in every report):

* one multiply-add = 2 FLOPs; other arithmetic = 1 FLOP per element;
* softmax, sigmoid, tanh, layer norm = 5 FLOPs per element;
* token lookup and position codes cost nothing (table reads);
* *nominal* counts a +-1 x +-1 multiply-add like a float one;
  *adjusted* weights it by 1/64 (one 64-bit XNOR-popcount word).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .model import block_parameter_count

BINARY_WEIGHT = Fraction(1, 64)

FLOP_CONVENTION = {
    "muladd": 2,
    "elementwise": 1,
    "transcendental_or_norm": 5,
    "binary_muladd_adjusted_weight": "1/64",
    "embedding": 0,
    "unit": "FLOPs per sample at the padded sequence length",
}


@dataclass
class Count:
    real: Fraction = Fraction(0)     # FLOPs of full-precision arithmetic
    binary: Fraction = Fraction(0)   # number of +-1 x +-1 multiply-adds

    def __add__(self, other: "Count") -> "Count":
        return Count(self.real + other.real, self.binary + other.binary)

    def scaled(self, k) -> "Count":
        return Count(self.real * k, self.binary * k)

    @property
    def nominal(self) -> Fraction:
        return self.real + 2 * self.binary

    @property
    def adjusted(self) -> Fraction:
        return self.real + 2 * self.binary * BINARY_WEIGHT


@dataclass
class FlopsLedger:
    components: dict[str, Count] = field(default_factory=dict)
    blocks: float = 0
    heads: float = 0

    def __add__(self, other: "FlopsLedger") -> "FlopsLedger":
        names = list(dict.fromkeys([*self.components, *other.components]))
        merged = {n: self.components.get(n, Count()) + other.components.get(n, Count()) for n in names}
        return FlopsLedger(merged, self.blocks + other.blocks, self.heads + other.heads)

    def scaled(self, k) -> "FlopsLedger":
        return FlopsLedger({n: c.scaled(k) for n, c in self.components.items()},
                           self.blocks * k, self.heads * k)

    @property
    def nominal_exact(self) -> Fraction:
        return sum((c.nominal for c in self.components.values()), Fraction(0))

    @property
    def adjusted_exact(self) -> Fraction:
        return sum((c.adjusted for c in self.components.values()), Fraction(0))

    @property
    def nominal(self) -> float:
        return float(self.nominal_exact)

    @property
    def adjusted(self) -> float:
        return float(self.adjusted_exact)

    def to_json(self) -> dict:
        return {
            "components": {n: {"real": float(c.real), "binary_muladds": float(c.binary)}
                           for n, c in self.components.items()},
            "blocks": float(self.blocks),
            "heads": float(self.heads),
            "nominal": self.nominal,
            "adjusted": self.adjusted,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FlopsLedger":
        comps = {n: Count(Fraction(c["real"]), Fraction(c["binary_muladds"]))
                 for n, c in data["components"].items()}
        return cls(comps, data["blocks"], data["heads"])


def block_flops(cfg: ModelConfig, seq_len: int) -> dict[str, Count]:
    L, D, H, Dh = seq_len, cfg.model_dim, cfg.num_heads, cfg.slfn_dim
    mha = Count(real=Fraction(4 * L * L * D + 7 * H * L * L), binary=Fraction(4 * L * D * D))
    norm = Count(real=Fraction(6 * L * D))
    out = {"mha": mha, "norm": norm}
    if cfg.use_slfn:
        corrected = cfg.slfn_rule == "corrected"
        recurrent = 3 if corrected else 2
        gates = 3 if corrected else 2
        update = 3 if corrected else 2
        out["slfn"] = Count(
            real=Fraction(L * Dh * (2 + 5 * gates + update)),
            binary=Fraction(L * (2 * D * Dh + recurrent * Dh * Dh + Dh * D)),
        )
        out["norm"] = norm.scaled(2)
    return out


def head_flops(cfg: ModelConfig, seq_len: int) -> Count:
    L, D, E, m = seq_len, cfg.model_dim, cfg.exit_dim, cfg.num_classes
    return Count(real=Fraction(L * D + D + 5 * E + m + 5 * m), binary=Fraction(D * E + E * m))


def count_flops(cfg: ModelConfig, exit_index: int | None = None, seq_len: int | None = None) -> FlopsLedger:
    """FLOPs for one sample.

    ``exit_index=None`` is the no-early-exit cost: every block plus the final
    head only.  An integer ``c`` is the early-exit cost of leaving at block
    ``c``: blocks 1..c plus the heads evaluated after each of them.
    """
    L = seq_len or cfg.max_len
    blocks = cfg.num_blocks if exit_index is None else exit_index
    heads = 1 if exit_index is None else exit_index
    comps = {"embedding": Count()}
    for name, count in block_flops(cfg, L).items():
        comps[name] = count.scaled(blocks)
    comps["exit_heads"] = head_flops(cfg, L).scaled(heads)
    return FlopsLedger(comps, blocks, heads)


def mean_ledger(ledgers: Sequence[FlopsLedger]) -> FlopsLedger:
    total = FlopsLedger()
    for ledger in ledgers:
        total = total + ledger
    return total.scaled(Fraction(1, len(ledgers)))


def reduction(without_ee: FlopsLedger, with_ee: FlopsLedger, adjusted: bool = False) -> float:
    """(WEE - EE) / WEE, computed exactly from the ledgers."""
    w = without_ee.adjusted_exact if adjusted else without_ee.nominal_exact
    e = with_ee.adjusted_exact if adjusted else with_ee.nominal_exact
    return float((w - e) / w)


def params_saved(cfg: ModelConfig, exit_index: int) -> int:
    """Backbone parameters left uncomputed when exiting after ``exit_index``."""
    return sum(block_parameter_count(cfg, c) for c in range(exit_index + 1, cfg.num_blocks + 1))


# -- size --------------------------------------------------------------------

@dataclass
class TensorSize:
    name: str
    dtype: str
    numel: int
    bits: int          # bits actually stored, padding included

    @property
    def binarized(self) -> bool:
        return self.dtype == "packed"


@dataclass
class SizeLedger:
    kind: str
    tensors: list[TensorSize]
    header_bytes: int = 0
    file_bytes: int = 0

    @property
    def payload_bytes(self) -> int:
        return sum(-(-t.bits // 8) for t in self.tensors)

    @property
    def num_parameters(self) -> int:
        return sum(t.numel for t in self.tensors)

    @property
    def full_precision_bytes(self) -> int:
        """Payload of the same architecture stored at 32 bits per parameter."""
        return 4 * self.num_parameters

    @property
    def ratio(self) -> float:
        return self.full_precision_bytes / self.payload_bytes

    def share(self, predicate) -> float:
        bits = sum(t.bits for t in self.tensors)
        return sum(t.bits for t in self.tensors if predicate(t)) / bits

    def breakdown(self) -> dict[str, dict[str, float]]:
        groups: dict[str, dict[str, float]] = {}
        for t in self.tensors:
            key = "binarized" if t.binarized else ("embedding" if t.name == "embedding" else "norms_and_biases")
            g = groups.setdefault(key, {"params": 0, "bytes": 0})
            g["params"] += t.numel
            g["bytes"] += t.bits / 8
        return groups

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "num_parameters": self.num_parameters,
            "payload_bytes": self.payload_bytes,
            "header_bytes": self.header_bytes,
            "file_bytes": self.file_bytes,
            "full_precision_bytes": self.full_precision_bytes,
            "ratio": self.ratio,
            "breakdown": self.breakdown(),
        }


def size_from_manifest(kind: str, manifest: Sequence[dict], header_bytes: int = 0,
                       file_bytes: int = 0) -> SizeLedger:
    tensors = []
    for entry in manifest:
        numel = int(np.prod(entry["shape"]))
        if entry["dtype"] == "packed":
            rows, _ = entry["shape"]
            bits = rows * entry["words_per_row"] * 64
        else:
            bits = 32 * numel
        tensors.append(TensorSize(entry["name"], entry["dtype"], numel, bits))
    return SizeLedger(kind, tensors, header_bytes, file_bytes)


def measure_size(path) -> SizeLedger:
    from .checkpoint import read_header

    header, start, size = read_header(path)
    return size_from_manifest(header["kind"], header["tensors"], start, size)
