from fractions import Fraction

import numpy as np
import pytest

from beexformer.accounting import (Count, FlopsLedger, block_flops, count_flops, head_flops, mean_ledger,
                                   params_saved, reduction, size_from_manifest)
from beexformer.model import BEExformer, block_parameter_count, forward_exits

from conftest import tiny_config


class CountingContext:
    """Wraps a model context and tallies +-1 multiply-adds per bilinear call."""

    def __init__(self, inner):
        self.inner = inner
        self.binary = 0

    def bilinear(self, x, name):
        rows = int(np.prod(x.shape[:-1]))
        w = self.inner.weight(name)
        self.binary += rows * w.shape[0] * w.shape[1]
        return self.inner.bilinear(x, name)

    def __getattr__(self, name):
        return getattr(self.inner, name)


@pytest.mark.parametrize("overrides", [{}, {"slfn_rule": "corrected"}, {"use_slfn": False},
                                       {"num_blocks": 3, "num_classes": 3}])
def test_binary_muladds_match_an_instrumented_forward(overrides):
    cfg = tiny_config(**overrides)
    model = BEExformer(cfg, seed=0)
    ctx = CountingContext(model.context())
    forward_exits(model, np.ones((1, cfg.max_len), dtype=int), ctx)
    ledger = count_flops(cfg, cfg.num_blocks, cfg.max_len)
    assert sum(c.binary for c in ledger.components.values()) == ctx.binary


def test_block_count_by_hand():
    cfg = tiny_config(model_dim=4, num_heads=2, slfn_dim=3)
    counts = block_flops(cfg, 2)
    # scores + weighted sum: 2 * (L*L*D) muladds; softmax 5, scale 1, mask 1 per score entry
    assert counts["mha"].real == 2 * 2 * (2 * 2 * 4) + 7 * 2 * 2 * 2
    assert counts["mha"].binary == 4 * 2 * 4 * 4
    # literal rule per unit and step: 2 adds, sigmoid + tanh + 2 activation codes, product + sum
    assert counts["slfn"].real == 2 * 3 * (2 + 5 * 2 + 2)
    assert counts["slfn"].binary == 2 * (2 * 4 * 3 + 2 * 3 * 3 + 3 * 4)
    assert counts["norm"].real == 2 * 6 * 2 * 4


def test_head_count_by_hand():
    cfg = tiny_config(model_dim=8, num_classes=3)
    c = head_flops(cfg, 5)
    assert c.binary == 8 * 2 + 2 * 3
    assert c.real == 5 * 8 + 8 + 5 * 2 + 3 + 5 * 3


def test_exit_at_last_block_adds_the_extra_heads():
    cfg = tiny_config(num_blocks=6)
    wee = count_flops(cfg)
    ee = count_flops(cfg, 6)
    head = head_flops(cfg, cfg.max_len)
    assert ee.nominal_exact == wee.nominal_exact + 5 * head.nominal
    assert ee.adjusted_exact == wee.adjusted_exact + 5 * head.adjusted


def test_exit_at_first_block_costs_a_sixth_of_the_backbone():
    cfg = tiny_config(num_blocks=6, model_dim=64, slfn_dim=96, num_heads=4, max_len=32)
    one = count_flops(cfg, 1)
    full = count_flops(cfg)
    backbone = lambda led: sum((c.nominal for n, c in led.components.items() if n != "exit_heads"), Fraction(0))  # noqa: E731
    assert backbone(one) / backbone(full) == Fraction(1, 6)
    assert one.nominal / full.nominal == pytest.approx(1 / 6, rel=0.02)


def test_half_exiting_at_three_of_six():
    cfg = tiny_config(num_blocks=6)
    L = cfg.max_len
    block = sum((c.nominal for c in block_flops(cfg, L).values()), Fraction(0))
    head = head_flops(cfg, L).nominal
    ee = mean_ledger([count_flops(cfg, 3), count_flops(cfg, 6)])
    wee = count_flops(cfg)
    # hand ledger: (3 blocks + 3 heads + 6 blocks + 6 heads) / 2 against 6 blocks + 1 head
    expected = (6 * block + head - (Fraction(9, 2) * block + Fraction(9, 2) * head)) / (6 * block + head)
    assert reduction(wee, ee) == float(expected)
    # the samples that leave at block 3 skip exactly half of the backbone
    early = count_flops(cfg, 3)
    assert early.components["mha"].nominal / wee.components["mha"].nominal == Fraction(1, 2)
    assert early.components["slfn"].nominal / wee.components["slfn"].nominal == Fraction(1, 2)
    assert reduction(wee, ee) == pytest.approx(0.25, abs=0.01)


def test_nominal_at_least_adjusted_and_monotone_in_length():
    cfg = tiny_config()
    prev = None
    for L in range(1, 9):
        led = count_flops(cfg, 2, L)
        assert led.nominal >= led.adjusted
        if prev is not None:
            assert led.nominal > prev.nominal and led.adjusted > prev.adjusted
        prev = led


def test_ledgers_are_additive():
    cfg = tiny_config()
    a, b = count_flops(cfg, 1), count_flops(cfg, 2)
    assert (a + b).nominal_exact == a.nominal_exact + b.nominal_exact
    assert (a + b).adjusted_exact == a.adjusted_exact + b.adjusted_exact


def test_count_arithmetic():
    c = Count(Fraction(10), Fraction(64))
    assert c.nominal == 138
    assert c.adjusted == 12


def test_ledger_json_round_trip():
    led = mean_ledger([count_flops(tiny_config(), c) for c in (1, 2, 2)])
    back = FlopsLedger.from_json(led.to_json())
    assert back.nominal == led.nominal and back.adjusted == led.adjusted


def test_params_saved():
    cfg = tiny_config(num_blocks=4)
    per_block = block_parameter_count(cfg)
    assert [params_saved(cfg, c) for c in (1, 2, 4)] == [3 * per_block, 2 * per_block, 0]


def test_pure_binary_manifest_ratio_is_32():
    manifest = [{"name": "w", "dtype": "packed", "shape": [64, 128], "words_per_row": 2},
                {"name": "v", "dtype": "packed", "shape": [3, 192], "words_per_row": 3}]
    assert size_from_manifest("frozen", manifest).ratio == 32.0


def test_padding_counts_against_the_ratio():
    manifest = [{"name": "w", "dtype": "packed", "shape": [1, 65], "words_per_row": 2}]
    ledger = size_from_manifest("frozen", manifest)
    assert ledger.payload_bytes == 16
    assert ledger.ratio == 65 * 4 / 16


def test_full_precision_tensors_dilute_the_ratio():
    manifest = [{"name": "w", "dtype": "packed", "shape": [64, 64], "words_per_row": 1},
                {"name": "embedding", "dtype": "float32", "shape": [64, 2]}]
    ledger = size_from_manifest("frozen", manifest)
    assert ledger.ratio == (64 * 66 * 4) / (64 * 8 + 64 * 2 * 4)
    groups = ledger.breakdown()
    assert groups["binarized"]["params"] == 4096 and groups["embedding"]["bytes"] == 512
