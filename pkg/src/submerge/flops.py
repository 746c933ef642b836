"""Analytic matmul-FLOP model of the Transformer forward pass.

Counts multiply-adds as 2 FLOPs per scalar product term (2*m*k*p for an
(m,k)@(k,p) matmul), matmuls only: layer norms, softmaxes, residual adds and
the merge's segmented reductions are excluded. The same convention drives the
instrumented counter in autodiff.count_matmul_flops, and the tests require
the two routes to agree exactly on real forwards.
"""

from dataclasses import dataclass

ENCODER_PARTS = ("qkv_proj", "attn_scores", "attn_apply", "out_proj", "ffnn")


@dataclass(frozen=True)
class FlopsBreakdown:
    """Per-layer FLOP maps plus anything outside the layers (e.g. lm_head)."""

    per_layer: tuple
    extras: dict

    @property
    def component_totals(self):
        totals = {}
        for layer in self.per_layer:
            for key, val in layer.items():
                totals[key] = totals.get(key, 0) + val
        for key, val in self.extras.items():
            totals[key] = totals.get(key, 0) + val
        return totals

    @property
    def total(self):
        return sum(self.component_totals.values())

    def to_dict(self):
        return {
            "per_layer": [dict(layer) for layer in self.per_layer],
            "extras": dict(self.extras),
            "component_totals": self.component_totals,
            "total": self.total,
        }


def encoder_layer_flops(config, n):
    """One encoder layer at sequence length n."""
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    d, dff = config.d_model, config.d_ff
    return {
        "qkv_proj": 3 * 2 * n * d * d,
        "attn_scores": 2 * n * n * d,
        "attn_apply": 2 * n * n * d,
        "out_proj": 2 * n * d * d,
        "ffnn": 2 * 2 * n * d * dff,
    }


def decoder_layer_flops(config, t, memory_len):
    """One decoder layer at target length t over memory_len memory positions."""
    if t < 1 or memory_len < 1:
        raise ValueError(f"lengths must be >= 1, got t={t}, memory={memory_len}")
    d, dff = config.d_model, config.d_ff
    return {
        "self_qkv_proj": 3 * 2 * t * d * d,
        "self_attn_scores": 2 * t * t * d,
        "self_attn_apply": 2 * t * t * d,
        "self_out_proj": 2 * t * d * d,
        "cross_q_proj": 2 * t * d * d,
        "cross_kv_proj": 2 * 2 * memory_len * d * d,
        "cross_attn_scores": 2 * t * memory_len * d,
        "cross_attn_apply": 2 * t * memory_len * d,
        "cross_out_proj": 2 * t * d * d,
        "ffnn": 2 * 2 * t * d * dff,
    }


def length_schedule(num_layers, n, n_merged=None, position=None):
    """Per-layer sequence lengths: n up to and including layer `position`,
    n_merged above it. position None (or n_merged None) means no merge."""
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if position is None or n_merged is None:
        return [n] * num_layers
    if not 0 <= position <= num_layers:
        raise ValueError(f"position {position} out of range 0..{num_layers}")
    if not 1 <= n_merged <= n:
        raise ValueError(f"merged length {n_merged} must lie in [1, {n}]")
    return [n if layer < position else n_merged for layer in range(num_layers)]


def count_encoder_flops(config, schedule):
    """Encoder stack FLOPs for a per-layer length schedule."""
    if len(schedule) != config.num_layers:
        raise ValueError(
            f"schedule has {len(schedule)} entries for {config.num_layers} layers"
        )
    return FlopsBreakdown(
        tuple(encoder_layer_flops(config, n) for n in schedule), {}
    )


def count_encdec_flops(config, src_schedule, tgt_len, memory_len):
    """Full seq2seq FLOPs: encoder schedule, decoder at tgt_len over memory_len,
    plus the final vocabulary projection."""
    enc = count_encoder_flops(config, src_schedule)
    dec_layers = tuple(
        decoder_layer_flops(config, tgt_len, memory_len)
        for _ in range(config.num_layers)
    )
    lm_head = 2 * tgt_len * config.d_model * config.vocab_size
    return FlopsBreakdown(enc.per_layer + dec_layers, {"lm_head": lm_head})


def merged_encoder_flops(config, n, n_merged, position):
    """Convenience: encoder FLOPs with the merge at `position`."""
    schedule = length_schedule(config.num_layers, n, n_merged, position)
    return count_encoder_flops(config, schedule)


def savings_ratio(baseline, merged):
    """baseline/merged as a factor (1.18 means 18% cheaper after merging)."""
    base = baseline.total if isinstance(baseline, FlopsBreakdown) else float(baseline)
    cost = merged.total if isinstance(merged, FlopsBreakdown) else float(merged)
    if base <= 0:
        raise ValueError(f"baseline FLOPs must be positive, got {base}")
    if cost <= 0:
        raise ValueError(f"merged FLOPs must be positive, got {cost}")
    return base / cost
