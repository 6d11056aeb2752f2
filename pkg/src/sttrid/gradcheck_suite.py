"""Registry of finite-difference checks over every differentiable operation.

Primitive operations must agree with central differences to 1e-6 relative
error; composite blocks, streams and heads on tiny configurations to 1e-4.
Ops are looked up on :mod:`sttrid.numerics.ops` at call time, so a patched
backward rule is seen by the suite.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import Parameter, finite_difference_check, ops
from .numerics import module as nn

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    kind: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28} {self.kind:<9} {self.error:10.3e} < {self.tolerance:.0e}  {status}"


def _probe(out, rng_seed: int = 99):
    """Scalar projection of a tensor output onto a fixed random direction."""
    r = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return ops.sum(ops.mul(out, r))


def _rand(rng, *shape, away_from_zero: bool = False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.where(np.abs(x) < 0.1, np.sign(x + 1e-12) * 0.1 + x, x)
    return x


def _primitives() -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(0)
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    pos = rng.uniform(0.5, 2.0, (3, 4))
    labels = np.array([0, 2, 1, 3, 2])
    x4 = _rand(rng, 2, 4, 7, 3)

    def bn(x, s, t):
        return _probe(ops.batch_norm(x, s, t, np.zeros(4), np.ones(4), training=True))

    def bn_eval(x, s, t):
        return _probe(ops.batch_norm(x, s, t, rng_mean, rng_var, training=False))

    rng_mean, rng_var = _rand(rng, 4), rng.uniform(0.5, 2.0, 4)
    return {
        "add": lambda: finite_difference_check(lambda x, y: _probe(ops.add(x, y)), [a, b[0]]),
        "sub": lambda: finite_difference_check(lambda x, y: _probe(ops.sub(x, y)), [a, b]),
        "mul": lambda: finite_difference_check(lambda x, y: _probe(ops.mul(x, y)), [a, b[:, :1]]),
        "div": lambda: finite_difference_check(lambda x, y: _probe(ops.div(x, y)), [a, pos]),
        "matmul": lambda: finite_difference_check(
            lambda x, y: _probe(ops.matmul(x, y)), [_rand(rng, 2, 3, 4), _rand(rng, 4, 5)]),
        "reshape": lambda: finite_difference_check(lambda x: _probe(ops.reshape(x, (2, 6))), [a]),
        "transpose": lambda: finite_difference_check(lambda x: _probe(ops.transpose(x, (1, 0))), [a]),
        "sum": lambda: finite_difference_check(lambda x: _probe(ops.sum(x, axis=1, keepdims=True)), [a]),
        "mean": lambda: finite_difference_check(lambda x: _probe(ops.mean(x, axis=(0, 2))), [x4]),
        "concat": lambda: finite_difference_check(lambda x, y: _probe(ops.concat([x, y], axis=0)), [a, b]),
        "einsum": lambda: finite_difference_check(
            lambda x, y: _probe(ops.einsum("ij,kj->ik", x, y)), [a, _rand(rng, 5, 4)]),
        "relu": lambda: finite_difference_check(lambda x: _probe(ops.relu(x)), [_rand(rng, 3, 4, away_from_zero=True)]),
        "softmax_rows": lambda: finite_difference_check(lambda x: _probe(ops.softmax_rows(x)), [a]),
        "log_softmax_rows": lambda: finite_difference_check(lambda x: _probe(ops.log_softmax_rows(x)), [a]),
        "scaled_dot_attention": lambda: finite_difference_check(
            lambda q, k, v: _probe(ops.scaled_dot_attention(q, k, v, 0.5)),
            [_rand(rng, 2, 5, 3), _rand(rng, 2, 6, 3), _rand(rng, 2, 6, 4)]),
        "l2_normalize": lambda: finite_difference_check(lambda x: _probe(ops.l2_normalize(x)), [a]),
        "cross_entropy": lambda: finite_difference_check(lambda x: ops.cross_entropy(x, labels), [_rand(rng, 5, 4)]),
        "dropout": lambda: finite_difference_check(lambda x: _probe(ops.dropout(x, 0.3, True, seed=5)), [a]),
        "batch_norm[train]": lambda: finite_difference_check(bn, [x4, rng.uniform(0.5, 2, 4), _rand(rng, 4)]),
        "batch_norm[eval]": lambda: finite_difference_check(bn_eval, [x4, rng.uniform(0.5, 2, 4), _rand(rng, 4)]),
        "linear": lambda: finite_difference_check(
            lambda x, w, bb: _probe(ops.linear(x, w, bb)), [_rand(rng, 3, 4), _rand(rng, 5, 4), _rand(rng, 5)]),
        "temporal_conv[depthwise]": lambda: finite_difference_check(
            lambda x, w: _probe(ops.temporal_conv(x, w, stride=2, groups=4)), [x4, _rand(rng, 4, 1, 3)]),
        "temporal_conv[dense]": lambda: finite_difference_check(
            lambda x, w: _probe(ops.temporal_conv(x, w, stride=1, groups=1)), [x4, _rand(rng, 5, 4, 3)]),
        "temporal_conv[grouped]": lambda: finite_difference_check(
            lambda x, w: _probe(ops.temporal_conv(x, w, stride=1, groups=2)), [x4, _rand(rng, 6, 2, 5)]),
    }


def _module_check(module: nn.Module, inputs: list[np.ndarray], fn, max_coords: int = 12) -> float:
    """Check gradients for the inputs and every parameter of ``module``."""
    params = [p for _, p in module.named_parameters()]
    wrapped = [Parameter(np.array(x, dtype=float)) for x in inputs]
    n = len(wrapped)
    return finite_difference_check(lambda *ts: fn(*ts[:n]), wrapped + params, h=STEP, max_coords=max_coords)


def _composites() -> dict[str, Callable[[], float]]:
    from .attention import AttentionBlock, AttentionConfig, init_attention, self_attention
    from .fusion import FusionHead, FusionHeadConfig, fuse_embeddings
    from .graph_conv import STGCNBlock, STGCNBlockConfig, spatial_graph_conv
    from .model import IdentityModel, ModelConfig
    from .skeleton import build_skeleton_graph, skeleton_preset

    graph = skeleton_preset("body17")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 3, 6, 17))
    feat = rng.standard_normal((2, 8, 5, 17))
    labels = np.array([0, 1, 2])
    # end-to-end models run on a 4-joint chain so few relu units sit near a kink
    chain = build_skeleton_graph([(0, 1), (1, 2), (2, 3)], 4)
    x_chain = rng.standard_normal((3, 3, 6, 4))
    tiny = ModelConfig(num_classes=3, heads=2, dk_ratio=0.5, dv_ratio=0.5, attention_blocks=1,
                       str_stem=(4, 8), ttr_stem=(4, 8), ttr_temporal_kernel=3, fusion_hidden=(8, 6),
                       classifier_init_scale=1.0)
    att = AttentionConfig(8, heads=2, dk_ratio=0.5, dv_ratio=0.5)

    def graph_conv():
        w, bias = rng.standard_normal((5, 3)), rng.standard_normal(5)
        return finite_difference_check(lambda xx, ww, bb: _probe(spatial_graph_conv(xx, graph, ww, bb)), [x, w, bias])

    def stgcn(stride):
        block = STGCNBlock(STGCNBlockConfig(3, 4, 3, stride), graph, np.random.default_rng(2))
        return _module_check(block, [x], lambda xx: _probe(block(xx)))

    def attention(kind):
        w = init_attention(att, np.random.default_rng(3))
        params = [w.query, w.key, w.value, w.out]
        return finite_difference_check(lambda xx, *_: _probe(self_attention(xx, w, att, kind)),
                                       [Parameter(feat.copy())] + params, max_coords=16)

    def attention_block(kind):
        block = AttentionBlock(att, kind, np.random.default_rng(4))
        return _module_check(block, [feat], lambda xx: _probe(block(xx)))

    def model(phase):
        m = IdentityModel(tiny, phase, seed=5, graph=chain)
        m.train()
        return _module_check(m, [x_chain], lambda xx: m.loss(m(xx), labels), max_coords=6)

    def fusion_head():
        head = FusionHead(FusionHeadConfig(3, hidden=(8, 6)), seed=6)
        head.train()
        e1, e2 = rng.standard_normal((4, 256)), rng.standard_normal((4, 256))
        return _module_check(head, [e1, e2], lambda a, b: _probe(head(fuse_embeddings(a, b))), max_coords=10)

    return {
        "spatial_graph_conv": graph_conv,
        "stgcn_block": lambda: stgcn(1),
        "stgcn_block[stride2]": lambda: stgcn(2),
        "spatial_self_attention": lambda: attention("spatial"),
        "temporal_self_attention": lambda: attention("temporal"),
        "attention_block[spatial]": lambda: attention_block("spatial"),
        "attention_block[temporal]": lambda: attention_block("temporal"),
        "fusion_head": fusion_head,
        "str_stream": lambda: model("str-only"),
        "ttr_stream": lambda: model("ttr-only"),
        "joint_shared_model": lambda: model("joint-shared"),
        "joint_fusion_model": lambda: model("joint-fusion"),
    }


def registered_checks() -> list[tuple[str, str, float, Callable[[], float]]]:
    checks = [(name, "primitive", PRIMITIVE_TOL, fn) for name, fn in _primitives().items()]
    checks += [(name, "composite", COMPOSITE_TOL, fn) for name, fn in _composites().items()]
    return checks


def run_gradchecks() -> list[CheckResult]:
    results = []
    for name, kind, tol, fn in registered_checks():
        t0 = time.perf_counter()
        err = fn()
        results.append(CheckResult(name, kind, err, tol, time.perf_counter() - t0))
    return results
