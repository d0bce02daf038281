"""Finite-difference suite over the primitives and the composed network.

Every check reduces the op output to a scalar through a fixed random
weighting, so that no coordinate of the gradient is trivially zero.  Central
differences are meaningless across a kink, so each instance is redrawn until
no +-h probe moves a relu input across zero and every signed-sqrt input stays
far from zero relative to the probe's reach (see :class:`KinkMonitor`).
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .graph import IganCell, igan_cell_forward, igan_stack_forward, initial_state, score_moments
from .language import SentenceEncoding, lstm_forward, make_dynamic_filters
from .model import ModelConfig, forward, init_parameters
from .rng import derive_seed, make_rng
from .trainer import loss
from .video import PyramidConfig, align_features, build_pyramid

TOLERANCE = 1e-4
STEP = 1e-4
SQRT_CLEARANCE = 100.0
MAX_DRAWS = 50

# micro-instance for the composed check: T_f=4 clips, L=3 words, d=8
MICRO_CLIPS, MICRO_WORDS, MICRO_DIM, MICRO_EMBED = 4, 3, 8, 5
MICRO_PYRAMID = PyramidConfig("micro", clips=MICRO_CLIPS, pool_stride=2, layout="spans")

Instance = Tuple[Callable, List[ad.Tensor]]


class KinkMonitor:
    """Tracks how far the +-h probes move every relu / signed-sqrt input.

    Fed as the ``observe`` hook of :func:`autodiff.finite_difference_check`;
    the first tape seen is the unperturbed reference.
    """

    def __init__(self):
        self.reference: Optional[List[Tuple[str, np.ndarray]]] = None
        self.reach: List[np.ndarray] = []

    def __call__(self, tape: ad.Tape) -> None:
        kinks = [(node.op, node.inputs[0].data) for node in tape.nodes
                 if node.op in ("relu", "signed_sqrt")]
        if self.reference is None:
            self.reference = [(op, v.copy()) for op, v in kinks]
            self.reach = [np.zeros_like(v) for _, v in kinks]
            return
        for r, (_, v0), (_, v1) in zip(self.reach, self.reference, kinks):
            np.maximum(r, np.abs(v1 - v0), out=r)

    def clearance(self) -> float:
        """min |value| / reach over entries the probes move, scaled per op.

        Above 1 means no probe crossed a relu kink and every signed-sqrt
        input stayed ``SQRT_CLEARANCE`` reaches away from its cusp.  Exact
        zeros that never move (dead relu rows) are ignored.
        """
        clearance = np.inf
        for (op, v0), r in zip(self.reference or [], self.reach):
            moving = r > 0
            if np.any(moving):
                factor = 1.0 if op == "relu" else SQRT_CLEARANCE
                clearance = min(clearance, float((np.abs(v0[moving]) / r[moving]).min()) / factor)
        return clearance


def _weighted(out: ad.Tensor, w: np.ndarray) -> ad.Tensor:
    return ad.sum(ad.mul(out, w))


def _unary(op, x, rng) -> Instance:
    w = rng.standard_normal(op(ad.Tensor(x)).shape)
    return (lambda ts: _weighted(op(ts[0]), w)), [ad.Tensor(x)]


def _binary(op, a, b, rng) -> Instance:
    w = rng.standard_normal(op(ad.Tensor(a), ad.Tensor(b)).shape)
    return (lambda ts: _weighted(op(ts[0], ts[1]), w)), [ad.Tensor(a), ad.Tensor(b)]


def _primitive_builders() -> Dict[str, Callable[[np.random.Generator], Instance]]:
    n = lambda rng, *shape: rng.standard_normal(shape)  # noqa: E731
    return {
        "add": lambda r: _binary(ad.add, n(r, 5, 4), n(r, 4), r),
        "mul": lambda r: _binary(ad.mul, n(r, 5, 4), n(r, 5, 4), r),
        "matmul": lambda r: _binary(ad.matmul, n(r, 5, 4), n(r, 4, 3), r),
        "tanh": lambda r: _unary(ad.tanh, n(r, 5, 4), r),
        "sigmoid": lambda r: _unary(ad.sigmoid, n(r, 5, 4), r),
        "relu": lambda r: _unary(ad.relu, n(r, 5, 4), r),
        "signed_sqrt": lambda r: _unary(ad.signed_sqrt, n(r, 5, 4), r),
        "softmax": lambda r: _unary(lambda t: ad.softmax(t, axis=-1), n(r, 5, 4), r),
        "l2_normalize_rows": lambda r: _unary(ad.l2_normalize_rows, n(r, 5, 4), r),
        "mean": lambda r: _unary(lambda t: ad.reshape(ad.mean(t, axis=0), (1, 4)), n(r, 5, 4), r),
        "conv1d_same": lambda r: _binary(lambda a, k: ad.conv1d(a, k, padding="same"),
                                         n(r, 9, 3), n(r, 3, 3, 2), r),
        "conv1d_valid_stride2": lambda r: _binary(lambda a, k: ad.conv1d(a, k, stride=2),
                                                  n(r, 9, 3), n(r, 2, 3, 2), r),
        "max_pool1d": lambda r: _unary(lambda t: ad.max_pool1d(t, window=3, stride=3),
                                       n(r, 9, 3), r),
        "bce_with_logits": _bce,
    }


def _bce(rng) -> Instance:
    targets = rng.uniform(0, 1, size=7)
    return (lambda ts: ad.bce_with_logits_sum(ts[0], targets)), [ad.Tensor(rng.standard_normal(7))]


def micro_config(cells: int = 3) -> ModelConfig:
    return ModelConfig(preset="didemo", dim=MICRO_DIM, cells=cells, embedding_dim=MICRO_EMBED,
                       custom_pyramid=MICRO_PYRAMID)


def _micro_params(rng, config: ModelConfig) -> Dict[str, np.ndarray]:
    params = init_parameters(config, rng)
    # non-zero biases so that their gradients are exercised too
    for name in params:
        if name.endswith("bias") and not name.startswith("lstm."):
            params[name] = rng.uniform(0.05, 0.2, size=params[name].shape)
    return params


def _micro_targets(rng) -> np.ndarray:
    n = MICRO_PYRAMID.num_moments
    return np.where(rng.uniform(size=n) > 0.5, rng.uniform(0.5, 1.0, size=n), 0.0)


def _component_builders() -> Dict[str, Callable[[np.random.Generator], Instance]]:
    d, e, L, T = MICRO_DIM, MICRO_EMBED, MICRO_WORDS, MICRO_CLIPS
    n = MICRO_PYRAMID.num_moments

    def lstm(rng):
        w_ih, w_hh = rng.uniform(-0.5, 0.5, (e, 4 * d)), rng.uniform(-0.5, 0.5, (d, 4 * d))
        embedded, w = rng.standard_normal((L, e)), rng.standard_normal((L, d))
        return (lambda ts: _weighted(lstm_forward(embedded, *ts).states, w),
                [ad.Tensor(w_ih), ad.Tensor(w_hh), ad.Tensor(rng.uniform(-0.5, 0.5, 4 * d))])

    def dynamic_filter(rng):
        w = rng.standard_normal((d, L))

        def f(ts):
            return _weighted(make_dynamic_filters(SentenceEncoding(ts[0]), ts[1], ts[2]).gamma, w)
        return f, [ad.Tensor(rng.standard_normal(s)) for s in ((L, d), (d, d), (d,))]

    def alignment(rng):
        w = rng.standard_normal((T, d))
        return (lambda ts: _weighted(align_features(ts[0], ts[1]).features, w),
                [ad.Tensor(rng.standard_normal((T, d))), ad.Tensor(np.tanh(rng.standard_normal((d, L))))])

    def pyramid(rng):
        stages = MICRO_PYRAMID.stages
        w = rng.standard_normal((n, d))
        tensors = [ad.Tensor(rng.standard_normal((T, d)))]
        for stage in stages:
            tensors += [ad.Tensor(rng.uniform(-0.5, 0.5, (stage.width, d, d))),
                        ad.Tensor(rng.uniform(0.05, 0.2, d))]
        return (lambda ts: _weighted(build_pyramid(ts[0], MICRO_PYRAMID, ts[1::2], ts[2::2]), w),
                tensors)

    def igan_cell(rng):
        w = rng.standard_normal((n, d))

        def f(ts):
            state = initial_state(ts[0])
            return _weighted(igan_cell_forward(state, ts[0], IganCell(ts[1], ts[2])).nodes, w)
        return f, [ad.Tensor(rng.uniform(0.1, 1.0, (n, d)))] + [
            ad.Tensor(rng.uniform(-0.5, 0.5, (d, d))) for _ in range(2)]

    def igan_stack(rng):
        w = rng.standard_normal((n, d))

        def f(ts):
            cells = [IganCell(ts[i], ts[i + 1]) for i in range(1, len(ts), 2)]
            return _weighted(igan_stack_forward(ts[0], cells).nodes, w)
        return f, [ad.Tensor(rng.uniform(0.1, 1.0, (n, d)))] + [
            ad.Tensor(rng.uniform(-0.5, 0.5, (d, d))) for _ in range(6)]

    def scores(rng):
        targets = _micro_targets(rng)
        return (lambda ts: ad.bce_with_logits_sum(score_moments(ts[0], ts[1]).logits, targets),
                [ad.Tensor(rng.uniform(0, 1, (n, d))), ad.Tensor(np.tanh(rng.standard_normal((d, L))))])

    def composed_loss(rng):
        config = micro_config()
        params = _micro_params(rng, config)
        embedded, clips = rng.standard_normal((L, e)), rng.standard_normal((T, d))
        targets = _micro_targets(rng)
        names = list(params)

        def f(ts):
            result = forward(config, dict(zip(names, ts)), embedded, clips)
            return loss([result.scores], [targets])
        return f, [ad.Tensor(params[k]) for k in names]

    return {"lstm": lstm, "dynamic_filter": dynamic_filter, "alignment": alignment,
            "pyramid": pyramid, "igan_cell": igan_cell, "igan_stack": igan_stack,
            "scores": scores, "composed_loss": composed_loss}


def smooth_check(build: Callable[[np.random.Generator], Instance],
                 rng: np.random.Generator, h: float = STEP) -> float:
    """Relative error on the first drawn instance whose probes avoid every kink."""
    for _ in range(MAX_DRAWS):
        f, inputs = build(rng)
        monitor = KinkMonitor()
        err = ad.finite_difference_check(f, inputs, h=h, observe=monitor)
        if monitor.clearance() > 1.0:
            return float(err)
    raise RuntimeError(f"no kink-free instance in {MAX_DRAWS} draws")


def check_names() -> List[str]:
    return list(_primitive_builders()) + list(_component_builders())


def run_suite(seed: int = 0, only: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Max relative error per primitive and component, in a fixed order."""
    builders = {**_primitive_builders(), **_component_builders()}
    if only is not None:
        unknown = sorted(set(only) - set(builders))
        if unknown:
            raise KeyError(", ".join(unknown))
        builders = {k: v for k, v in builders.items() if k in only}
    results = {}
    for name, build in builders.items():
        # one stream per check, so selecting a subset does not change instances
        rng = make_rng(derive_seed(seed, "gradcheck", name))
        results[name] = smooth_check(build, rng)
    return results
