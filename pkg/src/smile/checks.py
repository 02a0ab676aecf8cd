"""Finite-difference verification of the differentiation engine.

Every operation is checked on batches of random instances, and the full
combined training loss is checked end to end through encoder, attention,
decoder, pooling, and selection.  Central differences with step h compare
against the taped gradients under a relative error with absolute floor 1:
|num - ana| / max(1, |num|, |ana|).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import VocabSpec, make_templates, render_string
from .losses import decoder_loss, smile_loss
from .recognizer import Recognizer
from .self_paced import PacingSchedule, build_pool, select, selected_entropy_loss
from .tensor import Tape, Tensor

TOLERANCE = 1e-4
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= self.tolerance


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def grad_check(make_loss, leaves: dict[str, Tensor],
               coords_per_leaf: int | None = None,
               rng: np.random.Generator | None = None,
               h: float = FD_STEP) -> float:
    """Max relative error between taped and central-difference gradients.

    make_loss rebuilds the forward pass from the leaves' current data, so
    perturb-and-reevaluate sees the change; with coords_per_leaf set, that
    many coordinates per leaf are sampled instead of sweeping all.
    """
    for leaf in leaves.values():
        leaf.zero_grad()  # leaf grads accumulate across backward calls
    with Tape() as tape:
        loss = make_loss()
        tape.backward(loss)
    analytic = {n: t.grad.copy() for n, t in leaves.items()}
    worst = 0.0
    for name, leaf in leaves.items():
        flat = leaf.data.reshape(-1)
        n = flat.size
        if coords_per_leaf is None or coords_per_leaf >= n:
            coords = range(n)
        else:
            coords = sorted(rng.choice(n, coords_per_leaf, replace=False))
        ana_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = make_loss().item()
            flat[c] = orig - h
            f_minus = make_loss().item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, _rel(numeric, ana_flat[c]))
    return worst


def _weighted_sum(out: Tensor, weight: np.ndarray) -> Tensor:
    # nonuniform weights so every output coordinate matters independently
    return T.reduce_sum(T.mul(out, T.constant(weight)))


def _leaf(rng, *shape, lo=-1.5, hi=1.5) -> Tensor:
    return T.parameter(rng.uniform(lo, hi, shape))


def _op_cases(rng: np.random.Generator):
    """Yield (name, make_loss, leaves) round-robin across all ops."""
    w34 = rng.standard_normal((3, 4))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    w = rng.standard_normal((3, 2))
    yield "matmul", (lambda: _weighted_sum(T.matmul(a, b), w)), {"a": a, "b": b}

    for name, op in (("add", T.add), ("sub", T.sub), ("mul", T.mul)):
        x, y = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        yield name, (lambda op=op, x=x, y=y:
                     _weighted_sum(op(x, y), w34)), {"x": x, "y": y}
        s = T.parameter(rng.uniform(0.5, 1.5))
        z = _leaf(rng, 3, 4)
        yield f"{name}_scalar", (lambda op=op, s=s, z=z:
                                 _weighted_sum(op(s, z), w34)), {"s": s, "z": z}

    x = _leaf(rng, 3, 4)
    yield "neg", (lambda x=x: _weighted_sum(T.neg(x), w34)), {"x": x}

    for name, op, lo, hi in (("tanh", T.tanh, -2.0, 2.0),
                             ("sigmoid", T.sigmoid, -3.0, 3.0),
                             ("exp", T.exp, -2.0, 1.5),
                             ("log", T.log, 0.1, 3.0)):
        x = _leaf(rng, 3, 4, lo=lo, hi=hi)
        yield name, (lambda op=op, x=x: _weighted_sum(op(x), w34)), {"x": x}

    # keep relu inputs off the kink so central differences are valid
    raw = rng.uniform(0.1, 1.5, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    x = T.parameter(raw)
    yield "relu", (lambda x=x: _weighted_sum(T.relu(x), w34)), {"x": x}

    x = _leaf(rng, 4, 5, lo=-2.0, hi=2.0)
    w45 = rng.standard_normal((4, 5))
    yield "softmax", (lambda x=x: _weighted_sum(T.softmax(x), w45)), {"x": x}

    x = _leaf(rng, 3, 4)
    yield "reduce_sum_all", (lambda x=x: T.reduce_sum(x)), {"x": x}
    w14 = rng.standard_normal((1, 4))
    yield "reduce_sum_axis0", (lambda x=x: _weighted_sum(
        T.reduce_sum(x, axis=0), w14)), {"x": x}
    w31 = rng.standard_normal((3, 1))
    yield "reduce_mean_axis1", (lambda x=x: _weighted_sum(
        T.reduce_mean(x, axis=1), w31)), {"x": x}
    yield "reduce_mean_all", (lambda x=x: T.reduce_mean(x)), {"x": x}

    table = _leaf(rng, 6, 3)
    idx = [int(i) for i in rng.integers(0, 6, 5)]
    idx[1] = idx[0]  # force a duplicate so scatter accumulation is exercised
    w53 = rng.standard_normal((5, 3))
    yield "gather_rows", (lambda table=table, idx=idx: _weighted_sum(
        T.gather_rows(table, idx), w53)), {"table": table}

    p1, p2 = _leaf(rng, 2, 3), _leaf(rng, 4, 3)
    w63 = rng.standard_normal((6, 3))
    yield "concat_axis0", (lambda p1=p1, p2=p2: _weighted_sum(
        T.concat([p1, p2], axis=0), w63)), {"p1": p1, "p2": p2}
    q1, q2 = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    w36 = rng.standard_normal((3, 6))
    yield "concat_axis1", (lambda q1=q1, q2=q2: _weighted_sum(
        T.concat([q1, q2], axis=1), w36)), {"q1": q1, "q2": q2}

    x = _leaf(rng, 3, 4)
    w26 = rng.standard_normal((2, 6))
    yield "reshape", (lambda x=x: _weighted_sum(
        T.reshape(x, (2, 6)), w26)), {"x": x}

    # a deep chain so composition of backward rules is covered
    u, v = _leaf(rng, 3, 3), _leaf(rng, 3, 3)
    w33 = rng.standard_normal((3, 3))
    yield "chain", (lambda u=u, v=v: _weighted_sum(
        T.log(T.softmax(T.tanh(T.matmul(u, v)))), w33)), {"u": u, "v": v}


def check_ops(instances: int = 100, seed: int = 0) -> list[CheckResult]:
    """Sweep every op with `instances` random cases; one result per op."""
    worst: dict[str, float] = {}
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        for name, make_loss, leaves in _op_cases(rng):
            err = grad_check(make_loss, leaves)
            worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(f"op/{n}", e, TOLERANCE) for n, e in worst.items()]


def check_model(seed: int = 3, coords_per_tensor: int = 8) -> CheckResult:
    """End-to-end check of the combined loss on a 2-sample batch.

    The target side uses greedy decoding with a full-portion selection, so
    the gradient flows through pooling and the selection mask as it does in
    adaptation training.
    """
    vocab = VocabSpec("ABCDE")
    l_max = 2
    templates = make_templates(vocab, seed)
    rng = np.random.default_rng([seed, 1])
    src_px = np.stack([
        render_string((0,), vocab, templates, l_max).pixels,
        render_string((1, 2), vocab, templates, l_max).pixels,
    ])
    src_labels = [(0,), (1, 2)]
    tgt_px = np.clip(np.stack([
        render_string((3,), vocab, templates, l_max).pixels,
        render_string((4, 0), vocab, templates, l_max).pixels,
    ]) * 0.8 + rng.uniform(0.0, 0.15, (2, 8, 16)), 0.0, 1.0)
    rec = Recognizer.fresh(vocab, l_max, seed)
    schedule = PacingSchedule(p_init=1.0, p_add=0.0)

    def make_loss():
        outs = rec.teacher_forced(src_px, src_labels)
        l_dec = decoder_loss(outs, src_labels)
        touts = rec.greedy(tgt_px)
        pool = build_pool(touts, "shannon")
        sel = select(pool, schedule, 1)
        l_ent = selected_entropy_loss(pool, sel)
        return smile_loss(l_dec, l_ent, 1.0)

    err = grad_check(make_loss, rec.params, coords_per_tensor,
                     np.random.default_rng([seed, 2]))
    return CheckResult("model/combined_loss", err, TOLERANCE)


def run_all(instances: int = 100, seed: int = 0) -> list[CheckResult]:
    results = check_ops(instances, seed)
    results.append(check_model())
    return results
