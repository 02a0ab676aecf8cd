"""Objectives: supervised decoder loss, per-step prediction entropy, and
their weighted combination for the adaptation phase.

Entropy comes in two flavors: "shannon" is the full-distribution entropy of
a predicted row; "pseudo_nll" is the negative log-probability of the row's
argmax.  Both are zero exactly at one-hot rows.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .recognizer import DecoderOutput
from .tensor import Tensor

VARIANTS = ("shannon", "pseudo_nll")
ROW_SUM_TOL = 1e-6


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise ContractError(f"entropy variant {variant!r} not in {VARIANTS}")


def decoder_loss(outputs: list[DecoderOutput],
                 labels: list[tuple[int, ...]]) -> Tensor:
    """Mean over the batch of each sample's summed -log p(target_t).

    Sample b's targets are its label characters followed by EOS, one per
    emitted row, so outputs must be teacher-forced with len(label)+1 rows.
    """
    if len(outputs) != len(labels):
        raise ContractError(
            f"decoder_loss: {len(outputs)} outputs vs {len(labels)} labels")
    if not outputs:
        raise ContractError("decoder_loss: empty batch")
    picked_cols = []
    for out, label in zip(outputs, labels):
        t_rows, k = out.probs.shape
        if t_rows != len(label) + 1:
            raise ContractError(
                f"decoder_loss: {t_rows} rows for a length-{len(label)} label")
        eos = k - 2
        targets = list(label) + [eos]
        for c in label:
            if not 0 <= c < k - 3:
                raise ContractError(
                    f"decoder_loss: target {c} is not a character index")
        flat = T.reshape(out.probs, (t_rows * k, 1))
        picked_cols.append(T.gather_rows(flat, [t * k + c
                                                for t, c in enumerate(targets)]))
    stacked = picked_cols[0] if len(picked_cols) == 1 else \
        T.concat(picked_cols, axis=0)
    return T.mul(T.reduce_sum(T.log(stacked)), -1.0 / len(outputs))


def _check_row(data: np.ndarray) -> np.ndarray:
    row = data.reshape(-1)
    if abs(row.sum() - 1.0) > ROW_SUM_TOL:
        raise ContractError(
            f"step_entropy: row sums to {row.sum()}, not 1 within {ROW_SUM_TOL}")
    return row


def step_entropy(row: Tensor, variant: str = "shannon") -> Tensor:
    """Uncertainty of one probability row, differentiable through the row."""
    _check_variant(variant)
    flat_data = _check_row(row.data)
    k = flat_data.size
    col = T.reshape(row, (k, 1))
    if variant == "shannon":
        return T.mul(T.reduce_sum(T.mul(col, T.log(col))), -1.0)
    top = int(np.argmax(flat_data))
    return T.mul(T.reduce_sum(T.log(T.gather_rows(col, [top]))), -1.0)


def sequence_entropy(out: DecoderOutput, variant: str = "shannon") -> Tensor:
    """Sum of step_entropy over every emitted row, the EOS row included."""
    _check_variant(variant)
    probs = out.probs
    t_rows, k = probs.shape
    if variant == "shannon":
        return T.mul(T.reduce_sum(T.mul(probs, T.log(probs))), -1.0)
    tops = np.argmax(probs.data, axis=1)
    flat = T.reshape(probs, (t_rows * k, 1))
    picked = T.gather_rows(flat, [t * k + int(c) for t, c in enumerate(tops)])
    return T.mul(T.reduce_sum(T.log(picked)), -1.0)


def smile_loss(l_dec: Tensor, l_ent: Tensor, lam: float) -> Tensor:
    """l_dec + lam * l_ent; lam = 0 degenerates to l_dec exactly."""
    if lam < 0:
        raise ContractError(f"smile_loss: negative weight {lam}")
    for name, t in (("l_dec", l_dec), ("l_ent", l_ent)):
        if t.data.size != 1:
            raise ContractError(f"smile_loss: {name} is not scalar")
        if not np.isfinite(t.data).all():
            raise ContractError(f"smile_loss: {name} is not finite")
    return T.add(l_dec, T.mul(l_ent, lam))
