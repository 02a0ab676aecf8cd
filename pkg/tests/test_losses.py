"""Objective functions against closed-form values and independent scalar
recomputations."""

import math

import numpy as np
import pytest

import smile.tensor as T
from smile.errors import ContractError
from smile.losses import (ROW_SUM_TOL, decoder_loss, sequence_entropy,
                          smile_loss, step_entropy)
from smile.recognizer import DecoderOutput
from smile.tensor import Tape, Tensor


def output_from(rows) -> DecoderOutput:
    probs = T.constant(np.asarray(rows, dtype=np.float64))
    return DecoderOutput(probs, tuple(int(np.argmax(r)) for r in rows))


def random_stochastic(rng, t, k):
    raw = rng.random((t, k)) + 1e-3
    return raw / raw.sum(axis=1, keepdims=True)


# -- decoder_loss -------------------------------------------------------------

def test_decoder_loss_zero_on_certain_targets():
    # K=5 (2 characters): targets (0, 1) then EOS=3
    rows = np.zeros((3, 5))
    rows[0, 0] = 1.0
    rows[1, 1] = 1.0
    rows[2, 3] = 1.0
    loss = decoder_loss([output_from(rows)], [(0, 1)])
    assert abs(loss.item()) < 1e-12


def test_decoder_loss_uniform_rows():
    k = 8
    rows = np.full((3, k), 1.0 / k)
    loss = decoder_loss([output_from(rows)], [(0, 4)])
    assert abs(loss.item() - 3 * math.log(k)) < 1e-12


def test_decoder_loss_matches_scalar_recomputation(rng):
    k = 6
    rows_a = random_stochastic(rng, 3, k)
    rows_b = random_stochastic(rng, 2, k)
    labels = [(2, 0), (1,)]
    loss = decoder_loss([output_from(rows_a), output_from(rows_b)], labels)
    eos = k - 2
    want = -(math.log(rows_a[0, 2]) + math.log(rows_a[1, 0])
             + math.log(rows_a[2, eos])
             + math.log(rows_b[0, 1]) + math.log(rows_b[1, eos])) / 2.0
    assert abs(loss.item() - want) < 1e-12


def test_decoder_loss_batch_order_invariant(rng):
    k = 6
    outs = [output_from(random_stochastic(rng, t, k)) for t in (2, 3, 4)]
    labels = [(0,), (1, 2), (2, 0, 1)]
    forward = decoder_loss(outs, labels).item()
    backward = decoder_loss(outs[::-1], labels[::-1]).item()
    assert abs(forward - backward) < 1e-12


def test_decoder_loss_validation(rng):
    k = 6
    out = output_from(random_stochastic(rng, 3, k))
    with pytest.raises(ContractError):
        decoder_loss([out], [(0,)])          # 3 rows vs length-1 label
    with pytest.raises(ContractError):
        decoder_loss([out], [(0, k - 2)])    # EOS is not a character target
    with pytest.raises(ContractError):
        decoder_loss([out, out], [(0, 1)])   # misaligned batch
    with pytest.raises(ContractError):
        decoder_loss([], [])


def test_decoder_loss_gradient_direction(rng):
    # pushing probability onto the target must lower the loss
    logits = T.parameter(rng.normal(size=(2, 5)))
    with Tape() as tape:
        probs = T.softmax(logits)
        out = DecoderOutput(probs, (0, 0))
        loss = decoder_loss([out], [(1,)])
        tape.backward(loss)
    # gradient w.r.t. the target logits is negative (increase helps)
    assert logits.grad[0, 1] < 0
    assert logits.grad[1, 3] < 0  # EOS target of the second row


# -- step_entropy -------------------------------------------------------------

def test_step_entropy_uniform_is_log_k():
    row = T.constant(np.full((1, 15), 1.0 / 15))
    assert abs(step_entropy(row).item() - math.log(15)) < 1e-12


def test_step_entropy_one_hot_is_zero():
    row = np.zeros((1, 10))
    row[0, 4] = 1.0
    for variant in ("shannon", "pseudo_nll"):
        assert abs(step_entropy(T.constant(row), variant).item()) < 1e-10


def test_step_entropy_half_half():
    row = T.constant([[0.5, 0.5]])
    assert abs(step_entropy(row, "shannon").item() - math.log(2)) < 1e-12
    assert abs(step_entropy(row, "pseudo_nll").item() - math.log(2)) < 1e-12


def test_step_entropy_bounds_property(rng):
    for k in (5, 15, 30):
        for _ in range(50):
            row = random_stochastic(rng, 1, k)
            h = step_entropy(T.constant(row)).item()
            assert -1e-12 <= h <= math.log(k) + 1e-12
            nll = step_entropy(T.constant(row), "pseudo_nll").item()
            assert nll >= -1e-12


def test_step_entropy_rejects_unnormalized():
    with pytest.raises(ContractError):
        step_entropy(T.constant([[0.5, 0.6]]))
    # within tolerance is fine
    step_entropy(T.constant([[0.5, 0.5 + ROW_SUM_TOL / 2]]))
    with pytest.raises(ContractError):
        step_entropy(T.constant([[0.5, 0.5]]), "nonsense")


# -- sequence_entropy ---------------------------------------------------------

def test_sequence_entropy_one_hot_is_zero():
    rows = np.zeros((1, 6))
    rows[0, 2] = 1.0
    assert abs(sequence_entropy(output_from(rows)).item()) < 1e-10


def test_sequence_entropy_uniform_rows():
    rows = np.full((3, 15), 1.0 / 15)
    want = 3 * math.log(15)
    assert abs(sequence_entropy(output_from(rows)).item() - want) < 1e-12


def test_sequence_entropy_matches_per_step_sum(rng):
    rows = random_stochastic(rng, 4, 15)
    out = output_from(rows)
    for variant in ("shannon", "pseudo_nll"):
        total = sequence_entropy(out, variant).item()
        by_steps = sum(step_entropy(T.constant(rows[t:t + 1]), variant).item()
                       for t in range(4))
        assert abs(total - by_steps) < 1e-12


def test_entropy_gradient_step_sharpens(rng):
    # one descent step on the sequence entropy lowers every row's entropy
    for trial in range(100):
        logits_np = rng.normal(size=(1, 8))
        if np.abs(logits_np - logits_np.max()).sum() < 1e-3:
            continue  # skip near-degenerate draws
        logits = T.parameter(logits_np.copy())
        with Tape() as tape:
            probs = T.softmax(logits)
            out = DecoderOutput(probs, (int(np.argmax(probs.data)),))
            ent = sequence_entropy(out)
            tape.backward(ent)
        before = ent.item()
        logits.data -= 1e-2 * logits.grad
        after = sequence_entropy(
            DecoderOutput(T.softmax(logits), (0,))).item()
        assert after < before


# -- smile_loss ---------------------------------------------------------------

def scalar(x):
    return T.constant(np.array([float(x)]))


def test_smile_loss_arithmetic():
    assert abs(smile_loss(scalar(2.0), scalar(0.5), 1.0).item() - 2.5) < 1e-15
    assert abs(smile_loss(scalar(2.0), scalar(0.5), 0.0).item() - 2.0) < 1e-15
    assert abs(smile_loss(scalar(1.0), scalar(3.0), 2.0).item() - 7.0) < 1e-15


def test_smile_loss_rejects_bad_inputs():
    with pytest.raises(ContractError):
        smile_loss(scalar(1.0), scalar(1.0), -0.5)
    with pytest.raises(ContractError):
        smile_loss(T.constant(np.ones((2, 2))), scalar(1.0), 1.0)
    with pytest.raises(ContractError):
        smile_loss(scalar(float("nan")), scalar(1.0), 1.0)


def test_smile_loss_gradient_scales_with_lambda(rng):
    logits_np = rng.normal(size=(1, 6))
    grads = {}
    for lam in (1.0, 2.0):
        logits = T.parameter(logits_np.copy())
        with Tape() as tape:
            probs = T.softmax(logits)
            out = DecoderOutput(probs, (0,))
            ent = sequence_entropy(out)
            total = smile_loss(scalar(5.0), ent, lam)
            tape.backward(total)
        grads[lam] = logits.grad.copy()
    assert np.allclose(grads[2.0], 2.0 * grads[1.0], atol=1e-12)
