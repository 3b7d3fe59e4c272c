import math

import numpy as np
import pytest

from vision_fsl import ndmath as nd
from vision_fsl.errors import ContractError
from vision_fsl.losses import ce_label_smoothing_loss, contrastive_loss
from vision_fsl.ndmath.gradcheck import numeric_grad, relative_error


def test_uniform_logits_give_log_n():
    for n in (2, 5):
        for eps in (0.0, 0.1, 0.5):
            loss = ce_label_smoothing_loss(np.zeros((3, n)), [0, 1, 1], eps)
            assert loss.item() == pytest.approx(math.log(n))


def test_confident_logits_give_zero_loss():
    logits = np.array([[200.0, 0.0], [0.0, 200.0]])
    assert ce_label_smoothing_loss(logits, [0, 1], 0.0).item() == pytest.approx(0.0, abs=1e-12)


def test_two_way_hand_value():
    sig = lambda t: 1 / (1 + math.exp(-t))
    expected = -0.9 * math.log(sig(1)) - 0.1 * math.log(sig(-1))
    assert ce_label_smoothing_loss(np.array([[1.0, 0.0]]), [0], 0.1).item() == pytest.approx(expected)
    assert expected == pytest.approx(0.4133, abs=1e-4)


def test_truth_out_of_range():
    with pytest.raises(ContractError):
        ce_label_smoothing_loss(np.zeros((1, 2)), [2], 0.1)


def heads_from(rows):
    return [nd.Value(np.array(rows, dtype=float))]


def test_contrastive_identical_supports_log_n():
    # 3-way, 2-shot; supports identical, one query
    rows = [[1.0, 2.0]] * 6 + [[0.3, -0.2]]
    loss = contrastive_loss(heads_from(rows), np.arange(6), [0, 0, 1, 1, 2, 2], [6], [1])
    assert loss.item() == pytest.approx(math.log(3))


def test_contrastive_single_class_zero():
    rows = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
    loss = contrastive_loss(heads_from(rows), np.arange(2), [0, 0], [2], [0], tau=0.7)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_contrastive_two_term_closed_form():
    rows = [[2.0, 0.0], [-3.0, 0.0], [0.5, 0.0], [-1.0, 0.0]]
    loss = contrastive_loss(heads_from(rows) * 2, [0, 1], [0, 1], [2, 3], [0, 1], tau=1.0)
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-2)))


def test_loss_gradients():
    rng = np.random.default_rng(0)
    logits = nd.Value(rng.standard_normal((4, 3)), requires_grad=True)
    f = lambda: ce_label_smoothing_loss(logits, [0, 2, 1, 1], 0.1)
    f().backward()
    assert relative_error(logits.grad, numeric_grad(lambda: f().item(), logits.data)) < 1e-4
    e = nd.Value(rng.standard_normal((7, 4)), requires_grad=True)
    c = lambda: contrastive_loss([e, e * 2.0], np.arange(4), [0, 0, 1, 1], [4, 5, 6], [1, 0, 1], 0.5)
    c().backward()
    assert relative_error(e.grad, numeric_grad(lambda: c().item(), e.data)) < 1e-4
