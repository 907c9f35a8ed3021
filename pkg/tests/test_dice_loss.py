import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vseg.autodiff import LabelTensor, Tensor
from vseg.loss import LossConfig, dice_loss


def test_perfect_overlap_is_zero(rng):
    target = (rng.uniform(size=(1, 1, 4, 4, 4)) > 0.4).astype(float)
    loss = dice_loss(Tensor(target), LabelTensor(target))
    assert abs(float(loss.data)) < 1e-6


def test_no_overlap_approaches_one(rng):
    target = np.zeros((1, 1, 4, 4, 4))
    target[0, 0, 1, 1, 1] = 1.0
    loss = dice_loss(Tensor(np.zeros_like(target)), LabelTensor(target))
    assert abs(float(loss.data) - 1.0) < 1e-5


def test_half_probability_half_labels():
    # 8 voxels, pred 0.5 everywhere, 4 labelled: 1 - 2*2/(4+4) = 0.5
    pred = Tensor(np.full((1, 1, 2, 2, 2), 0.5))
    target = np.zeros((1, 1, 2, 2, 2))
    target.reshape(-1)[:4] = 1.0
    loss = dice_loss(pred, LabelTensor(target))
    assert abs(float(loss.data) - 0.5) < 1e-6


def test_both_empty_returns_zero():
    z = np.zeros((1, 1, 2, 2, 2))
    loss = dice_loss(Tensor(z), LabelTensor(z.copy()))
    assert float(loss.data) == 0.0


def test_shape_mismatch_raises(rng):
    with pytest.raises(ValueError, match="shape"):
        dice_loss(Tensor(np.zeros((1, 1, 2, 2, 2))),
                  LabelTensor(np.zeros((1, 1, 4, 4, 4))))


def test_class_weight_validation():
    with pytest.raises(ValueError):
        LossConfig(label_count=2, class_weights=[1.0])
    with pytest.raises(ValueError):
        LossConfig(label_count=0)
    assert LossConfig(label_count=3).class_weights == [1.0, 1.0, 1.0]


@settings(max_examples=80, deadline=None)
@given(
    pred=hnp.arrays(np.float64, (1, 1, 3, 3, 3),
                    elements=st.floats(0.0, 1.0)),
    target=hnp.arrays(np.int8, (1, 1, 3, 3, 3),
                      elements=st.integers(0, 1)),
)
def test_loss_bounded_in_unit_interval(pred, target):
    loss = float(dice_loss(Tensor(pred),
                           LabelTensor(target.astype(float))).data)
    assert -1e-12 <= loss <= 1.0 + 1e-12
