import numpy as np
import pytest

from gradcases import PRIMITIVES, STEP, TOL, param_grad_error
from saec import tensor as T
from saec.tensor import Tensor, grad_check

SEEDS = range(100)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name):
    make = PRIMITIVES[name]
    errors = [grad_check(*make(seed), step=STEP) for seed in SEEDS]
    worst = int(np.argmax(errors))
    assert max(errors) < TOL, f"{name}: seed {worst} relative error {errors[worst]:.3g}"


def test_kink_straddling_stencil_is_detected():
    x = Tensor(np.array([[0.0004, 1.0]]), requires_grad=True)
    err, checked, skipped = param_grad_error(lambda: T.leaky_relu(x).sum(), [x])
    assert (checked, skipped) == (1, 1)
    assert err < TOL
