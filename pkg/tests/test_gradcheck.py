import numpy as np

from monostereo.gradcheck import LOSS_TOL, numeric_grad, rel_error, run_gradcheck


def test_numeric_grad_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(numeric_grad(lambda v: np.sum(v ** 2), x), 2 * x, rtol=1e-8)
    assert rel_error(2 * x, 2 * x) == 0.0


def test_suite_small():
    results = run_gradcheck(seed=3, instances=2)
    names = {r.op for r in results}
    assert {"warp_backward.disp", "ssim_loss", "lr_consistency_loss", "total_loss"} <= names
    for r in results:
        assert r.passed, (r.op, r.max_rel_error)
        assert r.max_rel_error < LOSS_TOL
