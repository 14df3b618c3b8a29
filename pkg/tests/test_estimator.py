import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pceuc.estimator import PCEUnitCommitment, check_instance, check_schedule
from pceuc.instances import builtin


def test_params_roundtrip_and_clone():
    est = PCEUnitCommitment(layers=3, steps=2, random_state=5)
    params = est.get_params()
    assert params["layers"] == 3 and params["random_state"] == 5
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(steps=4)
    assert est.steps == 4


def test_fit_predict_transform():
    est = PCEUnitCommitment(steps=2, random_state=1).fit("UC_4b")
    y = est.predict()
    soft = est.transform("UC_4b")
    assert y.shape == (4, 3) and set(np.unique(y)) <= {0, 1}
    assert np.all((soft > 0) & (soft < 1))
    assert est.n_qubits_ == 4 and len(est.history_) == 2
    with pytest.raises(ValueError):
        est.predict("UC_12b")


def test_fit_is_seeded():
    a = PCEUnitCommitment(steps=2, random_state=3).fit(builtin("UC_4b"))
    b = PCEUnitCommitment(steps=2, random_state=3).fit(builtin("UC_4b"))
    assert np.array_equal(a.theta_, b.theta_) and a.cost_ == b.cost_


def test_unfitted_and_bad_input():
    with pytest.raises(NotFittedError):
        PCEUnitCommitment().predict()
    with pytest.raises(TypeError):
        check_instance(42)
    inst = builtin("UC_4b")
    with pytest.raises(ValueError):
        check_schedule(np.full((4, 3), 1.5), inst)
    with pytest.raises(ValueError):
        check_schedule(np.full((4, 3), 0.5), inst, binary=True)
    with pytest.raises(ValueError):
        check_schedule(np.ones((3, 3)), inst)
    assert check_schedule(np.ones((4, 3)), inst, binary=True).shape == (4, 3)
