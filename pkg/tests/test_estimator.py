import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from robustcast.estimator import NowcastSegmenter
from robustcast.forecaster import init_params


def test_get_set_params_and_clone():
    est = NowcastSegmenter(features=4, epochs=2, ensemble="paper_main")
    params = est.get_params()
    assert params["features"] == 4 and params["ensemble"] == "paper_main" and params["pos_weight"] == 4.0
    est.set_params(alpha=0.0)
    assert clone(est).get_params()["alpha"] == 0.0


def test_fit_predict(small_bench):
    X, Y, _ = small_bench.load_split("train")
    Xv, Yv, _ = small_bench.load_split("val")
    est = NowcastSegmenter(features=4, epochs=2, lr=3e-3, batch_size=8).fit(X, Y, eval_set=(Xv, Yv))
    proba = est.predict_proba(Xv)
    assert proba.shape == Yv.shape and np.all((proba >= 0) & (proba <= 1))
    pred = est.predict(Xv)
    assert set(np.unique(pred)) <= {0, 1}
    assert 0.0 <= est.score(Xv, Yv) <= 1.0
    assert len(est.train_log_.rows) == 2
    again = NowcastSegmenter(features=4, epochs=2, lr=3e-3, batch_size=8).fit(X, Y, eval_set=(Xv, Yv))
    assert np.array_equal(again.decision_function(Xv), est.decision_function(Xv))


def test_validation(small_bench):
    est = NowcastSegmenter()
    X, Y, _ = small_bench.load_split("val")
    with pytest.raises(NotFittedError):
        est.predict(X)
    with pytest.raises(ValueError):
        est.fit(X[:, 0], Y)
    bad = X.copy()
    bad[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        est.fit(bad, Y)
    fitted = NowcastSegmenter.from_params(init_params(small_bench.layout, 4))
    with pytest.raises(ValueError, match="layout"):
        fitted.predict(X[..., :40, :40])
