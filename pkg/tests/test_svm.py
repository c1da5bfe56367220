import numpy as np
import pytest

from texturebank.errors import TrainingError
from texturebank.svm import SvmBank, SvmConfig, calibrate, predict, predict_many, train_svm

from reference import svm_exact_objective

TIGHT = SvmConfig(c=1.0, max_epochs=5000, tol=1e-8)


def separable_toy():
    x = np.array([[1.0, 0.0], [0.8, 0.2], [-1.0, 0.0], [-0.7, -0.3]])
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = ["pos", "pos", "neg", "neg"]
    return x, y


def test_separable_toy_trains_perfectly_and_matches_qp():
    x, y = separable_toy()
    bank = train_svm(x, y, TIGHT)
    _, labels = predict_many(bank, x)
    assert labels == y
    ypos = np.where(np.asarray(y) == "pos", 1.0, -1.0)
    mine = bank.objectives[bank.classes.index("pos")]
    exact = svm_exact_objective(x, ypos, c=1.0)
    assert abs(mine - exact) <= 1e-3 * max(1.0, abs(exact))


def test_objective_matches_qp_on_random_small_instances():
    rng = np.random.default_rng(0)
    for trial in range(10):
        n = int(rng.integers(4, 21))
        d = int(rng.integers(1, 4))
        x = rng.standard_normal((n, d))
        x /= np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-9)
        y_bool = rng.random(n) < 0.5
        if y_bool.all() or not y_bool.any():
            y_bool[0] = not y_bool[0]
        labels = ["a" if b else "b" for b in y_bool]
        c = float(rng.choice([0.1, 1.0, 10.0]))
        bank = train_svm(x, labels, SvmConfig(c=c, max_epochs=20000, tol=1e-9))
        ya = np.where(np.asarray(labels) == "a", 1.0, -1.0)
        exact = svm_exact_objective(x, ya, c=c)
        mine = bank.objectives[bank.classes.index("a")]
        # the oracle itself converges to ~1e-7; allow its own slack on the lower side
        assert mine >= exact - 1e-6
        assert abs(mine - exact) <= 1e-3 * max(1.0, abs(exact))


def test_duplicated_opposite_points_flag_degenerate():
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    y = ["pos", "neg"]
    bank = train_svm(x, y, TIGHT)
    bank = calibrate(bank, x, y)
    assert set(bank.degenerate) == {"pos", "neg"}


def test_large_c_keeps_separable_sign_pattern():
    x, y = separable_toy()
    lo = train_svm(x, y, SvmConfig(c=1.0, max_epochs=5000, tol=1e-8))
    hi = train_svm(x, y, SvmConfig(c=1000.0, max_epochs=5000, tol=1e-8))
    s_lo = np.sign(x @ lo.weights[lo.classes.index("pos")] + lo.biases[lo.classes.index("pos")])
    s_hi = np.sign(x @ hi.weights[hi.classes.index("pos")] + hi.biases[hi.classes.index("pos")])
    assert np.array_equal(s_lo, s_hi)


def test_calibration_closed_form_case():
    # scores equal the 1-d inputs when w=1, b=0
    x = np.array([[3.0], [3.0], [-1.0], [-1.0]])
    y = ["pos", "pos", "neg", "neg"]
    bank = SvmBank(classes=("pos",), weights=np.array([[1.0]]), biases=np.array([0.0]),
                   objectives=(0.0,))
    cal = calibrate(bank, x, y)
    assert cal.weights[0, 0] == pytest.approx(0.5)
    assert cal.biases[0] == pytest.approx(-0.5)
    scores = x[:, 0] * cal.weights[0, 0] + cal.biases[0]
    assert np.median(scores[:2]) == pytest.approx(1.0)
    assert np.median(scores[2:]) == pytest.approx(-1.0)


def test_calibration_identity_when_already_calibrated():
    x = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    y = ["pos", "pos", "neg", "neg"]
    bank = SvmBank(classes=("pos",), weights=np.array([[1.0]]), biases=np.array([0.0]),
                   objectives=(0.0,))
    cal = calibrate(bank, x, y)
    assert cal.weights[0, 0] == pytest.approx(1.0)
    assert cal.biases[0] == pytest.approx(0.0)


def test_calibration_random_scores_median_and_order():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n_pos = int(rng.integers(2, 20))
        n_neg = int(rng.integers(2, 20))
        scores = rng.normal(0.0, 5.0, size=n_pos + n_neg)
        y = ["pos"] * n_pos + ["neg"] * n_neg
        x = scores[:, None]
        bank = SvmBank(classes=("pos",), weights=np.array([[1.0]]), biases=np.array([0.0]),
                       objectives=(0.0,))
        cal = calibrate(bank, x, y)
        out = x[:, 0] * cal.weights[0, 0] + cal.biases[0]
        m_pos, m_neg = np.median(out[:n_pos]), np.median(out[n_pos:])
        assert abs(m_pos - 1.0) < 1e-12
        assert abs(m_neg + 1.0) < 1e-12
        if np.median(scores[:n_pos]) > np.median(scores[n_pos:]):
            # order preserved when the transform slope is positive
            order_in = np.argsort(scores, kind="stable")
            order_out = np.argsort(out, kind="stable")
            assert np.array_equal(order_in, order_out)


def test_predict_zero_vector_returns_biases_and_tie_breaks_low():
    bank = SvmBank(
        classes=("a", "b", "c"),
        weights=np.zeros((3, 2)),
        biases=np.array([0.5, 0.5, 0.1]),
        objectives=(0.0, 0.0, 0.0),
    )
    scores, label = predict(bank, np.zeros(2))
    assert np.array_equal(scores, bank.biases)
    assert label == "a"


def test_missing_positive_class_is_skipped():
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    y = ["a", "b"]
    bank = train_svm(x, y, TIGHT, classes=("a", "b", "ghost"))
    assert bank.skipped == ("ghost",)
    assert set(bank.classes) == {"a", "b"}


def test_training_is_deterministic():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = ["a" if v < 0.5 else "b" for v in rng.random(30)]
    b1 = train_svm(x, y, SvmConfig(seed=7))
    b2 = train_svm(x, y, SvmConfig(seed=7))
    assert np.array_equal(b1.weights, b2.weights)
    assert np.array_equal(b1.biases, b2.biases)


def test_non_finite_input_errors():
    with pytest.raises(TrainingError):
        train_svm(np.array([[np.nan, 0.0], [1.0, 0.0]]), ["a", "b"])
