import numpy as np
import pytest

from scenkit.optimize import nelder_mead, nelder_mead_restarts


def bowl(x):
    return -float(np.sum((x - np.array([1.0, -2.0, 3.0])) ** 2))


def test_bowl():
    r = nelder_mead(bowl, [0.0, 0.0, 0.0], tol=1e-12, max_evals=2000)
    assert r.converged
    assert np.allclose(r.best_params, [1.0, -2.0, 3.0], atol=1e-4)
    assert r.trace == sorted(r.trace)


def test_bounds_respected():
    seen = []

    def f(x):
        seen.append(x.copy())
        return bowl(x)

    r = nelder_mead(f, [0.0, 0.0, 0.0], bounds=[(-1, 0.5), (-1, 1), (0, 2)], tol=1e-12, max_evals=1000)
    arr = np.array(seen)
    assert np.all(arr[:, 0] <= 0.5) and np.all(arr[:, 1] >= -1) and np.all(arr[:, 2] <= 2)
    assert np.allclose(r.best_params, [0.5, -1.0, 2.0], atol=1e-3)


def test_budget_exhausted():
    calls = []
    r = nelder_mead(lambda x: calls.append(1) or bowl(x), [0.0, 0.0, 0.0], tol=0.0, max_evals=25)
    assert not r.converged and r.n_evals == 25 == len(calls)
    assert "budget" in r.message


def test_nan_and_inf_rank_last():
    def f(x):
        return float("nan") if x[0] > 2.0 else (-np.inf if x[0] < -2.0 else -(x[0] - 1.2345) ** 2)

    r = nelder_mead(f, [0.5], tol=1e-12, max_evals=500)
    assert r.best_params[0] == pytest.approx(1.2345, abs=1e-4)


def test_input_checks():
    with pytest.raises(ValueError):
        nelder_mead(bowl, [5.0, 0.0, 0.0], bounds=[(0, 1)] * 3)
    with pytest.raises(ValueError):
        nelder_mead(bowl, [0.0, 0.0, 0.0], bounds=[(0, 1)] * 2)
    with pytest.raises(ValueError):
        nelder_mead(bowl, [])


def test_callback_sees_every_iteration():
    its = []
    r = nelder_mead(bowl, [0.0, 0.0, 0.0], tol=1e-8, max_evals=1000, callback=lambda i, x, v: its.append(i))
    assert its == list(range(r.n_iterations + 1))


def test_collapse_is_not_convergence():
    r = nelder_mead(bowl, [0.0, 0.0, 0.0], tol=0.0, xtol=1e-3, max_evals=5000)
    assert not r.converged and r.message == "simplex collapsed"


def test_restarts_escape_collapse():
    # narrow curved valley: a single run collapses early with a coarse xtol
    def f(x):
        return -(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)

    single = nelder_mead(f, [-1.2, 1.0], tol=1e-12, xtol=0.02, max_evals=2000)
    assert single.message == "simplex collapsed" and single.best_params[0] < 0.0
    r = nelder_mead_restarts(f, [-1.2, 1.0], tol=1e-12, xtol=0.02, max_evals=2000)
    assert r.converged
    assert np.allclose(r.best_params, [1.0, 1.0], atol=2e-2)
    assert r.n_evals <= 2000
    assert r.trace == sorted(r.trace)
