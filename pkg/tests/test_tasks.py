import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from diffmi import tasks as tk

CAT = tk.default_catalogue()


def test_catalogue_has_forty_tasks_in_table_order():
    assert len(CAT) == 40
    assert list(CAT) == [row[0] for row in tk._TABLE]


def test_bundled_catalogue_matches_regeneration():
    doc = tk.catalogue_document()
    from importlib import resources
    bundled = json.loads(resources.files("diffmi").joinpath("catalogue.json").read_text())
    assert bundled == json.loads(json.dumps(doc))


def test_catalogue_roundtrip(tmp_path):
    path = tk.write_catalogue(tmp_path / "cat.json")
    again = tk.read_catalogue(path)
    assert [s.to_dict() for s in again.values()] == [s.to_dict() for s in CAT.values()]
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        tk.read_catalogue(path)


@pytest.mark.parametrize("task_id", list(CAT))
def test_ground_truth_quantizes_to_table(task_id):
    gt = tk.ground_truth(CAT[task_id]).mi
    assert gt >= 0
    assert round(gt, 1) == pytest.approx(tk.TABLE_GT[task_id])
    if not task_id.startswith(("st-", "asinh-st", "uniform")):
        assert gt == pytest.approx(tk.TABLE_GT[task_id], abs=1e-6)


@pytest.mark.parametrize("task_id", list(CAT))
def test_ground_truth_invariant_to_transforms(task_id):
    spec = CAT[task_id]
    assert tk.ground_truth(spec) == tk.ground_truth(spec.without_transforms())


@pytest.mark.parametrize("task_id", [t for t in CAT if CAT[t].dim <= 10])
def test_samples_have_declared_shapes(task_id):
    spec = CAT[task_id]
    x, y = tk.sample(spec, 500, np.random.default_rng(0))
    assert x.shape == (500, spec.m) and y.shape == (500, spec.n)
    assert np.all(np.isfinite(x)) and np.all(np.isfinite(y))


def test_swiss_roll_discrepancy_flagged():
    assert "0.8" in CAT["swissroll-2x1"].note


def test_gaussian_mi_examples():
    cov = np.diag([1.0, 2.0, 3.0])
    assert tk.gaussian_mi(cov, 1, 2) == pytest.approx(0.0, abs=1e-15)
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    assert tk.gaussian_mi(cov, 1, 1) == pytest.approx(0.5108, abs=1e-4)
    assert round(tk.ground_truth(CAT["mn-2x2-dense"]).mi, 1) == 0.3
    with pytest.raises(ValueError):
        tk.gaussian_mi(np.array([[1.0, 2.0], [2.0, 1.0]]), 1, 1)
    with pytest.raises(ValueError):
        tk.gaussian_mi(np.eye(3), 1, 1)


@pytest.mark.parametrize("rho", [-0.7, 0.2, 0.5, 0.9])
def test_gaussian_mi_against_numerical_integration(rho):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    joint = stats.multivariate_normal(np.zeros(2), cov)
    f = lambda y, x: joint.pdf([x, y]) * (joint.logpdf([x, y]) - stats.norm.logpdf(x)
                                          - stats.norm.logpdf(y))
    val, _ = integrate.dblquad(f, -9, 9, -9, 9, epsabs=1e-10)
    assert tk.gaussian_mi(cov, 1, 1) == pytest.approx(val, abs=1e-4)


def test_student_correction_values():
    assert tk.student_correction(1, 1, 1) == pytest.approx(0.224, abs=1e-3)
    f = tk._f
    assert tk.student_correction(1, 1, 1) == pytest.approx(f(1) + f(3) - 2 * f(2))
    assert abs(tk.student_correction(100, 1, 1)) < 0.01
    assert round(tk.student_mi(np.eye(4), 2, 2, 2), 1) == 0.2
    with pytest.raises(ValueError):
        tk.student_mi(np.eye(2), 0.5, 1, 1)


def test_uniform_additive_mi():
    assert tk.uniform_additive_mi(0.1) == pytest.approx(1.709, abs=1e-3)
    assert tk.uniform_additive_mi(0.75) == pytest.approx(1 / 3)
    assert 0.5 - np.log(1.0) == pytest.approx(tk.uniform_additive_mi(0.5)) == 1 / (4 * 0.5)
    with pytest.raises(ValueError):
        tk.uniform_additive_mi(0.0)


def test_uniform_additive_mi_numerical():
    eps = 0.3
    # h(Y) - h(Y|X); h(Y|X) = log(2 eps); Y density is a trapezoid
    def p(y):
        return (np.clip(y + eps, 0, 1) - np.clip(y - eps, 0, 1)) / (2 * eps)
    hy, _ = integrate.quad(lambda y: -p(y) * np.log(p(y)) if p(y) > 0 else 0.0, -eps, 1 + eps,
                           points=[eps, 1 - eps], limit=200)
    assert hy - np.log(2 * eps) == pytest.approx(tk.uniform_additive_mi(eps), abs=1e-6)


def test_dense_independent_limit():
    spec = tk.TaskSpec("t", "t", "multinormal", 2, 2, {"alpha": 0.0})
    x, y = tk.sample(spec, 100_000, np.random.default_rng(0))
    c = np.corrcoef(np.hstack([x, y]).T)[:2, 2:]
    assert np.abs(c).max() < 0.02


def test_student_covariance():
    spec = tk.TaskSpec("t", "t", "student", 2, 2, {"dof": 3})
    x, y = tk.sample(spec, 10 ** 6, np.random.default_rng(12))
    cov = np.cov(np.hstack([x, y]).T)
    assert np.allclose(np.diag(cov), 3.0, rtol=0.05)


def test_covariance_family_entries():
    fam = tk.CovFamilyParams(3, 2, K=1, alpha=0.5, beta_x=0.3, beta_y=0.4, lam=0.8,
                             eps_x=1.0, eps_y=0.9, eta_x=0.2, eta_y=0.6)
    cov = fam.covariance()
    a2, l2 = 0.25, 0.64
    assert cov[0, 3] == pytest.approx(a2 + l2)
    assert cov[1, 4] == pytest.approx(a2)
    assert cov[0, 1] == pytest.approx(a2 + 0.09)
    assert cov[0, 0] == pytest.approx(1 + a2 + 0.09 + l2)
    assert cov[2, 2] == pytest.approx(1 + a2 + 0.09 + 0.04)
    assert cov[4, 4] == pytest.approx(0.81 + a2 + 0.16 + 0.36)
    n = 10 ** 6
    x, y = fam.sample(n, np.random.default_rng(3))
    emp = np.cov(np.hstack([x, y]).T)
    se = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    assert np.all(np.abs(emp - cov) < 5 * se)
    with pytest.raises(ValueError):
        tk.CovFamilyParams(2, 2, K=3)


def test_dense_family_correlation():
    fam = tk.CovFamilyParams.dense(3, 3, alpha=0.7)
    cov = fam.covariance()
    corr = cov / np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
    off = corr[~np.eye(6, dtype=bool)]
    assert np.allclose(off, 0.49 / 1.49)
    x, y = fam.sample(200_000, np.random.default_rng(0))
    emp = np.corrcoef(np.hstack([x, y]).T)[~np.eye(6, dtype=bool)]
    assert np.abs(emp - 0.49 / 1.49).max() < 0.01


def test_transform_examples():
    assert tk.half_cube(np.array([0.0, 4.0, -4.0])).tolist() == [0.0, 8.0, -8.0]
    x = np.zeros((1, 3))
    assert np.array_equal(tk.spiral(x, (0, 1), 0.5), x)
    grid = np.linspace(-10, 10, 10 ** 4)
    assert np.all(np.diff(tk.wiggly_x(grid)) > 0)
    assert np.all(np.diff(tk.wiggly_y(grid)) > 0)
    assert 1 - 0.4 - 0.2 * 1.7 - 0.03 * 3.3 > 0
    u = np.array([0.0, 0.25, 1.0])
    pts = tk.swiss_roll(u)
    t = 1.5 * np.pi * (1 + 2 * u)
    assert np.allclose(np.linalg.norm(pts, axis=1), t / 21)


def test_transform_dimension_errors():
    with pytest.raises(ValueError):
        tk.apply_transform("spiral", np.zeros((5, 2)), "y")
    with pytest.raises(ValueError):
        tk.apply_transform("swiss_roll", np.zeros((5, 2)))
    with pytest.raises(ValueError):
        tk.apply_transform("rotate", np.zeros((5, 2)))
    with pytest.raises(ValueError):
        tk.TaskSpec("t", "t", "bivariate_normal", 2, 1, {"rho": 0.5})
    with pytest.raises(ValueError):
        tk.TaskSpec("t", "t", "multinormal", 2, 2, {}, ("spiral",))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_spiral_is_norm_preserving_and_invertible(seed):
    x = np.random.default_rng(seed).standard_normal((20, 4))
    out = tk.spiral(x, (0, 1), 0.25)
    assert np.allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1))
    back = tk.spiral(out, (0, 1), -0.25)
    assert np.allclose(back, x)


def test_bimodal_quantile_inverse():
    u = np.linspace(0.001, 0.999, 2001)
    for q in (tk.BIMODAL_X, tk.BIMODAL_Y):
        assert np.abs(q.cdf(q(u)) - u).max() < 1e-8


def test_standardize():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((50_000, 2))
    out, s = tk.standardize(z)
    assert np.allclose(out.mean(0), 0, atol=1e-12) and np.allclose(out.std(0), 1)
    assert np.allclose(s.std, 1, atol=0.02) and np.allclose(s.mean, 0, atol=0.02)
    _, s10 = tk.standardize(z * 10 + 3)
    assert np.allclose(s10.std, 10 * s.std)
    test = rng.standard_normal((10, 2))
    assert np.allclose(s10.transform(test * 10 + 3), s.transform(test))
    with pytest.raises(ValueError):
        tk.standardize(np.ones((10, 2)))
    with pytest.raises(ValueError):
        tk.standardize(np.ones((1, 2)))


def test_consistency_constructions():
    base = CAT["bivariate-1x1"]
    ind = tk.consistency_construction("independence", base)
    assert ind.ground_truth == 0.0
    add = tk.consistency_construction("additivity", base)
    assert add.ground_truth == pytest.approx(0.8)
    x, y = add.sample(1000, np.random.default_rng(0))
    assert x.shape == (1000, 2) and y.shape == (1000, 2)
    dp = tk.consistency_construction("data_processing", base, q=np.eye(1))
    assert dp.ground_truth == tk.ground_truth(base).mi
    x, y = dp.sample(100, np.random.default_rng(0))
    assert np.array_equal(y[:, 0], y[:, 1])
    x, y = ind.sample(50_000, np.random.default_rng(1))
    assert abs(np.corrcoef(x[:, 0], y[:, 0])[0, 1]) < 0.02
    with pytest.raises(ValueError):
        tk.consistency_construction("data_processing", base, q=np.array([[2.0]]))
    with pytest.raises(ValueError):
        tk.consistency_construction("chain_rule", base)


def test_solver_errors():
    with pytest.raises(ValueError):
        tk.solve_parameter(tk.bivariate_mi, 50.0, 0.0, 0.999)
    assert tk.solve_sparse_lambda(3, 3, 2, 0.0) == 0.0


def test_samples_csv(tmp_path):
    x, y = tk.sample(CAT["mn-3x3-2pair"], 5, np.random.default_rng(0))
    path = tmp_path / "s.csv"
    tk.write_samples_csv(path, x, y)
    lines = path.read_text().splitlines()
    assert lines[0] == "x_1,x_2,x_3,y_1,y_2,y_3"
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(back, np.hstack([x, y]))


@pytest.mark.parametrize("task_id", ["mn-3x3-2pair", "sp-mn-3x3-2pair", "mn-2x2-dense"])
def test_multinormal_tasks_have_unit_marginals(task_id):
    spec = tk.get_task(task_id)
    x, y = tk.sample_base(spec, 200_000, np.random.default_rng(5))
    np.testing.assert_allclose(np.concatenate([x, y], 1).var(0), 1.0, atol=0.02)
    corr = spec.cov_params().correlation()
    np.testing.assert_allclose(np.diag(corr), 1.0)
    assert tk.gaussian_mi(corr, spec.m, spec.n) == pytest.approx(tk.ground_truth(spec).mi, abs=1e-9)
