import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conebeam.arrays import Sinogram, Volume
from conebeam.geometry import make_circular
from conebeam.projector import SystemOperator, operator_norm_sq
from conebeam.solvers import (
    GdReconstructor, LsSolverConfig, NagReconstructor, SirtReconstructor, SolverError, gd_ls,
    make_reconstructor, nag_ls, sirt, sirt_weights,
)
from oracles import iterations_to, least_squares_problems


@pytest.fixture(scope="module")
def problems():
    return least_squares_problems()


def test_oracle_problem_kinds(problems):
    assert problems["consistent"].f_star < 1e-20
    assert problems["inconsistent"].f_star > 1e-3
    p = problems["rank-deficient"]
    assert np.linalg.matrix_rank(p.a) < min(p.a.shape) and p.f_star > 1e-3


@pytest.mark.parametrize("name", ["consistent", "inconsistent", "rank-deficient"])
def test_nesterov_bound(problems, name):
    p = problems[name]
    _, rep = nag_ls(p.op, p.b, LsSolverConfig(max_iters=150))
    bound_scale = 2 * rep.lipschitz_used * np.sum(p.x_star**2)
    for k, f in enumerate(rep.objective_history):
        assert f - p.f_star <= bound_scale / (k + 1) ** 2


def test_nag_needs_at_most_half_the_gd_iterations(problems):
    p = problems["inconsistent"]
    lip, _ = operator_norm_sq(p.op)
    target = 1e-6 * p.f0
    _, nag = nag_ls(p.op, p.b, LsSolverConfig(max_iters=3000, lipschitz=lip))
    _, gd = gd_ls(p.op, p.b, LsSolverConfig(max_iters=3000, lipschitz=lip))
    k_nag = iterations_to(nag.objective_history, p.f_star, target)
    k_gd = iterations_to(gd.objective_history, p.f_star, target)
    assert k_nag is not None and k_gd is not None
    assert k_nag <= 0.5 * k_gd


@pytest.mark.parametrize("name", ["consistent", "inconsistent", "rank-deficient"])
def test_gd_is_monotone(problems, name):
    p = problems[name]
    _, rep = gd_ls(p.op, p.b, LsSolverConfig(max_iters=200))
    h = np.asarray(rep.objective_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_gd_reaches_least_squares_solution(problems):
    p = problems["inconsistent"]
    x, rep = gd_ls(p.op, p.b, LsSolverConfig(max_iters=5000, grad_tol=1e-9), dtype=np.float64)
    err = np.linalg.norm(x.data.ravel() - p.x_star) / np.linalg.norm(p.x_star)
    assert err <= 1e-4
    assert rep.iterations_run <= 5000


def test_nag_converges_to_least_squares_solution(problems):
    p = problems["inconsistent"]
    x, rep = nag_ls(p.op, p.b, LsSolverConfig(max_iters=2000, grad_tol=1e-10), dtype=np.float64)
    assert rep.terminated_by == "grad_tol"
    np.testing.assert_allclose(x.data.ravel(), p.x_star, rtol=0, atol=1e-5 * np.abs(p.x_star).max())


@pytest.mark.parametrize("solver", [nag_ls, gd_ls, sirt])
def test_zero_data_gives_zero(solver, tiny_geom):
    op = SystemOperator(tiny_geom)
    x, rep = solver(op, np.zeros(tiny_geom.sinogram_shape), LsSolverConfig(max_iters=10))
    assert not x.data.any()
    if solver is not sirt:
        assert rep.iterations_run == 1 and rep.objective_history == [0.0, 0.0]
        assert rep.terminated_by == "grad_tol"


def test_history_length(problems):
    p = problems["consistent"]
    for solver in (nag_ls, gd_ls, sirt):
        _, rep = solver(p.op, p.b, LsSolverConfig(max_iters=7))
        assert len(rep.objective_history) == rep.iterations_run + 1 == 8
        _, rep = solver(p.op, p.b, LsSolverConfig(max_iters=7, record_history=False))
        assert rep.objective_history == []


def test_sirt_solves_consistent_system(problems):
    p = problems["inconsistent"]
    b = p.op.forward(p.x_true)
    x, rep = sirt(p.op, b, LsSolverConfig(max_iters=10_000, grad_tol=1e-4))
    assert rep.terminated_by == "grad_tol"
    assert np.linalg.norm(b - p.op.forward(x.data)) <= 1e-4 * np.linalg.norm(b)


def test_sirt_ignores_missing_rays():
    # the outer detector columns miss a small volume entirely
    g = make_circular(sod=100.0, sdd=200.0, nu=12, nv=4, du=6.0, dv=2.0, num_views=8,
                      nx=4, ny=4, nz=4, voxel_size=2.0)
    op = SystemOperator(g)
    row_w, _ = sirt_weights(op)
    missed = op.forward(np.ones(g.volume_shape)) == 0
    assert missed.any() and not row_w[missed].any()
    b = op.forward(np.ones(g.volume_shape))
    b[missed] = 5.0  # stray data on rays that see nothing
    x, _ = sirt(op, b, LsSolverConfig(max_iters=50))
    assert np.isfinite(x.data).all()


def test_nonneg_projection(problems):
    p = problems["rank-deficient"]
    x, _ = nag_ls(p.op, p.b - 3 * p.b.mean(), LsSolverConfig(max_iters=20, nonneg=True))
    assert (x.data >= 0).all()


@pytest.mark.parametrize("kwargs", [dict(max_iters=0), dict(grad_tol=-1), dict(safety=0.9),
                                    dict(lipschitz=0.0), dict(max_iters=2.5)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        LsSolverConfig(**kwargs)


def test_non_finite_iterate_names_iteration(problems):
    p = problems["consistent"]
    with pytest.raises(SolverError, match="iteration 1"):
        nag_ls(p.op, p.b, LsSolverConfig(max_iters=5, lipschitz=1e-320))


def test_shape_mismatch(tiny_geom):
    with pytest.raises(ValueError, match="does not match"):
        nag_ls(SystemOperator(tiny_geom), np.zeros((6, 8, 7)))


# -- estimators -------------------------------------------------------------------

def test_estimator_params_round_trip(tiny_geom):
    est = NagReconstructor(tiny_geom, max_iters=12, safety=1.2)
    params = est.get_params()
    assert params["max_iters"] == 12 and params["safety"] == 1.2 and params["geometry"] is tiny_geom
    assert clone(est).get_params() == params
    assert est.set_params(max_iters=3).max_iters == 3


def test_estimator_matches_function(problems):
    p = problems["consistent"]
    est = NagReconstructor(p.op.geom, max_iters=15).fit()
    assert est.lipschitz_ > 0 and est.lipschitz_converged_ in (True, False)
    out = est.transform(p.b)
    ref, _ = nag_ls(p.op, p.b, LsSolverConfig(max_iters=15, lipschitz=est.lipschitz_))
    assert isinstance(out, np.ndarray)
    np.testing.assert_array_equal(out, ref.data)
    assert est.report_.iterations_run == 15


def test_estimators_keep_container_types(small_geom):
    sino = Sinogram(np.ones(small_geom.sinogram_shape, dtype=np.float32), 3.0, 3.0)
    for method in ("fdk", "sirt", "gd", "nag"):
        est = make_reconstructor(method, small_geom, **({} if method == "fdk" else {"max_iters": 2}))
        out = est.fit(sino).transform(sino)
        assert isinstance(out, Volume) and out.shape == small_geom.volume_shape


def test_transform_requires_fit(tiny_geom):
    for cls in (NagReconstructor, GdReconstructor, SirtReconstructor):
        with pytest.raises(NotFittedError):
            cls(tiny_geom).transform(np.zeros(tiny_geom.sinogram_shape))


def test_unknown_method_lists_valid_ones(tiny_geom):
    with pytest.raises(ValueError, match="valid methods: fdk, sirt, gd, nag"):
        make_reconstructor("art", tiny_geom)


def test_fit_rejects_wrong_geometry_type():
    with pytest.raises(TypeError, match="ConeBeamGeometry"):
        NagReconstructor({"nx": 8}).fit()
