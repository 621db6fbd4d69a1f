import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from sklearn.base import clone

from conebeam.arrays import Sinogram, Volume, mse
from conebeam.enhance import (
    KINDS, EnhancementStage, Enhancer, _tv_denoise_numpy, candidate_stages, default_iem, default_sem,
    enhance, load_enhancer, select_stage, tv_denoise,
)
from conebeam.geometry import make_circular
from conebeam.noise import DoseModel, simulate_dose
from conebeam.phantoms import analytic_sphere_sinogram

SCALE = 0.02  # mm^-1 per phantom unit, as in the pipeline


@pytest.fixture(scope="module")
def sphere_data():
    # full-resolution 256 x 256 detector; only the view count is cut down
    g = make_circular(num_views=12)
    clean = analytic_sphere_sinogram(g, (0.1, 0, 0), 0.5, 1.0, dtype=np.float32)
    noisy = [simulate_dose(clean, DoseModel(1e4, seed=s), SCALE) for s in range(3)]
    return clean, noisy


def _stages(domain):
    slicings = ("per_view", "volumetric") if domain == "sinogram" else ("per_z_slice", "volumetric")
    kinds = [Enhancer("identity"), Enhancer("gaussian", sigma=0.8), Enhancer("median", radius=1),
             Enhancer("tv", weight=0.2, n_iter=20)]
    return [EnhancementStage(domain, e, s) for e in kinds for s in slicings]


def test_identity_returns_input_unchanged(rng):
    a = rng.standard_normal((4, 5, 6))
    out = enhance(EnhancementStage("image", Enhancer("identity")), a)
    assert out is a
    vol = Volume(a.astype(np.float32))
    assert enhance(EnhancementStage("image", Enhancer()), vol).data.tobytes() == vol.data.tobytes()


@pytest.mark.parametrize("stage", _stages("sinogram") + _stages("image"), ids=lambda s: str(s.describe()))
def test_shape_and_type_preserved(stage, rng):
    data = rng.standard_normal((5, 7, 9)).astype(np.float32)
    for wrapped in (data, Volume(data, 1.5), Sinogram(data, 2.0, 3.0)):
        out = enhance(stage, wrapped)
        assert type(out) is type(wrapped) and out.shape == data.shape and out.dtype == np.float32


@pytest.mark.parametrize("stage", [s for s in _stages("image") if s.enhancer.kind in ("gaussian", "tv")],
                         ids=lambda s: str(s.describe()))
def test_constants_are_fixed_points(stage):
    const = np.full((6, 8, 10), 3.25)
    np.testing.assert_allclose(enhance(stage, const), 3.25, atol=1e-6)


@given(hnp.arrays(np.float64, (4, 6, 7), elements=st.floats(-10, 10)),
       st.sampled_from([s for s in _stages("image") if s.enhancer.kind in ("gaussian", "tv")]))
def test_mean_is_preserved(data, stage):
    out = enhance(stage, data)
    assert abs(out.mean() - data.mean()) <= 1e-5 * max(1.0, abs(data).mean())


def test_median_idempotent_on_binary_pattern():
    pattern = np.zeros((3, 12, 12))
    pattern[:, 3:9, 2:7] = 1.0
    pattern[:, 5, 9] = 1.0  # isolated speck, removed on the first pass
    pattern[1, 0:4, 8:12] = 1.0
    for slicing in ("per_z_slice", "volumetric"):
        stage = EnhancementStage("image", Enhancer("median", radius=1), slicing)
        once = enhance(stage, pattern)
        np.testing.assert_array_equal(enhance(stage, once), once)
        assert once[0, 5, 9] == 0.0


@pytest.mark.parametrize("axes", [(1, 2), (0, 1, 2)])
def test_tv_kernel_matches_numpy_route(axes, rng):
    f = rng.standard_normal((6, 9, 11))
    tau = 1.0 / (4.0 * len(axes))
    np.testing.assert_allclose(tv_denoise(f, 0.3, 40, axes), _tv_denoise_numpy(f, 0.3, 40, axes, tau),
                               rtol=0, atol=1e-12)


def test_tv_numpy_route_other_axes(rng):
    f = rng.standard_normal((6, 9, 11))
    out = tv_denoise(f, 0.3, 30, (0, 2))
    assert out.shape == f.shape and abs(out.mean() - f.mean()) < 1e-12
    assert np.abs(np.diff(out, axis=2)).sum() < np.abs(np.diff(f, axis=2)).sum()


def test_tv_slices_are_independent(rng):
    f = rng.standard_normal((4, 8, 8))
    whole = tv_denoise(f, 0.2, 30, (1, 2))
    np.testing.assert_allclose(whole[2], tv_denoise(f[2:3], 0.2, 30, (1, 2))[0], atol=1e-14)


def test_default_stages():
    assert default_sem().describe() == {"domain": "sinogram", "slicing": "per_view", "kind": "gaussian",
                                        "sigma": 1.0}
    assert default_iem().describe() == {"domain": "image", "slicing": "per_z_slice", "kind": "tv",
                                        "weight": 0.1, "n_iter": 50}


@pytest.mark.parametrize("stage", [default_sem(), EnhancementStage("sinogram", Enhancer("median")),
                                   EnhancementStage("sinogram", Enhancer("tv"))],
                         ids=["gaussian", "median", "tv"])
def test_default_params_reduce_error(sphere_data, stage):
    clean, noisy = sphere_data
    for n in noisy:
        assert mse(enhance(stage, n), clean) < mse(n, clean)


def test_load_enhancer_examples():
    assert load_enhancer({"kind": "identity"}, domain="sinogram").is_identity
    with pytest.raises(ValueError, match="sigma"):
        load_enhancer({"kind": "gaussian", "sigma": "-1"}, domain="sinogram")
    stage = load_enhancer({"kind": "tv", "lambda": "0.1", "iterations": "50", "domain": "image"})
    assert stage.describe() == {"domain": "image", "slicing": "per_z_slice", "kind": "tv",
                                "weight": 0.1, "n_iter": 50}


def test_load_enhancer_errors():
    with pytest.raises(ValueError, match="known kinds: identity, gaussian, median, tv"):
        load_enhancer({"kind": "swinir"}, domain="image")
    with pytest.raises(ValueError, match="unknown enhancer parameter"):
        load_enhancer({"kind": "gaussian", "size": "3"}, domain="image")
    with pytest.raises(ValueError, match="per_view or volumetric"):
        load_enhancer({"kind": "gaussian", "slicing": "per_z_slice"}, domain="sinogram")
    with pytest.raises(ValueError, match="radius"):
        load_enhancer({"kind": "median", "radius": "0"}, domain="image")
    with pytest.raises(ValueError, match="domain"):
        load_enhancer({"kind": "median"})


def test_enhancer_rejects_non_3d():
    with pytest.raises(ValueError, match="3-D"):
        enhance(default_iem(), np.zeros((4, 4)))


def test_stage_is_an_sklearn_transformer(rng):
    stage = EnhancementStage("image", Enhancer("gaussian", sigma=0.5), "volumetric")
    copy = clone(stage)
    assert copy.get_params()["enhancer__sigma"] == 0.5
    x = rng.standard_normal((3, 4, 5))
    np.testing.assert_array_equal(copy.fit_transform(x), stage.transform(x))
    assert set(KINDS) == {"identity", "gaussian", "median", "tv"}


def test_candidates_cover_both_slicings():
    cands = candidate_stages("image")
    assert cands[0].is_identity
    assert {c.describe()["slicing"] for c in cands[1:]} == {"per_z_slice", "volumetric"}
    with pytest.raises(ValueError, match="unknown domain"):
        candidate_stages("fourier")


def test_select_stage_picks_lowest_error(sphere_data):
    clean, noisy = sphere_data
    cands = [EnhancementStage("sinogram", Enhancer("identity")),
             EnhancementStage("sinogram", Enhancer("gaussian", sigma=1.0)),
             EnhancementStage("sinogram", Enhancer("gaussian", sigma=8.0))]
    best, scores = select_stage(cands, noisy[:2], [clean, clean])
    errs = [e for _, e in scores]
    assert best is cands[int(np.argmin(errs))]
    assert errs[0] == pytest.approx(np.mean([mse(n, clean) for n in noisy[:2]]))


def test_select_stage_ties_keep_first(rng):
    x = rng.standard_normal((2, 4, 4))
    a = EnhancementStage("image", Enhancer("identity"))
    b = EnhancementStage("image", Enhancer("identity"), "volumetric")
    best, _ = select_stage([a, b], [x], [x])
    assert best is a
    with pytest.raises(ValueError, match="matching"):
        select_stage([a], [x], [])
