import numpy as np
import pytest
import sympy as sp

from eitflow import material as mat
from eitflow.fields import Grid
from eitflow.thermo import EquilibriumEOS, NonEqEOS


def smooth_Q(X):
    return np.stack([np.sin(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1]), 0.5 + np.cos(2 * np.pi * X[1])])


def smooth_S(X):
    a = np.cos(2 * np.pi * X[0])
    b = np.sin(2 * np.pi * (X[0] + X[1]))
    return np.stack([np.stack([a, b]), np.stack([b, 1.0 + 0.5 * a])])


x0, x1 = sp.symbols("x0 x1", real=True)
t_sym = sp.Symbol("t", real=True)
VECTOR = mat.SpatialFlux([sp.sin(2 * sp.pi * x0) * sp.cos(2 * sp.pi * x1) + sp.cos(t_sym), sp.cos(2 * sp.pi * x0 + t_sym)])
TENSOR = mat.SpatialFlux(
    [[sp.cos(2 * sp.pi * x0) * (1 + t_sym), sp.sin(2 * sp.pi * x1)], [sp.sin(2 * sp.pi * x1), t_sym**2 + sp.cos(2 * sp.pi * x1)]]
)


def test_identity_pushforward_is_the_identity():
    fam = mat.identity_family()
    x = mat.reference_points()
    np.testing.assert_allclose(mat.pushforward(fam, 0.4, smooth_Q, x), smooth_Q(x), rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(mat.pushforward(fam, 0.4, smooth_S, x), smooth_S(x), rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("ndim", [1, 2, 3])
def test_dilation_closed_form(ndim):
    lam = 1.7
    fam = mat.dilation_family(ndim, scale=lam)
    x = np.stack(np.meshgrid(*[np.linspace(0.2, 0.8, 5)] * ndim, indexing="ij"))
    assert np.allclose(fam.jacobian(0.0, x), lam**ndim)

    def Q(X):
        return np.stack([np.cos(X[i]) + i for i in range(ndim)])

    q = mat.pushforward(fam, 0.0, Q, x)
    np.testing.assert_allclose(q, lam ** (1 - ndim) * Q(x / lam), rtol=1e-13)

    def S(X):
        return np.ones((ndim, ndim) + X.shape[1:]) * np.sin(X[0])

    sigma = mat.pushforward(fam, 0.0, S, x)
    np.testing.assert_allclose(sigma, lam ** (2 - ndim) * S(x / lam), rtol=1e-13)


def test_round_trip_through_a_grid_converges():
    fam = mat.shear_family(0.1)
    t = 0.6
    X = mat.reference_points(n=9)
    errors = []
    for n in (16, 32):
        g = Grid.uniform(n, 1.0, periodic=True, ndim=2)
        q_grid = mat.pushforward(fam, t, smooth_Q, g.coordinates())
        back = mat.pullback(fam, t, q_grid, X, spatial_grid=g)
        errors.append(float(np.max(np.abs(back - smooth_Q(X)))))
    assert errors[1] < 1e-3
    assert errors[0] / errors[1] > 3.5


def test_closed_form_round_trip_is_exact():
    fam = mat.stretch_family(0.4, 0.3)
    X = mat.reference_points(n=6)
    for flux in (smooth_Q, smooth_S):
        x = fam.phi(0.5, X)
        back = mat.pullback(fam, 0.5, lambda pts: mat.pushforward(fam, 0.5, flux, pts), X)
        np.testing.assert_allclose(back, flux(X), rtol=1e-11, atol=1e-12)
        assert x.shape == X.shape


def test_pushforward_composes():
    outer, inner = mat.rotation_family(0.8), mat.shear_family(0.15)
    both = outer.compose(inner)
    x = mat.reference_points(n=7)
    t = 0.9
    for flux in (smooth_Q, smooth_S):
        direct = mat.pushforward(both, t, flux, x)
        staged = mat.pushforward(outer, t, lambda pts: mat.pushforward(inner, t, flux, pts), x)
        np.testing.assert_allclose(direct, staged, rtol=1e-11, atol=1e-12)


def test_piola_identity_makes_divergence_transform_as_a_density():
    fam = mat.stretch_family(0.5, 0.2)
    X = mat.reference_points(n=8)
    defect = mat.piola_divergence_defect(fam, 0.7, smooth_Q, X)
    assert np.max(np.abs(defect)) < 1e-7


def test_dilated_flux_integral_scales_by_the_stretch():
    lam = 1.3
    fam = mat.dilation_family(2, scale=lam)
    n = 64
    Xc = (np.arange(n) + 0.5) / n
    X = np.stack(np.meshgrid(Xc, Xc, indexing="ij"))
    q = mat.pushforward(fam, 0.0, smooth_Q, lam * X)
    # q dx = F Q dX, and F = lam I here
    np.testing.assert_allclose(np.sum(q, axis=(1, 2)) * (lam / n) ** 2, lam * np.sum(smooth_Q(X), axis=(1, 2)) / n**2, rtol=1e-12, atol=1e-15)


def test_static_map_reduces_to_pulled_back_time_derivative():
    table = mat.verify_truesdell_identity(mat.identity_family(), VECTOR, [1e-2, 5e-3])
    assert table.observed_order > 1.9


@pytest.mark.parametrize(
    "family, flux",
    [
        (mat.shear_family(0.1), VECTOR),
        (mat.stretch_family(0.3, 0.2), VECTOR),
        (mat.rotation_family(0.7), TENSOR),
        (mat.dilation_family(2, 1.2, 0.4), TENSOR),
    ],
    ids=["shear-vector", "stretch-vector", "rotation-tensor", "dilation-tensor"],
)
def test_truesdell_identity_converges_at_second_order(family, flux):
    table = mat.verify_truesdell_identity(family, flux, [4e-3, 2e-3, 1e-3, 5e-4])
    assert table.observed_order >= 1.9
    assert table.terminal_error < 1e-5
    assert len(table.rows()) == 4


def test_truesdell_identity_with_grid_operators_is_second_order_in_h():
    table = mat.verify_truesdell_identity_on_grid(mat.shear_family(0.1), VECTOR, [32, 64])
    assert table.observed_order > 1.8


def _conjugate_inputs():
    X = mat.reference_points(n=6)
    rho_ref = 1.0 + 0.1 * np.cos(2 * np.pi * X[0])
    s_ref = 0.1 + 0.0 * X[0]
    return X, rho_ref, s_ref, 0.3 * smooth_Q(X), 0.2 * smooth_S(X)


def test_conjugates_under_the_identity_map_are_spatial_conjugates():
    X, rho, s, Q, S = _conjugate_inputs()
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.5, beta=0.7)
    cQ, cS = mat.material_conjugates(mat.identity_family(), eos, 0.0, X, rho, s, Q, S)
    np.testing.assert_allclose(cQ, 0.5 * Q, rtol=1e-14)
    np.testing.assert_allclose(cS, 0.7 * S, rtol=1e-14)


def test_dilation_conjugates_scale_by_the_predicted_factors():
    lam, d = 1.4, 2
    X, rho, s, Q, S = _conjugate_inputs()
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.5, beta=0.7)
    cQ, cS = mat.material_conjugates(mat.dilation_family(d, lam), eos, 0.0, X, rho, s, Q, S)
    # F^T (alpha F Q / J) and F^T F^T (beta F F S / J) with F = lam I
    np.testing.assert_allclose(cQ, 0.5 * lam**2 / lam**d * Q, rtol=1e-13)
    np.testing.assert_allclose(cS, 0.7 * lam**4 / lam**d * S, rtol=1e-13)


@pytest.mark.parametrize("family", [mat.shear_family(0.1), mat.dilation_family(2, 1.3), mat.rotation_family(0.3)], ids=lambda f: f.name)
def test_conjugate_identity_converges(family):
    X, rho, s, Q, S = _conjugate_inputs()
    tables = mat.verify_conjugate_identity(
        family, mat.QuarticProbeEnergy(), 0.4, X, rho, s, Q, S, [2e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3]
    )
    for table in tables:
        assert table.observed_order >= 1.9
        assert table.terminal_error < 1e-5


def test_quadratic_energy_conjugates_are_exact_under_differencing():
    X, rho, s, Q, S = _conjugate_inputs()
    eos = NonEqEOS(EquilibriumEOS(), alpha=0.5, beta=0.7)
    for table in mat.verify_conjugate_identity(mat.shear_family(0.1), eos, 0.4, X, rho, s, Q, S, [1e-2]):
        assert table.terminal_error < 1e-9


def test_inverted_orientation_is_rejected():
    flipped = mat.dilation_family(1, scale=-1.0)
    with pytest.raises(mat.OrientationError):
        flipped.jacobian(0.0, np.array([[0.3]]))
    with pytest.raises(mat.OrientationError):
        mat.pushforward(flipped, 0.0, lambda X: np.ones_like(X), np.array([[0.3]]))


def test_orientation_holds_along_smooth_families():
    X = mat.reference_points(n=5)
    for fam in (mat.shear_family(0.1), mat.rotation_family(1.0), mat.stretch_family(0.5, 0.3)):
        assert fam.check_orientation(np.linspace(0.0, 3.0, 7), X)


def test_composition_rejects_mismatched_dimensions():
    with pytest.raises(ValueError):
        mat.shear_family().compose(mat.dilation_family(3))


def test_array_flux_needs_its_grid():
    with pytest.raises(ValueError):
        mat.sample(np.zeros((2, 4, 4)), mat.reference_points(n=3))
