import math

import numpy as np
import pytest

from axsym.core import KernelError, SeedSpec, build_grid, derive_stream
from axsym.kernels import (AffineLatFunction, make_cosh_family, make_lambda_family,
                           make_separable_time, table_family)
from axsym.simulate import (SimulationPlan, assemble_coefficient_covariance, cholesky_with_jitter,
                            project_onto_harmonic, read_ensemble_binary, read_ensemble_csv,
                            sample_coefficient_processes, synthesize_field, write_ensemble_binary,
                            write_ensemble_csv)


def cosh_pair():
    return make_cosh_family([AffineLatFunction(0.5, 0.5), AffineLatFunction(1.0)])


# --- assembly -------------------------------------------------------------

def test_assemble_single_site():
    fam = cosh_pair()
    S = assemble_coefficient_covariance(fam, 2, [0.7])
    np.testing.assert_array_equal(S, fam.eval(2, 0.7, 0.7)[0])


def test_assemble_constant_kernel_on_two_latitudes():
    S = assemble_coefficient_covariance(make_cosh_family([0.5]), 1, [0.0, math.pi])
    np.testing.assert_allclose(S, np.full((2, 2), 1 / math.pi), rtol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(S), [0, 2 / math.pi], atol=1e-15)


def test_assemble_separable_time_blocks():
    spatial = make_cosh_family([0.5])
    S = assemble_coefficient_covariance(make_separable_time(spatial, 1.0), 1, [0.5], [0.0, 1.0])
    b = spatial.eval(1, 0.5, 0.5)[0][0, 0]
    np.testing.assert_allclose(S, b * np.array([[1, math.exp(-1)], [math.exp(-1), 1]]),
                               rtol=1e-15)


def test_assemble_component_major_layout():
    fam = cosh_pair()
    lats = [0.2, 1.5, 3.0]
    S = assemble_coefficient_covariance(fam, 1, lats)
    for i in range(2):
        for a in range(3):
            for j in range(2):
                for b in range(3):
                    assert S[i * 3 + a, j * 3 + b] == fam.eval(1, lats[a], lats[b])[0][i, j]


def test_assemble_rejects_asymmetric_family():
    bad = table_family([[[1.0, 0.5], [0.0, 1.0]]])
    with pytest.raises(KernelError):
        assemble_coefficient_covariance(bad, 0, [0.3])


# --- Cholesky -------------------------------------------------------------

def test_cholesky_identity():
    L, eps = cholesky_with_jitter(np.eye(3))
    np.testing.assert_array_equal(L, np.eye(3))
    assert eps == 0


def test_cholesky_rank_deficient():
    L, eps = cholesky_with_jitter([[1.0, 1.0], [1.0, 1.0]])
    assert 0 < eps <= 1e-6
    np.testing.assert_allclose(L @ L.T, [[1, 1], [1, 1]], atol=1e-5)


def test_cholesky_indefinite():
    with pytest.raises(KernelError, match="not numerically PSD"):
        cholesky_with_jitter([[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_zero_matrix():
    L, eps = cholesky_with_jitter(np.zeros((2, 2)))
    assert not L.any() and eps == 0


# --- coefficient sampling -------------------------------------------------

def test_sample_zero_factor():
    d = sample_coefficient_processes(np.zeros((3, 3)), derive_stream(SeedSpec(1), 0, 0, 1),
                                     derive_stream(SeedSpec(1), 0, 0, 2))
    assert not d.V1.any() and not d.V2.any()


def test_sample_rejects_same_stream():
    s = derive_stream(SeedSpec(1), 0, 0, 1)
    with pytest.raises(ValueError):
        sample_coefficient_processes(np.eye(2), s, s)
    with pytest.raises(ValueError):
        sample_coefficient_processes(np.eye(2), s, derive_stream(SeedSpec(1), 0, 0, 1))


def test_sample_identity_reproducible():
    def draw():
        return sample_coefficient_processes(np.eye(4), derive_stream(SeedSpec(9), 3, 2, 1),
                                            derive_stream(SeedSpec(9), 3, 2, 2))
    a, b = draw(), draw()
    np.testing.assert_array_equal(a.V1, b.V1)
    np.testing.assert_array_equal(a.V2, b.V2)
    assert not np.array_equal(a.V1, a.V2)


def test_synthesized_coefficients_match_stream_draws():
    fam = cosh_pair()
    grid = build_grid(3, 8, m=2)
    plan = SimulationPlan(grid, fam, N=3, K=4, seed=SeedSpec(11))
    ens = synthesize_field(plan, keep_coefficients=True)
    for n in range(4):
        L, _ = cholesky_with_jitter(assemble_coefficient_covariance(fam, n, grid.lats))
        for k in range(4):
            d = sample_coefficient_processes(L, derive_stream(plan.seed, k, n, 1),
                                             derive_stream(plan.seed, k, n, 2))
            np.testing.assert_allclose(ens.coefficients[k, n, 0].ravel(), d.V1, rtol=1e-12,
                                       atol=1e-14)
            np.testing.assert_allclose(ens.coefficients[k, n, 1].ravel(), d.V2, rtol=1e-12,
                                       atol=1e-14)


# --- synthesis ------------------------------------------------------------

def test_plan_validation():
    fam = make_cosh_family([0.5])
    with pytest.raises(ValueError):
        SimulationPlan(build_grid(2, 4, m=2), fam, N=3)
    with pytest.raises(ValueError):
        SimulationPlan(build_grid(2, 4), fam, N=3, K=0)
    assert SimulationPlan(build_grid(2, 4), fam).N == fam.truncation_hint


def test_level_zero_field_is_constant_on_rings():
    ens = synthesize_field(SimulationPlan(build_grid(4, 8, m=2), cosh_pair(), N=0, K=5))
    vals = ens.values
    np.testing.assert_array_equal(vals, np.broadcast_to(vals[:, :, :, :1, :], vals.shape))


def test_zero_family_gives_zero_field():
    zero = table_family([[[0.0]], [[0.0]]])
    ens = synthesize_field(SimulationPlan(build_grid(3, 8), zero, N=1, K=10))
    assert not ens.values.any()


def test_thread_count_does_not_change_output():
    plan = SimulationPlan(build_grid(3, 8, time_count=2, m=2), make_separable_time(cosh_pair(), 0.3),
                          N=6, K=2500, seed=SeedSpec(5))
    a = synthesize_field(plan, threads=1)
    b = synthesize_field(plan, threads=4)
    assert a.values.tobytes() == b.values.tobytes()


def test_lambda_family_with_antisymmetric_part_still_simulates():
    plan = SimulationPlan(build_grid(3, 8), make_lambda_family(make_cosh_family([0.5]), 1.0),
                          N=5, K=3)
    assert np.isfinite(synthesize_field(plan).values).all()


def test_indefinite_family_raises():
    bad = table_family([[[-1.0]]])
    with pytest.raises(KernelError, match="n=0"):
        synthesize_field(SimulationPlan(build_grid(2, 4), bad, N=0, K=2))


# --- projection -----------------------------------------------------------

def test_projection_sine_at_zero():
    ens = synthesize_field(SimulationPlan(build_grid(2, 16), make_cosh_family([0.5]), N=5, K=3))
    W = project_onto_harmonic(ens.values[:, 0, :, :, 0], ens.grid.lons, 0, "sin", axis=-1)
    assert not W.any()


def test_projection_recovers_level_zero():
    plan = SimulationPlan(build_grid(3, 16), make_cosh_family([0.5]), N=0, K=4)
    ens = synthesize_field(plan, keep_coefficients=True)
    W = project_onto_harmonic(ens.values, ens.grid.lons, 0, "cos", axis=3)
    np.testing.assert_allclose(W, 2 * math.pi * ens.coefficients[:, 0, 0], rtol=1e-13)


def test_projection_recovers_level_two():
    plan = SimulationPlan(build_grid(3, 16, m=2), cosh_pair(), N=5, K=4)
    ens = synthesize_field(plan, keep_coefficients=True)
    Wc = project_onto_harmonic(ens.values, ens.grid.lons, 2, "cos", axis=3)
    Ws = project_onto_harmonic(ens.values, ens.grid.lons, 2, "sin", axis=3)
    assert np.max(np.abs(Wc - math.pi * ens.coefficients[:, 2, 0])) < 1e-10
    assert np.max(np.abs(Ws - math.pi * ens.coefficients[:, 2, 1])) < 1e-10


def test_projection_rejects_unresolvable_and_nonuniform():
    with pytest.raises(ValueError):
        project_onto_harmonic(np.zeros(4), 2 * math.pi * np.arange(4) / 4, 2)
    with pytest.raises(ValueError):
        project_onto_harmonic(np.zeros(4), [0, 1, 2, 3], 0, axis=-1)
    with pytest.raises(ValueError):
        project_onto_harmonic(np.zeros(4), 2 * math.pi * np.arange(4) / 4, 0, "tan", axis=-1)


# --- statistical properties (shared ensemble) ------------------------------

def test_mean_is_zero(cosh_ensemble):
    v = cosh_ensemble.values
    mean = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])
    assert np.all(np.abs(mean) < 4 * se)


def test_site_variance_is_coth_pi(cosh_ensemble):
    x = cosh_ensemble.values[:, 0, 2, 5, 0]
    se = math.sqrt(np.var(x * x, ddof=1) / x.size)
    assert abs(np.mean(x * x) - 1 / math.tanh(math.pi)) < 4 * se


def test_levels_are_uncorrelated():
    plan = SimulationPlan(build_grid(2, 8), make_cosh_family([0.5]), N=3, K=20_000,
                          seed=SeedSpec(3))
    V = synthesize_field(plan, keep_coefficients=True).coefficients[:, :, :, 0, 0, 0]
    V = V.reshape(V.shape[0], -1)
    corr = np.corrcoef(V, rowvar=False)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    assert np.max(np.abs(off)) < 4 / math.sqrt(V.shape[0]) * 1.5


# --- I/O ------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    plan = SimulationPlan(build_grid(2, 4, time_count=2, m=2),
                          make_separable_time(cosh_pair(), 0.5), N=3, K=3)
    ens = synthesize_field(plan)
    path = tmp_path / "e.csv"
    write_ensemble_csv(ens, path)
    back = read_ensemble_csv(path)
    np.testing.assert_array_equal(back.values, ens.values)
    np.testing.assert_array_equal(back.grid.lons, ens.grid.lons)
    assert path.read_text().splitlines()[0] == "replicate,component,phi,theta,t,value"


def test_binary_round_trip(tmp_path):
    plan = SimulationPlan(build_grid(3, 4, m=2), cosh_pair(), N=2, K=5)
    ens = synthesize_field(plan)
    sidecar = write_ensemble_binary(ens, tmp_path / "e.bin")
    assert sidecar.exists()
    back = read_ensemble_binary(tmp_path / "e.bin")
    np.testing.assert_array_equal(back.values, ens.values)
    assert back.grid.shape == ens.grid.shape
