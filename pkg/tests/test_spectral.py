import numpy as np
import pytest

import oracles
from conftest import random_matrix
from umps import core, excite, models, spectral
from umps.errors import ArgumentError, BoundsError, SupportError

S1 = models.spin_operators(1)


@pytest.fixture(scope="module")
def aklt_state():
    A, fp = core.fixed_points(models.aklt_tensor())
    return core.UmpsState(A, fp), models.aklt_hamiltonian()


@pytest.fixture(scope="module")
def aklt_pi(aklt_state):
    state, h = aklt_state
    env = excite.Environments.build(state.A, state.fp, h)
    return excite.EffectiveHamiltonian(env, np.pi).linear_map()


def _fwhm(omega, y):
    i = int(np.argmax(y))
    half = y[i] / 2
    lo = i
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i
    while hi < len(y) - 1 and y[hi] > half:
        hi += 1
    left = np.interp(half, [y[lo], y[lo + 1]], [omega[lo], omega[lo + 1]])
    right = np.interp(half, [y[hi], y[hi - 1]], [omega[hi], omega[hi - 1]])
    return right - left


def test_identity_has_no_tangent_component(aklt_state):
    state, _ = aklt_state
    for p in (0.5, np.pi):
        T = spectral.operator_to_tangent(np.eye(3), state, p)
        assert np.linalg.norm(T.X) < 1e-13
        assert abs(T.ground_component - 1) < 1e-13


@pytest.mark.parametrize("p", [np.pi, 1.0, 0.2])
def test_weight_is_static_structure_factor(aklt_state, p):
    state, _ = aklt_state
    A, fp = state.A, state.fp
    N = oracles.decay_sites(A, fp.l, fp.r)
    for O in (S1.Sz, S1.Sx + 0.3 * S1.Sz):
        T = spectral.operator_to_tangent(O, state, p)
        ref = oracles.connected_structure_factor(A, fp.l, fp.r, O, p, N)
        assert abs(np.vdot(T.X, T.X) - ref) < 1e-12
    if p == np.pi:
        Tz = spectral.operator_to_tangent(S1.Sz, state, p)
        assert abs(np.vdot(Tz.X, Tz.X).real - 2.0) < 1e-12


def test_structure_factor_random_state(small_random):
    A, fp, _ = small_random
    state = core.UmpsState(A, fp)
    O = random_matrix((2, 2), np.random.default_rng(4))
    N = oracles.decay_sites(A, fp.l, fp.r)
    for p in (0.3, 2.5):
        T = spectral.operator_to_tangent(O, state, p)
        ref = oracles.connected_structure_factor(A, fp.l, fp.r, O, p, N)
        assert abs(np.vdot(T.X, T.X) - ref) < 1e-11


def test_two_site_operator_in_two_site_blocks(aklt_state):
    state, _ = aklt_state
    A, fp = state.A, state.fp
    O = np.kron(S1.Sz, S1.Sz)
    N = oracles.decay_sites(A, fp.l, fp.r)
    for p in (np.pi, 0.8):
        T = spectral.operator_to_tangent(O, state, p, K=2)
        ref = oracles.connected_structure_factor_wide(A, fp.l, fp.r, O, 2, p, N)
        assert abs(np.vdot(T.X, T.X) - ref) < 1e-12
    with pytest.raises(SupportError):
        spectral.operator_to_tangent(O, state, 0.3, K=1)


def test_wider_block_keeps_single_site_weight(aklt_state):
    state, _ = aklt_state
    a = spectral.operator_to_tangent(S1.Sx, state, 2.0, K=1)
    b = spectral.operator_to_tangent(S1.Sx, state, 2.0, K=3)
    assert abs(np.vdot(a.X, a.X) - np.vdot(b.X, b.X)) < 1e-12


def test_operator_shape_checked(aklt_state):
    state, _ = aklt_state
    with pytest.raises(ArgumentError):
        spectral.operator_to_tangent(np.eye(2), state, 0.3)


def test_moments_of_an_eigenvector(aklt_pi):
    H = aklt_pi.matrix()
    w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    x = 1.7 * V[:, 0]
    s = spectral.chebyshev_moments(aklt_pi, x, 11)
    lam = (w[0] - s.b) / s.a
    ref = 1.7 ** 2 * np.cos(np.arange(11) * np.arccos(lam))
    assert np.allclose(s.moments, ref, atol=1e-12)
    assert abs(s.weight - 1.7 ** 2) < 1e-13


def test_eigenvector_peak_weight_and_position(aklt_pi):
    H = aklt_pi.matrix()
    w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    s = spectral.chebyshev_moments(aklt_pi, V[:, 0], 400)
    omega = np.linspace(s.bounds[0], s.bounds[1], 20001)
    y = spectral.reconstruct(s, omega)
    assert abs(spectral.integrate(omega, y) - 1) < 1e-3
    assert abs(omega[np.argmax(y)] - w[0]) < s.resolution


def test_doubling_moments_halves_width(aklt_pi):
    H = aklt_pi.matrix()
    w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    x = V[:, 0]
    widths = []
    for N in (200, 400):
        s = spectral.chebyshev_moments(aklt_pi, x, N)
        omega = np.linspace(w[0] - 0.5, w[0] + 0.5, 40001)
        widths.append(_fwhm(omega, spectral.reconstruct(s, omega)))
    assert abs(widths[0] / widths[1] - 2) < 0.2


def test_weight_conserved_across_kernels_and_orders(aklt_state, aklt_pi):
    state, _ = aklt_state
    T = spectral.operator_to_tangent(S1.Sx, state, np.pi)
    nrm = np.vdot(T.X, T.X).real
    for N in (50, 300):
        s = spectral.chebyshev_moments(aklt_pi, T.X, N)
        assert abs(s.moments[0] - nrm) < 1e-12 * nrm
        omega = np.linspace(s.bounds[0], s.bounds[1], 40001)
        assert abs(spectral.integrate(omega, spectral.reconstruct(s, omega)) - nrm) < 1e-3 * nrm


def test_jackson_positive_dirichlet_rings(aklt_state, aklt_pi):
    state, _ = aklt_state
    T = spectral.operator_to_tangent(S1.Sx, state, np.pi)
    s = spectral.chebyshev_moments(aklt_pi, T.X, 200)
    omega = np.linspace(s.bounds[0], s.bounds[1], 8001)
    jack = spectral.reconstruct(s, omega, "jackson")
    diri = spectral.reconstruct(s, omega, "dirichlet")
    assert jack.min() > -1e-3 * jack.max()
    assert diri.min() < -1e-2 * diri.max()


def test_aklt_sx_peak_matches_magnon(aklt_state):
    state, h = aklt_state
    omega = np.linspace(0, 4, 8001)
    sf = spectral.spectral_function(state, h, S1.Sx, [np.pi], 500, omega)
    s = sf.series[0]
    assert abs(omega[np.argmax(sf.values[0])] - 10 / 27) < s.resolution
    assert abs(spectral.integrate(omega, sf.values[0]) - s.weight) < 1e-3 * s.weight


def test_peaks_follow_the_dispersion(aklt_state):
    state, h = aklt_state
    ps = [2.2, np.pi]
    omega = np.linspace(0, 6, 12001)
    sf = spectral.spectral_function(state, h, S1.Sx, ps, 400, omega)
    E = excite.excitation_spectrum(state, h, ps).lowest()
    for j in range(2):
        assert abs(omega[np.argmax(sf.values[j])] - E[j]) < sf.series[j].resolution


def test_narrow_bounds_are_detected(aklt_state, aklt_pi):
    state, _ = aklt_state
    T = spectral.operator_to_tangent(S1.Sx, state, np.pi)
    with pytest.raises(BoundsError) as info:
        spectral.chebyshev_moments(aklt_pi, T.X, 300, bounds=(0.3, 0.4))
    lo, hi = info.value.bounds
    assert lo < 10 / 27 and hi > 1.0
    with pytest.raises(ArgumentError):
        spectral.chebyshev_moments(aklt_pi, T.X, 0)


def test_dos_sum_rule_and_fringes(aklt_state):
    state, h = aklt_state
    ps = excite.momentum_grid(24)
    omega = np.linspace(-0.5, 7, 6001)
    # common bounds give every momentum the same kernel resolution, 0.158 here
    sf = spectral.spectral_function(state, h, S1.Sx, ps, 60, omega, bounds=(0, 6))
    dos = spectral.density_of_states(ps, omega, sf.values, sf.series)
    mean_weight = np.mean([s.weight for s in sf.series])
    assert abs(spectral.integrate(omega, dos.values) - mean_weight) < 5e-3 * mean_weight
    assert not dos.fringe_warning
    coarse = ps[::4]
    sharp = spectral.spectral_function(state, h, S1.Sx, coarse, 400, omega, bounds=(0, 6))
    with pytest.warns(UserWarning, match="too coarse"):
        d2 = spectral.density_of_states(coarse, omega, sharp.values, sharp.series)
    assert d2.fringe_warning and d2.max_shift > d2.resolution


def test_flat_band_dos_is_the_common_peak():
    omega = np.linspace(-1, 1, 101)
    peak = np.exp(-omega ** 2 / 0.01)
    ps = excite.momentum_grid(8)
    dos = spectral.density_of_states(ps, omega, np.tile(peak, (8, 1)))
    assert np.allclose(dos.values, peak, atol=1e-14)


def test_polarization_recovers_cross_correlations(aklt_state, aklt_pi):
    state, _ = aklt_state
    x = spectral.operator_to_tangent(S1.Sx, state, np.pi).X
    y = spectral.operator_to_tangent(S1.Sz @ S1.Sx + 0.2j * S1.Sy, state, np.pi).X
    N = 12
    q = [spectral.chebyshev_moments(aklt_pi, x + 1j ** k * y, N, bounds=(-1, 8)).moments
         for k in range(4)]
    cross = spectral.polarization_cross(q)
    s = spectral.chebyshev_moments(aklt_pi, x, N, bounds=(-1, 8))
    mv = lambda v: (aklt_pi(v) - s.b * v) / s.a
    prev, cur = y, mv(y)
    direct = [np.vdot(x, prev), np.vdot(x, cur)]
    for _ in range(2, N):
        prev, cur = cur, 2 * mv(cur) - prev
        direct.append(np.vdot(x, cur))
    assert np.allclose(cross, direct, atol=1e-11)
    # linearity: alpha O1 + beta O2
    al, be = 0.7 - 0.2j, 1.3j
    combo = spectral.chebyshev_moments(aklt_pi, al * x + be * y, N, bounds=(-1, 8)).moments
    sx = spectral.chebyshev_moments(aklt_pi, x, N, bounds=(-1, 8)).moments
    sy = spectral.chebyshev_moments(aklt_pi, y, N, bounds=(-1, 8)).moments
    pred = abs(al) ** 2 * sx + abs(be) ** 2 * sy + 2 * np.real(np.conj(al) * be * cross)
    assert np.allclose(combo, pred, atol=1e-11)


def test_csv_and_sidecar_round_trip(aklt_state, tmp_path):
    state, h = aklt_state
    omega = np.linspace(0, 3, 31)
    sf = spectral.spectral_function(state, h, S1.Sx, [0.5, np.pi], 40, omega)
    spectral.write_spectral_csv(tmp_path / "a.csv", sf, header_comment="run 1")
    spectral.write_moments_sidecar(tmp_path / "a.moments.json", sf, {"op": "sx"})
    p, w, vals = spectral.read_spectral_csv(tmp_path / "a.csv")
    assert np.array_equal(p, sf.p_grid) and np.array_equal(w, omega)
    assert np.array_equal(vals, sf.values)
    series = spectral.read_moments_sidecar(tmp_path / "a.moments.json")
    for a, b in zip(series, sf.series):
        assert np.array_equal(a.moments, b.moments)
        assert np.allclose(spectral.reconstruct(a, omega), spectral.reconstruct(b, omega))
    (tmp_path / "bad.csv").write_text("p,omega,ImG\n0,1,x\n")
    with pytest.raises(ArgumentError, match="line 2"):
        spectral.read_spectral_csv(tmp_path / "bad.csv")
