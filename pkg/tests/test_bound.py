import numpy as np
import pytest

from hflprune.bound import BoundParams, bound_terms, bound_value, estimate_constants, gamma_star, h1, h2, initial_gap_term
from hflprune.model import PruningMask, build_mask
from hflprune.trainer import Network

UNIT = dict(L=1, D=1, phi=1, sigma_hat=1, gamma_star=1, eta=1, Q=1, E=1, T=1, N=1, W=1, F0_minus_Fstar=1)


def params(**changes):
    return BoundParams(**{**UNIT, **changes})


def h1_reference(L, D, phi, sigma_hat, gamma_star, eta, Q, E, T, N, W, F0_minus_Fstar):
    a = 3 * L * eta * T * E * W * phi * phi
    b = phi * phi * N * eta * eta * T * T * L * L * L
    c = 3 * L * W * eta * E * T * N * sigma_hat * sigma_hat
    d = 3 * W * E * L * L * L * T * T * T * eta * eta * eta * phi * phi * N
    return a + (b + c + d) / gamma_star


def test_unit_parameter_values():
    assert h1(params()) == 10
    assert h2(params()) == 8
    assert initial_gap_term(params()) == 2


def test_h1_vanishes_without_gradient_terms():
    assert h1(params(phi=0, sigma_hat=0)) == 0


def test_h2_examples():
    assert h2(params(D=0)) == pytest.approx(2.0)
    assert h2(params(gamma_star=2, N=3)) == pytest.approx(h2(params(N=3)) / 2)


def test_h1_matches_reference(rng):
    for _ in range(100):
        p = dict(
            L=rng.uniform(0.1, 5), D=rng.uniform(0, 3), phi=rng.uniform(0, 3), sigma_hat=rng.uniform(0, 3),
            eta=rng.uniform(1e-4, 0.1), Q=int(rng.integers(1, 20)), E=int(rng.integers(1, 10)),
            T=int(rng.integers(1, 30)), N=int(rng.integers(1, 50)), W=int(rng.integers(1, 10_000)),
            F0_minus_Fstar=rng.uniform(0, 5),
        )
        p["gamma_star"] = int(rng.integers(1, p["N"] + 1))
        assert h1(BoundParams(**p)) == pytest.approx(h1_reference(**p), rel=1e-12)
        assert h1(BoundParams(**p)) >= 0 and h2(BoundParams(**p)) >= 0


def test_bound_terms():
    t = bound_terms(params(), 0.0)
    assert t["total"] == t["initial_gap"] + t["h1"]
    assert bound_value(params(), 3.0) == 2 + 10 + 8 * 3
    with pytest.raises(ValueError):
        bound_terms(params(), -1.0)


def test_more_global_rounds_shrink_first_term():
    assert initial_gap_term(params(Q=10)) < initial_gap_term(params(Q=2))


def test_params_validation():
    with pytest.raises(ValueError):
        params(gamma_star=2)
    with pytest.raises(ValueError):
        params(E=0)
    with pytest.raises(ValueError):
        params(phi=-1)


def test_gamma_star():
    assert gamma_star([3, 0, 2, 5]) == 2
    with pytest.raises(ValueError):
        gamma_star([0, 0])


def test_estimate_constants_are_finite(small_net, blobs):
    w = small_net.init_weights(0)
    m = build_mask(np.abs(w.fc), 0.5, small_net.arch)
    est = estimate_constants(small_net, [w], blobs, masks=[(w, m), (w, PruningMask.ones(small_net.arch))], samples=3)
    assert set(est) == {"L", "phi", "sigma_hat", "D"}
    assert all(np.isfinite(v) and v >= 0 for v in est.values())
    assert est["D"] > 0
