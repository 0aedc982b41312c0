import json

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from blowuplab import Domain, Interval, Nonlinearity, Potential, make_problem
from blowuplab import _kernels as K
from blowuplab.diagnostics import kaplan_functional
from blowuplab.harness.report import sanitize
from blowuplab.oracles import rescaled_nonlinearity
from blowuplab.zeroset import isolating_subdomain, nesting_holds, sublevel_components

finite = st.floats(0.0, 1e3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 64, elements=finite), st.sampled_from(["power", "shifted_power", "log_power", "exponential"]))
def test_kernel_backends_agree(u, kind):
    if not K.HAVE_NUMBA:
        return
    param = {"power": 2.5, "shifted_power": 2.0, "log_power": 1.5, "exponential": 0.0}[kind]
    f = Nonlinearity(kind, param) if kind != "exponential" else Nonlinearity.exponential()
    spec = make_problem(Domain(Interval(-1, 1), 64), Potential.expression("1 + x^2"), f, "0")
    cm, cc, cp, fixed = spec.domain.stencil
    u = np.minimum(u, 5.0) if kind == "exponential" else u
    a = K.rk2_step(u, spec.V, cm, cc, cp, fixed, f.code, f.param, 1e-7, backend="numpy")
    b = K.rk2_step(u, spec.V, cm, cc, cp, fixed, f.code, f.param, 1e-7, backend="numba")
    assert a[1] == b[1] and np.array_equal(a[0], b[0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=8), st.integers(200, 800))
def test_nesting_on_random_smooth_potentials(coef, n):
    x = np.linspace(0, 1, n)
    V = sum(c * np.cos(k * np.pi * x) for k, c in enumerate(coef)) ** 2
    assert nesting_holds(V, [1.0 / m for m in range(1, 65)])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.8), st.floats(0.5, 4.0), st.integers(0, 1))
def test_isolating_subdomain_contract(center, scale, odd):
    n = 801 + odd * 200
    x = np.linspace(-1, 1, n)
    i0 = int(np.argmin(np.abs(x - (center - 0.5))))
    V = scale * (x - x[i0]) ** 2
    iso = isolating_subdomain(V, i0)
    m = iso.omega0
    assert m.mask[i0] and m.is_connected and not m.mask[[0, -1]].any()
    assert np.all(V[m.boundary] >= iso.eta) and iso.eta > 0


@settings(max_examples=40, deadline=None)
@given(arrays(float, 101, elements=finite), arrays(float, 101, elements=finite), st.floats(0.1, 1.0))
def test_kaplan_monotone(u, du, ell):
    x = np.linspace(-1, 1, 101)
    assert kaplan_functional(u, x, ell) <= kaplan_functional(u + du, x, ell) + 1e-9 * (1 + np.abs(u + du).sum())


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.floats(0.0, 1e3), st.floats(1.2, 5.0))
def test_power_rescaling_is_exact(lam, v, p):
    # independent of lambda; array and scalar pow may differ in the last ulp
    a = rescaled_nonlinearity(Nonlinearity.power(p), lam, v)
    assert a == rescaled_nonlinearity(Nonlinearity.power(p), 1.0, v)
    assert abs(a - v**p) <= 4 * np.spacing(v**p)


@settings(max_examples=50)
@given(st.recursive(st.one_of(st.floats(), st.integers(), st.booleans(), st.none(), st.text(max_size=5)),
                    lambda c: st.lists(c, max_size=4) | st.dictionaries(st.text(max_size=5), c, max_size=4),
                    max_leaves=20))
def test_sanitize_yields_strict_json(obj):
    json.dumps(sanitize(obj), allow_nan=False)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 50, elements=st.floats(0, 1)), st.floats(0.01, 1.0))
def test_sublevel_labels_partition(V, tau):
    dec = sublevel_components(V, tau)
    assert np.array_equal(dec.labels >= 0, V <= tau)
    # adjacent sublevel nodes share a label
    both = (dec.labels[:-1] >= 0) & (dec.labels[1:] >= 0)
    assert np.all(dec.labels[:-1][both] == dec.labels[1:][both])
