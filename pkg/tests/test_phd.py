import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smbne.cgp import CgpConfig, Genotype, decode_active, random_genotype
from smbne.envs import CARTPOLE_SPEC, MOUNTAINCAR_SPEC
from smbne.phd import (
    InputStrategy,
    InputVector,
    build_input_vector,
    default_reference,
    kernel_phd,
    lhs_states,
    load_reference_traces,
    manhattan,
    per_trace_cap,
    phenotype,
    subsample,
    update_dynamic,
    write_reference_traces,
)


def record(trace, fitness):
    return SimpleNamespace(trace=np.asarray(trace, dtype=float), fitness=fitness)


def traces(n, length, dim, rng):
    return [rng.uniform(-1, 1, (length, dim)) for _ in range(n)]


def test_per_trace_cap_values():
    assert per_trace_cap(5, 4) == 40
    assert per_trace_cap(10, 4) == 20
    assert per_trace_cap(5, 2) == 80
    assert per_trace_cap(2, 2) == 200


def test_subsample_keeps_ends():
    t = np.arange(200.0)[:, None]
    s = subsample(t, 40)
    assert len(s) == 40 and s[0, 0] == 0 and s[-1, 0] == 199
    assert np.all(np.diff(s[:, 0]) > 0)
    assert subsample(t[:10], 40).shape == (10, 1)


def test_dyn_vector_of_full_cartpole_traces():
    rng = np.random.default_rng(0)
    archive = [record(t, -float(i)) for i, t in enumerate(traces(8, 200, 4, rng))]
    v = build_input_vector(InputStrategy("dyn", num_s=5), archive, CARTPOLE_SPEC, rng)
    assert v.num_states == 200 and len(v) == 800
    assert v.source_fitnesses == (-7.0, -6.0, -5.0, -4.0, -3.0)


def test_single_trace_archive():
    rng = np.random.default_rng(0)
    t = rng.uniform(-1, 1, (30, 4))
    v = build_input_vector(InputStrategy("init", num_s=5), [record(t, -30)], CARTPOLE_SPEC, rng)
    assert np.array_equal(v.states, t)


def test_empty_archive_rejected():
    with pytest.raises(ValueError):
        build_input_vector(InputStrategy("dyn"), [], CARTPOLE_SPEC, np.random.default_rng(0))


def test_unknown_strategy_rejected():
    with pytest.raises(ValueError):
        InputStrategy("random")


def test_lhs_strata():
    rng = np.random.default_rng(1)
    pts = lhs_states(200, 4, rng)
    assert pts.shape == (200, 4)
    for d in range(4):
        strata = np.floor((pts[:, d] + 1) / (2 / 200)).astype(int)
        assert sorted(strata) == list(range(200))


def test_lhs_default_sizes():
    rng = np.random.default_rng(2)
    v = build_input_vector(InputStrategy("lhs"), [], CARTPOLE_SPEC, rng)
    assert v.states.shape == (200, 4)
    v = build_input_vector(InputStrategy("lhs"), [], MOUNTAINCAR_SPEC, rng)
    assert v.states.shape == (400, 2)


def test_pre_fixtures_exist_and_load():
    for spec in (CARTPOLE_SPEC, MOUNTAINCAR_SPEC):
        ts, fits = load_reference_traces(default_reference(spec))
        assert len(ts) >= 5 and all(t.shape[1] == spec.obs_dim for t in ts)
        v = build_input_vector(InputStrategy("pre", num_s=5), [], spec, np.random.default_rng(0))
        assert v.num_states <= 5 * per_trace_cap(5, spec.obs_dim)
        assert ((v.states >= -1) & (v.states <= 1)).all()


def test_missing_reference_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_input_vector(InputStrategy("pre", reference=str(tmp_path / "none.csv")), [],
                           CARTPOLE_SPEC, np.random.default_rng(0))


def test_reference_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    ts = traces(3, 7, 2, rng)
    path = tmp_path / "ref.csv"
    write_reference_traces(path, ts, [-1.5, 0.25, 3.0])
    back, fits = load_reference_traces(path)
    assert fits == [-1.5, 0.25, 3.0]
    for a, b in zip(ts, back):
        assert np.array_equal(a, b)


def test_update_replaces_worst():
    rng = np.random.default_rng(4)
    v = InputVector(tuple(traces(3, 5, 2, rng)), (-50.0, -40.0, -30.0), 3, 80)
    new = rng.uniform(-1, 1, (5, 2))
    w = update_dynamic(v, new, -60.0)
    assert w.source_fitnesses == (-60.0, -50.0, -40.0)
    assert np.array_equal(w.traces[0], new)
    assert np.array_equal(w.traces[1], v.traces[0])


def test_update_appends_below_capacity():
    rng = np.random.default_rng(5)
    v = InputVector(tuple(traces(2, 5, 2, rng)), (-50.0, -40.0), 5, 80)
    w = update_dynamic(v, rng.uniform(-1, 1, (5, 2)), -60.0)
    assert len(w.traces) == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_update_respects_capacity(num_s, length, seed):
    rng = np.random.default_rng(seed)
    cap = per_trace_cap(num_s, 4)
    v = InputVector((), (), num_s, cap)
    for i in range(num_s + 3):
        v = update_dynamic(v, rng.uniform(-1, 1, (length, 4)), -float(i))
        assert len(v.traces) <= num_s
        assert len(v) <= num_s * cap * 4
        assert list(v.source_fitnesses) == sorted(v.source_fitnesses)


def test_identity_network_phenotype():
    cfg = CgpConfig(2, 2, num_nodes=4, arity=2)
    base = random_genotype(cfg, np.random.default_rng(0))
    g = Genotype(cfg, base.functions, base.connections, base.weights, np.array([1, 0]))
    states = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    v = InputVector((states,), (0.0,), 1, 10)
    p = phenotype(decode_active(g), v)
    assert p.shape == (20,)
    assert np.array_equal(p, states[:, ::-1].ravel())


def test_passive_nodes_do_not_change_phenotype():
    cfg = CgpConfig(4, 2, num_nodes=40, arity=3)
    rng = np.random.default_rng(6)
    g = random_genotype(cfg, rng)
    act = np.flatnonzero(np.isin(np.arange(40), decode_active(g).nodes))
    passive = np.setdiff1d(np.arange(40), act)
    w = g.weights.copy()
    w[passive] = rng.uniform(-1, 1, (len(passive), 3))
    twin = Genotype(cfg, g.functions, g.connections, w, g.outputs)
    v = InputVector((rng.uniform(-1, 1, (50, 4)),), (0.0,), 1, 50)
    assert np.array_equal(phenotype(decode_active(g), v), phenotype(decode_active(twin), v))


def test_phenotype_length_independent_of_network_size():
    rng = np.random.default_rng(7)
    v = InputVector((rng.uniform(-1, 1, (25, 4)),), (0.0,), 1, 25)
    for nodes in (1, 10, 200):
        net = decode_active(random_genotype(CgpConfig(4, 2, nodes, 5), rng))
        assert phenotype(net, v).shape == (50,)


def test_manhattan_examples():
    assert manhattan([0, 0], [1, -1]) == 2
    assert manhattan([0.3, 0.4], [0.3, 0.4]) == 0
    with pytest.raises(ValueError):
        manhattan([0, 0], [0, 0, 0])


vec = arrays(np.float64, 6, elements=st.floats(-10, 10))


@settings(max_examples=100)
@given(vec, vec, vec)
def test_manhattan_is_a_metric(a, b, c):
    assert manhattan(a, b) >= 0
    assert manhattan(a, b) == manhattan(b, a)
    assert manhattan(a, b) <= manhattan(a, c) + manhattan(c, b) + 1e-9
    assert (manhattan(a, b) == 0) == np.array_equal(a, b)


def test_kernel_examples():
    assert kernel_phd([1.0, 2.0], [1.0, 2.0], 3.0) == 1.0
    assert kernel_phd([0.0], [1.0], 1.0) == pytest.approx(0.367879, abs=1e-6)
    with pytest.raises(ValueError):
        kernel_phd([0.0], [1.0], 0.0)


def test_kernel_decreases_with_theta():
    vals = [kernel_phd([0.0, 0.0], [0.5, 0.2], t) for t in np.logspace(-3, 3, 20)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert 0 < vals[-1] < 1e-100


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(1, 30), st.floats(1e-4, 1e2), st.integers(0, 2**32 - 1))
def test_gram_matrix_psd(n, dim, theta, seed):
    P = np.random.default_rng(seed).uniform(-1, 1, (n, dim))
    K = np.array([[kernel_phd(a, b, theta) for b in P] for a in P])
    assert np.linalg.eigvalsh(K).min() >= -1e-8
