import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ep_perceptron.datagen import (HammingBudgetError, LabelNoiseSpec, PatternEnsemble,
                                   ProblemInstance, RecurrentNetwork, TeacherSpec, flip_labels,
                                   gen_patterns, glauber_states, label, make_instance,
                                   mvn_covariance, recurrent_instances, sample_network,
                                   sample_teacher, sign)


def test_sign_of_zero_is_positive():
    np.testing.assert_array_equal(sign([-0.5, 0.0, 2.0]), [-1.0, 1.0, 1.0])


def test_dense_teacher_has_no_zeros():
    b = sample_teacher(TeacherSpec(50, 1.0), np.random.default_rng(0))
    assert np.all(b != 0)


def test_teacher_support_is_binomial():
    n, rho = 128, 0.25
    sd = np.sqrt(n * rho * (1 - rho))
    for seed in range(50):
        count = np.count_nonzero(sample_teacher(TeacherSpec(n, rho), np.random.default_rng(seed)))
        assert abs(count - n * rho) <= 4 * sd


def test_teacher_slab_variance():
    rng = np.random.default_rng(1)
    b = sample_teacher(TeacherSpec(100_000, 1.0, slab_std=0.3), rng)
    assert np.var(b) == pytest.approx(0.09, rel=0.05)


def test_all_zero_teacher_is_resampled():
    b = sample_teacher(TeacherSpec(1, 1e-3), np.random.default_rng(2))
    assert b[0] != 0


def test_iid_column_variance():
    x = gen_patterns(PatternEnsemble(), 5, 10_000, np.random.default_rng(3))
    np.testing.assert_allclose(x.var(axis=0), 1.0, rtol=0.05)


def test_mvn_rank_one_structure():
    rng = np.random.default_rng(4)
    state = rng.bit_generator.state
    s = mvn_covariance(10, 1, rng)
    rng.bit_generator.state = state
    y = rng.standard_normal((1, 10))
    delta = np.abs(rng.standard_normal(10))
    np.testing.assert_allclose(s - np.diag(delta), y.T @ y, atol=1e-12)
    assert np.linalg.matrix_rank(s - np.diag(delta)) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_mvn_covariance_positive_definite(seed, u):
    s = mvn_covariance(12, u, np.random.default_rng(seed))
    np.testing.assert_allclose(s, s.T)
    np.linalg.cholesky(s)


def test_sync_period_four_cycle():
    net = RecurrentNetwork(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    states = glauber_states(net, 5, np.random.default_rng(0), "sync", x0=[1.0, 1.0])
    np.testing.assert_array_equal(states, [[1, 1], [1, -1], [-1, -1], [-1, 1], [1, 1]])


def test_sync_dynamics_deterministic():
    a = recurrent_instances(12, 20, 0.5, np.random.default_rng(5))
    b = recurrent_instances(12, 20, 0.5, np.random.default_rng(5))
    for x, y in zip(a, b):
        assert np.array_equal(x.patterns, y.patterns) and np.array_equal(x.labels, y.labels)


@pytest.mark.parametrize("d_h", [1, 3, 7])
def test_hamming_storage_distance_exact(d_h):
    rng = np.random.default_rng(6)
    net = sample_network(40, 0.5, rng)
    states = glauber_states(net, 25, rng, "hamming", d_h=d_h)
    dist = np.sum(states[1:] != states[:-1], axis=1)
    assert np.all(dist == d_h)
    assert set(np.unique(states)) <= {-1.0, 1.0}


def test_hamming_budget_error_names_budget():
    # a fixed point of the dynamics never moves, so no state can be stored
    net = RecurrentNetwork(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(HammingBudgetError, match="budget of 50"):
        glauber_states(net, 3, np.random.default_rng(0), "hamming", d_h=1, x0=[1, 1],
                       max_steps=50)


def test_sweep_states_are_spins():
    rng = np.random.default_rng(7)
    states = glauber_states(sample_network(10, 0.5, rng), 8, rng, "sweep")
    assert states.shape == (8, 10) and set(np.unique(states)) <= {-1.0, 1.0}


def test_network_has_no_self_loops():
    net = sample_network(9, 1.0, np.random.default_rng(8))
    assert np.all(np.diag(net.w) == 0)
    assert net.incoming(3).shape == (8,)


def test_recurrent_instance_labels_follow_teacher_dynamics():
    rng = np.random.default_rng(9)
    insts = recurrent_instances(10, 15, 0.5, rng, units=[2])
    inst = insts[0]
    assert inst.n == 9
    np.testing.assert_array_equal(inst.labels, sign(inst.patterns @ inst.teacher))


def test_label_examples():
    sigma, _ = label(np.array([[2.0, -5.0]]), np.array([1.0, 0.0]))
    assert sigma[0] == 1.0
    with pytest.raises(ValueError):
        label(np.ones((1, 2)), np.zeros(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_label_invariants(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, 6))
    b = sample_teacher(TeacherSpec(6, 0.5), rng)
    sigma, design = label(x, b)
    assert np.all(design.rows @ b >= 0)
    neg, _ = label(x, -b)
    ties = x @ b == 0
    np.testing.assert_array_equal(neg[~ties], -sigma[~ties])


@pytest.mark.parametrize("eta,m,k", [(1.0, 30, 0), (0.95, 100, 5), (0.5, 10, 5), (0.9, 768, 77)])
def test_flip_counts(eta, m, k):
    sigma = np.ones(m)
    flipped, mask = flip_labels(sigma, LabelNoiseSpec(eta), np.random.default_rng(0))
    assert mask.sum() == k
    assert np.sum(flipped != sigma) == k
    np.testing.assert_array_equal(flipped[mask], -1.0)


@pytest.mark.parametrize("eta", [0.49, 1.01])
def test_noise_spec_validation(eta):
    with pytest.raises(ValueError):
        LabelNoiseSpec(eta)


@pytest.mark.parametrize("kwargs", [dict(kind="nope"), dict(kind="mvn", u=0),
                                    dict(kind="recurrent", update="bogus"),
                                    dict(kind="recurrent", update="hamming", d_h=0)])
def test_ensemble_validation(kwargs):
    with pytest.raises(ValueError):
        PatternEnsemble(**kwargs)


def test_instance_roundtrip(tmp_path):
    inst = make_instance(6, 11, 0.5, np.random.default_rng(10), eta=0.8,
                         ensemble=PatternEnsemble("mvn", u=2))
    path = tmp_path / "inst.json"
    inst.save(path)
    back = ProblemInstance.load(path)
    assert np.array_equal(back.patterns, inst.patterns)
    assert np.array_equal(back.teacher, inst.teacher)
    assert np.array_equal(back.labels, inst.labels)
    assert np.array_equal(back.flipped, inst.flipped)
    assert back.meta == inst.meta
    assert back.meta["ensemble"] == "mvn" and back.flipped.sum() == 2


def test_make_instance_rejects_recurrent():
    with pytest.raises(ValueError):
        make_instance(4, 4, 0.5, np.random.default_rng(0), PatternEnsemble("recurrent"))
