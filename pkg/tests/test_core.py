import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyclu.core import (
    DyClu,
    DyCluConfig,
    ModelPool,
    OracleDyClu,
    StepEvent,
    UserModel,
    aggregate_statistics,
    detection_threshold,
    neighborhood_of,
    observe,
    select_arm,
    ucb_alpha,
    ucb_scores,
    ucb_select,
)
from dyclu.environment import EnvironmentConfig, generate_environment, next_step, realize_reward
from dyclu.errors import EmptyNeighborhood, NoCandidates, UnknownUser
from dyclu.homogeneity import Dataset
from dyclu.numerics import chi2_quantile
from dyclu.rng import Xoshiro256

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])
Q95 = chi2_quantile(0.95, 1)


def cfg2(**kw):
    base = dict(d=2, sigma2=1.0)
    base.update(kw)
    return DyCluConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = DyCluConfig(d=10, sigma2=0.0081)
        assert c.upsilon_e == pytest.approx(3.841459, abs=1e-5)
        assert c.upsilon_c == pytest.approx(chi2_quantile(0.95, 10))
        assert c.sigma == pytest.approx(0.09)

    @pytest.mark.parametrize("kw", [dict(tau=0), dict(delta=1.0), dict(delta_e=0.0),
                                    dict(lam=0.0), dict(sigma2=0.0), dict(max_outdated=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            cfg2(**kw)


class TestThreshold:
    def test_no_margin(self):
        assert detection_threshold(cfg2(upsilon_e=Q95, delta_e=1.0)) == pytest.approx(0.05, abs=1e-12)

    def test_infinite_upsilon(self):
        assert detection_threshold(cfg2(upsilon_e=1e6, delta_e=1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_with_margin(self):
        c = cfg2(upsilon_e=3.841, delta_e=math.exp(-2), tau=50)
        assert detection_threshold(c) == pytest.approx(0.05 + math.sqrt(2 / 100), abs=1e-4)
        assert detection_threshold(c) == pytest.approx(0.1914, abs=1e-4)


class TestSelect:
    def test_fresh_pool_score(self):
        c = cfg2(lam=1.0, delta=math.exp(-0.5))
        assert ucb_alpha(1.0, 2, 0, 1.0, math.exp(-0.5)) == pytest.approx(2.0)
        pool = ModelPool(1, c)
        A, b, n = aggregate_statistics(neighborhood_of(pool, 0), c)
        assert ucb_scores(A, b, 2.0, E1[None, :])[0] == pytest.approx(2.0)
        assert select_arm(pool, 0, [E1], c) == 0

    def test_tie_break(self):
        c = cfg2()
        pool = ModelPool(1, c)
        assert select_arm(pool, 0, [E1, E1, E1], c) == 0

    def test_ridge_estimate(self):
        A = np.diag([99.0, 0.0]) + np.eye(2)
        b = np.array([99.0, 0.0])
        assert float(np.linalg.solve(A, b) @ E1) == pytest.approx(0.99)
        # the score adds exactly alpha * sqrt(1/100) on top
        assert ucb_scores(A, b, 3.0, E1[None, :])[0] == pytest.approx(0.99 + 0.3)

    def test_no_candidates(self):
        c = cfg2()
        with pytest.raises(NoCandidates):
            select_arm(ModelPool(1, c), 0, np.zeros((0, 2)), c)

    def test_unknown_user(self):
        c = cfg2()
        with pytest.raises(UnknownUser):
            select_arm(ModelPool(2, c), 5, [E1], c)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.01, 100.0))
    def test_argmax_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((20, 2))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        M = rng.standard_normal((5, 2))
        A = np.eye(2) + M.T @ M
        b = rng.standard_normal(2)
        chosen = ucb_select(A, b, 5, X, 0.5, 1.0, 0.1)
        scores = ucb_scores(A, b, ucb_alpha(0.5, 2, 5, 1.0, 0.1), X)
        assert chosen == int(np.argmax(scores)) == int(np.argmax(scale * scores))


class TestAggregate:
    def test_all_empty(self):
        c = cfg2(lam=2.0)
        pool = ModelPool(3, c)
        A, b, n = aggregate_statistics(list(pool.all_models()), c)
        assert np.allclose(A, 2.0 * np.eye(2)) and np.allclose(b, 0) and n == 0

    def test_single(self):
        c = cfg2()
        m = UserModel.fresh(0, c)
        m.data.append(E1, 2.0)
        A, b, n = aggregate_statistics([m], c)
        assert np.allclose(A, np.eye(2) + np.outer(E1, E1))
        assert np.allclose(b, 2 * E1) and n == 1

    def test_additivity(self):
        c = cfg2()
        m1, m2 = UserModel.fresh(0, c), UserModel.fresh(1, c)
        m1.data.append(E1, 1.0)
        m2.data.append(E1, 1.0)
        A, b, n = aggregate_statistics([m1, m2], c)
        pooled = Dataset.from_arrays([E1, E1], [1.0, 1.0])
        assert n == 2 and np.allclose(b, 2 * E1)
        assert np.allclose(A, c.lam * np.eye(2) + pooled.A) and np.allclose(b, pooled.b)

    def test_empty_neighborhood(self):
        with pytest.raises(EmptyNeighborhood):
            aggregate_statistics([], cfg2())


class TestObserve:
    def test_first_observation_kept(self):
        c = cfg2()
        pool = ModelPool(1, c)
        ev = observe(pool, 0, E1, 0.7, c, 1)
        assert ev.model_updated and not ev.observation_discarded and not ev.change_detected
        assert len(pool.model(0).data) == 1
        assert list(pool.model(0).window) == [0]

    def test_contradiction_discarded(self):
        c = DyCluConfig(d=2, sigma2=0.09 ** 2, upsilon_e=3.841, tau=1, delta_e=0.01)
        assert detection_threshold(c) > 1
        pool = ModelPool(1, c)
        observe(pool, 0, E1, 1.0, c, 1)
        ev = observe(pool, 0, E1, -1.0, c, 2)
        assert ev.observation_discarded and not ev.change_detected and not ev.model_updated
        assert list(pool.model(0).window) == [1]
        assert len(pool.model(0).data) == 1

    def test_window_of_ones_detects(self):
        c = DyCluConfig(d=2, sigma2=0.09 ** 2, upsilon_e=3.841, tau=10, delta_e=0.1)
        assert detection_threshold(c) == pytest.approx(0.05 + math.sqrt(math.log(10) / 20), abs=1e-3)
        pool = ModelPool(1, c)
        observe(pool, 0, E1, 1.0, c, 1)
        old = pool.model(0)
        old.window.extend([1] * 9)
        ev = observe(pool, 0, E1, -1.0, c, 2)
        assert ev.change_detected and not ev.model_updated
        assert pool.outdated == [old] and old.retired_at == 2
        new = pool.model(0)
        assert new is not old and len(new.data) == 0 and len(new.window) == 0
        assert pool.detections == 1

    def test_unknown_user(self):
        c = cfg2()
        with pytest.raises(UnknownUser):
            observe(ModelPool(1, c), 3, E1, 0.0, c, 1)

    def test_zero_context_counts_as_no_evidence(self):
        c = cfg2()
        pool = ModelPool(1, c)
        observe(pool, 0, E1, 1.0, c, 1)
        ev = observe(pool, 0, np.zeros(2), 0.0, c, 2)
        assert ev.model_updated


class TestNeighborhood:
    def test_fresh(self):
        c = cfg2()
        pool = ModelPool(2, c)
        assert neighborhood_of(pool, 1) == [pool.model(1)]
        with pytest.raises(UnknownUser):
            neighborhood_of(pool, 2)

    def test_identical_users_merge(self):
        # consistent data: the statistic is zero up to rounding
        c = cfg2(upsilon_c=1e-9)
        pool = ModelPool(2, c)
        observe(pool, 0, E1, 1.0, c, 1)
        observe(pool, 1, E1, 1.0, c, 2)
        observe(pool, 0, E2, 0.0, c, 3)
        n1 = neighborhood_of(pool, 1)
        assert pool.model(0) in n1 and pool.model(1) in n1

    def test_different_users_stay_apart(self):
        c = cfg2(upsilon_c=1.0)
        pool = ModelPool(2, c)
        observe(pool, 0, E1, 0.0, c, 1)
        observe(pool, 1, E1, 2.0, c, 2)
        assert neighborhood_of(pool, 1) == [pool.model(1)]
        observe(pool, 0, E2, 0.0, c, 3)
        assert neighborhood_of(pool, 0) == [pool.model(0)]

    def test_empty_models_skipped(self):
        c = cfg2(upsilon_c=100.0)
        pool = ModelPool(3, c)
        observe(pool, 0, E1, 1.0, c, 1)
        assert neighborhood_of(pool, 0) == [pool.model(0)]


def _run_dyclu(seed, horizon=600, n_users=6, learner_cls=DyClu, **kw):
    env = generate_environment(EnvironmentConfig(n_users=n_users, m=3, d=4, n_arms=40, candidate_size=8,
                                                 horizon=horizon, smin=20, smax=40, sigma=0.1), seed)
    learner = learner_cls(DyCluConfig(d=4, sigma2=0.01, tau=10, **kw), n_users)
    cand, noise = Xoshiro256.for_stream(seed, "candidates"), Xoshiro256.for_stream(seed, "noise")
    for t in range(1, horizon + 1):
        step = next_step(env, t, cand)
        chosen = learner.select(step)
        reward, _ = realize_reward(env, step, chosen, noise)
        yield step, chosen, reward, learner, learner.update(step, chosen, reward)


class TestInvariants:
    def test_pool_sizes_and_event_flags(self):
        for step, chosen, reward, learner, ev in _run_dyclu(0):
            pool = learner.pool
            assert len(pool.up_to_date) == 6
            assert len(pool.outdated) == pool.detections
            assert not (ev.change_detected and ev.model_updated)
            assert not (ev.model_updated and ev.observation_discarded)
            assert pool.model(step.user) in neighborhood_of(pool, step.user)
            assert ev.neighborhood_size == len(neighborhood_of(pool, step.user))
            for m in pool.up_to_date.values():
                assert m.retired_at is None
                assert set(m.window) <= {0, 1}
                if m.window:
                    assert m.e_mean == pytest.approx(sum(m.window) / len(m.window), abs=1e-12)
            assert all(m.retired_at is not None for m in pool.outdated)
        assert learner.detections > 0

    def test_discard_soundness(self):
        discarded = []
        for step, chosen, reward, learner, ev in _run_dyclu(1):
            if ev.observation_discarded:
                discarded.append((step.candidates[chosen].tobytes(), reward))
        assert discarded
        stored = set()
        for m in learner.pool.all_models():
            for x, y in zip(m.data.X, m.data.y):
                stored.add((x.tobytes(), float(y)))
        assert not any(obs in stored for obs in discarded)

    def test_outdated_immutable(self):
        hashes = {}
        for _, _, _, learner, _ in _run_dyclu(2):
            for m in learner.pool.outdated:
                h = m.data.fingerprint()
                assert hashes.setdefault(m.uid, h) == h
        assert hashes

    def test_max_outdated_cap(self):
        for *_, learner, _ in _run_dyclu(2, max_outdated=2):
            assert len(learner.pool.outdated) <= 2

    def test_reproducible(self):
        a = [(c, r, e) for _, c, r, _, e in _run_dyclu(3)]
        b = [(c, r, e) for _, c, r, _, e in _run_dyclu(3)]
        assert a == b

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_loewner_monotone(self, seed):
        rng = np.random.default_rng(seed)
        c = DyCluConfig(d=3, sigma2=1.0)
        models = [UserModel.fresh(i, c) for i in range(3)]
        for m in models:
            for _ in range(int(rng.integers(0, 4))):
                x = rng.standard_normal(3)
                m.data.append(x / np.linalg.norm(x), float(rng.standard_normal()))
        x = rng.standard_normal(3)
        x /= np.linalg.norm(x)
        A, _, _ = aggregate_statistics(models, c)
        before = x @ np.linalg.solve(A, x)
        z = rng.standard_normal(3)
        models[int(rng.integers(0, 3))].data.append(z / np.linalg.norm(z), 0.0)
        A2, _, _ = aggregate_statistics(models, c)
        assert x @ np.linalg.solve(A2, x) <= before + 1e-12


def test_oracle_dyclu_short_run_labels():
    for step, chosen, reward, learner, ev in _run_dyclu(4, learner_cls=OracleDyClu):
        labels = {m.label for m in neighborhood_of(learner.pool, step.user)}
        assert labels == {step.true_param_index}
        assert isinstance(ev, StepEvent)
