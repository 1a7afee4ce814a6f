from dataclasses import replace

import numpy as np
import pytest

from dynameta import dyna
from dynameta.dyna import RunConfig, evaluate_policy, phase_quality, run_training
from dynameta.envs import EnvKind, make_env
from dynameta.meta import ScriptedController, StaticController


def tiny_config(seed=0, total_steps=600, phase_length=200, cap=50, **kwargs):
    env_cfg = replace(make_env(EnvKind.MOUNTAIN_CAR, "original"), episode_cap=cap)
    defaults = dict(
        final_eval_episodes=3, curve_eval_episodes=2, model_epoch_cap=3,
    )
    defaults.update(kwargs)
    return RunConfig(env=env_cfg, total_steps=total_steps,
                     phase_length=phase_length, seed=seed, **defaults)


class TestRunConfig:
    def test_paper_scale_horizons(self):
        mc = RunConfig(env=make_env(EnvKind.MOUNTAIN_CAR, "original"),
                       total_steps=150_000)
        assert mc.horizon == 15
        acro = RunConfig(env=make_env(EnvKind.ACROBOT, "original"),
                         total_steps=120_000)
        assert acro.horizon == 12

    def test_budget_must_align_with_phases(self):
        with pytest.raises(ValueError):
            RunConfig(env=make_env(EnvKind.MOUNTAIN_CAR, "original"),
                      total_steps=150_001)


class TestPhaseQuality:
    def test_mean_of_returns(self):
        assert phase_quality([-150.0, -170.0], previous=0.0) == -160.0

    def test_empty_carries_previous(self):
        assert phase_quality([], previous=-180.0) == -180.0

    def test_single_episode(self):
        assert phase_quality([-200.0], previous=0.0) == -200.0


class TestEvaluatePolicy:
    def test_hopeless_policy_scores_negative_cap(self):
        env_cfg = replace(make_env(EnvKind.MOUNTAIN_CAR, "original"), episode_cap=40)
        score = evaluate_policy(env_cfg, lambda obs: 1, 5, np.random.default_rng(0))
        assert score == -40.0

    def test_single_episode_mean(self):
        env_cfg = replace(make_env(EnvKind.MOUNTAIN_CAR, "original"), episode_cap=25)
        rng_a = np.random.default_rng(3)
        rng_b = np.random.default_rng(3)
        one = evaluate_policy(env_cfg, lambda obs: 2, 1, rng_a)
        again = evaluate_policy(env_cfg, lambda obs: 2, 1, rng_b)
        assert one == again

    def test_requires_at_least_one_episode(self):
        env_cfg = make_env(EnvKind.MOUNTAIN_CAR, "original")
        with pytest.raises(ValueError):
            evaluate_policy(env_cfg, lambda obs: 0, 0, np.random.default_rng(0))


class TestRunTraining:
    def test_phase_structure_and_rollout_counts(self):
        cfg = tiny_config()
        result = run_training(cfg, StaticController(16))
        assert len(result.phases) == 3
        assert result.k_trace == [16, 16, 16]
        for p in result.phases:
            assert p.rollouts == cfg.phase_length // 16
            assert p.synthetic_steps <= cfg.phase_length
            assert p.episodes > 0
            assert -cfg.env.episode_cap <= p.quality <= 0.0

    def test_k_zero_reduces_to_model_free(self):
        result = run_training(tiny_config(), StaticController(0))
        for p in result.phases:
            assert p.rollouts == 0
            assert p.synthetic_steps == 0
        assert result.k_trace == [0, 0, 0]

    def test_floor_division_of_rollouts(self):
        result = run_training(tiny_config(), StaticController(7))
        for p in result.phases:
            assert p.rollouts == 200 // 7  # 28

    def test_meta_transition_count_and_terminal_flag(self):
        result = run_training(tiny_config(), ScriptedController([4, 2, 8]))
        assert len(result.meta_transitions) == 3
        assert [t.terminal for t in result.meta_transitions] == [False, False, True]
        # heuristic controllers carry no meta action
        assert all(t.action is None for t in result.meta_transitions)

    def test_telescoping_sum(self):
        result = run_training(tiny_config(seed=5), ScriptedController([8, 0, 16]))
        total = sum(t.reward for t in result.meta_transitions)
        assert total == pytest.approx(result.final_score - result.phases[0].quality,
                                      abs=1e-9)

    def test_deterministic_per_seed(self):
        a = run_training(tiny_config(seed=9), StaticController(4))
        b = run_training(tiny_config(seed=9), StaticController(4))
        assert a.to_json() == b.to_json()

    def test_seed_changes_trajectories(self):
        a = run_training(tiny_config(seed=1), StaticController(4))
        b = run_training(tiny_config(seed=2), StaticController(4))
        assert a.to_json() != b.to_json()

    def test_observation_features_in_range(self):
        result = run_training(tiny_config(seed=3), ScriptedController([32, 0, 1]))
        for tr in result.meta_transitions:
            for obs in (tr.obs, tr.next_obs):
                assert 0.0 <= obs.remaining <= 1.0
                assert 0.0 <= obs.k_norm <= 1.0
                assert -1.0 <= obs.quality <= 0.0
                assert np.isfinite(obs.to_vector()).all()

    def test_k_before_tracks_previous_decision(self):
        result = run_training(tiny_config(), ScriptedController([4, 2, 8]))
        assert [p.k_before for p in result.phases] == [0, 4, 2]
        assert [p.k for p in result.phases] == [4, 2, 8]

    def test_wall_ms_zero_without_timing(self):
        result = run_training(tiny_config(), StaticController(2))
        assert all(p.wall_ms == 0 for p in result.phases)

    def test_wall_ms_recorded_with_timing(self):
        result = run_training(tiny_config(record_timing=True), StaticController(2))
        assert any(p.wall_ms > 0 for p in result.phases)

    def test_small_buffer_skips_model(self):
        # min_fit_size above the phase budget: no model, no rollouts
        cfg = tiny_config(total_steps=120, phase_length=40, min_fit_size=1000)
        result = run_training(cfg, StaticController(8))
        for p in result.phases:
            assert p.fit is None
            assert p.rollouts == 0
            assert p.return_error == 0.0 and p.length_error == 0.0

    def test_controller_out_of_range_rejected(self):
        class Bad(ScriptedController):
            def decide(self, ctx):
                return 99

        with pytest.raises(ValueError):
            run_training(tiny_config(), Bad([1]))

    def test_result_json_shape(self):
        result = run_training(tiny_config(), StaticController(1))
        doc = result.to_json()
        assert doc["kind"] == "run_result"
        assert doc["schema_version"] == 1
        assert doc["label"] == "K1"
        assert len(doc["phases"]) == 3
        assert len(doc["meta_transitions"]) == 3
        assert doc["env"]["kind"] == "mountain_car"
        assert set(doc["phases"][0]) >= {
            "phase", "k", "k_before", "quality", "return_error",
            "length_error", "eval_score", "wall_ms",
        }
