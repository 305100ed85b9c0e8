import numpy as np

from kataglyphis_reinforceip.forward_models import AutoConvModel, NoiseSpec, exact_solution, generate_observations
from kataglyphis_reinforceip.mdp import InitStateDist, RewardEnv, RewardSpec, rollout_blocks
from kataglyphis_reinforceip.policy import MlpPolicy
from kataglyphis_reinforceip.reinforce import estimate_gradient


def _setup(grid=16):
    model = AutoConvModel(grid)
    observations = generate_observations(model, exact_solution(grid), NoiseSpec(), 0)
    env = RewardEnv(RewardSpec(alpha=0.2, regularizer="boundary-abs"), model, observations)
    policy = MlpPolicy.initialize([grid, 32, 32, 2 * grid], 0)
    return policy, InitStateDist.fixed(np.full(grid, 0.01)), env


def test_rollout_benchmark(benchmark):
    policy, init, env = _setup()
    benchmark(rollout_blocks, policy, init, 10, 200, env, seed=0, update=0)


def test_gradient_benchmark(benchmark):
    policy, init, env = _setup()
    batch = rollout_blocks(policy, init, 10, 200, env, seed=0, update=0)
    benchmark(estimate_gradient, policy, batch)
