import numpy as np
from line_profiler import LineProfiler

from kataglyphis_reinforceip.forward_models import AutoConvModel, NoiseSpec, exact_solution, generate_observations
from kataglyphis_reinforceip.mdp import InitStateDist, RewardEnv, RewardSpec, rollout_batch
from kataglyphis_reinforceip.policy import MlpPolicy
from kataglyphis_reinforceip.reinforce import estimate_gradient


def profile_funcs():
    profiler = LineProfiler()
    model = AutoConvModel(16)
    observations = generate_observations(model, exact_solution(16), NoiseSpec(), 0)
    env = RewardEnv(RewardSpec(alpha=0.2, regularizer="boundary-abs"), model, observations)
    policy = MlpPolicy.initialize([16, 32, 32, 32], 0)
    init = InitStateDist.fixed(np.full(16, 0.01))
    rng = np.random.default_rng(0)

    profiler.add_function(rollout_batch)
    profiler.add_function(MlpPolicy.weighted_score)
    profiler.add_function(MlpPolicy._backward)
    profiler.add_function(AutoConvModel.evaluate_batch)

    # Warm-up
    estimate_gradient(policy, rollout_batch(policy, init, 10, 200, env, rng))

    profiler.enable()
    for _ in range(10):
        estimate_gradient(policy, rollout_batch(policy, init, 10, 200, env, rng))
    profiler.disable()

    profiler.print_stats()


if __name__ == "__main__":
    profile_funcs()
