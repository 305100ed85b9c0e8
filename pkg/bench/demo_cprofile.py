import pstats
import cProfile
import dataclasses

from kataglyphis_reinforceip.config import build_run
from kataglyphis_reinforceip.experiments import ExperimentRecipe, recipe_config
from kataglyphis_reinforceip.reinforce import train


def main():
    config = recipe_config(ExperimentRecipe(name="autoconv-sim1", scale="desk"))
    config = dataclasses.replace(config, train=dataclasses.replace(config.train, max_updates=50))
    problem, train_config = build_run(config)
    train(
        problem.policy,
        problem.model,
        problem.observations,
        problem.reward_spec,
        problem.init_dist,
        train_config,
    )


if __name__ == "__main__":
    profiler = cProfile.Profile()
    profiler.enable()
    main()
    profiler.disable()
    stats = pstats.Stats(profiler)
    stats.sort_stats(pstats.SortKey.CUMULATIVE).print_stats(20)
