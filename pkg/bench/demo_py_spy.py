from loguru import logger

from kataglyphis_reinforceip.experiments import ExperimentRecipe, run_recipe


def main(seed):
    result = run_recipe(
        ExperimentRecipe(name="linear-example2", seed=seed, overrides={"max_updates": 2000})
    )
    logger.debug("Relative error to Tikhonov: {}", result.report.extras["relative_error"])


if __name__ == "__main__":
    # attach with: py-spy record -o profile.svg -- python bench/demo_py_spy.py
    for i in range(1, 11):
        logger.debug("Run {}/10 starting.", i)
        main(i)
        logger.debug("Run {}/10 finished.", i)
