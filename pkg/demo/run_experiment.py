import argparse
from pathlib import Path

from loguru import logger

from kataglyphis_reinforceip.experiments import RECIPES, SCALES, ExperimentRecipe, output_directory, run_recipe, write_result


# Parse command-line arguments
def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Run one scripted study and print its headline numbers.")
    parser.add_argument("name", choices=sorted(RECIPES), help="recipe to run")
    parser.add_argument("--scale", choices=SCALES, default="desk", help="reduced (desk) or full-size (paper) settings")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0], help="seeds to run one after another")
    parser.add_argument("--output-dir", type=Path, default=Path("runs"), help="base directory for the results")

    return parser.parse_args()


if __name__ == "__main__":

    args: argparse.Namespace = parse_args()
    logger.add("logs/run_experiment.log", rotation="500 MB")
    for seed in args.seeds:
        recipe = ExperimentRecipe(name=args.name, scale=args.scale, seed=seed, output_dir=args.output_dir)
        result = run_recipe(recipe)
        write_result(result, output_directory(recipe))
        if result.escape is not None:
            logger.info(
                "seed {}: gradient descent loss {:.4f}, REINFORCE loss {:.4f}",
                seed,
                result.escape.gd_final_loss,
                result.escape.rl_final_loss,
            )
        else:
            logger.info("seed {}: R^2 = {}, stop reason {}", seed, result.report.r_squared, result.report.stop_reason)
