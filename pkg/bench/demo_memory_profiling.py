from memory_profiler import profile

from kataglyphis_reinforceip.experiments import ExperimentRecipe, run_recipe


@profile
def test_memory_profile():
    run_recipe(
        ExperimentRecipe(
            name="autoconv-sim3",
            overrides={"max_updates": 20, "eval_trajectories": 2000},
        )
    )


test_memory_profile()
