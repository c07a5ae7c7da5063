"""Thompson-sampling minimisation of GP test functions with a (quickly) trained ANP.

If the acceptance cache holds the full multihead run it is used; otherwise a
small model is trained for a few hundred iterations first.
"""

from anp import ModelConfig, TrainConfig, make_rng, train
from anp.experiments import is_complete, load_run
from anp.gp import FIXED
from anp.metrics import gp_thompson_bo, mean_stderr, sample_objective, thompson_bo

if is_complete("gp_fixed_multihead"):
    model = load_run("gp_fixed_multihead").model
    print("using the cached 30000-iteration multihead ANP")
else:
    config = TrainConfig(model=ModelConfig(d=32, attention="multihead", heads=4), dataset="gp_fixed",
                         iterations=400, learning_rate=1e-3, seed=0, eval_interval=400, eval_episodes=8)
    model = train(config).state.model
    print("trained a small multihead ANP for 400 iterations")

fn_rng, act_rng = make_rng(7), make_rng(7, 1)
finals = {"ANP": [], "GP": []}
for f in range(10):
    grid, values = sample_objective(FIXED, fn_rng)
    anp = thompson_bo(model, grid, values, 20, act_rng)
    gp = gp_thompson_bo(FIXED, grid, values, 20, act_rng)
    finals["ANP"].append(anp.simple_regret[-1])
    finals["GP"].append(gp.simple_regret[-1])
    print(f"function {f}: true min {values.min():6.3f}   ANP regret {anp.simple_regret[-1]:.4f}"
          f"   GP regret {gp.simple_regret[-1]:.4f}")

for k, v in finals.items():
    m, se = mean_stderr(v)
    print(f"{k}: mean final simple regret {m:.4f} +- {se:.4f}")
