"""Image completion and resolution mapping on 8x8 synthetic shapes.

Uses the cached stacked-multihead run when available, otherwise trains a
tiny model (its completions will be blurry).  Images are printed as text.
"""

import numpy as np

from anp import ModelConfig, TrainConfig, make_rng, predict, train
from anp.experiments import is_complete, load_run
from anp.images import image_to_regression, make_grid, regression_to_pixels, synthetic_shapes, top_half_episode

SHADES = " .:-=+*#%@"


def show(values, height, width):
    v = np.clip(np.asarray(values).reshape(height, width) + 0.5, 0, 1)
    for row in v:
        print("".join(SHADES[int(round(p * (len(SHADES) - 1)))] * 2 for p in row))


if is_complete("image_stacked_multihead"):
    model = load_run("image_stacked_multihead").model
else:
    config = TrainConfig(model=ModelConfig(d=32, attention="multihead", heads=4, self_attention_layers=1, d_x=2),
                         dataset="synthetic", synthetic_count=200, iterations=300, learning_rate=1e-3,
                         seed=0, eval_interval=300, eval_episodes=8)
    model = train(config).state.model

image = synthetic_shapes(5, 8, seed=123).images[3]
print("original")
show(image_to_regression(image, np.arange(64))[1], 8, 8)

episode = top_half_episode(image)
(pred,) = predict(model.params, model.config, episode.x_context, episode.y_context, episode.x_target, 1, make_rng(0))
print("\ncompletion from the top half")
show(pred.mu.data, 8, 8)

x, y = image_to_regression(image, np.arange(64))
fine = make_grid(32, 32)
(pred,) = predict(model.params, model.config, x, y, fine, 1, make_rng(0))
print("\nthe full 8x8 image mapped to 32x32")
show(pred.mu.data, 32, 32)
idx, pixels = regression_to_pixels(fine, pred.mu.data, 32, 32)
print("\nupsampled intensities range", pixels.min(), "to", pixels.max())
