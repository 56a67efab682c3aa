"""Capacity check: drive the network onto a single phantom and watch the
soft-Jaccard loss collapse, then render the prediction next to the truth.

Uses a 96x128 phantom so the demo finishes in about a minute; the full
248x384 version is the overfit-sanity criterion in the acceptance suite.

Run:  python demos/05_overfit_one_phantom.py
"""

from pathlib import Path

import numpy as np

from octseg.augment import AugmentConfig
from octseg.data import render_labels
from octseg.model import DilatedResidualUNet, predict_classes
from octseg.phantom import PhantomConfig, generate_phantom
from octseg.train import TrainConfig, train

out_dir = Path(__file__).parent / "output" / "overfit"
out_dir.mkdir(parents=True, exist_ok=True)

sample = generate_phantom(PhantomConfig.for_size(96, 128), 3, "healthy-like")
model = DilatedResidualUNet(seed=0)
config = TrainConfig(epochs=120, seed=0, lr_floor=0.0,
                     augment=AugmentConfig.disabled(),
                     checkpoint_dir=str(out_dir / "run"))

result = train(model, [sample], [sample], config)
for line in result.history[::20] + result.history[-1:]:
    epoch, lr, train_loss, val_loss, _ = line.split("\t")
    print(f"epoch {epoch:>3}: lr {float(lr):.4g}  "
          f"train loss {float(train_loss):.4f}")

pred = predict_classes(model.forward(sample.image[None, None]))[0]
accuracy = (pred == sample.labels).mean()
print(f"pixel accuracy on the training phantom: {accuracy:.4f}")

render_labels(sample.labels).save(out_dir / "truth_stain.png")
render_labels(pred).save(out_dir / "predicted_stain.png")
print(f"renders written to {out_dir}")
