"""Small end-to-end study: generate a phantom dataset, train with online
augmentation and the plateau-halving schedule, then report per-class dice,
specificity and sensitivity by group on held-out phantoms.

Runs at 96x128 with a small dataset so it finishes in a few minutes; the
full-scale version (40 train / 10 val / 20 test at 248x384) is the
desk-scale proxy criterion in the acceptance suite.

Run:  python demos/06_train_and_evaluate.py
"""

from pathlib import Path

from octseg.augment import AugmentConfig
from octseg.checkpoint import load_checkpoint
from octseg.data import (CLASS_NAMES, GROUPS, QUANTIFIED_CLASSES,
                         split_dataset)
from octseg.metrics import evaluate_dataset
from octseg.model import DilatedResidualUNet
from octseg.phantom import PhantomConfig, generate_phantom
from octseg.train import TrainConfig, train

out_dir = Path(__file__).parent / "output" / "study"
out_dir.mkdir(parents=True, exist_ok=True)

config = PhantomConfig.for_size(96, 128)
samples = [generate_phantom(config, 300 + i, GROUPS[i % 2])
           for i in range(26)]
train_set, val_set, test_set = split_dataset(samples, 12, 4, 10, seed=0)
print(f"{len(train_set)} train / {len(val_set)} val / {len(test_set)} test")

augment = AugmentConfig(occlusion_size=(24, 8), elastic_alpha=6,
                        elastic_sigma=5)
trainer = TrainConfig(epochs=30, seed=0, augment=augment,
                      checkpoint_dir=str(out_dir / "run"))
model = DilatedResidualUNet(seed=0)
result = train(model, train_set, val_set, trainer)
print(f"stopped after {result.epochs_run} epochs; best val loss "
      f"{result.best_val:.4f} at epoch {result.best_epoch}")

best = load_checkpoint(result.best_checkpoint)
report = evaluate_dataset(best, test_set, QUANTIFIED_CLASSES, CLASS_NAMES)
print()
print(report.to_table())
print(f"mean test dice over the four quantified classes: "
      f"{report.mean_dice_over_classes():.4f}")
report.save_json(out_dir / "report.json")
print(f"machine-readable report: {out_dir / 'report.json'}")
