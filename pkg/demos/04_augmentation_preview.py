"""Before/after look at the online augmentation pipeline on one phantom:
flip, rotation, elastic warp, nonlinear intensity shift, speckle and white
noise, and twenty occluding patches.

Run:  python demos/04_augmentation_preview.py
"""

from pathlib import Path

import numpy as np

from octseg.augment import AugmentConfig, augment_sample, draw_params, rng_for
from octseg.data import render_labels, save_sample
from octseg.phantom import PhantomConfig, generate_phantom

out_dir = Path(__file__).parent / "output" / "augment"
out_dir.mkdir(parents=True, exist_ok=True)

sample = generate_phantom(PhantomConfig(), 5, "glaucoma-like")
config = AugmentConfig()

save_sample(sample, out_dir / "before.png", out_dir / "before_labels.png")
render_labels(sample.labels).save(out_dir / "before_stain.png")

for epoch in range(3):
    key = (0, sample.id, epoch)
    params = draw_params(config, rng_for(*key), sample.image.shape)
    augmented = augment_sample(sample, config, key)
    save_sample(augmented, out_dir / f"after_e{epoch}.png",
                out_dir / f"after_e{epoch}_labels.png")
    render_labels(augmented.labels).save(out_dir / f"after_e{epoch}_stain.png")
    print(f"epoch {epoch}: hflip={params.do_hflip} "
          f"angle={params.angle_deg:+.2f} deg gamma={params.gamma:.2f} "
          f"{len(params.patches)} occluding patches "
          f"(factors {min(f for *_ , f in params.patches):.2f}"
          f"..{max(f for *_, f in params.patches):.2f})")

print(f"wrote previews to {out_dir}")
print("same key -> bitwise identical augmentation; geometric transforms "
      "move image and labels together")
