"""Tour of the layer vocabulary: dilated convolution, batch norm, ELU,
pooling, upsampling, channel concat and softmax.

Run:  python demos/02_building_blocks.py
"""

import numpy as np

import octseg.nn as nn
from octseg.autodiff import Variable

# Dilation widens the receptive field without extra parameters: convolving
# an impulse with an all-ones 3x3 kernel puts the taps d pixels apart.
impulse = np.zeros((1, 1, 11, 11), dtype=np.float32)
impulse[0, 0, 5, 5] = 1.0
ones_kernel = Variable(np.ones((1, 1, 3, 3), dtype=np.float32))
zero_bias = Variable(np.zeros(1, dtype=np.float32))

for d in (1, 2, 4):
    out = nn.conv2d(Variable(impulse), ones_kernel, zero_bias, dilation=d)
    taps = np.argwhere(out.value[0, 0] != 0) - 5
    spread = np.abs(taps).max()
    print(f"dilation {d}: 9 taps reaching +/-{spread} pixels")

# Batch norm in training mode standardizes each channel over the batch.
rng = np.random.default_rng(0)
x = rng.normal(loc=4.0, scale=3.0, size=(2, 3, 16, 16)).astype(np.float32)
bn = nn.BatchNorm2d(3)
y = bn(Variable(x), training=True)
print("after batch norm: channel means",
      np.round(y.value.mean(axis=(0, 2, 3)), 5),
      "vars", np.round(y.value.var(axis=(0, 2, 3)), 4))

# ELU keeps positives and bends negatives toward -1.
print("elu(-2, -1, 0, 1):",
      nn.elu(Variable(np.array([-2.0, -1.0, 0.0, 1.0]))).value)

# Pooling halves the grid; nearest upsampling restores it.
pooled, _ = nn.maxpool2x2(Variable(x))
restored = nn.upsample2x2(pooled)
print("pool/upsample shapes:", x.shape, "->", pooled.value.shape,
      "->", restored.value.shape)

# Channel softmax turns logits into per-pixel probabilities.
logits = Variable(rng.normal(size=(1, 8, 4, 4)).astype(np.float32))
probs = nn.softmax_channels(logits)
print("softmax channel sums:",
      np.unique(np.round(probs.value.sum(axis=1), 6)))
