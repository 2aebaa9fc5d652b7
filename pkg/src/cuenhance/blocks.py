"""Shared convolutional building blocks for the encoders."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class SpatialNorm(nn.Module):
    """Stateless instance normalization with a learnable affine.

    Variance is epsilon-floored, so a 1x1 feature map normalizes to exactly
    zero (the floor limit) instead of raising; the surrounding residual
    paths keep the signal alive in that degenerate case.
    """

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        xh = (x - mu) / torch.sqrt(var + self.eps)
        return xh * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class DownStage(nn.Module):
    """Stride-2 residual stage: two 3x3 convs with a 1x1 strided skip."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1, stride=2)
        self.norm1 = SpatialNorm(cout)
        self.norm2 = SpatialNorm(cout)

    def forward(self, x):
        y = F.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        y = self.norm2(self.conv2(y))
        return F.leaky_relu(y + self.skip(x), 0.2)
