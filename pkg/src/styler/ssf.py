"""Structural Selective Fusion: channel-attention selection of the content
path plus a convolutional refinement of the merged features.

The attention vector is sigmoid(MLP(global average pool)) over the
concatenated features, one weight per content channel; the module output is
the gated content features concatenated with the refined merge. The
concat-only variant (attention forced to all-ones) is the ablation
baseline.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import InvalidInputError


def mlp_hidden_width(c_in):
    """Squeeze-excitation style reduction ratio 8, floored at 4."""
    return max(4, c_in // 8)


class SsfModule(nn.Module):
    def __init__(self, c_cs, c_r, c_merge):
        super().__init__()
        self.c_cs = c_cs
        self.c_r = c_r
        self.c_merge = c_merge
        hidden = mlp_hidden_width(c_cs + c_r)
        self.mlp1 = nn.Linear(c_cs + c_r, hidden)
        self.mlp2 = nn.Linear(hidden, c_cs)
        # zero padding: the refine conv must stay defined on 1x1 features
        self.refine = nn.Conv2d(c_cs + c_r, c_merge, 3, stride=1, padding=1)

    def attention(self, f_csr):
        pooled = f_csr.mean(dim=(-2, -1))
        return torch.sigmoid(self.mlp2(torch.relu(self.mlp1(pooled))))

    def forward(self, f_cs, f_r, attention_ones=False):
        batched = f_cs.dim() == 4
        if not batched:
            f_cs, f_r = f_cs.unsqueeze(0), f_r.unsqueeze(0)
        if f_cs.shape[-2:] != f_r.shape[-2:]:
            raise InvalidInputError(
                f"ssf: spatial mismatch between content {tuple(f_cs.shape)} "
                f"and reconstructed {tuple(f_r.shape)}"
            )
        if f_cs.shape[1] != self.c_cs or f_r.shape[1] != self.c_r:
            raise InvalidInputError(
                f"ssf: channel mismatch, got ({f_cs.shape[1]}, {f_r.shape[1]}), "
                f"module expects ({self.c_cs}, {self.c_r})"
            )
        f_csr = torch.cat([f_cs, f_r], dim=1)
        if attention_ones:
            gated = f_cs
        else:
            m_cs = self.attention(f_csr)
            gated = m_cs[:, :, None, None] * f_cs
        refined = torch.relu(self.refine(f_csr))
        out = torch.cat([gated, refined], dim=1)
        return out if batched else out.squeeze(0)


def ssf_forward(params, f_cs, f_r):
    """Attention-gated fusion; output has c_cs + c_merge channels."""
    return params(f_cs, f_r)


def concat_fusion(params, f_cs, f_r):
    """Direct concatenation baseline: identical to ssf_forward with the
    attention map forced to all-ones."""
    return params(f_cs, f_r, attention_ones=True)
