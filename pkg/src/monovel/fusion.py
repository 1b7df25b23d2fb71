"""Multi-stream attention fusion of context, motion and spatial features.

Per vehicle the pooled RoI cells form a sequence of ``L`` tokens.  The query
side mixes all three streams, keys and values come from the context tokens
only:

    Q = W_Q [c_l | m_l | s]        K = W_K c_l        V = W_V c_l
    S = softmax(Q K^T)             F = S V
    x = (s + W_F mean_l F) | f_m

where ``s`` is the spatial feature broadcast to every token.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ConfigurationError

SHORTCUTS = ("f_sp", "context")


class MSAF(nn.Module):
    def __init__(self, context_token_dim, motion_token_dim, spatial_dim, motion_dim,
                 d_q=64, d_v=64, shortcut="f_sp", context_dim=None, scaled_attention=False):
        super().__init__()
        if min(context_token_dim, motion_token_dim, spatial_dim, motion_dim, d_q, d_v) < 1:
            raise ConfigurationError("all MSAF dimensions must be >= 1")
        if shortcut not in SHORTCUTS:
            raise ConfigurationError(f"shortcut must be one of {SHORTCUTS}, got {shortcut!r}")
        if shortcut == "context" and context_dim is None:
            raise ConfigurationError("shortcut='context' needs context_dim")
        self.shortcut = shortcut
        self.scaled_attention = scaled_attention
        self.dims = (context_token_dim, motion_token_dim, spatial_dim)
        self.W_Q = nn.Linear(context_token_dim + motion_token_dim + spatial_dim, d_q)
        self.W_K = nn.Linear(context_token_dim, d_q)
        self.W_V = nn.Linear(context_token_dim, d_v)
        target = spatial_dim if shortcut == "f_sp" else context_dim
        self.W_F = nn.Linear(d_v, target)
        self.out_dim = target + motion_dim

    def _check(self, c_tok, m_tok, f_sp):
        got = (c_tok.shape[-1], m_tok.shape[-1], f_sp.shape[-1])
        if got != self.dims:
            raise ConfigurationError(f"feature dims {got} do not match MSAF dims {self.dims}")

    def attention_map(self, c_tok, m_tok, f_sp):
        """``S`` of shape K x L x L; each row sums to one."""
        self._check(c_tok, m_tok, f_sp)
        L = c_tok.shape[1]
        s = f_sp[:, None, :].expand(-1, L, -1)
        Q = self.W_Q(torch.cat([c_tok, m_tok, s], dim=-1))
        K = self.W_K(c_tok)
        logits = Q @ K.transpose(1, 2)
        if self.scaled_attention:
            logits = logits / math.sqrt(Q.shape[-1])
        return torch.softmax(logits, dim=-1)

    def forward(self, c_tok, m_tok, f_sp, f_m, f_c=None):
        S = self.attention_map(c_tok, m_tok, f_sp)
        F_att = S @ self.W_V(c_tok)
        base = f_sp if self.shortcut == "f_sp" else f_c
        return torch.cat([base + self.W_F(F_att.mean(dim=1)), f_m], dim=-1)


def msaf_fuse(block: MSAF, c_tok, m_tok, f_sp, f_m, f_c=None):
    """Functional alias for ``block(...)``; accepts unbatched inputs."""
    squeeze = c_tok.dim() == 2
    if squeeze:
        c_tok, m_tok, f_sp, f_m = c_tok[None], m_tok[None], f_sp[None], f_m[None]
        f_c = None if f_c is None else f_c[None]
    x = block(c_tok, m_tok, f_sp, f_m, f_c)
    return x[0] if squeeze else x


def attention_map(block: MSAF, c_tok, m_tok, f_sp):
    squeeze = c_tok.dim() == 2
    if squeeze:
        c_tok, m_tok, f_sp = c_tok[None], m_tok[None], f_sp[None]
    S = block.attention_map(c_tok, m_tok, f_sp)
    return S[0] if squeeze else S
