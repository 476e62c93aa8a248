"""Full video-to-music model: long-short-term fusion feeding the token decoder."""

from __future__ import annotations

import os
import typing as tp
from dataclasses import asdict

import numpy as np
import torch
from torch import nn

from .archive import load_archive, save_archive
from .decoder import DecoderConfig, SeedLike, TokenDecoder
from .errors import ConfigError
from .fusion import FusionConfig, LSTFusion
from .tokens import TokenMatrix


class MusicModel(nn.Module):
    def __init__(self, fusion: tp.Optional[FusionConfig] = None, decoder: tp.Optional[DecoderConfig] = None):
        super().__init__()
        fusion = fusion or FusionConfig()
        decoder = decoder or DecoderConfig(dim=fusion.out_dim)
        if fusion.out_dim != decoder.dim:
            raise ConfigError(f"fusion projects to {fusion.out_dim} but decoder width is {decoder.dim}")
        self.fusion = LSTFusion(fusion)
        self.decoder = TokenDecoder(decoder)

    def condition(self, long_selected, short_selected, long_refined=None) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        long_selected = torch.as_tensor(np.asarray(long_selected) if not torch.is_tensor(long_selected)
                                        else long_selected, dtype=dtype)
        short_selected = torch.as_tensor(np.asarray(short_selected) if not torch.is_tensor(short_selected)
                                         else short_selected, dtype=dtype)
        return self.fusion(long_selected, short_selected, long_refined=long_refined)

    def forward(self, long_selected, short_selected, tokens) -> torch.Tensor:
        """Teacher-forced logits ``B x K x S x (V+1)``."""
        z = self.condition(long_selected, short_selected)
        if isinstance(tokens, TokenMatrix):
            tokens = tokens.tokens
        return self.decoder(torch.as_tensor(tokens), z)

    def generate(self, z: torch.Tensor, n_steps: int, top_k: int = 250, temperature: float = 1.0,
                 seed: SeedLike = None, prompt: tp.Optional[TokenMatrix] = None) -> TokenMatrix:
        return self.decoder.generate(z, n_steps, top_k=top_k, temperature=temperature, seed=seed, prompt=prompt)

    def configs(self) -> dict:
        return {"fusion": asdict(self.fusion.config), "decoder": asdict(self.decoder.config)}

    def arrays(self, prefix: str = "") -> tp.Dict[str, np.ndarray]:
        return {prefix + name: t.detach().cpu().numpy() for name, t in self.state_dict().items()}

    def save(self, path: tp.Union[str, os.PathLike], extra_arrays: tp.Optional[dict] = None,
             meta: tp.Optional[dict] = None) -> None:
        arrays = self.arrays("model/")
        arrays.update(extra_arrays or {})
        save_archive(path, arrays, {"configs": self.configs(), **(meta or {})})

    @classmethod
    def load(cls, path: tp.Union[str, os.PathLike], use_ema: bool = False) -> "MusicModel":
        arrays, meta = load_archive(path)
        cfg = meta["configs"]
        model = cls(FusionConfig(**cfg["fusion"]), DecoderConfig(**cfg["decoder"]))
        prefix = "ema/" if use_ema and any(k.startswith("ema/") for k in arrays) else "model/"
        state = {k[len(prefix):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith(prefix)}
        # EMA shadows cover parameters only; buffers come from the live weights
        if prefix == "ema/":
            live = {k[len("model/"):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith("model/")}
            state = {**live, **state}
        model.load_state_dict(state)
        return model
