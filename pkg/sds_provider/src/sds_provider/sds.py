"""Depth-conditioned SDS refinement of reference images.

The update follows the score-distillation form: add noise at a sampled
timestep, predict it with the depth-conditioned UNet under the text prompt,
and step the image along the (noise - predicted noise) residual. The
weighting w(t) is constant 1 and guidance scale / timestep range are flags
with community defaults; none of these are prescribed values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdsSettings:
    weights: str = "stabilityai/stable-diffusion-2-depth"
    device: str = "cuda"
    guidance_scale: float = 7.5
    # fraction of the noise schedule sampled per update
    timestep_min: float = 0.02
    timestep_max: float = 0.75
    step_size: float = 0.05
    seed: int = 0


class SdsRefiner:
    """Holds the diffusion pipeline and the per-view reference state."""

    def __init__(self, settings: SdsSettings, finetune_dir: str | None = None):
        self.settings = settings
        try:
            import torch
            from diffusers import StableDiffusionDepth2ImgPipeline
        except ImportError as exc:
            raise BackendError(
                f"diffusion backend unavailable ({exc}); install the 'diffusion' "
                f"extra or run with --dry-run") from exc
        self.torch = torch
        weights = settings.weights
        if finetune_dir and Path(finetune_dir).exists():
            weights = finetune_dir
            log.info("loading fine-tuned weights from %s", finetune_dir)
        try:
            self.pipe = StableDiffusionDepth2ImgPipeline.from_pretrained(
                weights, torch_dtype=torch.float16 if settings.device == "cuda" else torch.float32)
            self.pipe.to(settings.device)
        except Exception as exc:
            raise BackendError(f"cannot load weights {weights!r}: {exc}") from exc
        self.generator = torch.Generator(device=settings.device).manual_seed(settings.seed)
        self._references: dict[str, np.ndarray] = {}

    def _encode(self, image: np.ndarray):
        torch = self.torch
        t = torch.from_numpy((image * 2.0 - 1.0).astype(np.float32))
        t = t.permute(2, 0, 1)[None].to(self.pipe.vae.device, self.pipe.vae.dtype)
        latents = self.pipe.vae.encode(t).latent_dist.sample(self.generator)
        return latents * self.pipe.vae.config.scaling_factor

    def _decode(self, latents) -> np.ndarray:
        img = self.pipe.vae.decode(latents / self.pipe.vae.config.scaling_factor).sample
        img = (img / 2 + 0.5).clamp(0, 1)[0].permute(1, 2, 0)
        return img.float().cpu().numpy().astype(np.float64)

    def _depth_latent(self, depth: np.ndarray, latents):
        torch = self.torch
        # renderer depth is 0 at background and grows with distance; the
        # depth2img conditioning expects inverse depth, near = bright
        inv = np.where(depth > 0, 1.0 - depth / max(depth.max(), 1e-9), 0.0)
        d = torch.from_numpy(inv.astype(np.float32))[None, None]
        d = torch.nn.functional.interpolate(d, size=latents.shape[-2:], mode="bicubic")
        d = d.to(latents.device, latents.dtype)
        return 2.0 * d - 1.0

    def _sds_steps(self, image: np.ndarray, depth: np.ndarray, prompt: str,
                   steps: int) -> np.ndarray:
        torch = self.torch
        s = self.settings
        latents = self._encode(image)
        cond, uncond = self.pipe.encode_prompt(
            prompt, s.device, 1, True, negative_prompt="")
        depth_lat = self._depth_latent(depth, latents)
        sched = self.pipe.scheduler
        n_train = sched.config.num_train_timesteps
        with torch.no_grad():
            for _ in range(steps):
                tstep = int(torch.randint(int(s.timestep_min * n_train),
                                          int(s.timestep_max * n_train), (1,),
                                          generator=self.generator).item())
                t = torch.tensor([tstep], device=latents.device)
                noise = torch.randn(latents.shape, generator=self.generator,
                                    device=latents.device, dtype=latents.dtype)
                noisy = sched.add_noise(latents, noise, t)
                inp = torch.cat([torch.cat([noisy, depth_lat], dim=1)] * 2)
                emb = torch.cat([uncond, cond])
                pred = self.pipe.unet(inp, torch.cat([t, t]), encoder_hidden_states=emb).sample
                pred_u, pred_c = pred.chunk(2)
                pred = pred_u + s.guidance_scale * (pred_c - pred_u)
                # w(t) = 1: step straight along the denoising residual
                latents = latents - s.step_size * (pred - noise)
        return np.clip(self._decode(latents), 0.0, 1.0)

    def init_reference(self, view_id: str, rgb: np.ndarray, depth: np.ndarray,
                       prompt: str, steps: int) -> np.ndarray:
        ref = self._sds_steps(rgb, depth, prompt, steps)
        self._references[view_id] = ref
        return ref

    def refine_reference(self, view_id: str, rgb: np.ndarray, depth: np.ndarray,
                         prompt: str, steps: int) -> np.ndarray:
        # refinement continues from the stored reference, pulled toward the
        # current render before the SDS steps
        prev = self._references.get(view_id, rgb)
        blended = 0.5 * prev + 0.5 * rgb
        ref = self._sds_steps(blended, depth, prompt, steps)
        self._references[view_id] = ref
        return ref
