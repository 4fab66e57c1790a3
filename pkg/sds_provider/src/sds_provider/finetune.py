"""DreamBooth-style adaptation on a handful of cross-section images.

Runs the standard subject-driven fine-tune with prior preservation on the
depth pipeline's UNet and saves the adapted pipeline to the output directory,
where serve() picks it up. Quality is not desk-verifiable; the contract here
is input validation plus a loadable output directory.
"""
from __future__ import annotations

import logging
from pathlib import Path

from .prompts import PromptMap
from .sds import BackendError, SdsSettings

log = logging.getLogger(__name__)

MIN_IMAGES = 1
MAX_IMAGES = 6


class FinetuneError(ValueError):
    pass


def collect_images(paths: list[str]) -> list[Path]:
    files = [Path(p) for p in paths]
    missing = [str(p) for p in files if not p.exists()]
    if missing:
        raise FinetuneError(f"training images not found: {missing}")
    if not MIN_IMAGES <= len(files) <= MAX_IMAGES:
        raise FinetuneError(
            f"need between {MIN_IMAGES} and {MAX_IMAGES} images, got {len(files)}")
    return files


def finetune(image_paths: list[str], prompts: PromptMap, output_dir: str,
             settings: SdsSettings, instance_token: str = "sks",
             class_prompt: str = "a cross-sectional view of a fruit",
             train_steps: int = 400, prior_weight: float = 1.0) -> Path:
    files = collect_images(image_paths)
    out = Path(output_dir)
    try:
        import torch
        import torch.nn.functional as F
        from diffusers import StableDiffusionDepth2ImgPipeline
        from PIL import Image
    except ImportError as exc:
        raise BackendError(
            f"diffusion backend unavailable ({exc}); fine-tuning needs the "
            f"'diffusion' extra") from exc

    device = settings.device
    pipe = StableDiffusionDepth2ImgPipeline.from_pretrained(
        settings.weights,
        torch_dtype=torch.float32)
    pipe.to(device)
    vae, unet, sched = pipe.vae, pipe.unet, pipe.scheduler
    vae.requires_grad_(False)
    pipe.text_encoder.requires_grad_(False)
    unet.train()

    def latents_of(img: Image.Image):
        import numpy as np
        arr = np.asarray(img.convert("RGB").resize((512, 512)), dtype="float32") / 127.5 - 1.0
        t = torch.from_numpy(arr).permute(2, 0, 1)[None].to(device)
        return vae.encode(t).latent_dist.sample() * vae.config.scaling_factor

    instance_prompt = f"a cross-sectional view of {instance_token}"
    inst = [latents_of(Image.open(f)) for f in files]
    # prior-preservation targets sampled from the frozen model's class prompt
    with torch.no_grad():
        prior_imgs = [pipe(prompt=class_prompt, image=Image.open(files[0]).convert("RGB"),
                           strength=0.9).images[0] for _ in range(len(files))]
    prior = [latents_of(img) for img in prior_imgs]
    cond_i, _ = pipe.encode_prompt(instance_prompt, device, 1, False)
    cond_c, _ = pipe.encode_prompt(class_prompt, device, 1, False)

    opt = torch.optim.AdamW(unet.parameters(), lr=5e-6)
    gen = torch.Generator(device=device).manual_seed(settings.seed)
    depth_lat = torch.zeros((1, 1, inst[0].shape[-2], inst[0].shape[-1]),
                            device=device, dtype=inst[0].dtype)
    for step in range(train_steps):
        li = inst[step % len(inst)]
        lc = prior[step % len(prior)]
        loss = 0.0
        for lat, emb, weight in ((li, cond_i, 1.0), (lc, cond_c, prior_weight)):
            t = torch.randint(0, sched.config.num_train_timesteps, (1,),
                              generator=gen, device=device)
            noise = torch.randn(lat.shape, generator=gen, device=device, dtype=lat.dtype)
            noisy = sched.add_noise(lat, noise, t)
            pred = unet(torch.cat([noisy, depth_lat], dim=1), t,
                        encoder_hidden_states=emb).sample
            loss = loss + weight * F.mse_loss(pred, noise)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0:
            log.info("finetune step %d loss %.4f", step, float(loss))

    unet.eval()
    out.mkdir(parents=True, exist_ok=True)
    pipe.save_pretrained(out)
    return out
