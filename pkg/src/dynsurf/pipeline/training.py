"""The four training loops: both autoencoders, then both latent diffusions.

Everything trains in float32 with per-step rng streams derived from
(seed, loop id, step), so a resumed run replays the exact step sequence a
straight run would have produced. Train-state checkpoints carry parameters,
Adam moments, and the step counter; loss CSVs are append-only.
"""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..checkpoint import (CheckpointError, load_checkpoint, restore_params,
                          save_checkpoint)
from ..deform_vae import DeformVae, deform_vae_loss
from ..diffusion import (DeformConditionEncoder, DeformDenoiser,
                         ShapeConditionEncoder, ShapeDenoiser, diffusion_loss)
from ..optim import Adam
from ..shape_vae import ShapeVae, shape_vae_loss
from ..tensor import NumericError, Tensor, no_grad
from .config import RunConfig, require_checkpoints, require_dataset
from .data import (build_mesh_bank, build_sequence_bank, deform_training_batch,
                   shape_training_batch)
from .synth import load_manifest, load_sequence_meshes, sequences_in_split

SHAPE_VAE_CKPT = "shape_vae.ckpt"
DEFORM_VAE_CKPT = "deform_vae.ckpt"
SHAPE_DIFF_CKPT = "shape_diff.ckpt"
DEFORM_DIFF_CKPT = "deform_diff.ckpt"
SHAPE_LATENT_CACHE = "cache/shape_latents.npz"
DEFORM_LATENT_CACHE = "cache/deform_latents.npz"

# per-loop stream ids keep the rng draws of the four loops disjoint
_STREAM = {"shape_vae": 11, "deform_vae": 12, "shape_diff": 13, "deform_diff": 14}


@contextmanager
def float32_training():
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float32)
    try:
        yield
    finally:
        T.set_default_dtype(prev)


def bank_seed(cfg: RunConfig, record: dict) -> int:
    ss = np.random.SeedSequence([cfg.seed, int(record["seed"])])
    return int(ss.generate_state(1)[0] % (2 ** 31))


def load_train_banks(cfg: RunConfig, with_queries: bool = True) -> list:
    manifest = load_manifest(cfg.dataset_dir)
    records = sequences_in_split(manifest, "train")
    if not records:
        raise ValueError("dataset has no train split")
    banks = []
    for rec in records:
        meshes = load_sequence_meshes(cfg.dataset_dir, rec)
        banks.append(build_sequence_bank(rec, meshes, cfg, bank_seed(cfg, rec),
                                         with_queries=with_queries))
    return banks


# -- model constructors (shared with reconstruction) ------------------------


def build_shape_vae(cfg: RunConfig) -> ShapeVae:
    return ShapeVae(cfg.latent_codes, cfg.channels, cfg.heads,
                    cfg.shape_decoder_depth, seed=cfg.seed)


def build_deform_vae(cfg: RunConfig) -> DeformVae:
    return DeformVae(cfg.latent_codes, cfg.channels, cfg.heads, seed=cfg.seed + 1)


def build_shape_diffusion(cfg: RunConfig):
    cond = ShapeConditionEncoder(cfg.latent_codes, cfg.channels, cfg.heads,
                                 seed=cfg.seed + 2)
    den = ShapeDenoiser(cfg.latent_codes, cfg.channels, cfg.heads,
                        cfg.shape_denoiser_depth, cfg.edm, seed=cfg.seed + 3)
    return cond, den


def build_deform_diffusion(cfg: RunConfig):
    cond = DeformConditionEncoder(cfg.latent_codes, cfg.channels, cfg.heads,
                                  seed=cfg.seed + 4)
    den = DeformDenoiser(cfg.latent_codes, cfg.channels, cfg.heads,
                         cfg.deform_denoiser_depth, cfg.edm, seed=cfg.seed + 5)
    return cond, den


# -- train-state persistence ------------------------------------------------


def _state_path(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.out_dir) / f"{name}_state.ckpt"


def save_train_state(path, model_id: str, params: dict, opt: Adam,
                     step: int, best_val: float) -> None:
    blob = {f"param/{k}": p for k, p in params.items()}
    for k in params:
        blob[f"adam/m/{k}"] = opt.state.m[k]
        blob[f"adam/v/{k}"] = opt.state.v[k]
    blob["meta/progress"] = np.array([step, opt.state.step_count, best_val],
                                     dtype=np.float32)
    save_checkpoint(path, model_id + ".train", blob)


def load_train_state(path, model_id: str, params: dict, opt: Adam):
    mid, loaded = load_checkpoint(path)
    if mid != model_id + ".train":
        raise CheckpointError(f"{path}: holds {mid!r}, expected {model_id}.train")
    restore_params(params, {k[6:]: v for k, v in loaded.items() if k.startswith("param/")})
    for k in params:
        opt.state.m[k][...] = loaded[f"adam/m/{k}"]
        opt.state.v[k][...] = loaded[f"adam/v/{k}"]
    prog = loaded["meta/progress"]
    opt.state.step_count = int(prog[1])
    return int(prog[0]), float(prog[2])


class _LossLog:
    def __init__(self, path, header: str, resumed: bool):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(path, "a" if resumed else "w", encoding="utf-8", newline="\n")
        if not resumed:
            self.fh.write(header + "\n")

    def row(self, text: str) -> None:
        self.fh.write(text + "\n")

    def close(self) -> None:
        self.fh.flush()
        self.fh.close()


def _step_rng(cfg: RunConfig, loop: str, step: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _STREAM[loop], step])


def _check_finite(value: float, loop: str, step: int, log: _LossLog) -> None:
    if not np.isfinite(value):
        log.close()
        raise NumericError(f"{loop}: loss became non-finite at step {step}")


def _mean_loss(terms: list) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total if len(terms) == 1 else T.scale(total, 1.0 / len(terms))


# -- loop 1: shape VAE ------------------------------------------------------


def _shape_val_accuracy(model: ShapeVae, banks, n_enc: int) -> float:
    accs = []
    with no_grad():
        for b in banks:
            mu, _ = model.encode(b.surface.points[:n_enc])
            logits = model.decode_logits(model.refine_latents(mu), b.val_points)
            accs.append(((logits.numpy() > 0) == (b.val_occ > 0.5)).mean())
    return float(np.mean(accs))


def train_shape_vae(cfg: RunConfig, resume: bool = False, banks=None) -> dict:
    """Frame-1 occupancy autoencoding over the train split."""
    require_dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if banks is None:
        manifest = load_manifest(cfg.dataset_dir)
        records = sequences_in_split(manifest, "train")
        banks = [build_mesh_bank(load_sequence_meshes(cfg.dataset_dir, r)[0],
                                 cfg.bank_surface, cfg.bank_uniform,
                                 bank_seed(cfg, r))
                 for r in records]
    with float32_training():
        model = build_shape_vae(cfg)
        opt = Adam(model.params, cfg.lr)
        start, best = 0, -np.inf
        state = _state_path(cfg, "shape_vae")
        if resume:
            if not state.is_file():
                raise CheckpointError(f"cannot resume: {state} missing")
            start, best = load_train_state(state, "shape_vae", model.params, opt)
        log = _LossLog(out / "shape_vae_loss.csv", "step,total,bce,kl", resume)
        final = float("nan")
        for step in range(start + 1, cfg.shape_vae_steps + 1):
            rng = _step_rng(cfg, "shape_vae", step)
            bank = banks[int(rng.integers(len(banks)))]
            pts, queries, occ = shape_training_batch(bank, cfg.query_batch,
                                                     cfg.encoder_points, rng)
            total, bce, kl = shape_vae_loss(model, pts, queries, occ,
                                            seed=int(rng.integers(2 ** 31)))
            final = float(total.item())
            log.row(f"{step},{final:.6f},{float(bce.item()):.6f},{float(kl.item()):.6f}")
            _check_finite(final, "shape_vae", step, log)
            opt.zero_grad()
            total.backward()
            opt.step()
            if step % cfg.val_every == 0 or step == cfg.shape_vae_steps:
                acc = _shape_val_accuracy(model, banks, cfg.encoder_points)
                if acc > best:
                    best = acc
                    save_checkpoint(out / "shape_vae_best.ckpt", "shape_vae", model.params)
        save_checkpoint(out / SHAPE_VAE_CKPT, "shape_vae", model.params)
        save_train_state(state, "shape_vae", model.params, opt,
                         cfg.shape_vae_steps, best)
        log.close()
    return {"final_loss": final, "best_val_accuracy": best,
            "steps": cfg.shape_vae_steps}


# -- loop 2: deformation VAE ------------------------------------------------


def _deform_val_mse(model: DeformVae, banks, n_enc: int) -> float:
    errs = []
    with no_grad():
        for b in banks:
            for t in range(len(b.tgt_points)):
                mu, _ = model.encode(b.bank1.surface.points[:n_enc],
                                     b.tgt_points[t][:n_enc])
                pred = model.decode(mu, b.val_src).numpy()
                errs.append(((pred - b.val_tgt[t]) ** 2).sum(axis=1).mean())
    return float(np.mean(errs))


def train_deform_vae(cfg: RunConfig, resume: bool = False, banks=None) -> dict:
    require_dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if banks is None:
        banks = load_train_banks(cfg)
    with float32_training():
        model = build_deform_vae(cfg)
        opt = Adam(model.params, cfg.lr)
        start, best = 0, np.inf
        state = _state_path(cfg, "deform_vae")
        if resume:
            if not state.is_file():
                raise CheckpointError(f"cannot resume: {state} missing")
            start, best = load_train_state(state, "deform_vae", model.params, opt)
        log = _LossLog(out / "deform_vae_loss.csv", "step,total,mse,kl", resume)
        final = float("nan")
        for step in range(start + 1, cfg.deform_vae_steps + 1):
            rng = _step_rng(cfg, "deform_vae", step)
            bank = banks[int(rng.integers(len(banks)))]
            t_index = int(rng.integers(len(bank.tgt_points)))
            x_src, x_tgt, q_src, q_tgt = deform_training_batch(
                bank, t_index, cfg.query_batch, cfg.encoder_points, rng)
            total, mse, kl = deform_vae_loss(model, x_src, x_tgt, q_src, q_tgt,
                                             seed=int(rng.integers(2 ** 31)))
            final = float(total.item())
            log.row(f"{step},{final:.6f},{float(mse.item()):.6f},{float(kl.item()):.6f}")
            _check_finite(final, "deform_vae", step, log)
            opt.zero_grad()
            total.backward()
            opt.step()
            if step % cfg.val_every == 0 or step == cfg.deform_vae_steps:
                err = _deform_val_mse(model, banks, cfg.encoder_points)
                if err < best:
                    best = err
                    save_checkpoint(out / "deform_vae_best.ckpt", "deform_vae", model.params)
        save_checkpoint(out / DEFORM_VAE_CKPT, "deform_vae", model.params)
        save_train_state(state, "deform_vae", model.params, opt,
                         cfg.deform_vae_steps, best)
        log.close()
    return {"final_loss": final, "best_val_mse": best, "steps": cfg.deform_vae_steps}


# -- latent caches ----------------------------------------------------------


def _load_frozen(cfg: RunConfig, ckpt_name: str, builder, expect: str):
    mid, loaded = load_checkpoint(Path(cfg.out_dir) / ckpt_name)
    if mid != expect:
        raise CheckpointError(f"{ckpt_name}: holds {mid!r}, expected {expect!r}")
    model = builder(cfg)
    restore_params(model.params, loaded)
    return model


def cache_shape_latents(cfg: RunConfig, banks) -> dict:
    """Posterior means of every train sequence's first frame, cached once."""
    path = Path(cfg.out_dir) / SHAPE_LATENT_CACHE
    if path.is_file():
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    require_checkpoints(cfg, [SHAPE_VAE_CKPT])
    vae = _load_frozen(cfg, SHAPE_VAE_CKPT, build_shape_vae, "shape_vae")
    out = {}
    with no_grad():
        for b in banks:
            mu, _ = vae.encode(b.bank1.surface.points[:cfg.encoder_points])
            out[b.record["name"]] = mu.numpy().astype(np.float32)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **out)
    return out


def cache_deform_latents(cfg: RunConfig, banks) -> dict:
    path = Path(cfg.out_dir) / DEFORM_LATENT_CACHE
    if path.is_file():
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    require_checkpoints(cfg, [DEFORM_VAE_CKPT])
    vae = _load_frozen(cfg, DEFORM_VAE_CKPT, build_deform_vae, "deform_vae")
    out = {}
    with no_grad():
        for b in banks:
            src = b.bank1.surface.points[:cfg.encoder_points]
            mus = []
            for t in range(len(b.tgt_points)):
                mu, _ = vae.encode(src, b.tgt_points[t][:cfg.encoder_points])
                mus.append(mu.numpy())
            out[b.record["name"]] = np.stack(mus).astype(np.float32)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **out)
    return out


# -- loops 3 and 4: latent diffusion ----------------------------------------


def train_shape_diffusion(cfg: RunConfig, resume: bool = False, banks=None) -> dict:
    require_dataset(cfg)
    require_checkpoints(cfg, [SHAPE_VAE_CKPT])
    out = Path(cfg.out_dir)
    if banks is None:
        banks = load_train_banks(cfg, with_queries=False)
    with float32_training():
        latents = cache_shape_latents(cfg, banks)
        clean = [latents[b.record["name"]] for b in banks]
        cond_enc, den = build_shape_diffusion(cfg)
        params = {**cond_enc.params, **den.params}
        opt = Adam(params, cfg.lr)
        start, best = 0, np.inf
        state = _state_path(cfg, "shape_diff")
        if resume:
            if not state.is_file():
                raise CheckpointError(f"cannot resume: {state} missing")
            start, best = load_train_state(state, "shape_diff", params, opt)
        log = _LossLog(out / "shape_diff_loss.csv", "step,loss", resume)

        def val_loss():
            with no_grad():
                vals = []
                for i, b in enumerate(banks):
                    cond = cond_enc.encode(b.observations[0])
                    ls = diffusion_loss(lambda x, s: den.denoise(x, s, cond),
                                        clean[i], cfg.edm, seed=900_000 + i)
                    vals.append(ls.item())
            return float(np.mean(vals))

        final = float("nan")
        for step in range(start + 1, cfg.shape_diff_steps + 1):
            rng = _step_rng(cfg, "shape_diff", step)
            terms = []
            for _ in range(cfg.diffusion_batch):
                i = int(rng.integers(len(banks)))
                cond = cond_enc.encode(banks[i].observations[0])
                terms.append(diffusion_loss(
                    lambda x, s: den.denoise(x, s, cond),
                    clean[i], cfg.edm, seed=int(rng.integers(2 ** 31))))
            loss = _mean_loss(terms)
            final = float(loss.item())
            log.row(f"{step},{final:.6f}")
            _check_finite(final, "shape_diff", step, log)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.val_every == 0 or step == cfg.shape_diff_steps:
                v = val_loss()
                if v < best:
                    best = v
                    save_checkpoint(out / "shape_diff_best.ckpt", "shape_diff", params)
        save_checkpoint(out / SHAPE_DIFF_CKPT, "shape_diff", params)
        save_train_state(state, "shape_diff", params, opt, cfg.shape_diff_steps, best)
        log.close()
    return {"final_loss": final, "best_val_loss": best, "steps": cfg.shape_diff_steps}


def _cond_sequence(cond_enc: DeformConditionEncoder, observations) -> Tensor:
    """Per-frame pair codes stacked into [T-1, M, C]."""
    rows = [T.reshape(cond_enc.encode(observations[0], obs_t), (1, cond_enc.M, -1))
            for obs_t in observations[1:]]
    return T.concat(rows, axis=0) if len(rows) > 1 else rows[0]


def train_deform_diffusion(cfg: RunConfig, resume: bool = False, banks=None) -> dict:
    require_dataset(cfg)
    require_checkpoints(cfg, [SHAPE_VAE_CKPT, DEFORM_VAE_CKPT])
    out = Path(cfg.out_dir)
    if banks is None:
        banks = load_train_banks(cfg, with_queries=False)
    with float32_training():
        shape_lat = cache_shape_latents(cfg, banks)
        deform_lat = cache_deform_latents(cfg, banks)
        clean = [deform_lat[b.record["name"]] for b in banks]
        shape_cond = [Tensor(shape_lat[b.record["name"]]) for b in banks]
        cond_enc, den = build_deform_diffusion(cfg)
        params = {**cond_enc.params, **den.params}
        opt = Adam(params, cfg.lr)
        start, best = 0, np.inf
        state = _state_path(cfg, "deform_diff")
        if resume:
            if not state.is_file():
                raise CheckpointError(f"cannot resume: {state} missing")
            start, best = load_train_state(state, "deform_diff", params, opt)
        log = _LossLog(out / "deform_diff_loss.csv", "step,loss", resume)

        def val_loss():
            with no_grad():
                vals = []
                for i, b in enumerate(banks):
                    cond = _cond_sequence(cond_enc, b.observations)
                    ls = diffusion_loss(
                        lambda x, s: den.denoise(x, s, cond, shape_cond[i]),
                        clean[i], cfg.edm, seed=910_000 + i)
                    vals.append(ls.item())
            return float(np.mean(vals))

        final = float("nan")
        for step in range(start + 1, cfg.deform_diff_steps + 1):
            rng = _step_rng(cfg, "deform_diff", step)
            terms = []
            for _ in range(cfg.diffusion_batch):
                i = int(rng.integers(len(banks)))
                cond = _cond_sequence(cond_enc, banks[i].observations)
                sc = shape_cond[i]
                terms.append(diffusion_loss(
                    lambda x, s: den.denoise(x, s, cond, sc),
                    clean[i], cfg.edm, seed=int(rng.integers(2 ** 31))))
            loss = _mean_loss(terms)
            final = float(loss.item())
            log.row(f"{step},{final:.6f}")
            _check_finite(final, "deform_diff", step, log)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.val_every == 0 or step == cfg.deform_diff_steps:
                v = val_loss()
                if v < best:
                    best = v
                    save_checkpoint(out / "deform_diff_best.ckpt", "deform_diff", params)
        save_checkpoint(out / DEFORM_DIFF_CKPT, "deform_diff", params)
        save_train_state(state, "deform_diff", params, opt, cfg.deform_diff_steps, best)
        log.close()
    return {"final_loss": final, "best_val_loss": best, "steps": cfg.deform_diff_steps}
