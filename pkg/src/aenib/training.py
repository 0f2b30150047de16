"""Alternating two-phase training.

Each step runs the discriminator phase (nuisance classifier, independence
discriminator, similarity embedder) on detached latents, then re-runs the
forward pass with the same per-step noise draws and updates the encoder,
decoder, and heads on the composite objective. All randomness derives from
(seed, stream, step) so runs are bit-reproducible and resumable from any
checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, OptimSpec
from .datasets import Dataset, batch_indices, gaussian_noise_images, random_translate
from .errors import TrainingDivergenceError
from .latent import kl_to_standard_normal
from .losses import (EPS_P, LossReport, adversarial_similarity_losses,
                     cross_entropy, d2_squared, ind_losses,
                     nuis_discriminator_loss, nuis_encoder_loss, recon_nmse)
from .models import ConvAENIB, build_model
from .ood import auroc_exact, combined_score, dirichlet_score
from .optim import cosine_lr, make_optimizer

__all__ = ["Trainer", "TrainHistory", "fit", "build_from_config"]

# rng stream ids
STREAM_INIT = 0
STREAM_NOISE_Z = 1
STREAM_NOISE_ZN = 2
STREAM_PRIOR = 3
STREAM_AUGMENT = 4
STREAM_EVAL = 5
STREAM_RESEED = 6


def step_rng(seed: int, stream: int, step: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream, step))))


def build_from_config(cfg: ExperimentConfig):
    return build_model(cfg.encoder, cfg.decoder, step_rng(cfg.seed, STREAM_INIT))


@dataclass
class TrainHistory:
    reports: list = field(default_factory=list)    # per-step loss records
    snapshots: list = field(default_factory=list)  # periodic eval records

    def append_report(self, step: int, report: LossReport, lr: float):
        if self.reports and step <= self.reports[-1]["step"]:
            raise ValueError("step indices must increase monotonically")
        rec = {"step": step, **report.as_dict(), "lr": lr}
        self.reports.append(rec)
        return rec


def _squash(logits: Tensor, eps: float = 1e-6) -> Tensor:
    """Sigmoid squeezed into (eps, 1 - eps) so GAN losses stay finite in float32."""
    return logits.sigmoid() * (1.0 - 2.0 * eps) + eps


def _param_sig(params: dict) -> int:
    import zlib
    h = 0
    for name in sorted(params):
        h = zlib.crc32(params[name].data.tobytes(), h)
    return h


class Trainer:
    """Owns model and optimizer state for one run."""

    def __init__(self, model, cfg: ExperimentConfig):
        self.model = model
        self.cfg = cfg
        self.weights = cfg.weights
        self.seed = cfg.seed
        t = cfg.train
        self.opt_enc = self._make(t.encoder_opt, model.trunk_parameters())
        self.opt_dec = self._make(t.adversarial_opt, model.generator_adam_parameters())
        self.opt_disc = self._make(t.adversarial_opt, model.discriminator_parameters())
        self.step_count = 0
        self._bad_steps = 0
        self._bad_term = ""
        self._zn_pool = None
        self._code_usage = None
        if getattr(model.spec, "is_vq", False):
            self._code_usage = np.zeros(model.codebook.num_codes, dtype=np.int64)

    @staticmethod
    def _make(spec: OptimSpec, params):
        return make_optimizer(spec.kind, params, spec.lr, momentum=spec.momentum,
                              betas=(spec.beta1, spec.beta2),
                              weight_decay=spec.weight_decay)

    # -- phase helpers -------------------------------------------------------

    def _terms_enabled(self):
        t, model = self.cfg.train, self.model
        aenib = t.objective == "aenib"
        conv = isinstance(model, ConvAENIB)
        return {
            "recon": aenib and not t.disable_recon,
            "nuis": aenib and not t.disable_nuis,
            "ind": aenib and not t.disable_ind,
            "sim": aenib and conv and t.use_sim and not t.disable_sim,
            "vq": aenib and not conv,
        }

    def _noise(self, step: int, m: int):
        model, t = self.model, self.cfg.train
        dtype = model.spec.np_dtype
        if not t.stochastic_latent:
            return None, None
        nz = step_rng(self.seed, STREAM_NOISE_Z, step).standard_normal(
            (m, model.spec.k)).astype(dtype)
        nzn = None
        if isinstance(model, ConvAENIB):
            nzn = step_rng(self.seed, STREAM_NOISE_ZN, step).standard_normal(
                (m, model.spec.k_n)).astype(dtype)
        return nz, nzn

    def _set_bn_tracking(self, flag: bool):
        """Running BN statistics track only the real-data generator-phase forward."""
        for child in self.model._children.values():
            if hasattr(child, "track_stats"):
                child.track_stats = flag

    def _latents_for_dz(self, pair) -> Tensor:
        if isinstance(self.model, ConvAENIB):
            return concat([pair.z, pair.z_n], axis=-1)
        return pair.z

    def _forward(self, x, step, enabled):
        """One taped encoder/decoder forward, shared by both phases.

        Only discriminator parameters change between the phases, so the
        generator-side graph stays valid; the discriminators themselves are
        re-applied after their update.
        """
        model = self.model
        nz, nzn = self._noise(step, x.shape[0])
        self._set_bn_tracking(True)
        res = model.encode(x, nz, nzn)
        self._set_bn_tracking(False)
        x_hat = None
        stats_fake = None
        if enabled["recon"] or enabled["sim"]:
            x_hat = model.decode(res.pair)
        if enabled["sim"]:
            stats_fake = model.trunk_stats(x_hat)
        return res, x_hat, stats_fake

    def _discriminator_phase(self, res, stats_fake, labels, step, enabled) -> None:
        model, cfg = self.model, self.cfg
        if not (enabled["nuis"] or enabled["ind"] or enabled["sim"]):
            return
        for p in self.opt_disc.params.values():
            p.grad = None
        total = None
        if enabled["ind"]:
            fake = self._latents_for_dz(res.pair).detach()
            prior = Tensor(step_rng(self.seed, STREAM_PRIOR, step).standard_normal(
                fake.shape).astype(fake.dtype))
            if cfg.train.ind_swap_real_fake:
                prior, fake = fake, prior
            d_real = _squash(model.d_z(prior))
            d_fake = _squash(model.d_z(fake))
            disc_ind, _ = ind_losses(d_real, d_fake)
            total = disc_ind if total is None else total + disc_ind
        if enabled["nuis"]:
            zn_in = res.pair.nuisance_flat().detach()
            probs = model.q_n(zn_in).softmax(axis=-1)
            disc_nuis = nuis_discriminator_loss(probs, labels)
            total = disc_nuis if total is None else total + disc_nuis
        if enabled["sim"]:
            disc_sim, _ = adversarial_similarity_losses(
                res.stats.flat().detach(), stats_fake.flat().detach(),
                model.d_x, self.weights.tau)
            total = disc_sim if total is None else total + disc_sim
        total.backward()
        self.opt_disc.step()

    def _generator_phase(self, x, res, x_hat, stats_fake, labels, step,
                         enabled) -> LossReport:
        model, cfg, w = self.model, self.cfg, self.weights
        for p in list(self.opt_enc.params.values()) + list(self.opt_dec.params.values()):
            p.grad = None
        probs = model.classify(res.pair.z)
        ce = cross_entropy(probs, labels)
        if cfg.train.objective == "ce":
            ce.backward()
            self.opt_enc.step()
            self.opt_dec.step()  # classifier and heads live in the Adam group
            return LossReport(vib=float(ce.data), recon=0.0, nuis=0.0, ind=0.0,
                              total=float(ce.data))
        vib_t = ce + w.beta * kl_to_standard_normal(res.z_head).mean()
        parts_t = {"vib": vib_t}
        if enabled["recon"]:
            parts_t["recon"] = recon_nmse(x, x_hat) if w.recon_kind == "nmse" \
                else d2_squared(x, x_hat)
        if enabled["nuis"]:
            qn_probs = model.q_n(res.pair.nuisance_flat()).softmax(axis=-1)
            parts_t["nuis"] = nuis_encoder_loss(qn_probs)
        if enabled["ind"]:
            d_enc = _squash(model.d_z(self._latents_for_dz(res.pair)))
            swap, ns = cfg.train.ind_swap_real_fake, cfg.train.non_saturating
            if swap:
                # encoder latents play the "real" role: the encoder-side term
                # of the game is log d(enc) (or its non-saturating mirror)
                ind_t = -((1.0 - d_enc).clip_min(EPS_P).log().mean()) if ns \
                    else d_enc.clip_min(EPS_P).log().mean()
            else:
                ind_t = -(d_enc.clip_min(EPS_P).log().mean()) if ns \
                    else (1.0 - d_enc).clip_min(EPS_P).log().mean()
            parts_t["ind"] = ind_t
        if enabled["sim"]:
            _, sim_t = adversarial_similarity_losses(
                res.stats.flat(), stats_fake.flat(), model.d_x, w.tau)
            parts_t["sim"] = sim_t
        if enabled["vq"] and res.vq_loss is not None:
            parts_t["vq"] = res.vq_loss

        total_t = parts_t["vib"]
        if "recon" in parts_t:
            total_t = total_t + w.alpha * parts_t["recon"]
        if "nuis" in parts_t:
            total_t = total_t + parts_t["nuis"]
        if "ind" in parts_t:
            total_t = total_t + parts_t["ind"]
        if "sim" in parts_t:
            total_t = total_t + parts_t["sim"]
        if "vq" in parts_t:
            total_t = total_t + parts_t["vq"]
        total_t.backward()
        self.opt_enc.step()
        self.opt_dec.step()
        if enabled["vq"]:
            model.codebook.renormalize()
            codes = res.pair.codes
            if self._code_usage is not None and codes is not None:
                np.add.at(self._code_usage, codes.reshape(-1), 1)
            self._zn_pool = res.pair.quantized.data.reshape(-1, model.codebook.code_dim)

        def fval(key):
            return float(parts_t[key].data) if key in parts_t else 0.0

        report = LossReport(
            vib=fval("vib"), recon=fval("recon"), nuis=fval("nuis"), ind=fval("ind"),
            sim=fval("sim") if enabled["sim"] else None,
            vq=fval("vq") if enabled["vq"] else None, total=0.0)
        report.total = LossReport.compose_total(report.vib, report.recon, report.nuis,
                                                report.ind, w.alpha, report.sim, report.vq)
        return report

    def _check_divergence(self, report: LossReport, step: int):
        bad = [k for k, v in report.as_dict().items() if v is not None and not np.isfinite(v)]
        if bad:
            self._bad_steps += 1
            self._bad_term = bad[0]
            if self._bad_steps >= self.cfg.train.divergence_patience:
                raise TrainingDivergenceError(self._bad_term, step)
        else:
            self._bad_steps = 0

    def _maybe_reseed_codebook(self, step: int):
        """Re-seed codewords unused over the last epoch from recent encoder outputs."""
        if self._code_usage is None or self._zn_pool is None:
            return
        dead = np.flatnonzero(self._code_usage == 0)
        if dead.size:
            rng = step_rng(self.seed, STREAM_RESEED, step)
            picks = rng.integers(0, self._zn_pool.shape[0], size=dead.size)
            e = self.model.codebook.embeddings.data
            e[dead] = self._zn_pool[picks]
            self.model.codebook.renormalize()
        self._code_usage[:] = 0

    def set_lr(self, step: int, total_steps: int):
        t = self.cfg.train
        if t.encoder_opt.cosine:
            self.opt_enc.set_lr_factor(cosine_lr(step, total_steps, t.encoder_opt.warmup_steps))
        if t.adversarial_opt.cosine:
            f = cosine_lr(step, total_steps, t.adversarial_opt.warmup_steps)
            self.opt_dec.set_lr_factor(f)
            self.opt_disc.set_lr_factor(f)

    def train_step(self, images: np.ndarray, labels: np.ndarray, step: int) -> LossReport:
        """One full Algorithm step: discriminator updates, then generator
        updates on the recomputed forward pass."""
        if images.shape[0] == 0:
            raise ValueError("empty batch")
        x = Tensor(images.astype(self.model.spec.np_dtype))
        enabled = self._terms_enabled()
        self.model.train(True)
        self._set_bn_tracking(False)
        res, x_hat, stats_fake = self._forward(x, step, enabled)
        self._discriminator_phase(res, stats_fake, labels, step, enabled)
        report = self._generator_phase(x, res, x_hat, stats_fake, labels, step, enabled)
        self._check_divergence(report, step)
        self.step_count = step + 1
        return report

    # -- persistence -----------------------------------------------------------

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        out = {f"model.{k}": v for k, v in self.model.state_arrays().items()}
        for tag, opt in (("enc", self.opt_enc), ("dec", self.opt_dec),
                         ("disc", self.opt_disc)):
            out.update({f"opt.{tag}.{k}": v for k, v in opt.state_arrays().items()})
        return out

    def save(self, path, step: int):
        save_checkpoint(path, arrays=self.checkpoint_arrays(), step=step,
                        seed=self.cfg.seed, config=self.cfg.canonical_dict())

    def restore(self, loaded):
        prefix = "model."
        model_arrays = {k[len(prefix):]: v for k, v in loaded.arrays.items()
                        if k.startswith(prefix)}
        self.model.load_state(model_arrays)
        for tag, opt in (("enc", self.opt_enc), ("dec", self.opt_dec),
                         ("disc", self.opt_disc)):
            p = f"opt.{tag}."
            opt.load_state_arrays({k[len(p):]: v for k, v in loaded.arrays.items()
                                   if k.startswith(p)})
        self.step_count = loaded.step


def _snapshot(model, cfg: ExperimentConfig, eval_ds: Dataset, step: int) -> dict:
    from .evaluation import CorruptionKind, CorruptionSpec, corrupt, per_sample_seed
    model.eval()
    cap = min(len(eval_ds), 2000)
    images, labels = eval_ds.images[:cap], eval_ds.labels[:cap]
    probs = _predict_in_batches(model, images)
    clean_err = float(np.mean(np.argmax(probs, axis=-1) != labels))
    sub = min(cap, 512)
    corrupted = np.stack([
        corrupt(images[i].astype(np.float64),
                CorruptionSpec(CorruptionKind.GAUSSIAN_NOISE, 3,
                               seed=per_sample_seed(cfg.seed, i)))
        for i in range(sub)]).astype(np.float32)
    cprobs = _predict_in_batches(model, corrupted)
    corr_err = float(np.mean(np.argmax(cprobs, axis=-1) != labels[:sub]))
    rng = step_rng(cfg.seed, STREAM_EVAL, step)
    noise = gaussian_noise_images(sub, images.shape[1:], rng)
    if isinstance(model, ConvAENIB):
        s_in = _scores_combined(model, images[:sub], cfg.eval.dirichlet_alpha)
        s_out = _scores_combined(model, noise, cfg.eval.dirichlet_alpha)
    else:
        s_in = dirichlet_score(_predict_in_batches(model, images[:sub]), cfg.eval.dirichlet_alpha)
        s_out = dirichlet_score(_predict_in_batches(model, noise), cfg.eval.dirichlet_alpha)
    auroc = auroc_exact(s_in, s_out)
    model.train(True)
    return {"kind": "eval", "step": step, "clean_error": clean_err,
            "gaussian_s3_error": corr_err, "ood_auroc_noise": auroc}


def _predict_in_batches(model, images: np.ndarray, batch: int = 256) -> np.ndarray:
    out = []
    for i in range(0, images.shape[0], batch):
        out.append(model.predict_probs(images[i:i + batch]))
    return np.concatenate(out)


def _scores_combined(model, images: np.ndarray, alpha: float) -> np.ndarray:
    scores = []
    for i in range(0, images.shape[0], 256):
        with no_grad():
            res = model.encode(Tensor(images[i:i + 256].astype(model.spec.np_dtype)))
            probs = model.classify(res.pair.z).data
            scores.append(combined_score(probs, res.pair.z_n.data, alpha))
    return np.concatenate(scores)


def fit(train_ds: Dataset, eval_ds: Dataset, cfg: ExperimentConfig,
        out_dir=None, resume: bool = True, model=None,
        log_fn=None, stop_after: int | None = None) -> tuple:
    """Run the training loop; returns (model, TrainHistory).

    Writes an append-only metrics stream and periodic checkpoints when
    `out_dir` is given, and resumes from the newest checkpoint there unless
    `resume` is false. `stop_after` halts early at a global step (simulating
    interruption); the run continues from its checkpoint on the next call.
    """
    if len(train_ds) == 0:
        raise ValueError("empty training dataset")
    t = cfg.train
    model = model or build_from_config(cfg)
    trainer = Trainer(model, cfg)
    history = TrainHistory()
    start_step = 0
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        latest = out_dir / "checkpoint_latest.ckpt"
        if resume and latest.exists():
            loaded = load_checkpoint(latest, expected_config=cfg.canonical_dict())
            trainer.restore(loaded)
            start_step = loaded.step
    per_epoch = max(1, len(train_ds) // t.batch_size)
    for step in range(start_step, t.total_steps):
        idx = batch_indices(len(train_ds), t.batch_size, cfg.seed, step)
        images = train_ds.images[idx]
        labels = train_ds.labels[idx]
        if t.augment_translate:
            images = random_translate(images, t.augment_translate,
                                      step_rng(cfg.seed, STREAM_AUGMENT, step))
        trainer.set_lr(step, t.total_steps)
        report = trainer.train_step(images, labels, step)
        rec = history.append_report(step, report, trainer.opt_enc.lr)
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if log_fn and (step % 200 == 0 or step == t.total_steps - 1):
            log_fn(rec)
        if (step + 1) % per_epoch == 0:
            trainer._maybe_reseed_codebook(step)
        if t.eval_every and ((step + 1) % t.eval_every == 0 or step == t.total_steps - 1):
            snap = _snapshot(model, cfg, eval_ds, step + 1)
            history.snapshots.append(snap)
            if metrics_path is not None:
                with open(metrics_path, "a") as fh:
                    fh.write(json.dumps(snap, sort_keys=True) + "\n")
            if log_fn:
                log_fn(snap)
        if out_dir is not None and t.checkpoint_every and \
                ((step + 1) % t.checkpoint_every == 0 or step == t.total_steps - 1):
            trainer.save(out_dir / "checkpoint_latest.ckpt", step + 1)
        if stop_after is not None and step + 1 >= stop_after:
            if out_dir is not None:
                trainer.save(out_dir / "checkpoint_latest.ckpt", step + 1)
            break
    model.eval()
    return model, history
