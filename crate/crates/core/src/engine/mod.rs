//! Training engine: one struct owning all four models and their optimizers,
//! with the three phase loops (recognizer pretraining, adversarial
//! pretraining, joint training) built from four primitive steps. Every
//! random choice flows from the configured seed through named streams keyed
//! by step counters, so runs replay bitwise — including across a
//! checkpoint/restore boundary.

pub mod checkpoint;
pub mod optim;
pub mod schedule;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::Serialize;

use crate::autograd::{NodeId, Tape};
use crate::config::{PerceptualExtractor, RunConfig};
use crate::critic::{self, Critic};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{
    self, adversarial_generator_loss, identity_loss, perceptual_loss, pixel_loss, ConvExtractor,
    FeatureExtractor, IdentityExtractor, LossBreakdown,
};
use crate::recognizer::{fr_batch_loss, ArcFaceHead, Recognizer};
use crate::rng;
use checkpoint::CheckpointBundle;
use optim::{Adam, SgdMomentum};
pub use schedule::Phase;

/// Progress counters; the unit is steps, epochs are derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainState {
    pub gan_iter: u64,
    pub fr_step: u64,
    pub joint_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticLog {
    pub total: f64,
    pub wasserstein: f64,
    pub penalty: f64,
}

/// One structured log line; no timestamps, so identical runs produce
/// identical logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub phase: &'static str,
    pub step: u64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic: Option<CriticLog>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fr_loss: Option<f64>,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub gen: Generator,
    pub critic: Critic,
    pub rec: Recognizer,
    pub head: ArcFaceHead,
    extractor: Box<dyn FeatureExtractor>,
    adam_gen: Adam,
    adam_critic: Adam,
    sgd_fr: SgdMomentum,
    pub state: TrainState,
}

fn ensure_finite(what: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Train(format!("{what} became non-finite ({v}); aborting")));
    }
    Ok(())
}

/// Gradient values for `wrt`, zero-filled where the output does not depend
/// on a leaf.
fn collect_grads(t: &mut Tape, y: NodeId, wrt: &[NodeId]) -> Vec<ArrayD<f64>> {
    let ids = t.grad(y, wrt);
    ids.into_iter()
        .zip(wrt)
        .map(|(g, &leaf)| match g {
            Some(node) => t.value(node).clone(),
            None => ArrayD::zeros(t.value(leaf).raw_dim()),
        })
        .collect()
}

fn stack_hr(ds: &Dataset, idx: &[usize]) -> ArrayD<f64> {
    data::stack_batch(&idx.iter().map(|&i| &ds.hr[i]).collect::<Vec<_>>())
}

fn stack_lr(ds: &Dataset, idx: &[usize]) -> ArrayD<f64> {
    data::stack_batch(&idx.iter().map(|&i| &ds.lr[i]).collect::<Vec<_>>())
}

fn labels_of(ds: &Dataset, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| ds.labels[i]).collect()
}

fn draw_eps(seed: u64, label: &str, step: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, label, &[step]);
    (0..n).map(|_| r.gen::<f64>()).collect()
}

impl Trainer {
    /// Build freshly initialized models. `classes_hint` supplies the class
    /// count when the configuration leaves it at 0 (auto).
    pub fn new(cfg: RunConfig, classes_hint: usize) -> Result<Trainer> {
        cfg.validate()?;
        let classes = if cfg.num_classes > 0 { cfg.num_classes } else { classes_hint };
        let gen = Generator::new(cfg.network_spec(), rng::derive_seed(cfg.seed, "init.gen", &[]))?;
        let critic = Critic::new(cfg.critic_spec(), rng::derive_seed(cfg.seed, "init.critic", &[]))?;
        let rec = Recognizer::new(cfg.recognizer_spec(), rng::derive_seed(cfg.seed, "init.fr", &[]))?;
        let head = ArcFaceHead::new(
            rng::derive_seed(cfg.seed, "init.head", &[]),
            classes,
            cfg.embedding_dim,
            cfg.arcface_scale,
            cfg.arcface_margin,
        )?;
        let extractor: Box<dyn FeatureExtractor> = match cfg.perceptual_extractor {
            PerceptualExtractor::Conv => {
                Box::new(ConvExtractor::new(rng::derive_seed(cfg.seed, "init.perceptual", &[])))
            }
            PerceptualExtractor::Identity => Box::new(IdentityExtractor),
        };
        let adam_gen = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let adam_critic = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let sgd_fr = SgdMomentum::new(cfg.fr_momentum);
        Ok(Trainer {
            cfg,
            gen,
            critic,
            rec,
            head,
            extractor,
            adam_gen,
            adam_critic,
            sgd_fr,
            state: TrainState::default(),
        })
    }

    /// One critic update: Wasserstein surrogate plus gradient penalty at
    /// per-sample interpolates. The generator only provides values; its
    /// parameters are untouched.
    pub fn critic_step(
        &mut self,
        hr: &ArrayD<f64>,
        lr_img: &ArrayD<f64>,
        eps: &[f64],
        rate: f64,
    ) -> Result<CriticLog> {
        let sr = self.gen.hallucinate(lr_img)?;
        let mut t = Tape::new();
        let staged = self.critic.stage(&mut t);
        let real = t.leaf(hr.clone());
        let fake = t.leaf(sr.clone());
        let s_real = staged.score(&mut t, real)?;
        let s_fake = staged.score(&mut t, fake)?;
        let w_loss = critic::critic_loss(&mut t, s_real, s_fake);
        let x_hat = t.leaf(critic::interpolate(hr, &sr, eps));
        let gp = critic::gradient_penalty(&mut t, |t, x| staged.score(t, x), x_hat, self.cfg.gp_lambda)?;
        let total = t.add(w_loss, gp);
        let log = CriticLog {
            total: t.scalar_value(total),
            wasserstein: t.scalar_value(w_loss),
            penalty: t.scalar_value(gp),
        };
        ensure_finite("critic loss", log.total)?;
        let grads = collect_grads(&mut t, total, &staged.leaf_ids());
        self.adam_critic.step(&mut self.critic.params_mut(), &grads, rate)?;
        Ok(log)
    }

    /// One generator update on the weighted composite loss. Critic and
    /// recognizer participate as frozen values. Returns the breakdown and
    /// the (detached) reconstructions from before the update.
    pub fn generator_step(
        &mut self,
        hr: &ArrayD<f64>,
        lr_img: &ArrayD<f64>,
        rate: f64,
    ) -> Result<(LossBreakdown, ArrayD<f64>)> {
        let w = self.cfg.loss_weights();
        let mut t = Tape::new();
        let staged = self.gen.stage(&mut t);
        let x = t.leaf(lr_img.clone());
        let sr = staged.forward(&mut t, x)?;
        let hr_node = t.leaf(hr.clone());
        let pixel = (w.pixel > 0.0).then(|| pixel_loss(&mut t, sr, hr_node));
        let perceptual = if w.perceptual > 0.0 {
            Some(perceptual_loss(&mut t, &*self.extractor, sr, hr_node)?)
        } else {
            None
        };
        let adversarial = if w.adversarial > 0.0 {
            let staged_critic = self.critic.stage(&mut t);
            let scores = staged_critic.score(&mut t, sr)?;
            Some(adversarial_generator_loss(&mut t, scores))
        } else {
            None
        };
        let identity = if w.identity > 0.0 {
            let staged_rec = self.rec.stage(&mut t);
            let e_sr = staged_rec.embed(&mut t, sr)?;
            let e_hr = staged_rec.embed(&mut t, hr_node)?;
            Some(identity_loss(&mut t, e_sr, e_hr))
        } else {
            None
        };
        let (total, breakdown) = losses::combine(&mut t, &w, pixel, perceptual, adversarial, identity)?;
        ensure_finite("generator loss", breakdown.total)?;
        let grads = collect_grads(&mut t, total, &staged.leaf_ids());
        self.adam_gen.step(&mut self.gen.params_mut(), &grads, rate)?;
        Ok((breakdown, t.value(sr).clone()))
    }

    /// One recognizer update on the two-half margin loss. The halves must
    /// carry disjoint identity sets; violating that is an error, not a
    /// silent degradation.
    pub fn fr_step(
        &mut self,
        hr_half: (&ArrayD<f64>, &[usize]),
        sr_half: (&ArrayD<f64>, &[usize]),
        rate: f64,
    ) -> Result<f64> {
        let (hr, la) = hr_half;
        let (srv, lb) = sr_half;
        let shared: Vec<usize> = la.iter().filter(|c| lb.contains(c)).copied().collect();
        if !shared.is_empty() {
            return Err(Error::Train(format!(
                "pairing violation: identities {shared:?} appear in both batch halves"
            )));
        }
        let mut t = Tape::new();
        let staged = self.rec.stage(&mut t);
        let w_node = self.head.stage(&mut t);
        let xa = t.leaf(hr.clone());
        let ea = staged.embed(&mut t, xa)?;
        let xb = t.leaf(srv.clone());
        let eb = staged.embed(&mut t, xb)?;
        let loss = fr_batch_loss(
            &mut t,
            (ea, la),
            (eb, lb),
            w_node,
            self.cfg.arcface_scale,
            self.cfg.arcface_margin,
        )?;
        let value = t.scalar_value(loss);
        ensure_finite("recognizer loss", value)?;
        let mut wrt = staged.leaf_ids();
        wrt.push(w_node);
        let grads = collect_grads(&mut t, loss, &wrt);
        let mut params = self.rec.params_mut();
        params.extend(self.head.params_mut());
        self.sgd_fr.step(&mut params, &grads, rate)?;
        Ok(value)
    }

    /// One joint step: `n_critic` critic updates, one generator update with
    /// the identity term active (recognizer frozen within it), then one
    /// recognizer update fed the reconstructions the generator just
    /// produced. Order is fixed.
    pub fn joint_step(&mut self, ds: &Dataset, rate: f64) -> Result<(Vec<CriticLog>, LossBreakdown, f64)> {
        let n = self.cfg.batch_size;
        let step = self.state.joint_step;
        let mut clogs = Vec::with_capacity(self.cfg.n_critic);
        // As in adversarial pretraining, the critic only trains when the
        // generator actually faces it.
        if self.cfg.lambda_adversarial > 0.0 {
            for sub in 0..self.cfg.n_critic as u64 {
                let sub_step = step * self.cfg.n_critic as u64 + sub;
                let idx = data::sample_batch(ds, self.cfg.seed, "joint.critic", sub_step, n);
                let eps = draw_eps(self.cfg.seed, "joint.eps", sub_step, n);
                clogs.push(self.critic_step(&stack_hr(ds, &idx), &stack_lr(ds, &idx), &eps, rate)?);
            }
        }
        let halves = data::sample_two_half_batch(ds, self.cfg.seed, "joint.batch", step, n)?;
        let (breakdown, sr_values) =
            self.generator_step(&stack_hr(ds, &halves.sr_indices), &stack_lr(ds, &halves.sr_indices), rate)?;
        let hr_imgs = stack_hr(ds, &halves.hr_indices);
        let fr = self.fr_step(
            (&hr_imgs, &labels_of(ds, &halves.hr_indices)),
            (&sr_values, &labels_of(ds, &halves.sr_indices)),
            rate,
        )?;
        Ok((clogs, breakdown, fr))
    }

    fn steps_per_epoch(&self, ds: &Dataset) -> u64 {
        (ds.train_indices.len() as u64).div_ceil(self.cfg.batch_size as u64)
    }

    /// Total steps a phase runs for under the current configuration.
    pub fn phase_total(&self, ds: &Dataset, phase: Phase) -> u64 {
        match phase {
            Phase::GanPretrain => self.cfg.gan_iters,
            Phase::FrPretrain => self.cfg.fr_epochs * self.steps_per_epoch(ds),
            Phase::Joint => self.cfg.joint_epochs * self.steps_per_epoch(ds),
        }
    }

    pub fn run_phase(
        &mut self,
        ds: &Dataset,
        phase: Phase,
        on_log: &mut dyn FnMut(&LogRecord) -> Result<()>,
        ckpt: Option<(&Path, u64)>,
    ) -> Result<()> {
        self.run_phase_until(ds, phase, None, on_log, ckpt)
    }

    /// Like `run_phase`, but optionally stopping after `limit` steps — the
    /// hook that lets tests interrupt and resume a run.
    pub fn run_phase_until(
        &mut self,
        ds: &Dataset,
        phase: Phase,
        limit: Option<u64>,
        on_log: &mut dyn FnMut(&LogRecord) -> Result<()>,
        ckpt: Option<(&Path, u64)>,
    ) -> Result<()> {
        let total = self.phase_total(ds, phase);
        let end = limit.map_or(total, |l| l.min(total));
        loop {
            let step = match phase {
                Phase::GanPretrain => self.state.gan_iter,
                Phase::FrPretrain => self.state.fr_step,
                Phase::Joint => self.state.joint_step,
            };
            if step >= end {
                return Ok(());
            }
            let record = match phase {
                Phase::GanPretrain => self.gan_pretrain_step(ds, step)?,
                Phase::FrPretrain => self.fr_pretrain_step(ds, step)?,
                Phase::Joint => {
                    let rate = self.cfg.joint_lr;
                    let (clogs, breakdown, fr) = self.joint_step(ds, rate)?;
                    self.state.joint_step += 1;
                    LogRecord {
                        phase: phase.as_str(),
                        step,
                        lr: rate,
                        generator: Some(breakdown),
                        critic: clogs.last().copied(),
                        fr_loss: Some(fr),
                    }
                }
            };
            let done = step + 1;
            if done % self.cfg.log_every == 0 || done == end {
                on_log(&record)?;
            }
            if let Some((dir, every)) = ckpt {
                if every > 0 && (done % every == 0 || done == end) {
                    let path = dir.join(format!("{}_{done:08}.fgcp", phase.as_str()));
                    checkpoint::save_checkpoint(&self.to_bundle(), &path)?;
                }
            }
        }
    }

    fn gan_pretrain_step(&mut self, ds: &Dataset, iter: u64) -> Result<LogRecord> {
        let rate = schedule::gan_lr(self.cfg.gan_lr, iter);
        let n = self.cfg.batch_size;
        // The critic only trains when the generator actually faces it.
        let mut clog = None;
        if self.cfg.lambda_adversarial > 0.0 {
            for sub in 0..self.cfg.n_critic as u64 {
                let sub_step = iter * self.cfg.n_critic as u64 + sub;
                let idx = data::sample_batch(ds, self.cfg.seed, "gan.critic", sub_step, n);
                let eps = draw_eps(self.cfg.seed, "gan.eps", sub_step, n);
                clog = Some(self.critic_step(&stack_hr(ds, &idx), &stack_lr(ds, &idx), &eps, rate)?);
            }
        }
        let idx = data::sample_batch(ds, self.cfg.seed, "gan.batch", iter, n);
        let (breakdown, _) = self.generator_step(&stack_hr(ds, &idx), &stack_lr(ds, &idx), rate)?;
        self.state.gan_iter += 1;
        Ok(LogRecord {
            phase: Phase::GanPretrain.as_str(),
            step: iter,
            lr: rate,
            generator: Some(breakdown),
            critic: clog,
            fr_loss: None,
        })
    }

    fn fr_pretrain_step(&mut self, ds: &Dataset, step: u64) -> Result<LogRecord> {
        let epoch = step / self.steps_per_epoch(ds);
        let rate = schedule::fr_lr(self.cfg.fr_lr, epoch);
        let halves = data::sample_two_half_batch(ds, self.cfg.seed, "fr.batch", step, self.cfg.batch_size)?;
        let hr_imgs = stack_hr(ds, &halves.hr_indices);
        // No trained generator exists yet in this phase; plain upsampling
        // stands in for the degraded half.
        let sr_stand_in = data::stack_batch(
            &halves
                .sr_indices
                .iter()
                .map(|&i| data::bilinear_upsample(&ds.lr[i], ds.scale))
                .collect::<Vec<_>>()
                .iter()
                .collect::<Vec<_>>(),
        );
        let loss = self.fr_step(
            (&hr_imgs, &labels_of(ds, &halves.hr_indices)),
            (&sr_stand_in, &labels_of(ds, &halves.sr_indices)),
            rate,
        )?;
        self.state.fr_step += 1;
        Ok(LogRecord {
            phase: Phase::FrPretrain.as_str(),
            step,
            lr: rate,
            generator: None,
            critic: None,
            fr_loss: Some(loss),
        })
    }

    /// Snapshot everything needed to resume: parameters, optimizer moments,
    /// progress counters, and the canonical configuration.
    pub fn to_bundle(&self) -> CheckpointBundle {
        let mut sections: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
        let scalar = |v: f64| ArrayD::from_elem(IxDyn(&[]), v);
        for (names, params) in [
            (self.gen.param_names(), self.gen.params()),
            (self.critic.param_names(), self.critic.params()),
            (self.rec.param_names(), self.rec.params()),
            (self.head.param_names(), self.head.params()),
        ] {
            for (n, p) in names.iter().zip(params) {
                sections.insert(n.clone(), p.clone());
            }
        }
        let put_adam = |sections: &mut BTreeMap<String, ArrayD<f64>>, tag: &str, opt: &Adam, names: &[String]| {
            sections.insert(format!("opt.{tag}.t"), scalar(opt.t as f64));
            for ((n, m), v) in names.iter().zip(&opt.m).zip(&opt.v) {
                sections.insert(format!("opt.{tag}.m.{n}"), m.clone());
                sections.insert(format!("opt.{tag}.v.{n}"), v.clone());
            }
        };
        put_adam(&mut sections, "gen", &self.adam_gen, &self.gen.param_names());
        put_adam(&mut sections, "critic", &self.adam_critic, &self.critic.param_names());
        let mut fr_names = self.rec.param_names();
        fr_names.extend(self.head.param_names());
        for (n, u) in fr_names.iter().zip(&self.sgd_fr.u) {
            sections.insert(format!("opt.fr.u.{n}"), u.clone());
        }
        sections.insert("state.gan_iter".into(), scalar(self.state.gan_iter as f64));
        sections.insert("state.fr_step".into(), scalar(self.state.fr_step as f64));
        sections.insert("state.joint_step".into(), scalar(self.state.joint_step as f64));
        sections.insert("state.num_classes".into(), scalar(self.head.num_classes() as f64));
        CheckpointBundle {
            config_text: self.cfg.canonical_text(),
            sections,
        }
    }

    /// Rebuild a trainer from a bundle. Every expected section must be
    /// present with the right shape, and no unknown section may remain.
    pub fn from_bundle(bundle: &CheckpointBundle) -> Result<Trainer> {
        let cfg = RunConfig::parse(&bundle.config_text)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut remaining = bundle.sections.clone();
        let mut take_scalar = |name: &str| -> Result<f64> {
            let arr = remaining
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing section '{name}'")))?;
            if arr.ndim() != 0 {
                return Err(Error::Checkpoint(format!("section '{name}' is not a scalar")));
            }
            Ok(arr[IxDyn(&[])])
        };
        let classes = take_scalar("state.num_classes")? as usize;
        let state = TrainState {
            gan_iter: take_scalar("state.gan_iter")? as u64,
            fr_step: take_scalar("state.fr_step")? as u64,
            joint_step: take_scalar("state.joint_step")? as u64,
        };
        let mut trainer = Trainer::new(cfg, classes)?;
        trainer.state = state;

        let mut restore = |names: &[String], params: Vec<&mut ArrayD<f64>>| -> Result<()> {
            for (n, p) in names.iter().zip(params) {
                let arr = remaining
                    .remove(n)
                    .ok_or_else(|| Error::Checkpoint(format!("missing section '{n}'")))?;
                if arr.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!(
                        "section '{n}' has shape {:?}, model expects {:?}",
                        arr.shape(),
                        p.shape()
                    )));
                }
                *p = arr;
            }
            Ok(())
        };
        restore(&trainer.gen.param_names(), trainer.gen.params_mut())?;
        restore(&trainer.critic.param_names(), trainer.critic.params_mut())?;
        restore(&trainer.rec.param_names(), trainer.rec.params_mut())?;
        restore(&trainer.head.param_names(), trainer.head.params_mut())?;

        let mut load_adam = |tag: &str, names: &[String]| -> Result<(u64, Vec<ArrayD<f64>>, Vec<ArrayD<f64>>)> {
            let t = remaining
                .remove(&format!("opt.{tag}.t"))
                .ok_or_else(|| Error::Checkpoint(format!("missing section 'opt.{tag}.t'")))?;
            let t = t[IxDyn(&[])] as u64;
            let mut ms = Vec::new();
            let mut vs = Vec::new();
            if t > 0 {
                for n in names {
                    for (list, kind) in [(&mut ms, "m"), (&mut vs, "v")] {
                        let key = format!("opt.{tag}.{kind}.{n}");
                        list.push(
                            remaining
                                .remove(&key)
                                .ok_or_else(|| Error::Checkpoint(format!("missing section '{key}'")))?,
                        );
                    }
                }
            }
            Ok((t, ms, vs))
        };
        let (t, m, v) = load_adam("gen", &trainer.gen.param_names())?;
        (trainer.adam_gen.t, trainer.adam_gen.m, trainer.adam_gen.v) = (t, m, v);
        let (t, m, v) = load_adam("critic", &trainer.critic.param_names())?;
        (trainer.adam_critic.t, trainer.adam_critic.m, trainer.adam_critic.v) = (t, m, v);

        let mut fr_names = trainer.rec.param_names();
        fr_names.extend(trainer.head.param_names());
        let have_velocity = remaining.keys().any(|k| k.starts_with("opt.fr.u."));
        if have_velocity {
            let mut us = Vec::new();
            for n in &fr_names {
                let key = format!("opt.fr.u.{n}");
                us.push(
                    remaining
                        .remove(&key)
                        .ok_or_else(|| Error::Checkpoint(format!("missing section '{key}'")))?,
                );
            }
            trainer.sgd_fr.u = us;
        }
        if let Some(name) = remaining.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected section '{name}'")));
        }
        Ok(trainer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_checkpoint(&self.to_bundle(), path)
    }

    pub fn load(path: &Path) -> Result<Trainer> {
        Trainer::from_bundle(&checkpoint::load_checkpoint(path)?)
    }
}
