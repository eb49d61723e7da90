use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mmd_rbf};
use super::{DatasetKind, DiscriminatorKind, HarnessError, RecordRow, RunConfig, RunRecord, TargetLoss};
use crate::alda::{
    adversarial_loss, corrected_labels_value, corrected_target_loss_batch, mean_weights, pseudo_label_ce,
    pseudo_labels, reg_loss, weighted_bce, weighted_cross_entropy, BatchLabels,
};
use crate::data::{
    apply_shift, batch_iter, gen_blobs, gen_two_moons, load_idx, Domain, DomainBatch, LabeledSet, Standardizer,
};
use crate::nn::{init_mlp, lambda_schedule, lr_schedule, Activation, Dropout, Mlp, Optimizer, ParamGroup};
use crate::tensor::{Tape, Tensor, Var};

/// Generator, classifier and discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub generator: Mlp,
    pub classifier: Mlp,
    pub discriminator: Mlp,
    /// Statistics the inputs were standardized with, if any.
    pub standardizer: Option<Standardizer>,
}

impl Models {
    /// Feature rows `G(x)` in evaluation mode.
    pub fn features(&self, x: &Tensor) -> Result<Tensor, HarnessError> {
        Ok(self.generator.predict(x)?)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor, HarnessError> {
        Ok(self.classifier.predict(&self.features(x)?)?)
    }

    /// Stable digest of every parameter bit pattern.
    pub fn fingerprint(net: &Mlp) -> u64 {
        // FNV-1a over the raw bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in net.params() {
            for v in p.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Seeds derived from the two run seeds, one per independent stream.
#[derive(Debug, Clone, Copy)]
struct Streams {
    init_g: u64,
    init_c: u64,
    init_d: u64,
    dropout_g: u64,
    dropout_d: u64,
    data_source: u64,
    data_target: u64,
    data_shift: u64,
    batches: u64,
    probe: u64,
}

impl Streams {
    fn new(seed_init: u64, seed_data: u64) -> Self {
        let mut a = ChaCha8Rng::seed_from_u64(seed_init);
        let mut b = ChaCha8Rng::seed_from_u64(seed_data ^ 0x5eed_da7a);
        Self {
            init_g: a.gen(),
            init_c: a.gen(),
            init_d: a.gen(),
            dropout_g: a.gen(),
            dropout_d: a.gen(),
            data_source: b.gen(),
            data_target: b.gen(),
            data_shift: b.gen(),
            batches: b.gen(),
            probe: b.gen(),
        }
    }
}

/// Source and shifted target sets for `cfg`.
pub fn build_domains(cfg: &RunConfig) -> Result<(LabeledSet, LabeledSet, Option<Standardizer>), HarnessError> {
    let st = Streams::new(cfg.seed_init, cfg.seed_data);
    match cfg.dataset {
        DatasetKind::TwoMoons => {
            let source = gen_two_moons(cfg.n_source, cfg.source_noise, st.data_source)?;
            let target = gen_two_moons(cfg.n_target, cfg.source_noise, st.data_target)?;
            let target = apply_shift(&target, &cfg.shift(), st.data_shift)?;
            Ok((source, target, None))
        }
        DatasetKind::Blobs => {
            let source = gen_blobs(cfg.n_source, cfg.classes, cfg.seed_data, cfg.source_noise, st.data_source)?;
            let target = gen_blobs(cfg.n_target, cfg.classes, cfg.seed_data, cfg.source_noise, st.data_target)?;
            let target = apply_shift(&target, &cfg.shift(), st.data_shift)?;
            Ok((source, target, None))
        }
        DatasetKind::MnistUsps => {
            let paths = [&cfg.mnist_images, &cfg.mnist_labels, &cfg.usps_images, &cfg.usps_labels];
            if paths.iter().any(|p| p.is_empty()) {
                return Err(HarnessError::Config(
                    "mnist_usps needs mnist_images, mnist_labels, usps_images and usps_labels".into(),
                ));
            }
            let (source, norm) = load_idx(
                cfg.mnist_images.as_ref(),
                cfg.mnist_labels.as_ref(),
                Some(cfg.n_source),
                st.data_source,
                None,
            )?;
            let (target, _) = load_idx(
                cfg.usps_images.as_ref(),
                cfg.usps_labels.as_ref(),
                Some(cfg.n_target),
                st.data_target,
                Some(&norm),
            )?;
            Ok((source, target.with_domain(Domain::Target), Some(norm)))
        }
    }
}

/// Schedule values and batch constants shared by both updates of one step.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub step: usize,
    pub q: f64,
    pub lambda: f64,
    pub lr_generator: f64,
    pub lr_classifier: f64,
    pub lr_discriminator: f64,
    /// Generator dropout masks, replayed by both updates.
    g_masks: Vec<Tensor>,
    features: Tensor,
    pub labels: BatchLabels,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscriminatorStats {
    pub l_adv_s: f64,
    pub l_adv_t: f64,
    pub l_reg: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassifierStats {
    pub l_src_ce: f64,
    pub l_t: f64,
}

/// Owns models and optimizer state of a single run.
pub struct Trainer {
    cfg: RunConfig,
    models: Models,
    opt_g: Optimizer,
    opt_c: Optimizer,
    opt_d: Optimizer,
    rng_g: ChaCha8Rng,
    rng_d: ChaCha8Rng,
    step: usize,
}

fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor, HarnessError> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Ok(Tensor::matrix(a.rows() + b.rows(), a.cols(), data)?)
}

fn halves<'t>(v: Var<'t>, n: usize) -> Result<(Var<'t>, Var<'t>), HarnessError> {
    let rows = v.shape()[0];
    Ok((v.slice_rows(0, n)?, v.slice_rows(n, rows)?))
}

impl Trainer {
    pub fn new(cfg: &RunConfig, input_dim: usize, classes: usize) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let st = Streams::new(cfg.seed_init, cfg.seed_data);
        let mut g_dims = vec![input_dim];
        g_dims.extend(&cfg.gen_hidden);
        g_dims.push(cfg.feature_dim);
        let generator =
            init_mlp(&g_dims, Activation::Relu, cfg.gen_dropout, st.init_g)?.with_output_activation(Activation::Relu);
        let classifier = init_mlp(&[cfg.feature_dim, classes], Activation::Relu, 0.0, st.init_c)?;
        let d_out = match cfg.method.discriminator() {
            Some(DiscriminatorKind::Domain) => 1,
            _ => classes,
        };
        let mut d_dims = vec![cfg.feature_dim];
        d_dims.extend(&cfg.disc_hidden);
        d_dims.push(d_out);
        let discriminator = init_mlp(&d_dims, Activation::Relu, cfg.disc_dropout, st.init_d)?;
        let kind = cfg.optimizer_kind();
        Ok(Self {
            cfg: cfg.clone(),
            models: Models {
                generator,
                classifier,
                discriminator,
                standardizer: None,
            },
            opt_g: Optimizer::new(kind),
            opt_c: Optimizer::new(kind),
            opt_d: Optimizer::new(kind),
            rng_g: ChaCha8Rng::seed_from_u64(st.dropout_g),
            rng_d: ChaCha8Rng::seed_from_u64(st.dropout_d),
            step: 0,
        })
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn into_models(self) -> Models {
        self.models
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Schedules at the current step, generator masks and pseudo-labels.
    pub fn begin_step(&mut self, batch: &DomainBatch) -> Result<StepContext, HarnessError> {
        let cfg = &self.cfg;
        let q = self.step as f64 / cfg.total_steps as f64;
        if q > 1.0 {
            return Err(HarnessError::Contract(format!("step {} past total_steps", self.step)));
        }
        let lambda = match cfg.lambda_fixed {
            Some(l) => l,
            None => lambda_schedule(q)?,
        };
        let sp = cfg.schedule();
        let x = concat(&batch.xs, &batch.xt)?;
        let n = batch.xs.rows();

        let tape = Tape::new();
        let g = self.models.generator.bind(&tape, false);
        let c = self.models.classifier.bind(&tape, false);
        let mut dropout = Dropout::sample(&mut self.rng_g);
        let f = g.forward(tape.constant(x), &mut dropout)?;
        let g_masks = dropout.into_masks();
        let probs = c.forward(f, &mut Dropout::Off)?.softmax()?.value().clone();
        let labels = BatchLabels::new(
            batch.ys.clone(),
            &probs.slice_rows(0, n)?,
            &probs.slice_rows(n, probs.rows())?,
            cfg.delta,
            cfg.soft_pseudo_labels,
        )?;
        let features = f.value().clone();
        Ok(StepContext {
            step: self.step,
            q,
            lambda,
            lr_generator: lr_schedule(q, &sp, ParamGroup::Generator)?,
            lr_classifier: lr_schedule(q, &sp, ParamGroup::Classifier)?,
            lr_discriminator: lr_schedule(q, &sp, ParamGroup::Discriminator)?,
            g_masks,
            features,
            labels,
        })
    }

    /// Discriminator losses on `d_logits`; returns (source, target, reg).
    fn disc_losses<'t>(
        &self,
        d_logits: Var<'t>,
        labels: &BatchLabels,
        with_reg: bool,
    ) -> Result<(Var<'t>, Var<'t>, Option<Var<'t>>), HarnessError> {
        let n = labels.y_source.len();
        let (dl_s, dl_t) = halves(d_logits, n)?;
        match self.cfg.method.discriminator() {
            Some(DiscriminatorKind::Domain) => {
                let n_t = dl_t.shape()[0];
                let l_s = weighted_bce(dl_s.sigmoid()?, &Tensor::ones(&[n, 1]), &mean_weights(n))?;
                let l_t = weighted_bce(dl_t.sigmoid()?, &Tensor::zeros(&[n_t, 1]), &mean_weights(n_t))?;
                Ok((l_s, l_t, None))
            }
            Some(DiscriminatorKind::NoiseCorrecting) => {
                let adv = adversarial_loss(dl_s.sigmoid()?, dl_t.sigmoid()?, labels)?;
                let reg = if with_reg {
                    Some(reg_loss(dl_s, &labels.y_source)?)
                } else {
                    None
                };
                Ok((adv.source, adv.target, reg))
            }
            None => Err(HarnessError::Contract("method has no discriminator".into())),
        }
    }

    /// One update of the discriminator objective. Generator and classifier
    /// parameters are untouched.
    pub fn step_discriminator(&mut self, ctx: &StepContext) -> Result<DiscriminatorStats, HarnessError> {
        if self.cfg.method.discriminator().is_none() {
            return Ok(DiscriminatorStats::default());
        }
        let tape = Tape::new();
        let d = self.models.discriminator.bind(&tape, true);
        let f = tape.constant(ctx.features.clone());
        let d_logits = d.forward(f, &mut Dropout::sample(&mut self.rng_d))?;
        let (l_s, l_t, reg) = self.disc_losses(d_logits, &ctx.labels, self.cfg.method.uses_reg())?;
        let mut total = l_s.add(l_t)?;
        if let Some(r) = reg {
            total = total.add(r)?;
        }
        let stats = DiscriminatorStats {
            l_adv_s: l_s.item()?,
            l_adv_t: l_t.item()?,
            l_reg: reg.map_or(Ok(0.0), |r| r.item())?,
        };
        let grads = tape.backward(total)?;
        let g: Vec<Tensor> = d.params().iter().map(|&p| grads.wrt(p)).collect();
        let mut params = self.models.discriminator.params_mut();
        self.opt_d.step(&mut params, &g, ctx.lr_discriminator)?;
        Ok(stats)
    }

    /// One update of the classifier and generator objectives. The
    /// discriminator enters as a constant behind a gradient reversal layer.
    pub fn step_classifier_generator(
        &mut self,
        batch: &DomainBatch,
        ctx: &StepContext,
    ) -> Result<ClassifierStats, HarnessError> {
        let method = self.cfg.method;
        let n = batch.xs.rows();
        let tape = Tape::new();
        let g = self.models.generator.bind(&tape, true);
        let c = self.models.classifier.bind(&tape, true);
        let d = self.models.discriminator.bind(&tape, false);
        let x = tape.constant(concat(&batch.xs, &batch.xt)?);
        let f = g.forward(x, &mut Dropout::replay(&ctx.g_masks))?;
        let logits = c.forward(f, &mut Dropout::Off)?;
        let (logits_s, logits_t) = halves(logits, n)?;
        let l_ce = weighted_cross_entropy(logits_s, &batch.ys, &mean_weights(n))?;
        let mut total = l_ce;

        let mut xi_target: Option<Tensor> = None;
        if method.discriminator().is_some() {
            let mut dropout = Dropout::sample(&mut self.rng_d);
            let d_logits = d.forward(f.grl(ctx.lambda)?, &mut dropout)?;
            let d_masks = dropout.into_masks();
            let (l_s, l_t, _) = self.disc_losses(d_logits, &ctx.labels, false)?;
            total = total.add(l_s.add(l_t)?)?;
            xi_target = Some(d_logits.slice_rows(n, d_logits.shape()[0])?.sigmoid()?.value().clone());
            if self.cfg.reg_through_generator && method.uses_reg() {
                let plain = d.forward(f, &mut Dropout::replay(&d_masks))?;
                let r = reg_loss(plain.slice_rows(0, n)?, &batch.ys)?;
                total = total.add(r.scale(ctx.lambda)?)?;
            }
        }

        let target_term = match method.target_loss() {
            TargetLoss::None => None,
            TargetLoss::PseudoLabelCe => pseudo_label_ce(logits_t, &ctx.labels.target_labels)?,
            TargetLoss::Corrected(basic) => {
                let xi = xi_target
                    .as_ref()
                    .ok_or_else(|| HarnessError::Contract("corrected target loss needs a discriminator".into()))?;
                let c_t = corrected_labels_value(xi, &ctx.labels.target_pseudo)?;
                corrected_target_loss_batch(&c_t, logits_t, &ctx.labels.accepted(), basic)?
            }
        };
        let l_t = match target_term {
            Some(t) => {
                total = total.add(t.scale(ctx.lambda)?)?;
                t.item()?
            }
            None => 0.0,
        };
        let stats = ClassifierStats {
            l_src_ce: l_ce.item()?,
            l_t,
        };

        let grads = tape.backward(total)?;
        let gg: Vec<Tensor> = g.params().iter().map(|&p| grads.wrt(p)).collect();
        let gc: Vec<Tensor> = c.params().iter().map(|&p| grads.wrt(p)).collect();
        self.opt_g
            .step(&mut self.models.generator.params_mut(), &gg, ctx.lr_generator)?;
        self.opt_c
            .step(&mut self.models.classifier.params_mut(), &gc, ctx.lr_classifier)?;
        Ok(stats)
    }

    /// Discriminator update, then classifier and generator update, on one batch.
    pub fn iterate(&mut self, batch: &DomainBatch) -> Result<(StepContext, DiscriminatorStats, ClassifierStats), HarnessError> {
        let ctx = self.begin_step(batch)?;
        let ds = self.step_discriminator(&ctx)?;
        let cs = self.step_classifier_generator(batch, &ctx)?;
        self.step += 1;
        Ok((ctx, ds, cs))
    }
}

/// Fixed evaluation subsample used by every probe of a run.
struct Probe {
    source_idx: Vec<usize>,
    target_idx: Vec<usize>,
}

impl Probe {
    fn new(source: &LabeledSet, target: &LabeledSet, samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |n: usize| {
            let mut idx = rand::seq::index::sample(&mut rng, n, samples.min(n)).into_vec();
            idx.sort_unstable();
            idx
        };
        Self {
            source_idx: pick(source.len()),
            target_idx: pick(target.len()),
        }
    }

    fn measure(&self, models: &Models, source: &LabeledSet, target: &LabeledSet, delta: f64) -> Result<(f64, f64, f64, f64), HarnessError> {
        let f_s = models.features(source.features())?;
        let f_t = models.features(target.features())?;
        let logits_s = models.classifier.predict(&f_s)?;
        let logits_t = models.classifier.predict(&f_t)?;
        let src_acc = accuracy(&logits_s, source.labels());
        let tgt_acc = accuracy(&logits_t, target.labels());
        let pl = pseudo_labels(&softmax_rows(&logits_t)?, delta)?;
        let accepted = pl.iter().filter(|p| p.accepted).count() as f64 / pl.len() as f64;
        let mmd = mmd_rbf(&f_s.select_rows(&self.source_idx), &f_t.select_rows(&self.target_idx), None)?;
        Ok((src_acc, tgt_acc, accepted, mmd))
    }
}

fn softmax_rows(logits: &Tensor) -> Result<Tensor, HarnessError> {
    let tape = Tape::new();
    let p = tape.constant(logits.clone()).softmax()?;
    let v = p.value().clone();
    Ok(v)
}

/// Trained models and the probe record of one run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub models: Models,
    pub record: RunRecord,
    pub source: LabeledSet,
    pub target: LabeledSet,
}

/// Runs `cfg.total_steps` iterations. A failing step aborts the run and
/// returns the record collected so far.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    let (source, target, norm) = build_domains(cfg)?;
    let mut out = train_on(cfg, &source, &target)?;
    out.models.standardizer = norm;
    Ok(out)
}

pub fn train_on(cfg: &RunConfig, source: &LabeledSet, target: &LabeledSet) -> Result<TrainOutput, HarnessError> {
    let streams = Streams::new(cfg.seed_init, cfg.seed_data);
    let mut trainer = Trainer::new(cfg, source.dim(), source.classes())?;
    let probe = Probe::new(source, target, cfg.mmd_samples, streams.probe);
    let mut batches = batch_iter(source, target, cfg.batch, streams.batches)?;
    let mut record = RunRecord::default();
    for step in 0..cfg.total_steps {
        let batch = batches.next().expect("batch stream is endless");
        let (ctx, ds, cs) = match trainer.iterate(&batch) {
            Ok(v) => v,
            Err(e) => {
                return Err(HarnessError::Aborted {
                    step,
                    reason: e.to_string(),
                    record,
                })
            }
        };
        if step % cfg.probe_every == 0 || step + 1 == cfg.total_steps {
            let (src_acc, tgt_acc, accepted_frac, mmd) = probe
                .measure(trainer.models(), source, target, cfg.delta)
                .map_err(|e| HarnessError::Aborted {
                    step,
                    reason: e.to_string(),
                    record: record.clone(),
                })?;
            record.push(RecordRow {
                step,
                q: ctx.q,
                lambda: ctx.lambda,
                lr: ctx.lr_generator,
                src_acc,
                tgt_acc,
                accepted_frac,
                l_src_ce: cs.l_src_ce,
                l_adv_s: ds.l_adv_s,
                l_adv_t: ds.l_adv_t,
                l_reg: ds.l_reg,
                l_t: cs.l_t,
                mmd,
            });
        }
    }
    Ok(TrainOutput {
        models: trainer.into_models(),
        record,
        source: source.clone(),
        target: target.clone(),
    })
}
