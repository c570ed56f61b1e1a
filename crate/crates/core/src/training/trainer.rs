use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::hungarian::{hungarian_match, MatchResult};
use super::losses::{association_target, level_loss, matching_cost};
use super::optim::{clip_global_norm, AdamW};
use crate::association::association_bce;
use crate::autograd::{Gradients, Tape, Var};
use crate::data::corpus::Corpus;
use crate::data::sampler::{Sampler, TrainSample};
use crate::error::{AimsError, Result};
use crate::level::Level;
use crate::mask::Mask;
use crate::model::{AimsModel, LevelOutput};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelTerms {
    pub ce: f64,
    pub bce: f64,
    pub dice: f64,
    pub total: f64,
}

/// Loss values of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: u8,
    pub level: Level,
    pub terms: LevelTerms,
    pub assoc: f64,
    pub total: f64,
}

/// Matches one prediction set against targets inside `region`.
pub fn match_level(
    tape: &Tape,
    ness: Var,
    masks: Var,
    targets: &[Mask],
    region: &Mask,
    cfg: &TrainConfig,
) -> Result<MatchResult> {
    let ness: Vec<f64> = tape.value(ness).column(0).to_vec();
    let cost = matching_cost(&ness, tape.value(masks), targets, region, cfg.match_weights);
    hungarian_match(&cost)
}

/// Records the full objective of one sample on `tape`.
pub fn sample_objective(model: &AimsModel, tape: &mut Tape, sample: &TrainSample, cfg: &TrainConfig) -> Result<(Var, SampleReport)> {
    let image = sample.scene.image.to_matrix();
    let region = &sample.prompt.mask;
    let out = model.forward(tape, &image, region, &Level::ALL)?;
    let sup = &sample.supervision;
    let mut matches: [Option<MatchResult>; 3] = [None, None, None];
    for level in Level::ALL {
        if let Some(targets) = sup.targets(level) {
            let o: &LevelOutput = out.level(level).expect("all levels run");
            matches[level.index()] = Some(match_level(tape, o.ness, o.masks, targets, region, cfg)?);
        }
    }
    let active = sup.active;
    let targets = sup.targets(active).expect("active level has targets");
    let o = out.level(active).expect("all levels run").clone();
    let main = level_loss(tape, o.ness, o.masks, targets, region, matches[active.index()].as_ref().unwrap(), cfg.loss_weights, cfg.unmatched_weight);
    let mut terms_vars = vec![main.total];
    for &(ness, masks) in &o.aux {
        let m = match_level(tape, ness, masks, targets, region, cfg)?;
        terms_vars.push(level_loss(tape, ness, masks, targets, region, &m, cfg.loss_weights, cfg.unmatched_weight).total);
    }
    let mut assoc_vars = Vec::new();
    for (pair, links) in &sup.assoc {
        let logits = out.assoc[pair.index()].expect("both levels run");
        let (nc, nf) = tape.shape(logits);
        let target = association_target(
            nc,
            nf,
            matches[pair.coarse().index()].as_ref().unwrap(),
            matches[pair.fine().index()].as_ref().unwrap(),
            links,
        );
        assoc_vars.push(association_bce(tape, logits, &target)?);
    }
    let assoc = tape.sum_scalars(&assoc_vars);
    let base = tape.sum_scalars(&terms_vars);
    let weighted_assoc = tape.scale(assoc, cfg.assoc_weight);
    let total = tape.add(base, weighted_assoc);
    let report = SampleReport {
        sample_id: sample.spec.sample_id,
        level: active,
        terms: LevelTerms {
            ce: tape.scalar(main.ce),
            bce: tape.scalar(main.bce),
            dice: tape.scalar(main.dice),
            total: tape.scalar(main.total),
        },
        assoc: tape.scalar(assoc),
        total: tape.scalar(total),
    };
    Ok((total, report))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    /// Mean terms per active level over the batch.
    pub levels: BTreeMap<Level, LevelTerms>,
    pub assoc: f64,
    /// Counts of sample ids 1..=8 in the batch.
    pub sample_types: [usize; 8],
    pub grad_norm: f64,
}

pub struct Trainer {
    pub model: AimsModel,
    pub config: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: AimsModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(model.params(), config.weight_decay);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, config, opt, rng, step: 0 })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Mean objective over the batch, its gradients and per-sample reports.
    pub fn batch_gradients(&self, batch: &[TrainSample]) -> Result<(f64, Gradients, Vec<SampleReport>)> {
        let mut grads = Gradients::zeros_like(self.model.params());
        let mut reports = Vec::with_capacity(batch.len());
        let mut total = 0.0;
        for sample in batch {
            let mut tape = Tape::new(self.model.params());
            let (loss, report) = sample_objective(&self.model, &mut tape, sample, &self.config)?;
            let g = tape.backward(loss);
            if !report.total.is_finite() || !g.all_finite() {
                return Err(AimsError::NonFiniteLoss {
                    step: self.step,
                    sample: serde_json::to_string(&sample.spec).unwrap_or_default(),
                    detail: format!("loss {:?}", report),
                });
            }
            total += report.total;
            grads.accumulate(&g);
            reports.push(report);
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads, reports))
    }

    pub fn train_step(&mut self, batch: &[TrainSample]) -> Result<StepRecord> {
        let (total, mut grads, reports) = self.batch_gradients(batch)?;
        let grad_norm = clip_global_norm(&mut grads, self.config.grad_clip);
        let lr = self.config.learning_rate_at(self.step);
        self.opt.step(self.model.params_mut(), &grads, lr);
        let mut levels: BTreeMap<Level, (LevelTerms, usize)> = BTreeMap::new();
        let mut sample_types = [0usize; 8];
        let mut assoc = 0.0;
        for r in &reports {
            let e = levels.entry(r.level).or_default();
            e.0.ce += r.terms.ce;
            e.0.bce += r.terms.bce;
            e.0.dice += r.terms.dice;
            e.0.total += r.terms.total;
            e.1 += 1;
            sample_types[r.sample_id as usize - 1] += 1;
            assoc += r.assoc;
        }
        let levels = levels
            .into_iter()
            .map(|(l, (t, n))| {
                let n = n as f64;
                (l, LevelTerms { ce: t.ce / n, bce: t.bce / n, dice: t.dice / n, total: t.total / n })
            })
            .collect();
        let record = StepRecord {
            step: self.step,
            lr,
            total,
            levels,
            assoc: assoc / reports.len().max(1) as f64,
            sample_types,
            grad_norm,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs the remaining iterations, calling `on_step` after each.
    pub fn run(&mut self, corpus: &Corpus, mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>) -> Result<Vec<StepRecord>> {
        let sampler = Sampler::new(corpus);
        if sampler.available_ids().is_empty() {
            return Err(AimsError::Config("corpus offers no eligible sample type".into()));
        }
        let mut log = Vec::with_capacity(self.config.iterations.saturating_sub(self.step));
        while self.step < self.config.iterations {
            let batch: Vec<TrainSample> =
                (0..self.config.batch_size).map(|_| sampler.draw(&mut self.rng).expect("rows available")).collect();
            let record = self.train_step(&batch)?;
            on_step(self, &record)?;
            log.push(record);
        }
        Ok(log)
    }
}
