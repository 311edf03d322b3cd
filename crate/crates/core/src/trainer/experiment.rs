use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::model::{build_model, Batch, TinyModelConfig};
use super::optim::{Optimizer, OptimizerConfig};
use super::TrainError;
use crate::collectives::{LedgerRow, Traffic, World};
use crate::hook::{
    baseline_reduce_unit, classification_report, classify_layers, segment_charged_bits,
    tagc_reduce_shard, CompressionConfig, ExchangeStats, LayerDecision, ShardPlan, SketchExchange,
    TAG_DENSE, TAG_INDEX, TAG_PARAMS, TAG_SKETCH,
};
use crate::sparsifier::ResidualAccumulator;
use crate::Result;

/// Mixed into the run seed to seed batch sampling.
pub const DATA_STREAM: u64 = 0x5EED_DA7A;

/// How gradients of flagged layers travel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientPath {
    Baseline,
    Tagc(CompressionConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub steps: usize,
    /// Sequences per step across all ranks.
    pub batch_size: usize,
    pub seq_len: usize,
    pub world_size: usize,
    pub optimizer: OptimizerConfig,
    pub path: GradientPath,
    #[serde(default)]
    pub sketch_exchange: SketchExchange,
    #[serde(default)]
    pub model: TinyModelConfig,
    /// Validation cadence in steps; the final step is always evaluated.
    pub eval_every: usize,
    pub eval_batches: usize,
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(TrainError::Invalid(m).into());
        if self.steps == 0 || self.eval_every == 0 || self.eval_batches == 0 {
            return bad("steps, eval_every and eval_batches must be at least 1".into());
        }
        if self.world_size == 0 || self.batch_size == 0 || !self.batch_size.is_multiple_of(self.world_size) {
            return bad(format!(
                "batch size {} must be a positive multiple of the world size {}",
                self.batch_size, self.world_size
            ));
        }
        if self.seq_len == 0 || self.seq_len > self.model.context {
            return bad(format!(
                "sequence length {} must be in 1..={}",
                self.seq_len, self.model.context
            ));
        }
        let lr = self.optimizer.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return bad(format!("learning rate {lr} must be positive"));
        }
        if let GradientPath::Tagc(c) = &self.path {
            c.validate_for_world(self.world_size)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub status: RunStatus,
    pub steps_completed: usize,
    pub total_params: usize,
    pub compressed_params: usize,
    /// Mean training loss over ranks, one per completed step.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<ValPoint>,
    pub final_val_loss: Option<f64>,
    pub ledger: Vec<LedgerRow>,
    pub exchange: ExchangeStats,
    /// Charged bits of the compressed units as predicted from the sketch
    /// and index geometry, and as recorded by the ledger.
    pub predicted_compressed_bits: u64,
    pub measured_compressed_bits: u64,
    pub layers: Vec<LayerDecision>,
}

impl RunMetrics {
    pub fn ledger_consistent(&self) -> bool {
        self.predicted_compressed_bits == self.measured_compressed_bits
    }

    /// `step,train_loss,val_loss` with the validation column empty between
    /// evaluations. Steps count from 1.
    pub fn loss_csv(&self) -> String {
        let val: BTreeMap<usize, f64> = self.val_loss.iter().map(|p| (p.step, p.loss)).collect();
        let mut out = String::from("step,train_loss,val_loss\n");
        for (i, l) in self.train_loss.iter().enumerate() {
            let step = i + 1;
            match val.get(&step) {
                Some(v) => out.push_str(&format!("{step},{l},{v}\n")),
                None => out.push_str(&format!("{step},{l},\n")),
            }
        }
        out
    }
}

/// Data-parallel training over `world`: each rank computes gradients on its
/// slice of the global batch, shards are reduced to their owners through the
/// configured path, owners apply the optimizer, and updated shards are
/// gathered back to every rank.
pub fn run_experiment(run: &TrainRunConfig, world: &World) -> Result<RunMetrics> {
    run.validate()?;
    if world.size() != run.world_size {
        return Err(TrainError::Invalid(format!(
            "run expects {} ranks, world has {}",
            run.world_size,
            world.size()
        ))
        .into());
    }
    let corpus = Corpus::bundled();
    let mut model = build_model(&run.model, run.seed)?;
    let layers = model.layer_specs();
    let (flags, decisions, compression) = match &run.path {
        GradientPath::Baseline => {
            let report = classification_report(&layers, crate::hook::LayerPolicy::None, true)?;
            (vec![false; layers.len()], report.layers, None)
        }
        GradientPath::Tagc(c) => {
            let flags = classify_layers(&layers, c.policy, c.include_out_proj)?;
            let report = classification_report(&layers, c.policy, c.include_out_proj)?;
            (flags, report.layers, Some(c))
        }
    };
    let plan = ShardPlan::new(&layers, &flags, world.size())?;
    let total = model.params.len();

    let mut per_step_bits = 0u64;
    let mut accumulators: BTreeMap<usize, Vec<ResidualAccumulator>> = BTreeMap::new();
    if let Some(c) = compression {
        for unit in plan.units.iter().filter(|u| u.compressed) {
            for s in &unit.shards {
                let b = segment_charged_bits(s.len(), c, run.sketch_exchange)?;
                per_step_bits += b.index + b.sketch;
                accumulators.insert(
                    s.id,
                    (0..world.size())
                        .map(|_| ResidualAccumulator::zeros(s.len()))
                        .collect(),
                );
            }
        }
    }

    let mut optimizer = Optimizer::new(run.optimizer.clone(), total);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ DATA_STREAM);
    let val_batches = corpus.val_batches(run.eval_batches, run.batch_size, run.seq_len)?;
    let per_rank = run.batch_size / world.size();
    let scale = 1.0 / world.size() as f32;
    let mut stats = ExchangeStats::default();
    let mut train_loss = Vec::with_capacity(run.steps);
    let mut val_loss = Vec::new();
    let mut status = RunStatus::Completed;

    for step in 1..=run.steps {
        let batch = corpus.sample_train(&mut rng, run.batch_size, run.seq_len)?;
        let results = world.map_ranks(|r| {
            let (loss, mut g) =
                model.loss_and_gradients(&batch.slice(r * per_rank, (r + 1) * per_rank))?;
            if scale != 1.0 {
                g.iter_mut().for_each(|v| *v *= scale);
            }
            Ok::<_, TrainError>((loss, g))
        });
        let mut grads = Vec::with_capacity(world.size());
        let mut loss = 0.0f64;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.push(g);
        }
        loss /= world.size() as f64;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            status = RunStatus::Diverged {
                step,
                reason: format!("non-finite training loss or gradient (loss {loss})"),
            };
            break;
        }
        train_loss.push(loss);

        let mut updated = model.params.clone();
        for unit in &plan.units {
            match (unit.compressed, compression) {
                (true, Some(c)) => {
                    for s in &unit.shards {
                        let inputs: Vec<Vec<f32>> =
                            grads.iter().map(|g| g[s.range.clone()].to_vec()).collect();
                        let acc = accumulators
                            .get_mut(&s.id)
                            .expect("accumulator per compressed shard");
                        let out =
                            tagc_reduce_shard(world, s, &inputs, acc, c, run.sketch_exchange)?;
                        stats.merge(&out.stats);
                        let g = out.owner_output().expect("owner receives the shard");
                        optimizer.apply(
                            step as u64,
                            s.range.start,
                            &mut updated[s.range.clone()],
                            g,
                        );
                    }
                }
                _ => {
                    let inputs: Vec<Vec<f32>> = grads
                        .iter()
                        .map(|g| g[unit.range.clone()].to_vec())
                        .collect();
                    let out = baseline_reduce_unit(world, unit, &inputs)?;
                    for (s, g) in unit.shards.iter().zip(&out) {
                        optimizer.apply(
                            step as u64,
                            s.range.start,
                            &mut updated[s.range.clone()],
                            g,
                        );
                    }
                }
            }
        }
        for unit in &plan.units {
            let slot = unit.slot_len();
            let slices = world.map_ranks(|d| {
                let mut v = updated[unit.shards[d].range.clone()].to_vec();
                v.resize(slot, 0.0);
                v
            });
            let gathered = world.all_gather(slices, Traffic::new(TAG_PARAMS, unit.len()))?;
            for (d, s) in unit.shards.iter().enumerate() {
                model.params[s.range.clone()]
                    .copy_from_slice(&gathered[0][d * slot..d * slot + s.len()]);
            }
        }

        if step % run.eval_every == 0 || step == run.steps {
            let v = mean_loss(&model, &val_batches)?;
            val_loss.push(ValPoint { step, loss: v });
            if !v.is_finite() {
                status = RunStatus::Diverged {
                    step,
                    reason: format!("non-finite validation loss {v}"),
                };
                break;
            }
        }
    }

    let ledger = world.ledger();
    let steps_completed = train_loss.len();
    Ok(RunMetrics {
        final_val_loss: match status {
            RunStatus::Completed => val_loss.last().map(|p| p.loss),
            RunStatus::Diverged { .. } => None,
        },
        status,
        steps_completed,
        total_params: total,
        compressed_params: plan.compressed_params(),
        train_loss,
        val_loss,
        measured_compressed_bits: ledger.charged_bits(&[TAG_INDEX, TAG_SKETCH, TAG_DENSE]),
        predicted_compressed_bits: per_step_bits * steps_completed as u64,
        ledger: ledger.rows(),
        exchange: stats,
        layers: decisions,
    })
}

fn mean_loss(model: &super::model::Model, batches: &[Batch]) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        total += model.loss(b)?;
    }
    Ok(total / batches.len() as f64)
}
