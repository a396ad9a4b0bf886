//! The training loop: minibatch assembly, the combined objective with its
//! gradients, Adam with lazily updated embedding rows, a linearly decaying
//! learning rate, and per-step telemetry.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::encoder::{self, EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{affine, softmax, Model, ModelParams};
use crate::objective::{ce_loss, combined_loss, scl_loss};
use crate::sampler::{hard_negatives, soft_negatives, ContrastiveItem, ItemMeta, MemoryBank};

/// Mixed into the shuffle seed so example order and parameter
/// initialization draw from independent streams of one user-facing seed.
const ORDER_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// The four trainable model flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Cross-entropy only.
    LidCe,
    /// Cross-entropy plus contrastive loss, in-batch pool only.
    LidScl,
    /// Contrastive loss with a memory bank and soft negatives.
    ConLidS,
    /// Contrastive loss with a memory bank and hard negatives.
    ConLidH,
}

impl Variant {
    /// The loss mode this variant must run with.
    pub fn loss_mode(self) -> LossMode {
        match self {
            Variant::LidCe => LossMode::CeOnly,
            Variant::LidScl | Variant::ConLidS => LossMode::SclSoft,
            Variant::ConLidH => LossMode::SclHard,
        }
    }

    /// CLI spelling of the variant.
    pub fn name(self) -> &'static str {
        match self {
            Variant::LidCe => "ce",
            Variant::LidScl => "scl",
            Variant::ConLidS => "conlid-s",
            Variant::ConLidH => "conlid-h",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "ce" => Ok(Variant::LidCe),
            "scl" => Ok(Variant::LidScl),
            "conlid-s" => Ok(Variant::ConLidS),
            "conlid-h" => Ok(Variant::ConLidH),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected ce, scl, conlid-s, or conlid-h)"
            ))),
        }
    }
}

/// Which terms the objective computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    CeOnly,
    SclSoft,
    SclHard,
}

/// Contrastive-objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Contrastive temperature.
    pub tau: f64,
    /// Memory bank capacity (0 disables the bank).
    pub bank_size: usize,
    /// Minimum negatives per anchor before hard-negative constraints relax.
    pub min_negatives: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mode: LossMode::CeOnly,
            tau: 0.05,
            bank_size: 2048,
            min_negatives: 1024,
        }
    }
}

/// Adam moment settings; the defaults make decoupled weight decay a no-op,
/// so the update reduces to plain Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }
}

/// Full training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss: LossConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to zero over the run.
    pub lr0: f64,
    pub adam: AdamConfig,
    /// Seeds both parameter initialization and example shuffling.
    pub shuffle_seed: u64,
}

impl TrainConfig {
    /// A ready-to-run recipe for a variant, using the default
    /// hyperparameters (batch 128, one epoch, lr 1e-3, tau 0.05, bank 2048,
    /// minimum 1024 hard negatives).
    pub fn for_variant(variant: Variant) -> Self {
        let bank_size = match variant {
            Variant::LidCe | Variant::LidScl => 0,
            Variant::ConLidS | Variant::ConLidH => 2048,
        };
        TrainConfig {
            variant,
            loss: LossConfig {
                mode: variant.loss_mode(),
                bank_size,
                ..LossConfig::default()
            },
            batch_size: 128,
            epochs: 1,
            lr0: 1e-3,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "initial learning rate must be positive, got {}",
                self.lr0
            )));
        }
        for (name, beta) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if self.adam.eps.is_nan() || self.adam.eps <= 0.0 {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        if self.adam.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.loss.mode != self.variant.loss_mode() {
            return Err(Error::Config(format!(
                "variant {} requires loss mode {:?}, got {:?}",
                self.variant.name(),
                self.variant.loss_mode(),
                self.loss.mode
            )));
        }
        if self.loss.mode != LossMode::CeOnly && (self.loss.tau.is_nan() || self.loss.tau <= 0.0) {
            return Err(Error::Config(format!(
                "contrastive temperature must be positive, got {}",
                self.loss.tau
            )));
        }
        if self.variant == Variant::LidScl && self.loss.bank_size != 0 {
            return Err(Error::Config(
                "the scl variant runs without a memory bank; use conlid-s for a bank".into(),
            ));
        }
        if self.loss.mode == LossMode::SclHard && self.loss.min_negatives == 0 {
            return Err(Error::Config(
                "hard-negative minimum must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at a 0-based step of a run with `total_steps` steps:
/// `lr0 * (1 - step / total_steps)`.
pub fn lr_at(step: usize, total_steps: usize, lr0: f64) -> f64 {
    lr0 * (1.0 - step as f64 / total_steps as f64)
}

/// Gradients of one batch: sparse embedding rows plus the dense head.
#[derive(Debug, Clone, Default)]
pub struct BatchGradients {
    /// Row id to gradient; only rows referenced by the batch appear.
    pub embedding_rows: BTreeMap<usize, Vec<f64>>,
    /// Row-major `num_classes x dim`.
    pub head_weights: Vec<f64>,
    /// `num_classes`.
    pub head_bias: Vec<f64>,
}

/// Adam first/second moments, shaped like the parameters they track.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_emb: Matrix,
    v_emb: Matrix,
    m_head: Matrix,
    v_head: Matrix,
    m_bias: Vec<f32>,
    v_bias: Vec<f32>,
    step: usize,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m_emb: Matrix::zeros(params.embeddings.rows(), params.embeddings.cols()),
            v_emb: Matrix::zeros(params.embeddings.rows(), params.embeddings.cols()),
            m_head: Matrix::zeros(params.head_weights.rows(), params.head_weights.cols()),
            v_head: Matrix::zeros(params.head_weights.rows(), params.head_weights.cols()),
            m_bias: vec![0.0; params.head_bias.len()],
            v_bias: vec![0.0; params.head_bias.len()],
            step: 0,
        }
    }

    /// Completed update count.
    pub fn step(&self) -> usize {
        self.step
    }
}

#[inline]
fn adam_update(p: &mut f32, g: f64, m: &mut f32, v: &mut f32, lr: f64, cfg: &AdamConfig, bc: (f64, f64)) {
    let m_new = cfg.beta1 * f64::from(*m) + (1.0 - cfg.beta1) * g;
    let v_new = cfg.beta2 * f64::from(*v) + (1.0 - cfg.beta2) * g * g;
    *m = m_new as f32;
    *v = v_new as f32;
    let m_hat = m_new / bc.0;
    let v_hat = v_new / bc.1;
    let delta = lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * f64::from(*p));
    *p = (f64::from(*p) - delta) as f32;
}

/// One bias-corrected Adam step. Embedding moments are stored densely but
/// only the rows present in `grads` are touched ("lazy" sparse updates);
/// the head is always updated densely. Non-finite gradients abort with the
/// failing step index.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BatchGradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let finite = grads
        .embedding_rows
        .values()
        .flatten()
        .chain(&grads.head_weights)
        .chain(&grads.head_bias)
        .all(|g| g.is_finite());
    if !finite {
        return Err(Error::NonFinite {
            what: "gradient",
            step: state.step,
        });
    }

    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);

    for (&row, g_row) in &grads.embedding_rows {
        let p_row = params.embeddings.row_mut(row);
        let m_row = state.m_emb.row_mut(row);
        let v_row = state.v_emb.row_mut(row);
        for d in 0..p_row.len() {
            adam_update(&mut p_row[d], g_row[d], &mut m_row[d], &mut v_row[d], lr, cfg, (bc1, bc2));
        }
    }

    let dim = params.head_weights.cols();
    for c in 0..params.head_weights.rows() {
        let p_row = params.head_weights.row_mut(c);
        let m_row = state.m_head.row_mut(c);
        let v_row = state.v_head.row_mut(c);
        for d in 0..dim {
            adam_update(
                &mut p_row[d],
                grads.head_weights[c * dim + d],
                &mut m_row[d],
                &mut v_row[d],
                lr,
                cfg,
                (bc1, bc2),
            );
        }
    }
    for c in 0..params.head_bias.len() {
        adam_update(
            &mut params.head_bias[c],
            grads.head_bias[c],
            &mut state.m_bias[c],
            &mut state.v_bias[c],
            lr,
            cfg,
            (bc1, bc2),
        );
    }

    state.step = t;
    Ok(())
}

/// One training example as seen by the objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub text: &'a str,
    pub class_id: usize,
    pub script: &'a str,
    pub domain: &'a str,
}

/// Loss terms logged for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub ce: f64,
    pub scl: f64,
    pub total: f64,
}

/// Computes the combined objective and its gradients for one minibatch
/// against the current memory bank. Also returns the batch's detached
/// unit-norm embeddings for insertion into the bank (empty in
/// cross-entropy-only mode).
pub fn batch_objective(
    params: &ModelParams,
    vocab: &Vocabulary,
    enc: &EncoderConfig,
    loss_cfg: &LossConfig,
    batch: &[BatchItem],
    bank: &MemoryBank,
) -> Result<(StepLosses, BatchGradients, Vec<ContrastiveItem>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let dim = params.dim();
    let num_classes = params.num_classes();

    // Forward: features, mean embeddings, logits, probabilities.
    let mut feature_ids = Vec::with_capacity(batch.len());
    let mut embeddings = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    for item in batch {
        let feats = encoder::features(vocab, enc, item.text);
        let mut e = vec![0.0f64; dim];
        if !feats.ids.is_empty() {
            for &id in &feats.ids {
                for (acc, &x) in e.iter_mut().zip(params.embeddings.row(id)) {
                    *acc += f64::from(x);
                }
            }
            let inv = 1.0 / feats.ids.len() as f64;
            for x in &mut e {
                *x *= inv;
            }
        }
        probs.push(softmax(&affine(params, &e)));
        embeddings.push(e);
        feature_ids.push(feats.ids);
    }

    let classes: Vec<usize> = batch.iter().map(|it| it.class_id).collect();
    let (ce, dlogits) = ce_loss(&probs, &classes)?;

    // Head gradients and the cross-entropy pull-back to each embedding.
    let mut head_w = vec![0.0f64; num_classes * dim];
    let mut head_b = vec![0.0f64; num_classes];
    let mut d_embeddings = vec![vec![0.0f64; dim]; batch.len()];
    for (i, dl) in dlogits.iter().enumerate() {
        for c in 0..num_classes {
            let g = dl[c];
            head_b[c] += g;
            let w_row = params.head_weights.row(c);
            let de = &mut d_embeddings[i];
            for d in 0..dim {
                head_w[c * dim + d] += g * embeddings[i][d];
                de[d] += g * f64::from(w_row[d]);
            }
        }
    }

    // Contrastive term over the pool of batch anchors plus bank constants.
    let mut scl = 0.0;
    let mut detached = Vec::new();
    if loss_cfg.mode != LossMode::CeOnly {
        let mut norms = Vec::with_capacity(batch.len());
        let mut anchors = Vec::with_capacity(batch.len());
        for e in &embeddings {
            let r = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(r);
            anchors.push(if r > 0.0 {
                e.iter().map(|x| x / r).collect()
            } else {
                vec![0.0f64; dim]
            });
        }

        let mut pool_meta: Vec<ItemMeta> = batch
            .iter()
            .map(|it| ItemMeta {
                class_id: it.class_id,
                script: it.script.to_string(),
                domain: it.domain.to_string(),
            })
            .collect();
        pool_meta.extend(bank.iter().map(|it| it.meta.clone()));

        let selections: Vec<_> = (0..batch.len())
            .map(|i| match loss_cfg.mode {
                LossMode::SclSoft => Ok(soft_negatives(i, &pool_meta)),
                LossMode::SclHard => hard_negatives(i, &pool_meta, loss_cfg.min_negatives),
                LossMode::CeOnly => unreachable!(),
            })
            .collect::<Result<_>>()?;

        let bank_embeddings: Vec<Vec<f32>> =
            bank.iter().map(|it| it.embedding.clone()).collect();
        let (scl_value, dz) = scl_loss(&anchors, &bank_embeddings, &selections, loss_cfg.tau)?;
        scl = scl_value;

        // Chain through the L2 normalization back to the raw embedding.
        for i in 0..batch.len() {
            if norms[i] == 0.0 {
                continue;
            }
            let z = &anchors[i];
            let g = &dz[i];
            let g_dot_z: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
            let de = &mut d_embeddings[i];
            for d in 0..dim {
                de[d] += (g[d] - g_dot_z * z[d]) / norms[i];
            }
        }

        // The batch prefix of pool_meta doubles as the detached metadata.
        detached = anchors
            .iter()
            .enumerate()
            .map(|(i, z)| ContrastiveItem {
                embedding: z.iter().map(|&x| x as f32).collect(),
                meta: pool_meta[i].clone(),
            })
            .collect();
    }

    // Distribute embedding gradients onto the mean's source rows.
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (ids, de) in feature_ids.iter().zip(&d_embeddings) {
        if ids.is_empty() {
            continue;
        }
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            let row = rows.entry(id).or_insert_with(|| vec![0.0f64; dim]);
            for (r, g) in row.iter_mut().zip(de) {
                *r += g * inv;
            }
        }
    }

    let losses = StepLosses {
        ce,
        scl,
        total: combined_loss(ce, scl),
    };
    let grads = BatchGradients {
        embedding_rows: rows,
        head_weights: head_w,
        head_bias: head_b,
    };
    Ok((losses, grads, detached))
}

/// One telemetry record per optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub step: usize,
    pub lr: f64,
    pub ce: f64,
    pub scl: f64,
    pub total: f64,
}

/// Writes telemetry as CSV with a fixed header.
pub fn write_telemetry_csv<W: Write>(w: &mut W, rows: &[TelemetryRow]) -> std::io::Result<()> {
    writeln!(w, "step,lr,ce_loss,scl_loss,total_loss")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.step, r.lr, r.ce, r.scl, r.total)?;
    }
    Ok(())
}

/// A trained model plus its step telemetry.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub telemetry: Vec<TelemetryRow>,
}

/// Trains a model from scratch. The run is fully determined by the dataset
/// order, the configs, and `shuffle_seed`: examples are shuffled once, then
/// visited in fixed minibatches for `epochs` passes while the learning rate
/// decays linearly over `ceil(n / batch_size) * epochs` total steps.
pub fn train(train_set: &Dataset, enc: &EncoderConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    enc.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }

    let vocab = encoder::build_vocab(train_set, enc)?;
    let labels = train_set.label_index.clone();
    let mut params = ModelParams::init(
        vocab.len(),
        enc.bucket,
        enc.dim,
        labels.len(),
        cfg.shuffle_seed,
    );

    let class_ids: Vec<usize> = train_set
        .examples
        .iter()
        .map(|ex| labels.id(&ex.label).expect("label indexed with dataset"))
        .collect();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed ^ ORDER_SEED_MIX);
    order.shuffle(&mut rng);

    let total_steps = train_set.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let bank_capacity = if cfg.loss.mode == LossMode::CeOnly {
        0
    } else {
        cfg.loss.bank_size
    };
    let mut bank = MemoryBank::new(bank_capacity);
    let mut state = AdamState::new(&params);
    let mut telemetry = Vec::with_capacity(total_steps);

    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<BatchItem> = chunk
                .iter()
                .map(|&i| {
                    let ex = &train_set.examples[i];
                    BatchItem {
                        text: &ex.text,
                        class_id: class_ids[i],
                        script: ex.script_code(),
                        domain: ex.domain_code(),
                    }
                })
                .collect();

            let lr = lr_at(step, total_steps, cfg.lr0);
            let (losses, grads, detached) =
                batch_objective(&params, &vocab, enc, &cfg.loss, &batch, &bank)?;
            if !losses.total.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    step,
                });
            }
            adam_step(&mut params, &grads, &mut state, lr, &cfg.adam)?;
            bank.push_batch(detached);

            telemetry.push(TelemetryRow {
                step,
                lr,
                ce: losses.ce,
                scl: losses.scl,
                total: losses.total,
            });
            step += 1;
        }
    }

    Ok(TrainOutcome {
        model: Model {
            config: enc.clone(),
            labels,
            vocab,
            params,
        },
        telemetry,
    })
}
