//! Two-network co-training from mixed pseudo labels, plus sliding-window
//! inference.
//!
//! Every iteration draws one labelled and one unlabelled patch. Each network
//! is supervised on the labelled patch by its own plane's mixed label and
//! weight map, and on the unlabelled patch by its partner's confident hard
//! prediction. Both networks' targets come from parameters as they were at
//! the start of the iteration.

mod data;
mod history;
mod inference;

pub use data::{labeled_origin, prepare_from_pseudo, prepare_labeled_volume, unlabeled_origin, PreparedVolume, TrainingData};
pub use history::{read_history_csv, validation_series, write_history_csv, HistoryRow, HISTORY_COLUMNS};
pub use inference::{coverage, predict_volume, sliding_window_predict, threshold, window_starts, InferenceConfig, PatchPredictor};

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::dice_mask;
use crate::labels::WeightMap;
use crate::objectives::{cross_supervision_loss, loss_gradients, supervised_loss, LossKind};
use crate::provenance::Provenance;
use crate::registration::RegistrationConfig;
use crate::schedules::{alpha_at, lambda_at, lr_at, ScheduleConfig};
use crate::segmodel::{save_checkpoint, uncertainty_from_trunk, uncertainty_mask, ModelConfig, SegNet, Sgd, SgdConfig};
use crate::volume::{crop_patch, Plane};

/// Which supervision regime to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Decaying weights on mixed labels plus ramped cross supervision.
    Desco,
    /// Annotated slices only (decay rate 0 throughout), same cross supervision.
    SparseOnly,
    /// Decay rate frozen at its initial value and no cross supervision.
    StaticDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub schedule: ScheduleConfig,
    pub patch: [usize; 3],
    pub sgd: SgdConfig,
    pub channels: Vec<usize>,
    pub dropout: f64,
    /// Initialisation seeds of the two networks.
    pub model_seeds: [u64; 2],
    /// Plane whose mixed label supervises each network.
    pub planes: [Plane; 2],
    /// Seed of the patch-sampling stream.
    pub seed: u64,
    pub mc_passes: usize,
    /// Probability that a labelled patch is forced onto an annotated slice.
    pub annotated_patch_prob: f64,
    pub eval_every: usize,
    pub inference: InferenceConfig,
    pub registration: RegistrationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Desco,
            schedule: ScheduleConfig::default(),
            patch: [16, 16, 16],
            sgd: SgdConfig::default(),
            channels: vec![8, 16, 32],
            dropout: 0.1,
            model_seeds: [1, 2],
            planes: [Plane::A, Plane::B],
            seed: 0,
            mc_passes: 8,
            annotated_patch_prob: 0.9,
            eval_every: 100,
            inference: InferenceConfig::default(),
            registration: RegistrationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.model_config(0).validate()?;
        if self.mc_passes < 2 {
            return Err(Error::invalid("mc_passes", "need at least 2"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.annotated_patch_prob) {
            return Err(Error::invalid("annotated_patch_prob", "must lie in [0, 1]"));
        }
        self.registration.validate()
    }

    pub fn model_config(&self, which: usize) -> ModelConfig {
        ModelConfig {
            channels: self.channels.clone(),
            dropout: self.dropout,
            seed: self.model_seeds[which],
            zero_head: false,
        }
    }

    pub fn alpha(&self, iter: usize) -> f64 {
        match self.variant {
            Variant::Desco => alpha_at(iter, &self.schedule),
            Variant::SparseOnly => 0.0,
            Variant::StaticDense => self.schedule.alpha0,
        }
    }

    pub fn lambda(&self, iter: usize) -> f64 {
        match self.variant {
            Variant::StaticDense => 0.0,
            _ => lambda_at(iter, &self.schedule),
        }
    }
}

/// One network with its optimiser and dropout stream.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: SegNet,
    pub plane: Plane,
    opt: Sgd,
    rng: ChaCha8Rng,
}

impl Learner {
    fn new(cfg: ModelConfig, plane: Plane, sgd: SgdConfig) -> Result<Self> {
        // The dropout stream is tied to the model seed so swapping the two
        // networks' seeds swaps their whole trajectories.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b_0a7c_0001);
        let model = SegNet::new(cfg)?;
        let opt = Sgd::new(sgd, model.num_params());
        Ok(Self { model, plane, opt, rng })
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub iter: usize,
    pub learners: [Learner; 2],
    pub history: Vec<HistoryRow>,
    rng: ChaCha8Rng,
    /// Separate stream for unlabelled patches, so the labelled patch
    /// sequence does not depend on the unlabelled set.
    unlabeled_rng: ChaCha8Rng,
    weights: Option<(f64, Vec<[WeightMap; 2]>)>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            iter: 0,
            learners: [
                Learner::new(cfg.model_config(0), cfg.planes[0], cfg.sgd)?,
                Learner::new(cfg.model_config(1), cfg.planes[1], cfg.sgd)?,
            ],
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            unlabeled_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            weights: None,
        })
    }

    pub fn models(&self) -> [&SegNet; 2] {
        [&self.learners[0].model, &self.learners[1].model]
    }

    /// Weight maps for the current decay rate, rebuilt only when it changes.
    fn weights_for(&mut self, alpha: f64, data: &TrainingData) -> Result<&[[WeightMap; 2]]> {
        let stale = !matches!(&self.weights, Some((a, _)) if *a == alpha);
        if stale {
            let planes = [self.learners[0].plane, self.learners[1].plane];
            let maps = data
                .labeled
                .iter()
                .map(|v| Ok([v.weight_map(planes[0], alpha)?, v.weight_map(planes[1], alpha)?]))
                .collect::<Result<Vec<_>>>()?;
            self.weights = Some((alpha, maps));
        }
        Ok(&self.weights.as_ref().expect("set above").1)
    }
}

/// Supervised loss and `dloss/dp` on one labelled patch. An all-zero weight
/// patch contributes nothing.
fn supervised_term(p: &Array3<f32>, y: &Array3<u8>, w: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    if w.iter().all(|&v| v == 0.0) {
        return Ok((0.0, Array3::zeros(p.raw_dim())));
    }
    let p64 = p.mapv(f64::from);
    let loss = supervised_loss(p64.view(), y.view(), w.view())?;
    let grad = loss_gradients(p64.view(), y.view(), w.view(), LossKind::Supervised)?;
    Ok((loss, grad))
}

fn cross_term(p: &Array3<f32>, target: &Array3<u8>, mask: &Array3<u8>) -> Result<(f64, Array3<f64>)> {
    let p64 = p.mapv(f64::from);
    let loss = cross_supervision_loss(p64.view(), target.view(), mask.view())?;
    if loss.degenerate {
        return Ok((0.0, Array3::zeros(p.raw_dim())));
    }
    let w = mask.mapv(f64::from);
    let grad = loss_gradients(p64.view(), target.view(), w.view(), LossKind::CrossEntropy)?;
    Ok((loss.value, grad))
}

/// One co-training iteration on the given patches.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, data: &TrainingData, labeled: (usize, [usize; 3]), unlabeled: Option<(usize, [usize; 3])>) -> Result<HistoryRow> {
    let iter = state.iter;
    let alpha = cfg.alpha(iter);
    let lambda = cfg.lambda(iter);
    let lr = lr_at(iter, &cfg.schedule);
    let patch = cfg.patch;
    let (li, lorigin) = labeled;
    let vol = &data.labeled[li];
    let planes = [state.learners[0].plane, state.learners[1].plane];
    let sup_patches = {
        let weights = &state.weights_for(alpha, data)?[li];
        [0, 1].map(|k| data::labeled_patch(vol, planes[k], &weights[k], lorigin, patch))
    };

    let mut sup = [0.0; 2];
    let mut cross = [f64::NAN; 2];
    let mut mask_frac = f64::NAN;
    let mut grads: [Vec<f32>; 2] = [Vec::new(), Vec::new()];

    // Unlabelled branch: trunks, partner targets and masks from current parameters.
    let unl = match unlabeled {
        Some((ui, uorigin)) if lambda > 0.0 => {
            let x = crop_patch(&data.unlabeled[ui], uorigin, patch)?;
            let mut trunks = Vec::with_capacity(2);
            let mut targets = Vec::with_capacity(2);
            for l in state.learners.iter_mut() {
                let trunk = l.model.trunk(&x)?;
                let hard = l.model.head(&trunk, None).mapv(|p| u8::from(p >= 0.5));
                let (_, entropy) = uncertainty_from_trunk(&l.model, &trunk, cfg.mc_passes, &mut l.rng)?;
                targets.push((hard, uncertainty_mask(&entropy, iter, &cfg.schedule)));
                trunks.push(trunk);
            }
            let n = targets[0].1.len() as f64;
            let confident = targets.iter().map(|(_, m)| m.iter().filter(|&&v| v == 1).count() as f64 / n);
            mask_frac = confident.sum::<f64>() / 2.0;
            Some((trunks, targets))
        }
        _ => None,
    };

    for (k, sup_patch) in sup_patches.into_iter().enumerate() {
        let (x, y, w) = sup_patch?;
        let learner = &mut state.learners[k];
        let trunk = learner.model.trunk(&x)?;
        let drop = learner.model.sample_dropout(&trunk, &mut learner.rng);
        let p = learner.model.head(&trunk, drop.as_ref());
        let (loss, g) = supervised_term(&p, &y, &w)?;
        sup[k] = loss;
        let scale = (1.0 - lambda) as f32;
        let g = g.mapv(|v| v as f32 * scale);
        grads[k] = learner.model.backward(&trunk, drop.as_ref(), &p, &g);

        if let Some((trunks, targets)) = &unl {
            let (target, mask) = &targets[1 - k];
            let drop = learner.model.sample_dropout(&trunks[k], &mut learner.rng);
            let p = learner.model.head(&trunks[k], drop.as_ref());
            let (loss, g) = cross_term(&p, target, mask)?;
            cross[k] = loss;
            let g = g.mapv(|v| (v * lambda) as f32);
            let gu = learner.model.backward(&trunks[k], drop.as_ref(), &p, &g);
            for (a, b) in grads[k].iter_mut().zip(gu) {
                *a += b;
            }
        }
    }

    for k in 0..2 {
        let total = if unl.is_some() { (1.0 - lambda) * sup[k] + lambda * cross[k] } else { sup[k] };
        if !total.is_finite() || grads[k].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iter,
                alpha,
                lambda,
                lr,
                patches: format!("labeled {}@{:?}, unlabeled {:?}", vol.id, lorigin, unlabeled),
            });
        }
    }
    for (l, g) in state.learners.iter_mut().zip(&grads) {
        let Learner { model, opt, .. } = l;
        opt.step(model.params_mut(), g, lr);
    }
    state.iter += 1;
    let row = HistoryRow {
        iter,
        alpha,
        lambda,
        lr,
        loss_sup_a: sup[0],
        loss_sup_b: sup[1],
        loss_cross_a: cross[0],
        loss_cross_b: cross[1],
        mask_frac,
        val_dice_a: f64::NAN,
        val_dice_b: f64::NAN,
        val_dice_ens: f64::NAN,
    };
    state.history.push(row);
    Ok(row)
}

/// Mean validation Dice of network a, network b and their ensemble.
pub fn validate(models: [&SegNet; 2], data: &TrainingData, inf: &InferenceConfig) -> Result<[f64; 3]> {
    if data.validation.is_empty() {
        return Ok([f64::NAN; 3]);
    }
    let mut sums = [0.0; 3];
    for (volume, label) in &data.validation {
        let image = volume.standardized().into_data();
        let pa = sliding_window_predict(&[models[0]], &image, inf.patch, inf.strides)?;
        let pb = sliding_window_predict(&[models[1]], &image, inf.patch, inf.strides)?;
        let pe = (&pa + &pb) * 0.5;
        for (s, p) in sums.iter_mut().zip([&pa, &pb, &pe]) {
            *s += dice_mask(&p.mapv(|v| u8::from(v >= 0.5)), label.data());
        }
    }
    let n = data.validation.len() as f64;
    Ok(sums.map(|s| s / n))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: [SegNet; 2],
    pub history: Vec<HistoryRow>,
}

/// Runs the full schedule. With `out`, writes the effective config,
/// checkpoints at every evaluation and `history.csv` at the end.
pub fn train_desco(data: &TrainingData, cfg: &TrainConfig, out: Option<&Path>, mut progress: impl FnMut(&HistoryRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    for v in &data.labeled {
        data::check_patch_fits(v.dims(), cfg.patch)?;
    }
    for v in &data.unlabeled {
        data::check_patch_fits(crate::volume::dims_of(v), cfg.patch)?;
    }
    let provenance = Provenance::new("train", cfg, cfg.seed);
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        let doc = serde_json::json!({ "provenance": provenance, "config": cfg });
        fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))?;
    }
    let mut state = TrainState::new(cfg)?;
    let total = cfg.schedule.total_iters;
    while state.iter < total {
        let li = state.rng.gen_range(0..data.labeled.len());
        let lo = labeled_origin(&data.labeled[li].annotation, cfg.patch, cfg.annotated_patch_prob, &mut state.rng);
        let unl = if data.unlabeled.is_empty() {
            None
        } else {
            let ui = state.unlabeled_rng.gen_range(0..data.unlabeled.len());
            Some((ui, unlabeled_origin(crate::volume::dims_of(&data.unlabeled[ui]), cfg.patch, &mut state.unlabeled_rng)))
        };
        let mut row = train_step(&mut state, cfg, data, (li, lo), unl)?;
        if (row.iter + 1) % cfg.eval_every == 0 || row.iter + 1 == total {
            let [a, b, e] = validate(state.models(), data, &cfg.inference)?;
            row.val_dice_a = a;
            row.val_dice_b = b;
            row.val_dice_ens = e;
            *state.history.last_mut().expect("row pushed") = row;
            if let Some(dir) = out {
                save_checkpoint(state.models()[0], dir.join("model_a"), Some(&provenance))?;
                save_checkpoint(state.models()[1], dir.join("model_b"), Some(&provenance))?;
            }
        }
        progress(&row);
    }
    if let Some(dir) = out {
        write_history_csv(dir.join("history.csv"), &state.history)?;
    }
    let [a, b] = state.learners;
    Ok(TrainOutcome {
        models: [a.model, b.model],
        history: state.history,
    })
}
