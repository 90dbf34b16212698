//! Age-modulated k-hop graph convolution, readout heads and training.
//!
//! Per segment `t` the node features start as the rows of `A_d(t)`. Each
//! layer scales its input by `beta * theta` and applies
//! `relu(sum_k Phi_k(t) X W_k)`. The embedding accumulates residually over
//! segments, `Z(t+1) = Z(t) + stack(t+1)`, and the final `Z` is mean-pooled
//! into a classification logit or a standardised age.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmfc::{cmfc_tape, ProjectionVars, StrengthProjection};
use crate::cohort::{Cohort, Label};
use crate::fc::{DynamicBackend, DEFAULT_ETA, DEFAULT_RHO, DEFAULT_SEGMENTS};
use crate::khop::{normalize, DEFAULT_EPSILON_DEG, DEFAULT_LAMBDA};
use crate::linalg::{matrix_serde, spectral_norm_svd};
use crate::metrics::{auc, mse};
use crate::pipeline::{prepare_subject, PrepConfig, PreparedSubject};
use crate::tape::{Tape, Var};
use crate::{Matrix, Result, AGE_SCALE};

/// Lower clamp for a learnable `beta`; the upper clamp is `1 - BETA_MARGIN`.
pub const BETA_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GcnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss for subject {subject}")]
    NonFiniteLoss { subject: String },
    #[error("expected segment {expected}, got {found}")]
    SegmentOrder { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("classification needs both labels in the cohort")]
    MissingClass,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classify,
    RegressAge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lambda: f64,
    /// Hop count `K`; hops `0..K` are used.
    pub hops: usize,
    pub layers: usize,
    pub hidden: usize,
    pub loss_mix: f64,
    pub n_segments: usize,
    pub backend: DynamicBackend,
    pub eta: f64,
    pub rho: f64,
    pub task: Task,
    pub beta_init: f64,
    pub freeze_beta: bool,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.001,
            seed: 7,
            lambda: DEFAULT_LAMBDA,
            hops: 3,
            layers: 2,
            hidden: 16,
            loss_mix: 1.0,
            n_segments: DEFAULT_SEGMENTS,
            backend: DynamicBackend::Pearson,
            eta: DEFAULT_ETA,
            rho: DEFAULT_RHO,
            task: Task::Classify,
            beta_init: 0.5,
            freeze_beta: false,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), GcnError> {
        let bad = |m: String| Err(GcnError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if self.hops == 0 || self.layers == 0 || self.hidden == 0 || self.n_segments == 0 {
            return bad("hops, layers, hidden and n_segments must be positive".into());
        }
        if !(self.loss_mix >= 0.0 && self.loss_mix.is_finite()) {
            return bad(format!("loss_mix must be non-negative, got {}", self.loss_mix));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        let beta_ok = if self.freeze_beta {
            (0.0..=1.0).contains(&self.beta_init)
        } else {
            self.beta_init > 0.0 && self.beta_init < 1.0
        };
        if !beta_ok {
            return bad(format!("beta_init {} out of range", self.beta_init));
        }
        Ok(())
    }

    pub fn prep(&self) -> PrepConfig {
        PrepConfig {
            n_segments: self.n_segments,
            backend: self.backend,
            eta: self.eta,
            rho: self.rho,
            lambda: self.lambda,
            hops: self.hops,
        }
    }
}

/// Linear readout `w . z_bar + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    #[serde(with = "matrix_serde")]
    pub w: Matrix,
    pub b: f64,
}

impl Head {
    fn zeros(d: usize) -> Self {
        Self { w: Matrix::zeros(d, 1), b: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "matrix_serde::vec")]
    pub weights: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub dims: Vec<usize>,
    pub hops: usize,
    pub layers: Vec<Layer>,
    pub beta: f64,
    pub beta_frozen: bool,
    #[serde(with = "matrix_serde")]
    pub gamma: Matrix,
    pub cls_head: Head,
    pub age_head: Head,
    pub projection: StrengthProjection,
    pub epsilon_deg: f64,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Embedding after segment `segment_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub z: Matrix,
    pub segment_index: usize,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl GcnModel {
    /// Xavier-uniform convolution weights, `Gamma` all ones, zero heads.
    pub fn init(v: usize, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dims = vec![v];
        dims.extend(std::iter::repeat_n(config.hidden, config.layers));
        let layers = (0..config.layers)
            .map(|l| Layer { weights: (0..config.hops).map(|_| xavier(&mut rng, dims[l], dims[l + 1])).collect() })
            .collect();
        let projection = StrengthProjection::init(&mut rng);
        let d_out = *dims.last().expect("at least one dim");
        Self {
            dims,
            hops: config.hops,
            layers,
            beta: config.beta_init,
            beta_frozen: config.freeze_beta,
            gamma: Matrix::from_element(v, v, 1.0),
            cls_head: Head::zeros(d_out),
            age_head: Head::zeros(d_out),
            projection,
            epsilon_deg: DEFAULT_EPSILON_DEG,
            seed: config.seed,
            config: config.clone(),
        }
    }

    pub fn regions(&self) -> usize {
        self.dims[0]
    }

    pub fn head(&self, task: Task) -> &Head {
        match task {
            Task::Classify => &self.cls_head,
            Task::RegressAge => &self.age_head,
        }
    }

    /// `Phi_k(t)` for every segment and hop.
    pub fn phis(&self, subject: &PreparedSubject) -> Vec<Vec<Matrix>> {
        subject
            .segments
            .iter()
            .map(|s| s.hop_bases.iter().map(|b| normalize(&self.gamma.component_mul(b), self.epsilon_deg)).collect())
            .collect()
    }

    /// Final embedding `Z` after all segments.
    pub fn embed(&self, subject: &PreparedSubject) -> Result<Matrix> {
        let phis = self.phis(subject);
        let mut state = EmbeddingState { z: stack_forward(self, &phis[0], &subject.segments[0].a_dyn, subject.theta_std)?, segment_index: 0 };
        for t in 1..subject.segments.len() {
            state = temporal_update(&state, &phis[t], &subject.segments[t].a_dyn, self, subject.theta_std, t)?;
        }
        Ok(state.z)
    }

    /// Logit, or predicted age in years.
    pub fn predict(&self, subject: &PreparedSubject, task: Task) -> Result<f64> {
        Ok(readout(&self.embed(subject)?, self, task))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, GcnError> {
        let m: GcnModel = serde_json::from_str(text).map_err(|e| GcnError::Checkpoint(e.to_string()))?;
        m.check_shapes()?;
        Ok(m)
    }

    fn check_shapes(&self) -> std::result::Result<(), GcnError> {
        let bad = |m: String| Err(GcnError::Checkpoint(m));
        if self.dims.len() != self.layers.len() + 1 {
            return bad("dims and layer count disagree".into());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != self.hops {
                return bad(format!("layer {l} has {} hops, expected {}", layer.weights.len(), self.hops));
            }
            for w in &layer.weights {
                if w.shape() != (self.dims[l], self.dims[l + 1]) {
                    return bad(format!("layer {l} weight shape {:?}", w.shape()));
                }
            }
        }
        let v = self.dims[0];
        if self.gamma.shape() != (v, v) {
            return bad("gamma shape".into());
        }
        let d = self.dims[self.dims.len() - 1];
        if self.cls_head.w.shape() != (d, 1) || self.age_head.w.shape() != (d, 1) {
            return bad("head shape".into());
        }
        Ok(())
    }

    /// All learnable values in a fixed order: layer weights, `beta`,
    /// `Gamma`, classification head, age head, projection.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for w in &layer.weights {
                out.extend(w.iter());
            }
        }
        out.push(self.beta);
        out.extend(self.gamma.iter());
        out.extend(self.cls_head.w.iter());
        out.push(self.cls_head.b);
        out.extend(self.age_head.w.iter());
        out.push(self.age_head.b);
        let p = &self.projection;
        for m in [&p.w1, &p.b1, &p.w2, &p.b2] {
            out.extend(m.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |m: &mut Matrix| {
            for x in m.iter_mut() {
                *x = it.next().expect("enough values");
            }
        };
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                fill(w);
            }
        }
        let mut scalar = Matrix::zeros(1, 1);
        fill(&mut scalar);
        self.beta = scalar[(0, 0)];
        fill(&mut self.gamma);
        fill(&mut self.cls_head.w);
        fill(&mut scalar);
        self.cls_head.b = scalar[(0, 0)];
        fill(&mut self.age_head.w);
        fill(&mut scalar);
        self.age_head.b = scalar[(0, 0)];
        let p = &mut self.projection;
        fill(&mut p.w1);
        fill(&mut p.b1);
        fill(&mut p.w2);
        fill(&mut p.b2);
    }

    fn apply(&mut self, grad: &ModelGrad, lr: f64) {
        for (layer, gl) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, g) in layer.weights.iter_mut().zip(gl) {
                *w -= g * lr;
            }
        }
        if !self.beta_frozen {
            self.beta = (self.beta - lr * grad.beta).clamp(BETA_MARGIN, 1.0 - BETA_MARGIN);
        }
        self.gamma -= &grad.gamma * lr;
        self.cls_head.w -= &grad.cls_w * lr;
        self.cls_head.b -= grad.cls_b * lr;
        self.age_head.w -= &grad.age_w * lr;
        self.age_head.b -= grad.age_b * lr;
        let p = &mut self.projection;
        p.w1 -= &grad.proj.w1 * lr;
        p.b1 -= &grad.proj.b1 * lr;
        p.w2 -= &grad.proj.w2 * lr;
        p.b2 -= &grad.proj.b2 * lr;
    }
}

/// `relu(sum_k Phi_k H W_k)`.
pub fn layer_forward(h: &Matrix, phis: &[Matrix], weights: &[Matrix]) -> Result<Matrix> {
    if phis.len() != weights.len() || phis.is_empty() {
        return Err(GcnError::ShapeMismatch(format!("{} filters for {} weight matrices", phis.len(), weights.len())).into());
    }
    let v = h.nrows();
    let d_out = weights[0].ncols();
    let mut acc = Matrix::zeros(v, d_out);
    for (phi, w) in phis.iter().zip(weights) {
        if phi.shape() != (v, v) || w.nrows() != h.ncols() || w.ncols() != d_out {
            return Err(GcnError::ShapeMismatch(format!(
                "Phi {:?}, H {:?}, W {:?}",
                phi.shape(),
                h.shape(),
                w.shape()
            ))
            .into());
        }
        acc += phi * h * w;
    }
    Ok(acc.map(|x| x.max(0.0)))
}

/// Scales every entry by `beta * theta_std`.
pub fn age_modulate(x: &Matrix, beta: f64, theta_std: f64) -> Matrix {
    x * (beta * theta_std)
}

/// All layers on one segment, starting from features `h0`.
pub fn stack_forward(model: &GcnModel, phis: &[Matrix], h0: &Matrix, theta_std: f64) -> Result<Matrix> {
    let mut h = h0.clone();
    for layer in &model.layers {
        h = layer_forward(&age_modulate(&h, model.beta, theta_std), phis, &layer.weights)?;
    }
    Ok(h)
}

/// Euler step of size `step` from `state` using segment `next_index`.
pub fn temporal_update_step(
    state: &EmbeddingState,
    phis_next: &[Matrix],
    x_next: &Matrix,
    model: &GcnModel,
    theta_std: f64,
    next_index: usize,
    step: f64,
) -> Result<EmbeddingState> {
    if next_index != state.segment_index + 1 {
        return Err(GcnError::SegmentOrder { expected: state.segment_index + 1, found: next_index }.into());
    }
    let inc = stack_forward(model, phis_next, x_next, theta_std)?;
    if inc.shape() != state.z.shape() {
        return Err(GcnError::ShapeMismatch(format!("increment {:?} vs Z {:?}", inc.shape(), state.z.shape())).into());
    }
    Ok(EmbeddingState { z: &state.z + inc * step, segment_index: next_index })
}

/// `Z(t+1) = Z(t) + stack(t+1)`.
pub fn temporal_update(
    state: &EmbeddingState,
    phis_next: &[Matrix],
    x_next: &Matrix,
    model: &GcnModel,
    theta_std: f64,
    next_index: usize,
) -> Result<EmbeddingState> {
    temporal_update_step(state, phis_next, x_next, model, theta_std, next_index, 1.0)
}

/// Mean-pools rows then applies the task head. Age is returned in years.
pub fn readout(z: &Matrix, model: &GcnModel, task: Task) -> f64 {
    let n = z.nrows() as f64;
    let head = model.head(task);
    let mut out = head.b;
    for j in 0..z.ncols() {
        out += head.w[(j, 0)] * z.column(j).sum() / n;
    }
    match task {
        Task::Classify => out,
        Task::RegressAge => out * AGE_SCALE,
    }
}

/// Gradient with the same layout as [`GcnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub layers: Vec<Vec<Matrix>>,
    pub beta: f64,
    pub gamma: Matrix,
    pub cls_w: Matrix,
    pub cls_b: f64,
    pub age_w: Matrix,
    pub age_b: f64,
    pub proj: StrengthProjection,
}

impl ModelGrad {
    pub fn zeros_like(model: &GcnModel) -> Self {
        let p = &model.projection;
        Self {
            layers: model.layers.iter().map(|l| l.weights.iter().map(|w| Matrix::zeros(w.nrows(), w.ncols())).collect()).collect(),
            beta: 0.0,
            gamma: Matrix::zeros(model.gamma.nrows(), model.gamma.ncols()),
            cls_w: Matrix::zeros(model.cls_head.w.nrows(), 1),
            cls_b: 0.0,
            age_w: Matrix::zeros(model.age_head.w.nrows(), 1),
            age_b: 0.0,
            proj: StrengthProjection {
                w1: p.w1.map(|_| 0.0),
                b1: p.b1.map(|_| 0.0),
                w2: p.w2.map(|_| 0.0),
                b2: p.b2.map(|_| 0.0),
            },
        }
    }

    fn add_assign(&mut self, o: &ModelGrad) {
        for (a, b) in self.layers.iter_mut().zip(&o.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.beta += o.beta;
        self.gamma += &o.gamma;
        self.cls_w += &o.cls_w;
        self.cls_b += o.cls_b;
        self.age_w += &o.age_w;
        self.age_b += o.age_b;
        self.proj.w1 += &o.proj.w1;
        self.proj.b1 += &o.proj.b1;
        self.proj.w2 += &o.proj.w2;
        self.proj.b2 += &o.proj.b2;
    }

    fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            for w in l.iter_mut() {
                *w *= c;
            }
        }
        self.beta *= c;
        self.gamma *= c;
        self.cls_w *= c;
        self.cls_b *= c;
        self.age_w *= c;
        self.age_b *= c;
        self.proj.w1 *= c;
        self.proj.b1 *= c;
        self.proj.w2 *= c;
        self.proj.b2 *= c;
    }

    /// Same order as [`GcnModel::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for w in l {
                out.extend(w.iter());
            }
        }
        out.push(self.beta);
        out.extend(self.gamma.iter());
        out.extend(self.cls_w.iter());
        out.push(self.cls_b);
        out.extend(self.age_w.iter());
        out.push(self.age_b);
        for m in [&self.proj.w1, &self.proj.b1, &self.proj.w2, &self.proj.b2] {
            out.extend(m.iter());
        }
        out
    }
}

struct ParamVars {
    layers: Vec<Vec<Var>>,
    beta: Var,
    gamma: Var,
    cls_w: Var,
    cls_b: Var,
    age_w: Var,
    age_b: Var,
    proj: ProjectionVars,
}

impl ParamVars {
    fn new(tape: &mut Tape, model: &GcnModel) -> Self {
        Self {
            layers: model.layers.iter().map(|l| l.weights.iter().map(|w| tape.leaf(w.clone())).collect()).collect(),
            beta: tape.scalar(model.beta),
            gamma: tape.leaf(model.gamma.clone()),
            cls_w: tape.leaf(model.cls_head.w.clone()),
            cls_b: tape.scalar(model.cls_head.b),
            age_w: tape.leaf(model.age_head.w.clone()),
            age_b: tape.scalar(model.age_head.b),
            proj: model.projection.leaves(tape),
        }
    }

    fn collect(&self, tape: &Tape, out: Var) -> ModelGrad {
        let g = tape.backward(out);
        ModelGrad {
            layers: self.layers.iter().map(|l| l.iter().map(|&w| g.get(w)).collect()).collect(),
            beta: g.get(self.beta)[(0, 0)],
            gamma: g.get(self.gamma),
            cls_w: g.get(self.cls_w),
            cls_b: g.get(self.cls_b)[(0, 0)],
            age_w: g.get(self.age_w),
            age_b: g.get(self.age_b)[(0, 0)],
            proj: StrengthProjection {
                w1: g.get(self.proj.w1),
                b1: g.get(self.proj.b1),
                w2: g.get(self.proj.w2),
                b2: g.get(self.proj.b2),
            },
        }
    }
}

/// Loss terms for one subject or averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub l_b: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    /// Largest `||Phi_k(t)||_2` built during the pass.
    pub max_phi_norm: f64,
}

fn phi_on_tape(tape: &mut Tape, gamma: Var, base: &Matrix, eps: f64) -> Var {
    let b = tape.constant(base.clone());
    let a_hat = tape.hadamard(gamma, b);
    let abs = tape.abs(a_hat);
    let deg = tape.row_sums(abs);
    let deg = tape.add_const(deg, eps);
    let inv_sqrt = tape.pow_const(deg, -0.5);
    let phi = tape.row_scale(a_hat, inv_sqrt);
    let phi = tape.col_scale(phi, inv_sqrt);
    let norm = tape.spectral_norm(phi);
    if tape.scalar_value(norm) > 1.0 {
        let inv = tape.recip(norm);
        tape.scale_by(phi, inv)
    } else {
        phi
    }
}

fn record_subject(
    tape: &mut Tape,
    vars: &ParamVars,
    model: &GcnModel,
    subject: &PreparedSubject,
    task: Task,
    loss_mix: f64,
) -> Result<(Var, LossParts)> {
    if subject.regions() != model.regions() {
        return Err(GcnError::ShapeMismatch(format!(
            "subject {} has {} regions, model expects {}",
            subject.subject_id,
            subject.regions(),
            model.regions()
        ))
        .into());
    }
    let beta_theta = tape.scale(vars.beta, subject.theta_std);
    let mut z: Option<Var> = None;
    let mut l_pos_sum: Option<Var> = None;
    let mut l_neg_sum: Option<Var> = None;
    let mut max_phi_norm = 0.0_f64;
    for seg in &subject.segments {
        if seg.hop_bases.len() != model.hops {
            return Err(GcnError::ShapeMismatch(format!("{} hop bases for {} hops", seg.hop_bases.len(), model.hops)).into());
        }
        let phis: Vec<Var> = seg.hop_bases.iter().map(|b| phi_on_tape(tape, vars.gamma, b, model.epsilon_deg)).collect();
        for &p in &phis {
            max_phi_norm = max_phi_norm.max(spectral_norm_svd(tape.value(p)));
        }
        let mut h = tape.constant(seg.a_dyn.clone());
        for layer in &vars.layers {
            let x = tape.scale_by(h, beta_theta);
            let mut acc: Option<Var> = None;
            for (&phi, &w) in phis.iter().zip(layer) {
                let px = tape.matmul(phi, x);
                let term = tape.matmul(px, w);
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term),
                });
            }
            h = tape.relu(acc.expect("hops > 0"));
        }
        z = Some(match z {
            None => h,
            Some(prev) => tape.add(prev, h),
        });
        let latent = StrengthProjection::forward_tape(tape, vars.proj, &seg.strength);
        let (lp, ln) = cmfc_tape(tape, latent, &seg.masks)?;
        l_pos_sum = Some(match l_pos_sum {
            None => lp,
            Some(a) => tape.add(a, lp),
        });
        l_neg_sum = Some(match l_neg_sum {
            None => ln,
            Some(a) => tape.add(a, ln),
        });
    }
    let z = z.ok_or_else(|| GcnError::ShapeMismatch("subject has no segments".into()))?;
    let pooled = tape.mean_rows(z);
    let l_b = match task {
        Task::Classify => {
            let logit = tape.matmul(pooled, vars.cls_w);
            let logit = tape.add(logit, vars.cls_b);
            let sp = tape.softplus(logit);
            let y = subject.label.as_f64();
            let yz = tape.scale(logit, y);
            tape.sub(sp, yz)
        }
        Task::RegressAge => {
            let out = tape.matmul(pooled, vars.age_w);
            let out = tape.add(out, vars.age_b);
            let diff = tape.add_const(out, -subject.theta_std);
            tape.hadamard(diff, diff)
        }
    };
    let inv_segments = 1.0 / subject.segments.len() as f64;
    let l_pos = tape.scale(l_pos_sum.expect("segments"), inv_segments);
    let l_neg = tape.scale(l_neg_sum.expect("segments"), inv_segments);
    let contrast = tape.add(l_pos, l_neg);
    let contrast = tape.scale(contrast, loss_mix);
    let total = tape.add(l_b, contrast);
    let parts = LossParts {
        total: tape.scalar_value(total),
        l_b: tape.scalar_value(l_b),
        l_pos: tape.scalar_value(l_pos),
        l_neg: tape.scalar_value(l_neg),
        max_phi_norm,
    };
    if !parts.total.is_finite() {
        return Err(GcnError::NonFiniteLoss { subject: subject.subject_id.clone() }.into());
    }
    Ok((total, parts))
}

/// Loss and exact gradient for a single subject.
pub fn subject_grad(model: &GcnModel, subject: &PreparedSubject, task: Task, loss_mix: f64) -> Result<(LossParts, ModelGrad)> {
    let mut tape = Tape::new();
    let vars = ParamVars::new(&mut tape, model);
    let (total, parts) = record_subject(&mut tape, &vars, model, subject, task, loss_mix)?;
    Ok((parts, vars.collect(&tape, total)))
}

/// Loss for a single subject without the backward pass.
pub fn subject_loss(model: &GcnModel, subject: &PreparedSubject, task: Task, loss_mix: f64) -> Result<LossParts> {
    let mut tape = Tape::new();
    let vars = ParamVars::new(&mut tape, model);
    Ok(record_subject(&mut tape, &vars, model, subject, task, loss_mix)?.1)
}

/// Batch-mean loss and gradient. Subjects are evaluated in parallel and
/// summed in `subject_id` order.
pub fn grad_all(model: &GcnModel, batch: &[&PreparedSubject], task: Task, loss_mix: f64) -> Result<(LossParts, ModelGrad)> {
    let mut ordered: Vec<&PreparedSubject> = batch.to_vec();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let results: Vec<Result<(LossParts, ModelGrad)>> =
        ordered.par_iter().map(|s| subject_grad(model, s, task, loss_mix)).collect();
    let mut grad = ModelGrad::zeros_like(model);
    let mut parts = LossParts::default();
    for r in results {
        let (p, g) = r?;
        grad.add_assign(&g);
        parts.total += p.total;
        parts.l_b += p.l_b;
        parts.l_pos += p.l_pos;
        parts.l_neg += p.l_neg;
        parts.max_phi_norm = parts.max_phi_norm.max(p.max_phi_norm);
    }
    let n = ordered.len().max(1) as f64;
    grad.scale(1.0 / n);
    parts.total /= n;
    parts.l_b /= n;
    parts.l_pos /= n;
    parts.l_neg /= n;
    Ok((parts, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub l_b: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    pub val_auc: Option<f64>,
    pub val_mse: Option<f64>,
    pub max_phi_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

impl TrainMetrics {
    pub const CSV_HEADER: &'static str = "epoch,loss,l_b,l_pos,l_neg,val_auc,val_mse,max_phi_norm";

    pub fn to_csv(&self) -> String {
        let f = crate::cohort::format_f64;
        let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch,
                f(e.loss),
                f(e.l_b),
                f(e.l_pos),
                f(e.l_neg),
                opt(e.val_auc),
                opt(e.val_mse),
                f(e.max_phi_norm)
            ));
        }
        out
    }

    pub fn final_val_auc(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_auc)
    }

    pub fn final_val_mse(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_mse)
    }

    pub fn max_phi_norm(&self) -> f64 {
        self.epochs.iter().map(|e| e.max_phi_norm).fold(0.0, f64::max)
    }
}

/// Seeded split that holds out `fraction` of each label group (at least
/// one subject per group when the group has two or more).
pub fn stratified_split(subjects: &[PreparedSubject], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [Label::Control, Label::Case] {
        let mut group: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].label == label).collect();
        group.sort_by(|&a, &b| subjects[a].subject_id.cmp(&subjects[b].subject_id));
        group.shuffle(&mut rng);
        let mut n_val = (group.len() as f64 * fraction).round() as usize;
        if group.len() >= 2 {
            n_val = n_val.clamp(1, group.len() - 1);
        }
        val.extend_from_slice(&group[..n_val]);
        train.extend_from_slice(&group[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn evaluate(model: &GcnModel, subjects: &[&PreparedSubject], task: Task) -> Result<(Option<f64>, Option<f64>, f64)> {
    let preds: Vec<Result<(f64, f64)>> = subjects
        .par_iter()
        .map(|s| {
            let phi_max = model.phis(s).iter().flatten().map(spectral_norm_svd).fold(0.0, f64::max);
            Ok((model.predict(s, task)?, phi_max))
        })
        .collect();
    let mut scores = Vec::with_capacity(subjects.len());
    let mut phi_max = 0.0_f64;
    for p in preds {
        let (s, m) = p?;
        scores.push(s);
        phi_max = phi_max.max(m);
    }
    Ok(match task {
        Task::Classify => {
            let labels: Vec<bool> = subjects.iter().map(|s| s.label == Label::Case).collect();
            (auc(&scores, &labels), None, phi_max)
        }
        Task::RegressAge => {
            let ages: Vec<f64> = subjects.iter().map(|s| s.age).collect();
            (None, mse(&scores, &ages), phi_max)
        }
    })
}

/// Prepares every subject and trains.
pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<(GcnModel, TrainMetrics)> {
    config.validate()?;
    let prep = config.prep();
    let prepared: Vec<PreparedSubject> =
        cohort.subjects.par_iter().map(|s| prepare_subject(s, &prep)).collect::<Result<Vec<_>>>()?;
    train_prepared(&prepared, config)
}

/// Mini-batch gradient descent with a fixed learning rate.
pub fn train_prepared(subjects: &[PreparedSubject], config: &TrainConfig) -> Result<(GcnModel, TrainMetrics)> {
    config.validate()?;
    if subjects.is_empty() {
        return Err(GcnError::InvalidConfig("no subjects".into()).into());
    }
    if config.task == Task::Classify {
        let cases = subjects.iter().filter(|s| s.label == Label::Case).count();
        if cases == 0 || cases == subjects.len() {
            return Err(GcnError::MissingClass.into());
        }
    }
    let mut model = GcnModel::init(subjects[0].regions(), config);
    let (train_idx, val_idx) = stratified_split(subjects, config.val_fraction, config.seed);
    let mut metrics = TrainMetrics {
        epochs: Vec::with_capacity(config.epochs),
        train_ids: train_idx.iter().map(|&i| subjects[i].subject_id.clone()).collect(),
        val_ids: val_idx.iter().map(|&i| subjects[i].subject_id.clone()).collect(),
    };
    let val: Vec<&PreparedSubject> = val_idx.iter().map(|&i| &subjects[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedSubject> = chunk.iter().map(|&i| &subjects[i]).collect();
            let (parts, grad) = grad_all(&model, &batch, config.task, config.loss_mix)?;
            let n = batch.len() as f64;
            sums.total += parts.total * n;
            sums.l_b += parts.l_b * n;
            sums.l_pos += parts.l_pos * n;
            sums.l_neg += parts.l_neg * n;
            sums.max_phi_norm = sums.max_phi_norm.max(parts.max_phi_norm);
            model.apply(&grad, config.learning_rate);
        }
        let n = order.len().max(1) as f64;
        let (val_auc, val_mse, val_phi) = evaluate(&model, &val, config.task)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            loss: sums.total / n,
            l_b: sums.l_b / n,
            l_pos: sums.l_pos / n,
            l_neg: sums.l_neg / n,
            val_auc,
            val_mse,
            max_phi_norm: sums.max_phi_norm.max(val_phi),
        };
        log::info!("age_gcn: epoch {} loss {:.6} val_auc {:?} val_mse {:?}", row.epoch, row.loss, row.val_auc, row.val_mse);
        metrics.epochs.push(row);
    }
    Ok((model, metrics))
}
