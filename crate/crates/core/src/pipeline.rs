//! Per-subject inputs that stay fixed during training.
//!
//! The hop bases `A_s .* M^k` do not depend on any learnable parameter, so
//! they are computed once; only the gate `Gamma` is applied per step.

use serde::{Deserialize, Serialize};

use crate::cmfc::{build_masks, fc_strength, ContrastMasks, FcStrength};
use crate::cohort::{BoldSeries, Label};
use crate::fc::{dynamic_connectivity, pearson_fc, DynamicBackend, OdeParams};
use crate::gcn::GcnModel;
use crate::khop::{mixed_power, KHopError};
use crate::scoring::{node_scores, NodeScores};
use crate::tree::{extract_trunks, graph_from_fc, kruskal, PathWeightConfig, SubjectTree, TreeContext, DEFAULT_LEVELS, DEFAULT_QUANTILE};
use crate::{standardize_age, Matrix, Result};

/// Settings that determine how a series becomes model input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepConfig {
    pub n_segments: usize,
    pub backend: DynamicBackend,
    pub eta: f64,
    pub rho: f64,
    pub lambda: f64,
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInput {
    pub a_dyn: Matrix,
    /// `A_s .* M^k` for `k = 0..hops`.
    pub hop_bases: Vec<Matrix>,
    pub strength: FcStrength,
    pub masks: ContrastMasks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub label: Label,
    pub age: f64,
    pub theta_std: f64,
    pub a_static: Matrix,
    pub segments: Vec<SegmentInput>,
}

impl PreparedSubject {
    pub fn regions(&self) -> usize {
        self.a_static.nrows()
    }

    /// Elementwise mean of the dynamic matrices over segments.
    pub fn mean_dynamic(&self) -> Matrix {
        let v = self.regions();
        let mut acc = Matrix::zeros(v, v);
        for s in &self.segments {
            acc += &s.a_dyn;
        }
        acc / self.segments.len() as f64
    }
}

pub fn prepare_subject(series: &BoldSeries, cfg: &PrepConfig) -> Result<PreparedSubject> {
    if !(cfg.lambda > 0.0 && cfg.lambda < 1.0) {
        return Err(KHopError::Lambda(cfg.lambda).into());
    }
    let a_static = pearson_fc(&series.signal)?.data;
    let params = OdeParams::new(cfg.eta, cfg.rho, series.age)?;
    let dynamics = dynamic_connectivity(&series.signal, cfg.n_segments, cfg.backend, &params)?;
    let mut segments = Vec::with_capacity(dynamics.len());
    for (t, a) in dynamics.into_iter().enumerate() {
        let hop_bases = (0..cfg.hops)
            .map(|k| Ok(a_static.component_mul(&mixed_power(&a.data, cfg.lambda, k)?)))
            .collect::<std::result::Result<Vec<_>, KHopError>>()?;
        let strength = fc_strength(&a.data, t);
        let masks = build_masks(&strength);
        segments.push(SegmentInput { a_dyn: a.data, hop_bases, strength, masks });
    }
    Ok(PreparedSubject {
        subject_id: series.subject_id.clone(),
        label: series.label,
        age: series.age,
        theta_std: standardize_age(series.age),
        a_static,
        segments,
    })
}

/// Region scores from the trained model: latents come from the strength of
/// the segment-mean dynamic matrix and self-similarity from the final
/// embedding.
pub fn subject_scores(model: &GcnModel, subject: &PreparedSubject) -> Result<NodeScores> {
    let latent = model.projection.forward(&fc_strength(&subject.mean_dynamic(), 0));
    let z = model.embed(subject)?;
    Ok(node_scores(&latent, &z)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub quantile: f64,
    pub path: PathWeightConfig,
    pub levels: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { quantile: DEFAULT_QUANTILE, path: PathWeightConfig::default(), levels: DEFAULT_LEVELS }
    }
}

/// Scores, prunes and extracts the trunk hierarchy for one subject. The
/// graph and node strengths both come from the segment-mean dynamic matrix.
pub fn build_subject_tree(model: &GcnModel, subject: &PreparedSubject, cfg: &TreeConfig) -> Result<SubjectTree> {
    let a = subject.mean_dynamic();
    let scores = subject_scores(model, subject)?;
    let f: Vec<f64> = fc_strength(&a, 0).c.iter().copied().collect();
    let tree = kruskal(&graph_from_fc(&a, cfg.quantile)?);
    let hierarchy = extract_trunks(&TreeContext::new(&tree, &scores, &f)?, &cfg.path, cfg.levels)?;
    Ok(SubjectTree { subject_id: subject.subject_id.clone(), label: subject.label, tree, scores, f, hierarchy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic, SynthSpec};

    #[test]
    fn bases_match_direct_assembly() {
        let cohort = generate_synthetic(&SynthSpec { v: 5, t_len: 40, n_per_class: 1, ..SynthSpec::default() }).unwrap();
        let cfg = PrepConfig { n_segments: 2, backend: DynamicBackend::Pearson, eta: 1.0, rho: 0.5, lambda: 0.3, hops: 3 };
        let p = prepare_subject(&cohort.subjects[0], &cfg).unwrap();
        assert_eq!(p.segments.len(), 2);
        assert_eq!(p.segments[0].hop_bases.len(), 3);
        for k in 0..3 {
            let kc = crate::khop::KHopConfig::new(5, 0.3, k).unwrap();
            let op = crate::khop::assemble(&p.a_static, &p.segments[1].a_dyn, &kc, 1).unwrap();
            assert!((&op.a_hat - &p.segments[1].hop_bases[k]).abs().max() < 1e-14);
        }
        assert!((p.theta_std - p.age / 100.0).abs() < 1e-15);
    }

    #[test]
    fn subject_tree_spans_graph() {
        let cohort = generate_synthetic(&SynthSpec { v: 6, t_len: 60, n_per_class: 1, ..SynthSpec::default() }).unwrap();
        let tc = crate::TrainConfig { hops: 2, hidden: 4, ..crate::TrainConfig::default() };
        let p = prepare_subject(&cohort.subjects[0], &tc.prep()).unwrap();
        let model = GcnModel::init(6, &tc);
        let t = build_subject_tree(&model, &p, &TreeConfig::default()).unwrap();
        assert_eq!(t.scores.s.len(), 6);
        assert!(!t.hierarchy.levels.is_empty());
        assert!(t.hierarchy.total_edges() <= t.tree.edges.len());
        let again = build_subject_tree(&model, &p, &TreeConfig::default()).unwrap();
        assert_eq!(again, t);
    }
}
