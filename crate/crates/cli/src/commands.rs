//! One function per subcommand. Per-subject work runs on the rayon pool;
//! files are written afterwards in subject order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use neurotree_core::cohort::{format_f64, generate_synthetic, load_cohort, save_cohort, write_matrix_csv, Atlas};
use neurotree_core::fc::{dynamic_connectivity, pearson_fc, OdeParams};
use neurotree_core::gcn::{train as train_model, GcnModel, Task};
use neurotree_core::khop::{convergence_profile, log_norm_slope, ProfileRow};
use neurotree_core::linalg::spectral_norm_svd;
use neurotree_core::pipeline::{build_subject_tree, prepare_subject, subject_scores, PreparedSubject};
use neurotree_core::tree::{alpha_sweep, export_tree, sweep_csv, SubjectTree};
use neurotree_core::{Cohort, Matrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

type Result<T> = std::result::Result<T, CliError>;

/// Slopes are fitted from this hop onwards.
const SLOPE_FROM_HOP: usize = 2;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn load(dir: &Path) -> Result<Cohort> {
    Ok(load_cohort(dir).map_err(neurotree_core::Error::from)?)
}

fn load_model(path: &Path) -> Result<GcnModel> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(GcnModel::from_json(&text).map_err(neurotree_core::Error::from)?)
}

fn prepare_all(cohort: &Cohort, model_cfg: &neurotree_core::TrainConfig) -> Result<Vec<PreparedSubject>> {
    let prep = model_cfg.prep();
    let prepared = cohort.subjects.par_iter().map(|s| prepare_subject(s, &prep)).collect::<neurotree_core::Result<Vec<_>>>()?;
    Ok(prepared)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cohort = generate_synthetic(&cfg.synth).map_err(neurotree_core::Error::from)?;
    save_cohort(&cohort, out).map_err(neurotree_core::Error::from)?;
    log::info!("cli: wrote {} subjects to {}", cohort.subjects.len(), out.display());
    Ok(())
}

pub fn fc(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let cohort = load(input)?;
    create_dir(out)?;
    let t = &cfg.train;
    let per_subject = cohort
        .subjects
        .par_iter()
        .map(|s| -> neurotree_core::Result<Vec<(String, Matrix)>> {
            let mut mats = vec![pearson_fc(&s.signal)?];
            let params = OdeParams::new(t.eta, t.rho, s.age)?;
            mats.extend(dynamic_connectivity(&s.signal, t.n_segments, t.backend, &params)?);
            Ok(mats.into_iter().map(|m| (format!("{}_{}.csv", s.subject_id, m.kind.file_stem()), m.data)).collect())
        })
        .collect::<neurotree_core::Result<Vec<_>>>()?;
    for (name, m) in per_subject.into_iter().flatten() {
        write_matrix_csv(&out.join(name), &m).map_err(neurotree_core::Error::from)?;
    }
    Ok(())
}

fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut s = String::from("k,phi_norm,ahat_norm,bound\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.k, format_f64(r.phi_norm), format_f64(r.ahat_norm), format_f64(r.bound));
    }
    s
}

pub fn spectral(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let cohort = load(input)?;
    create_dir(out)?;
    let prepared = prepare_all(&cohort, &cfg.train)?;
    let lambda = cfg.train.lambda;
    let m = lambda.max(1.0 - lambda);
    let k_max = cfg.spectral.k_max;
    let results = prepared
        .par_iter()
        .map(|p| -> neurotree_core::Result<Vec<(Vec<ProfileRow>, f64)>> {
            let v = p.regions();
            let gamma = Matrix::from_element(v, v, 1.0);
            p.segments
                .iter()
                .map(|seg| Ok((convergence_profile(&p.a_static, &seg.a_dyn, &gamma, lambda, k_max)?, spectral_norm_svd(&seg.a_dyn))))
                .collect()
        })
        .collect::<neurotree_core::Result<Vec<_>>>()?;
    let mut summary = String::from("subject_id,segment,dyn_norm,slope,slope_bound\n");
    for (p, segs) in prepared.iter().zip(results) {
        for (t, (rows, dyn_norm)) in segs.iter().enumerate() {
            write(&out.join(format!("{}_seg{t}_spectral.csv", p.subject_id)), &profile_csv(rows))?;
            let slope = log_norm_slope(rows, SLOPE_FROM_HOP).map(format_f64).unwrap_or_default();
            let _ = writeln!(summary, "{},{t},{},{},{}", p.subject_id, format_f64(*dyn_norm), slope, format_f64((2.0 * m * dyn_norm).ln()));
        }
    }
    write(&out.join("spectral_slopes.csv"), &summary)
}

fn train_task(cfg: &RunConfig, input: &Path, out: &Path, task: Task, prefix: &str) -> Result<(GcnModel, Cohort)> {
    let cohort = load(input)?;
    create_dir(out)?;
    let mut tc = cfg.train.clone();
    tc.task = task;
    let (model, metrics) = train_model(&cohort, &tc)?;
    write(&out.join(format!("{prefix}model.json")), &model.to_json())?;
    write(&out.join(format!("{prefix}metrics.csv")), &metrics.to_csv())?;
    let mut split = String::from("subject_id,set\n");
    for id in &metrics.train_ids {
        let _ = writeln!(split, "{id},train");
    }
    for id in &metrics.val_ids {
        let _ = writeln!(split, "{id},val");
    }
    write(&out.join(format!("{prefix}split.csv")), &split)?;
    Ok((model, cohort))
}

pub fn train(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    train_task(cfg, input, out, Task::Classify, "").map(|_| ())
}

pub fn age(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let (model, cohort) = train_task(cfg, input, out, Task::RegressAge, "age_")?;
    let prepared = prepare_all(&cohort, &model.config)?;
    let preds = prepared
        .par_iter()
        .map(|p| model.predict(p, Task::RegressAge))
        .collect::<neurotree_core::Result<Vec<_>>>()?;
    let mut csv = String::from("subject_id,label,age,predicted_age\n");
    for (p, pred) in prepared.iter().zip(preds) {
        let _ = writeln!(csv, "{},{},{},{}", p.subject_id, p.label.as_u8(), format_f64(p.age), format_f64(pred));
    }
    write(&out.join("age_predictions.csv"), &csv)
}

fn atlas_of(cohort: &Cohort) -> Atlas {
    cohort.atlas.clone().unwrap_or_default()
}

pub fn score(input: &Path, model_path: &Path, out: &Path) -> Result<()> {
    let cohort = load(input)?;
    let model = load_model(model_path)?;
    create_dir(out)?;
    let prepared = prepare_all(&cohort, &model.config)?;
    let scores = prepared.par_iter().map(|p| subject_scores(&model, p)).collect::<neurotree_core::Result<Vec<_>>>()?;
    for (p, sc) in prepared.iter().zip(scores) {
        let mut csv = String::from("region_index,region_name,score,rank\n");
        for i in 0..p.regions() {
            let _ = writeln!(csv, "{i},{},{},{}", cohort.region_name(i), format_f64(sc.s[i]), sc.position(i));
        }
        write(&out.join(format!("{}_scores.csv", p.subject_id)), &csv)?;
    }
    Ok(())
}

pub fn tree(
    cfg: &RunConfig,
    input: &Path,
    model_path: &Path,
    out: &Path,
    subject: Option<&str>,
    sweep: Option<&[f64]>,
) -> Result<()> {
    let mut cohort = load(input)?;
    if let Some(id) = subject {
        cohort.subjects.retain(|s| s.subject_id == id);
        if cohort.subjects.is_empty() {
            return Err(CliError::Usage(format!("no subject `{id}` in {}", input.display())));
        }
    }
    let model = load_model(model_path)?;
    create_dir(out)?;
    let prepared = prepare_all(&cohort, &model.config)?;
    let trees: Vec<SubjectTree> =
        prepared.par_iter().map(|p| build_subject_tree(&model, p, &cfg.tree)).collect::<neurotree_core::Result<Vec<_>>>()?;
    let atlas = atlas_of(&cohort);
    for t in &trees {
        let export = export_tree(&t.hierarchy, &atlas);
        write(&out.join(format!("{}.dot", t.subject_id)), &export.to_dot())?;
        write(&out.join(format!("{}.tree.json", t.subject_id)), &export.to_json())?;
    }
    if let Some(alphas) = sweep {
        let rows = alpha_sweep(&trees, alphas, cfg.tree.path.max_order).map_err(neurotree_core::Error::from)?;
        write(&out.join("alpha_sweep.csv"), &sweep_csv(&rows))?;
    }
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct MetricsSummary {
    epochs: usize,
    final_loss: Option<f64>,
    final_val_auc: Option<f64>,
    final_val_mse: Option<f64>,
    best_val_auc: Option<f64>,
    max_phi_norm: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
struct Report {
    metrics: BTreeMap<String, MetricsSummary>,
    score_files: usize,
    tree_files: usize,
    spectral_files: usize,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(io_err(dir))?.map(|e| e.map(|e| e.path()).map_err(io_err(dir))).collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn parse_opt(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

fn summarize_metrics(path: &Path) -> Result<MetricsSummary> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (loss, auc, mse, phi) = (col("loss"), col("val_auc"), col("val_mse"), col("max_phi_norm"));
    let mut s = MetricsSummary::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).and_then(parse_opt);
        s.epochs += 1;
        s.final_loss = get(loss);
        s.final_val_auc = get(auc);
        s.final_val_mse = get(mse);
        if let Some(a) = get(auc) {
            s.best_val_auc = Some(s.best_val_auc.map_or(a, |b: f64| b.max(a)));
        }
        if let Some(p) = get(phi) {
            s.max_phi_norm = Some(s.max_phi_norm.map_or(p, |b: f64| b.max(p)));
        }
    }
    Ok(s)
}

/// Reads every `*metrics.csv` under `input` and counts exported artifacts.
/// Never writes inside `input` unless `out` points there.
pub fn report(input: &Path, out: &Path) -> Result<()> {
    let mut files = Vec::new();
    walk(input, &mut files)?;
    let mut rep = Report::default();
    for f in &files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let rel = f.strip_prefix(input).unwrap_or(f).to_string_lossy().replace('\\', "/");
        if name.ends_with("metrics.csv") {
            rep.metrics.insert(rel, summarize_metrics(f)?);
        } else if name.ends_with("_scores.csv") {
            rep.score_files += 1;
        } else if name.ends_with(".dot") {
            rep.tree_files += 1;
        } else if name.ends_with("_spectral.csv") {
            rep.spectral_files += 1;
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(&rep).expect("report serializes");
    text.push('\n');
    write(out, &text)
}
