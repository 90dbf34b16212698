//! Acceptance suite. Runs every criterion in sequence, prints one
//! `criterion N: PASS|FAIL` line each and exits non-zero on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use neurotree_core::cmfc::{build_masks, cmfc, fc_strength};
use neurotree_core::cohort::generate_synthetic;
use neurotree_core::fc::effective_connectivity;
use neurotree_core::gcn::{subject_grad, subject_loss, train, train_prepared, Head};
use neurotree_core::khop::{
    assemble, binomial_expansion, convergence_profile, log_norm_slope, mixed_power, spectral_norm, DEFAULT_NORM_TOL,
};
use neurotree_core::linalg::spectral_norm_svd;
use neurotree_core::pipeline::{prepare_subject, PreparedSubject};
use neurotree_core::tree::{extract_trunks, high_order_fc, kruskal, Edge, PathWeightConfig, PrunedTree, TreeContext};
use neurotree_core::{
    standardize_age, GcnModel, KHopConfig, Matrix, NodeScores, OdeParams, StrengthLatent, SynthSpec, Task, TrainConfig,
    TrainMetrics, WeightedGraph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_symmetric(v: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let m = random(v, v, rng);
    (&m + m.transpose()) * 0.5
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn c1_binomial_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let v = rng.random_range(2..=8);
        let lambda = rng.random_range(1..=9) as f64 / 10.0;
        let k = rng.random_range(0..=6);
        let a = random(v, v, &mut rng);
        let direct = mixed_power(&a, lambda, k).map_err(|e| e.to_string())?;
        let expanded = binomial_expansion(&a, lambda, k).map_err(|e| e.to_string())?;
        worst = worst.max((direct - expanded).amax());
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-10 && elapsed < Duration::from_secs(5),
        format!("max abs error {worst:.3e} over 100 instances in {}", secs(elapsed)),
    )
}

fn c2_asymmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_half = 0.0_f64;
    let mut asymmetric = [0usize; 2];
    for _ in 0..100 {
        let v = rng.random_range(3..=8);
        let k = rng.random_range(1..=6);
        let gamma = random_symmetric(v, &mut rng);
        let a_s = random_symmetric(v, &mut rng);
        let a_d = random(v, v, &mut rng);
        let op = |lambda: f64| {
            let cfg = KHopConfig { gamma: gamma.clone(), ..KHopConfig::new(v, lambda, k).unwrap() };
            assemble(&a_s, &a_d, &cfg, 0).map(|o| o.a_hat).map_err(|e| e.to_string())
        };
        let half = op(0.5)?;
        worst_half = worst_half.max((&half - half.transpose()).norm());
        for (slot, lambda) in [0.2, 0.8].into_iter().enumerate() {
            let m = op(lambda)?;
            if (&m - m.transpose()).norm() > 1e-6 {
                asymmetric[slot] += 1;
            }
        }
    }
    check(
        worst_half < 1e-12 && asymmetric.iter().all(|&n| n >= 95),
        format!(
            "lambda=0.5 max asymmetry {worst_half:.3e}; asymmetric trials {}/100 (0.2), {}/100 (0.8)",
            asymmetric[0], asymmetric[1]
        ),
    )
}

fn c3_spectral_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let start = Instant::now();
    let (mut rigorous_fail, mut short_trials, mut short_fail) = (0, 0, 0);
    for _ in 0..100 {
        let v = rng.random_range(2..=8);
        let lambda = rng.random_range(0.05..0.95);
        let gamma = random_symmetric(v, &mut rng);
        let a_s = random_symmetric(v, &mut rng);
        let mut a_d = random(v, v, &mut rng);
        a_d *= rng.random_range(0.1..1.5) / spectral_norm_svd(&a_d);
        let rows = convergence_profile(&a_s, &a_d, &gamma, lambda, 6).map_err(|e| e.to_string())?;
        rigorous_fail += usize::from(!rows.iter().all(|r| r.within_bound()));
        if spectral_norm_svd(&a_d) <= 0.5 {
            short_trials += 1;
            short_fail += usize::from(!rows.iter().all(|r| r.within_short_bound()));
        }
    }
    let elapsed = start.elapsed();
    check(
        rigorous_fail == 0 && short_trials > 0 && short_fail == 0 && elapsed < Duration::from_secs(10),
        format!(
            "rigorous bound violated in {rigorous_fail}/100; short bound violated in {short_fail}/{short_trials} trials with ||A_d|| <= 1/2; {}",
            secs(elapsed)
        ),
    )
}

/// The planted benchmark cohort, trained once and shared by criteria 4, 11 and 12.
struct Benchmark {
    prepared: Vec<PreparedSubject>,
    model: GcnModel,
    metrics: TrainMetrics,
    elapsed: Duration,
}

fn benchmark() -> &'static Result<Benchmark, String> {
    static CELL: OnceLock<Result<Benchmark, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cohort = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
        let cfg = TrainConfig::default();
        let prepared: Vec<PreparedSubject> = cohort
            .subjects
            .iter()
            .map(|s| prepare_subject(s, &cfg.prep()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let (model, metrics) = train_prepared(&prepared, &cfg).map_err(|e| e.to_string())?;
        Ok(Benchmark { prepared, model, metrics, elapsed: start.elapsed() })
    })
}

fn c4_phi_stability() -> Outcome {
    let b = benchmark().as_ref().map_err(Clone::clone)?;
    let during = b.metrics.max_phi_norm();
    let mut after = 0.0_f64;
    for s in &b.prepared {
        for phi in b.model.phis(s).iter().flatten() {
            after = after.max(spectral_norm_svd(phi));
        }
    }
    check(
        during <= 1.0 + 1e-9 && after <= 1.0 + 1e-9,
        format!("max ||Phi|| {during:.12} during training, {after:.12} for the trained model"),
    )
}

fn c5_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let cfg = TrainConfig { hops: 2, layers: 2, hidden: 3, seed, ..TrainConfig::default() };
        let spec =
            SynthSpec { v: 4, t_len: 24, n_per_class: 1, seed, planted_blocks: vec![vec![0, 1]], ..SynthSpec::default() };
        let cohort = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let subject = prepare_subject(&cohort.subjects[(seed % 2) as usize], &cfg.prep()).map_err(|e| e.to_string())?;
        let mut model = GcnModel::init(4, &cfg);
        // Heads start at zero, which would make most weight gradients vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let d = model.cls_head.w.nrows();
        model.cls_head = Head { w: random(d, 1, &mut rng), b: rng.random_range(-0.5..0.5) };
        model.age_head = Head { w: random(d, 1, &mut rng), b: rng.random_range(-0.5..0.5) };
        model.gamma = Matrix::from_fn(4, 4, |_, _| rng.random_range(0.5..1.5));
        for task in [Task::Classify, Task::RegressAge] {
            let (_, grad) = subject_grad(&model, &subject, task, 1.0).map_err(|e| e.to_string())?;
            let analytic = grad.flat();
            let base = model.params_flat();
            if analytic.len() != base.len() {
                return Err(format!("gradient has {} entries, model has {}", analytic.len(), base.len()));
            }
            let h = 1e-5;
            for (i, &an) in analytic.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p[i] += delta;
                    let mut m = model.clone();
                    m.set_params_flat(&p);
                    subject_loss(&m, &subject, task, 1.0).map(|l| l.total).map_err(|e| e.to_string())
                };
                let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("max relative error {worst:.3e} over {checked} parameter checks, 20 seeds, {}", secs(elapsed)),
    )
}

fn c6_ode_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0_f64;
    for t in 0..100 {
        let v = rng.random_range(2..=8);
        let eta = rng.random_range(0.5..2.0);
        let rho = rng.random_range(0.1..1.0);
        let age = rng.random_range(18.0..60.0);
        let a_star = random(v, v, &mut rng) * 0.5;
        let x = random(v, 2 * v, &mut rng);
        let m = Matrix::identity(v, v) + &a_star * eta + Matrix::identity(v, v) * (rho * standardize_age(age));
        let x_next = m * &x;
        let p = OdeParams::new(eta, rho, age).map_err(|e| e.to_string())?;
        let a = effective_connectivity(&x, &x_next, &p, t).map_err(|e| e.to_string())?;
        worst = worst.max((a.data - a_star).norm());
    }
    check(worst < 1e-8, format!("max Frobenius recovery error {worst:.3e} over 100 planted systems"))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
        ra != rb
    }
}

fn exhaustive_mst(g: &WeightedGraph) -> Option<f64> {
    let need = g.v - 1;
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << g.edges.len()) {
        if mask.count_ones() as usize != need {
            continue;
        }
        let mut uf = UnionFind((0..g.v).collect());
        let mut ok = true;
        let mut cost = 0.0;
        for (k, e) in g.edges.iter().enumerate() {
            if mask & (1 << k) != 0 {
                ok &= uf.union(e.i, e.j);
                cost += e.cost;
            }
        }
        if ok && best.is_none_or(|b| cost < b) {
            best = Some(cost);
        }
    }
    best
}

fn random_connected_graph(rng: &mut ChaCha8Rng) -> WeightedGraph {
    let v = rng.random_range(2..=6);
    let mut pairs = BTreeSet::new();
    for k in 1..v {
        let p = rng.random_range(0..k);
        pairs.insert((p, k));
    }
    for i in 0..v {
        for j in i + 1..v {
            if rng.random_bool(0.5) {
                pairs.insert((i, j));
            }
        }
    }
    // Costs on a coarse grid so ties occur.
    let edges = pairs.into_iter().map(|(i, j)| Edge { i, j, cost: rng.random_range(0..10) as f64 / 10.0 }).collect();
    WeightedGraph::new(v, edges).expect("valid graph")
}

fn c7_mst_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let g = random_connected_graph(&mut rng);
        let t = kruskal(&g);
        let best = exhaustive_mst(&g).expect("connected");
        if t.edges.len() != g.v - 1 || (t.total_cost - best).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("{mismatches}/200 graphs disagree with exhaustive search; {}", secs(elapsed)),
    )
}

fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> PrunedTree {
    let mut edges: Vec<Edge> =
        (1..n).map(|k| Edge { i: rng.random_range(0..k), j: k, cost: rng.random_range(0.0..1.0) }).collect();
    edges.sort_by_key(|e| (e.i, e.j));
    PrunedTree::from_edges(n, edges)
}

fn simple_paths(adj: &[Vec<usize>], i: usize, j: usize) -> Vec<Vec<usize>> {
    fn go(adj: &[Vec<usize>], u: usize, j: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if u == j {
            out.push(path.clone());
            return;
        }
        for &w in &adj[u] {
            if !path.contains(&w) {
                path.push(w);
                go(adj, w, j, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(adj, i, j, &mut vec![i], &mut out);
    out
}

fn c8_high_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0_f64;
    let mut pairs = 0usize;
    for _ in 0..100 {
        let n = rng.random_range(2..=10);
        let tree = random_tree(n, &mut rng);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut adj = vec![Vec::new(); n];
        for e in &tree.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let paths = simple_paths(&adj, i, j);
                for s in 0..=3 {
                    let got = high_order_fc(&tree, &f, i, j, s, 3).map_err(|e| e.to_string())?;
                    let mut want = f[i] + f[j];
                    if s > 0 {
                        for p in paths.iter().filter(|p| p.len() == s + 2) {
                            want += p.iter().map(|&k| f[k]).sum::<f64>();
                        }
                    }
                    worst = worst.max((got - want).abs());
                    pairs += 1;
                }
            }
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:.3e} over {pairs} (pair, order) queries on 100 trees"))
}

fn c9_trunks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut problems = Vec::new();
    for t in 0..100 {
        let n = rng.random_range(2..=12);
        let tree = random_tree(n, &mut rng);
        let scores = NodeScores::from_scores(DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0)));
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let cfg = PathWeightConfig { alpha: rng.random_range(0.0..=1.0), ..PathWeightConfig::default() };
        let ctx = TreeContext::new(&tree, &scores, &f).map_err(|e| e.to_string())?;
        let h = extract_trunks(&ctx, &cfg, 4).map_err(|e| e.to_string())?;
        let replay = extract_trunks(&ctx, &cfg, 4).map_err(|e| e.to_string())?;
        if h != replay {
            problems.push(format!("tree {t}: replay differs"));
        }
        for w in h.levels.windows(2) {
            if w[1].nodes_in_graph > w[0].nodes_in_graph || w[1].edges_in_graph >= w[0].edges_in_graph {
                problems.push(format!("tree {t}: level sizes not monotone"));
            }
        }
        let mut used = BTreeSet::new();
        for p in h.levels.iter().flat_map(|l| &l.paths) {
            for (a, b) in p.edge_pairs() {
                if !tree.is_adjacent(a, b) {
                    problems.push(format!("tree {t}: {a}-{b} is not a tree edge"));
                }
                if !used.insert((a, b)) {
                    problems.push(format!("tree {t}: edge {a}-{b} reused"));
                }
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "monotone levels, edge-disjoint trunks and identical replay on 100 trees".into()
        } else {
            problems.join("; ")
        },
    )
}

fn c10_cmfc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst_ln = 0.0_f64;
    let mut worst_scale = 0.0_f64;
    for v in [4usize, 8, 16, 32] {
        let a = random(v, v, &mut rng);
        let masks = build_masks(&fc_strength(&a, 0));
        if masks.pos_pairs.is_empty() {
            return Err(format!("v={v}: no positive pairs"));
        }
        let row = random(1, 8, &mut rng);
        let uniform = StrengthLatent { h: Matrix::from_fn(v, 8, |_, c| row[(0, c)]) };
        let loss = cmfc(&uniform, &masks).map_err(|e| e.to_string())?;
        worst_ln = worst_ln.max((loss.l_pos - (v as f64).ln()).abs());

        let h = random(v, 8, &mut rng);
        let base = cmfc(&StrengthLatent { h: h.clone() }, &masks).map_err(|e| e.to_string())?;
        let mut scaled = h;
        for i in 0..v {
            let c = rng.random_range(0.1..10.0);
            scaled.row_mut(i).scale_mut(c);
        }
        let rescaled = cmfc(&StrengthLatent { h: scaled }, &masks).map_err(|e| e.to_string())?;
        worst_scale = worst_scale.max((base.l_total - rescaled.l_total).abs());
    }
    check(
        worst_ln < 1e-5 && worst_scale < 1e-12,
        format!("|L_pos - ln v| <= {worst_ln:.3e}; row-rescaling change {worst_scale:.3e}"),
    )
}

fn c11_benchmark() -> Outcome {
    let b = benchmark().as_ref().map_err(Clone::clone)?;
    let auc = b.metrics.final_val_auc().ok_or("no validation AUC")?;

    let start = Instant::now();
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let spec = SynthSpec { seed, case_age_shift: 30.0, ..SynthSpec::default() };
        let cohort = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let full_cfg = TrainConfig { seed, ..TrainConfig::default() };
        let frozen_cfg = TrainConfig { beta_init: 0.0, freeze_beta: true, ..full_cfg.clone() };
        let full = train(&cohort, &full_cfg).map_err(|e| e.to_string())?.1.final_val_auc().ok_or("no AUC")?;
        let frozen = train(&cohort, &frozen_cfg).map_err(|e| e.to_string())?.1.final_val_auc().ok_or("no AUC")?;
        pairs.push((full, frozen));
    }
    let ablation_time = start.elapsed();
    let listed: Vec<String> = pairs.iter().map(|(f, z)| format!("{f:.3}/{z:.3}")).collect();
    check(
        auc >= 0.9 && pairs.iter().all(|(f, z)| z < f) && b.elapsed + ablation_time < Duration::from_secs(180),
        format!(
            "held-out AUC {auc:.3} ({}); ablation full/frozen AUC per seed {} ({})",
            secs(b.elapsed),
            listed.join(", "),
            secs(ablation_time)
        ),
    )
}

fn c12_convergence_profile() -> Outcome {
    let b = benchmark().as_ref().map_err(Clone::clone)?;
    let lambda = TrainConfig::default().lambda;
    let m = lambda.max(1.0 - lambda);
    let (mut checked, mut worst_gap) = (0usize, f64::NEG_INFINITY);
    let mut worst_contractive = f64::NEG_INFINITY;
    for s in &b.prepared {
        let gamma = Matrix::from_element(s.regions(), s.regions(), 1.0);
        for seg in &s.segments {
            let d_norm = spectral_norm(&seg.a_dyn, DEFAULT_NORM_TOL).map_err(|e| e.to_string())?;
            let rows = convergence_profile(&s.a_static, &seg.a_dyn, &gamma, lambda, 10).map_err(|e| e.to_string())?;
            let slope = log_norm_slope(&rows, 2).ok_or("too few rows")?;
            worst_gap = worst_gap.max(slope - (2.0 * m * d_norm).ln());

            // The same subject in the contractive regime.
            let scaled = &seg.a_dyn * (0.4 / d_norm);
            let rows = convergence_profile(&s.a_static, &scaled, &gamma, lambda, 10).map_err(|e| e.to_string())?;
            let slope = log_norm_slope(&rows, 2).ok_or("too few rows")?;
            worst_gap = worst_gap.max(slope - (2.0 * m * 0.4).ln());
            worst_contractive = worst_contractive.max(slope);
            checked += 1;
        }
    }
    check(
        worst_gap <= 0.05 && worst_contractive < 0.0,
        format!(
            "slope minus log(2 max(lambda,1-lambda) ||A_d||) at most {worst_gap:.3} over {checked} segments; steepest contractive slope {worst_contractive:.3}"
        ),
    )
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn run_pipeline(root: &Path, jobs: &str) -> Result<(), String> {
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[synth]\nn_per_class = 10\n[train]\nepochs = 10\n").map_err(|e| e.to_string())?;
    let out = root.join("out");
    let o = |p: &str| out.join(p).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), o("cohort")],
        vec!["fc".into(), "--in".into(), o("cohort"), "--out".into(), o("fc")],
        vec!["train".into(), "--in".into(), o("cohort"), "--out".into(), o("train")],
        vec!["score".into(), "--in".into(), o("cohort"), "--model".into(), o("train/model.json"), "--out".into(), o("score")],
        vec![
            "tree".into(),
            "--in".into(),
            o("cohort"),
            "--model".into(),
            o("train/model.json"),
            "--out".into(),
            o("tree"),
            "--sweep".into(),
            "0,0.5,1".into(),
        ],
        vec!["report".into(), "--in".into(), o(""), "--out".into(), root.join("report.json").to_string_lossy().into_owned()],
    ];
    for step in steps {
        let status = Command::new(env!("CARGO_BIN_EXE_neurotree"))
            .args(["--config", &cfg.to_string_lossy(), "--jobs", jobs])
            .args(&step)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("`{}` exited with {status}", step[0]));
        }
    }
    std::fs::rename(root.join("report.json"), out.join("report.json")).map_err(|e| e.to_string())
}

fn c13_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path(), "1")?;
    run_pipeline(b.path(), "2")?;
    let fa = files_under(&a.path().join("out"));
    let fb = files_under(&b.path().join("out"));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    check(
        differing.is_empty() && !fa.is_empty(),
        if differing.is_empty() {
            format!("{} output files byte-identical across two runs (1 and 2 worker threads)", fa.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 13] = [
        (1, "binomial expansion", c1_binomial_equivalence),
        (2, "asymmetry", c2_asymmetry),
        (3, "spectral bound", c3_spectral_bound),
        (4, "phi stability", c4_phi_stability),
        (5, "gradient correctness", c5_gradients),
        (6, "effective connectivity recovery", c6_ode_recovery),
        (7, "mst oracle", c7_mst_oracle),
        (8, "high-order aggregation", c8_high_order),
        (9, "trunk extraction", c9_trunks),
        (10, "cmfc closed form", c10_cmfc),
        (11, "synthetic benchmark", c11_benchmark),
        (12, "spectral convergence profile", c12_convergence_profile),
        (13, "determinism", c13_determinism),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 13 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
