//! Subject time series: loading, saving and synthetic generation.
//!
//! On-disk layout of a cohort directory:
//!
//! ```text
//! manifest.csv      subject_id,age,label,file
//! <file>            v rows x T columns, no header
//! atlas.csv         region_index,region_name,network   (optional)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{standardize_age, Matrix};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const ATLAS_FILE: &str = "atlas.csv";
pub const MANIFEST_HEADER: [&str; 4] = ["subject_id", "age", "label", "file"];
pub const ATLAS_HEADER: [&str; 3] = ["region_index", "region_name", "network"];

/// Spectral radius the synthetic transition matrix is rescaled to.
pub const SYNTH_SPECTRAL_RADIUS: f64 = 0.95;
/// Standard deviation of the shared background coupling, divided by `sqrt(v)`.
pub const SYNTH_BASE_COUPLING: f64 = 0.3;
/// Samples discarded before recording so the series start near stationarity.
pub const SYNTH_BURN_IN: usize = 100;
pub const SYNTH_AGE_RANGE: (f64, f64) = (18.0, 60.0);

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("manifest header must be `subject_id,age,label,file`, found `{found}`")]
    ManifestHeader { found: String },
    #[error("malformed manifest row {line}: {reason}")]
    ManifestRow { line: usize, reason: String },
    #[error("missing manifest entry for subject file {0}")]
    MissingManifestEntry(PathBuf),
    #[error("subject file not found: {0}")]
    SubjectFileNotFound(PathBuf),
    #[error("duplicate subject id {0}")]
    DuplicateSubject(String),
    #[error("row-count mismatch: subject {subject} has {found} regions, expected {expected}")]
    RegionCountMismatch { subject: String, expected: usize, found: usize },
    #[error("ragged signal in subject {subject}: region {region} has {found} samples, expected {expected}")]
    Ragged { subject: String, region: usize, expected: usize, found: usize },
    #[error("unparsable value `{value}` in {path} line {line}")]
    Parse { path: PathBuf, line: usize, value: String },
    #[error("NaN in signal: subject {subject} region {region} sample {sample}")]
    NonFinite { subject: String, region: usize, sample: usize },
    #[error("zero-variance region {region} in subject {subject}")]
    ZeroVariance { subject: String, region: usize },
    #[error("series too short for subject {subject}: need v >= 2 and T >= 4, got v={v} T={t}")]
    TooShort { subject: String, v: usize, t: usize },
    #[error("age must be positive and finite for subject {subject}, got {age}")]
    InvalidAge { subject: String, age: f64 },
    #[error("invalid atlas: {0}")]
    Atlas(String),
    #[error("planted block index {index} out of range for v={v}")]
    PlantedBlockOutOfRange { index: usize, v: usize },
    #[error("planted blocks overlap at region {0}")]
    OverlappingBlocks(usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cohort is empty")]
    Empty,
}

type Result<T> = std::result::Result<T, CohortError>;

/// Binary diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Control = 0,
    Case = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Control),
            1 => Some(Label::Case),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

/// One subject's region x time signal with demographics.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldSeries {
    pub subject_id: String,
    pub signal: Matrix,
    pub age: f64,
    pub label: Label,
}

impl BoldSeries {
    /// Validates every invariant before constructing.
    pub fn new(subject_id: impl Into<String>, signal: Matrix, age: f64, label: Label) -> Result<Self> {
        let subject_id = subject_id.into();
        let (v, t) = signal.shape();
        if v < 2 || t < 4 {
            return Err(CohortError::TooShort { subject: subject_id, v, t });
        }
        if !(age.is_finite() && age > 0.0) {
            return Err(CohortError::InvalidAge { subject: subject_id, age });
        }
        for r in 0..v {
            for c in 0..t {
                if !signal[(r, c)].is_finite() {
                    return Err(CohortError::NonFinite { subject: subject_id, region: r, sample: c });
                }
            }
            if row_variance(&signal, r) <= 0.0 {
                return Err(CohortError::ZeroVariance { subject: subject_id, region: r });
            }
        }
        Ok(Self { subject_id, signal, age, label })
    }

    pub fn regions(&self) -> usize {
        self.signal.nrows()
    }

    pub fn len(&self) -> usize {
        self.signal.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.ncols() == 0
    }

    pub fn theta_std(&self) -> f64 {
        standardize_age(self.age)
    }
}

fn row_variance(m: &Matrix, r: usize) -> f64 {
    let row = m.row(r);
    let n = row.len() as f64;
    let mean = row.sum() / n;
    row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Canonical functional subnetworks plus subcortical and a catch-all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Network {
    VN,
    SMN,
    DAN,
    VAN,
    FPN,
    DMN,
    SUB,
    Others,
}

impl Network {
    pub const ALL: [Network; 8] =
        [Network::VN, Network::SMN, Network::DAN, Network::VAN, Network::FPN, Network::DMN, Network::SUB, Network::Others];

    pub fn as_str(self) -> &'static str {
        match self {
            Network::VN => "VN",
            Network::SMN => "SMN",
            Network::DAN => "DAN",
            Network::VAN => "VAN",
            Network::FPN => "FPN",
            Network::DMN => "DMN",
            Network::SUB => "SUB",
            Network::Others => "Others",
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Network {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Network::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown network `{s}`"))
    }
}

/// Region names and network membership. Regions absent from the atlas fall
/// back to their index when labelled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub regions: BTreeMap<usize, AtlasEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub name: String,
    pub network: Network,
}

impl Atlas {
    pub fn name(&self, region: usize) -> String {
        self.regions.get(&region).map(|e| e.name.clone()).unwrap_or_else(|| region.to_string())
    }

    pub fn network(&self, region: usize) -> Option<Network> {
        self.regions.get(&region).map(|e| e.network)
    }

    /// Cyclic network assignment with `ROI<i>` names, used for synthetic
    /// cohorts.
    pub fn synthetic(v: usize) -> Atlas {
        let regions = (0..v)
            .map(|i| (i, AtlasEntry { name: format!("ROI{i:02}"), network: Network::ALL[i % Network::ALL.len()] }))
            .collect();
        Atlas { regions }
    }

    pub fn load(path: &Path) -> Result<Atlas> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|source| CohortError::Csv { path: path.to_path_buf(), source })?;
        let headers = rdr.headers().map_err(|source| CohortError::Csv { path: path.to_path_buf(), source })?.clone();
        if headers.iter().collect::<Vec<_>>() != ATLAS_HEADER {
            return Err(CohortError::Atlas(format!("header must be `region_index,region_name,network`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut regions = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|source| CohortError::Csv { path: path.to_path_buf(), source })?;
            if rec.len() != 3 {
                return Err(CohortError::Atlas(format!("row {} has {} fields", i + 2, rec.len())));
            }
            let idx: usize = rec[0].trim().parse().map_err(|_| CohortError::Atlas(format!("bad region index `{}`", &rec[0])))?;
            let network: Network = rec[2].trim().parse().map_err(CohortError::Atlas)?;
            if regions.insert(idx, AtlasEntry { name: rec[1].trim().to_string(), network }).is_some() {
                return Err(CohortError::Atlas(format!("duplicate region index {idx}")));
            }
        }
        Ok(Atlas { regions })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("region_index,region_name,network\n");
        for (idx, e) in &self.regions {
            out.push_str(&format!("{idx},{},{}\n", e.name, e.network));
        }
        write_file(path, out.as_bytes())
    }
}

/// Subjects sharing one region set.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<BoldSeries>,
    pub atlas: Option<Atlas>,
}

impl Cohort {
    /// Sorts subjects by id and checks they share a region count.
    pub fn new(mut subjects: Vec<BoldSeries>, atlas: Option<Atlas>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(CohortError::Empty);
        }
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        let v = subjects[0].regions();
        for s in &subjects {
            if s.regions() != v {
                return Err(CohortError::RegionCountMismatch { subject: s.subject_id.clone(), expected: v, found: s.regions() });
            }
        }
        for w in subjects.windows(2) {
            if w[0].subject_id == w[1].subject_id {
                return Err(CohortError::DuplicateSubject(w[0].subject_id.clone()));
            }
        }
        Ok(Self { subjects, atlas })
    }

    pub fn regions(&self) -> usize {
        self.subjects[0].regions()
    }

    pub fn has_both_classes(&self) -> bool {
        let labels: BTreeSet<Label> = self.subjects.iter().map(|s| s.label).collect();
        labels.len() == 2
    }

    pub fn region_name(&self, region: usize) -> String {
        self.atlas.as_ref().map(|a| a.name(region)).unwrap_or_else(|| region.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// 17 significant digits: round-trips every finite `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format_f64(m[(r, c)]));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Reads a headerless numeric CSV. Non-finite values parse (`NaN`) and are
/// rejected by the caller's validation.
pub fn read_matrix_csv(path: &Path, subject: &str) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| CohortError::Parse {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    value: tok.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let t = rows.first().map_or(0, Vec::len);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != t {
            return Err(CohortError::Ragged { subject: subject.to_string(), region: r, expected: t, found: row.len() });
        }
    }
    Ok(Matrix::from_fn(rows.len(), t, |r, c| rows[r][c]))
}

struct ManifestRow {
    subject_id: String,
    age: f64,
    label: Label,
    file: String,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(CohortError::SubjectFileNotFound(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| CohortError::Csv { path: path.to_path_buf(), source })?;
    let headers = rdr.headers().map_err(|source| CohortError::Csv { path: path.to_path_buf(), source })?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(CohortError::ManifestHeader { found: headers.iter().collect::<Vec<_>>().join(",") });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|source| CohortError::Csv { path: path.to_path_buf(), source })?;
        if rec.len() != 4 || rec.iter().any(|f| f.trim().is_empty()) {
            return Err(CohortError::ManifestRow { line, reason: "expected 4 non-empty fields".into() });
        }
        let age: f64 = rec[1].trim().parse().map_err(|_| CohortError::ManifestRow { line, reason: format!("bad age `{}`", &rec[1]) })?;
        let label = rec[2]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| CohortError::ManifestRow { line, reason: format!("label must be 0 or 1, got `{}`", &rec[2]) })?;
        rows.push(ManifestRow { subject_id: rec[0].trim().to_string(), age, label, file: rec[3].trim().to_string() });
    }
    Ok(rows)
}

/// Loads and validates every subject listed in `dir/manifest.csv`.
pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let referenced: BTreeSet<String> = manifest.iter().map(|r| r.file.clone()).collect();

    // Every subject CSV in the directory must be listed.
    let mut listing: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    listing.sort();
    for p in &listing {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name == MANIFEST_FILE || name == ATLAS_FILE {
            continue;
        }
        if !referenced.contains(&name) {
            return Err(CohortError::MissingManifestEntry(p.clone()));
        }
    }

    let mut subjects = Vec::with_capacity(manifest.len());
    for row in manifest {
        let path = dir.join(&row.file);
        if !path.is_file() {
            return Err(CohortError::SubjectFileNotFound(path));
        }
        let signal = read_matrix_csv(&path, &row.subject_id)?;
        subjects.push(BoldSeries::new(row.subject_id, signal, row.age, row.label)?);
    }
    let atlas_path = dir.join(ATLAS_FILE);
    let atlas = if atlas_path.is_file() { Some(Atlas::load(&atlas_path)?) } else { None };
    Cohort::new(subjects, atlas)
}

/// Writes a cohort in the layout [`load_cohort`] reads.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::from("subject_id,age,label,file\n");
    for s in &cohort.subjects {
        let file = format!("{}.csv", s.subject_id);
        write_matrix_csv(&dir.join(&file), &s.signal)?;
        manifest.push_str(&format!("{},{},{},{}\n", s.subject_id, format_f64(s.age), s.label.as_u8(), file));
    }
    write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    if let Some(atlas) = &cohort.atlas {
        atlas.save(&dir.join(ATLAS_FILE))?;
    }
    Ok(())
}

/// Parameters of a two-class synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub v: usize,
    pub t_len: usize,
    pub n_per_class: usize,
    /// Extra coupling added between every ordered pair inside a planted
    /// block, for class 1 only.
    pub coupling_strength: f64,
    pub planted_blocks: Vec<Vec<usize>>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub eta: f64,
    pub rho: f64,
    /// Years added to class-1 ages. Zero keeps both classes on the same age
    /// range.
    pub case_age_shift: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            v: 12,
            t_len: 600,
            n_per_class: 60,
            coupling_strength: 0.4,
            planted_blocks: vec![vec![0, 1, 2]],
            noise_sigma: 1.0,
            seed: 7,
            eta: 1.0,
            rho: 0.5,
            case_age_shift: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.v < 2 {
            return Err(CohortError::InvalidSpec(format!("v must be >= 2, got {}", self.v)));
        }
        if self.t_len < 4 {
            return Err(CohortError::InvalidSpec(format!("T must be >= 4, got {}", self.t_len)));
        }
        if self.n_per_class == 0 {
            return Err(CohortError::InvalidSpec("n_per_class must be positive".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(CohortError::InvalidSpec(format!("noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        if !self.coupling_strength.is_finite() || !self.eta.is_finite() || !self.rho.is_finite() || !self.case_age_shift.is_finite() {
            return Err(CohortError::InvalidSpec("non-finite parameter".into()));
        }
        let mut seen = BTreeSet::new();
        for block in &self.planted_blocks {
            for &i in block {
                if i >= self.v {
                    return Err(CohortError::PlantedBlockOutOfRange { index: i, v: self.v });
                }
                if !seen.insert(i) {
                    return Err(CohortError::OverlappingBlocks(i));
                }
            }
        }
        Ok(())
    }

    /// Class coupling matrix: shared background plus, for class 1, the
    /// planted blocks.
    pub fn coupling(&self, background: &Matrix, label: Label) -> Matrix {
        let mut a = background.clone();
        if label == Label::Case {
            for block in &self.planted_blocks {
                for &i in block {
                    for &j in block {
                        if i != j {
                            a[(i, j)] += self.coupling_strength;
                        }
                    }
                }
            }
        }
        a
    }
}

/// Simulates each subject as `x(t+1) = M x(t) + noise`, where
/// `M = I + eta*A_c + rho*theta*I` rescaled to spectral radius 0.95.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Cohort> {
    spec.validate()?;
    let v = spec.v;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background_dist = Normal::new(0.0, SYNTH_BASE_COUPLING / (v as f64).sqrt()).expect("positive sigma");
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");

    let background = Matrix::from_fn(v, v, |i, j| if i == j { 0.0 } else { background_dist.sample(&mut rng) });

    let mut subjects = Vec::with_capacity(2 * spec.n_per_class);
    for (class_idx, label) in [Label::Control, Label::Case].into_iter().enumerate() {
        let coupling = spec.coupling(&background, label);
        let shift = if label == Label::Case { spec.case_age_shift } else { 0.0 };
        for n in 0..spec.n_per_class {
            let age = rng.random_range(SYNTH_AGE_RANGE.0..SYNTH_AGE_RANGE.1) + shift;
            let theta = standardize_age(age);
            let mut m = Matrix::identity(v, v) + &coupling * spec.eta;
            for i in 0..v {
                m[(i, i)] += spec.rho * theta;
            }
            let radius = spectral_radius(&m);
            if radius > 0.0 {
                m *= SYNTH_SPECTRAL_RADIUS / radius;
            }

            let mut x = nalgebra::DVector::from_fn(v, |_, _| noise.sample(&mut rng));
            let mut signal = Matrix::zeros(v, spec.t_len);
            for step in 0..(SYNTH_BURN_IN + spec.t_len) {
                let eps = nalgebra::DVector::from_fn(v, |_, _| noise.sample(&mut rng));
                x = &m * x + eps;
                if step >= SYNTH_BURN_IN {
                    signal.set_column(step - SYNTH_BURN_IN, &x);
                }
            }
            let id = format!("sub-{:04}", class_idx * spec.n_per_class + n + 1);
            subjects.push(BoldSeries::new(id, signal, age, label)?);
        }
    }
    Cohort::new(subjects, Some(Atlas::synthetic(v)))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Non-overlapping windows per region, matching [`crate::fc::segment_series`];
/// convenience for callers holding a `BoldSeries`.
impl BoldSeries {
    pub fn segments(&self, n_segments: usize) -> std::result::Result<Vec<Matrix>, crate::fc::FcError> {
        crate::fc::segment_series(&self.signal, n_segments)
    }
}
