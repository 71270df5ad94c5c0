//! Experiment configuration, output directories and the bodies of the
//! `mixkinetics` subcommands.
//!
//! Each run writes `<root>/<command>-<hash>/` where `hash` is the SHA-256 of
//! the canonical JSON of the resolved configuration (output section excluded).
//! CSV rows are flushed as they are produced; `manifest.json` is written last,
//! also on failure.

use crate::collision::{conservative_correction, CollisionConfig, CollisionOperator};
use crate::error::{Error, Result};
use crate::hypo::{
    equivalence_ratios, random_test_field, source_scaling_probe, stability_sweep, HypNormConfig, InitialData, MsSetup, SweepSolver,
};
use crate::kinetic::{counterstream_start, relaxation, DtSpec, Formulation, KineticSolver, RelaxRecord, Scheme, SolverConfig};
use crate::linearized::carleman::{build_table, kernel_apply, BaseMaxwellian, CarlemanConfig};
use crate::linearized::{
    assemble_l, k_eps_direct_filtered, l_eps_apply, random_smooth_point, random_smooth_point_shifted, spectral_report, KernelBasis,
    PairFilter, DEFAULT_DENSE_LIMIT,
};
use crate::maxwell_stefan::{fit_decay, step_ms, UBarProfile};
use crate::mixture::{maxwellian, mu_table, point_inner, weight_table, AngularLaw, MixtureSpec, PhaseGrid, Vec3, Weight};
use crate::numerics::{seeded_rng, InterpOrder, LinearFit};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const OUT_ENV: &str = "MIXKINETICS_OUT";
pub const DEFAULT_OUT: &str = "runs";

fn d_masses() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn d_c_inf() -> Vec<f64> {
    vec![1.0, 1.0]
}
fn d_law() -> AngularLaw {
    AngularLaw::Constant
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    #[serde(default = "d_masses")]
    pub masses: Vec<f64>,
    #[serde(default = "d_c_inf")]
    pub c_inf: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "d_law")]
    pub angular_law: AngularLaw,
    /// Defaults to all ones.
    #[serde(default)]
    pub phi_coeff: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub angular_scale: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub delta: Option<Vec<Vec<f64>>>,
}

impl Default for MixtureSection {
    fn default() -> Self {
        MixtureSection {
            masses: d_masses(),
            c_inf: d_c_inf(),
            gamma: 0.0,
            angular_law: d_law(),
            phi_coeff: None,
            angular_scale: None,
            delta: None,
        }
    }
}

impl MixtureSection {
    pub fn spec(&self) -> Result<MixtureSpec> {
        let mut s = MixtureSpec::new(self.masses.clone(), self.c_inf.clone())?;
        s.gamma = self.gamma;
        s.angular_law = self.angular_law;
        if let Some(p) = &self.phi_coeff {
            s.phi_coeff = p.clone();
        }
        if let Some(a) = &self.angular_scale {
            s.angular_scale = a.clone();
        }
        if let Some(d) = &self.delta {
            s.delta = d.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

fn d_dim() -> usize {
    2
}
fn d_nx() -> usize {
    32
}
fn d_lx() -> f64 {
    2.0 * std::f64::consts::PI
}
fn d_nv() -> usize {
    24
}
fn d_n_sigma() -> usize {
    12
}
fn d_order() -> InterpOrder {
    InterpOrder::Cubic
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_nx")]
    pub nx: usize,
    #[serde(default = "d_lx")]
    pub lx: f64,
    #[serde(default = "d_nv")]
    pub nv: usize,
    /// Defaults to the radius where exp(-m_min v²/2) = 1e-10.
    #[serde(default)]
    pub v_max: Option<f64>,
    #[serde(default = "d_n_sigma")]
    pub n_sigma: usize,
    #[serde(default = "d_order")]
    pub order: InterpOrder,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { dim: d_dim(), nx: d_nx(), lx: d_lx(), nv: d_nv(), v_max: None, n_sigma: d_n_sigma(), order: d_order() }
    }
}

impl GridSection {
    pub fn grid(&self, spec: &MixtureSpec, nx: usize) -> Result<PhaseGrid> {
        PhaseGrid::new(self.dim, nx, self.lx, self.nv, self.v_max.unwrap_or_else(|| PhaseGrid::default_v_max(spec)))
    }

    pub fn collision(&self) -> CollisionConfig {
        CollisionConfig { n_sigma: self.n_sigma, order: self.order }
    }
}

fn d_amplitudes() -> Vec<f64> {
    vec![0.2, -0.2]
}
fn d_one_usize() -> usize {
    1
}
fn d_ms_eps() -> f64 {
    0.5
}
fn d_ms_dt() -> f64 {
    0.01
}
fn d_ms_t_end() -> f64 {
    10.0
}
fn d_ms_record() -> usize {
    10
}

/// Maxwell-Stefan data and the settings of the stand-alone fluid run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsSection {
    #[serde(default = "d_amplitudes")]
    pub amplitudes: Vec<f64>,
    #[serde(default = "d_one_usize")]
    pub mode: usize,
    #[serde(default)]
    pub u_bar: UBarProfile,
    #[serde(default)]
    pub t0: f64,
    /// ε of the stand-alone run.
    #[serde(default = "d_ms_eps")]
    pub epsilon: f64,
    #[serde(default = "d_ms_dt")]
    pub dt: f64,
    #[serde(default = "d_ms_t_end")]
    pub t_end: f64,
    #[serde(default = "d_ms_record")]
    pub record_every: usize,
}

impl Default for MsSection {
    fn default() -> Self {
        MsSection {
            amplitudes: d_amplitudes(),
            mode: 1,
            u_bar: UBarProfile::Zero,
            t0: 0.0,
            epsilon: d_ms_eps(),
            dt: d_ms_dt(),
            t_end: d_ms_t_end(),
            record_every: d_ms_record(),
        }
    }
}

impl MsSection {
    pub fn setup(&self) -> MsSetup {
        MsSetup { amplitudes: self.amplitudes.clone(), mode: self.mode, u_bar: self.u_bar, t0: self.t0 }
    }
}

fn d_eps_one() -> f64 {
    1.0
}
fn d_t_end() -> f64 {
    1.0
}
fn d_scheme() -> Scheme {
    Scheme::ExplicitRk4
}
fn d_cfl() -> f64 {
    0.5
}
fn d_formulation() -> Formulation {
    Formulation::FullF
}
fn d_refactor() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Ignored by eps-sweep, which takes ε from `diagnostics.eps_list`.
    #[serde(default = "d_eps_one")]
    pub epsilon: f64,
    #[serde(default)]
    pub dt: DtSpec,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_scheme")]
    pub scheme: Scheme,
    #[serde(default = "d_cfl")]
    pub cfl: f64,
    #[serde(default = "d_formulation")]
    pub formulation: Formulation,
    #[serde(default = "d_refactor")]
    pub refactor_every: usize,
    #[serde(default = "d_one_usize")]
    pub record_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            epsilon: 1.0,
            dt: DtSpec::default(),
            t_end: d_t_end(),
            scheme: d_scheme(),
            cfl: d_cfl(),
            formulation: d_formulation(),
            refactor_every: d_refactor(),
            record_every: 1,
        }
    }
}

impl SolverSection {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            dt: self.dt.clone(),
            t_end: self.t_end,
            scheme: self.scheme,
            cfl: self.cfl,
            formulation: self.formulation,
            refactor_every: self.refactor_every,
            record_every: self.record_every,
        }
    }

    pub fn sweep(&self) -> SweepSolver {
        SweepSolver {
            scheme: self.scheme,
            dt: self.dt.clone(),
            cfl: self.cfl,
            t_end: self.t_end,
            refactor_every: self.refactor_every,
            record_every: self.record_every,
        }
    }
}

fn d_eps_list() -> Vec<f64> {
    vec![0.5, 0.25, 0.125, 0.0625]
}
fn d_u0() -> f64 {
    0.5
}
fn d_head() -> usize {
    12
}
fn d_probe_fields() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub n_fields: usize,
    pub degree: usize,
    /// Densities of the base Maxwellian.
    pub base_c: Vec<f64>,
    /// Common drift of the base Maxwellian, also the interpolation shift.
    pub base_drift: Vec3,
    #[serde(default)]
    pub carleman: CarlemanConfig,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { n_fields: 20, degree: 3, base_c: vec![1.1, 0.9], base_drift: [0.1, 0.05, 0.0], carleman: CarlemanConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSection {
    pub n_fields: usize,
    pub max_mode: usize,
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        EquivalenceSection { n_fields: 100, max_mode: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "d_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub hyp: HypNormConfig,
    #[serde(default)]
    pub initial: InitialData,
    /// Counter-streaming drift of the relaxation start.
    #[serde(default = "d_u0")]
    pub relax_u0: f64,
    #[serde(default = "d_head")]
    pub spectrum_head: usize,
    /// Random fields for the conservation and projection probes.
    #[serde(default = "d_probe_fields")]
    pub probe_fields: usize,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub equivalence: EquivalenceSection,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            eps_list: d_eps_list(),
            hyp: HypNormConfig::default(),
            initial: InitialData::default(),
            relax_u0: d_u0(),
            spectrum_head: d_head(),
            probe_fields: d_probe_fields(),
            oracle: OracleSection::default(),
            equivalence: EquivalenceSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub root: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of every random test field.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mixture: MixtureSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub ms: MsSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Relax,
    Spectrum,
    KernelOracle,
    MsDecay,
    EpsSweep,
    SourceScaling,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Relax => "relax",
            Command::Spectrum => "spectrum",
            Command::KernelOracle => "kernel-oracle",
            Command::MsDecay => "ms-decay",
            Command::EpsSweep => "eps-sweep",
            Command::SourceScaling => "source-scaling",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything a run of `cmd` needs before any work starts.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        let spec = self.mixture.spec()?;
        self.grid.grid(&spec, self.grid.nx)?;
        if self.grid.n_sigma < 2 || self.grid.n_sigma % 2 == 1 {
            return Err(Error::Config("grid.n_sigma must be even and at least 2".into()));
        }
        let d = &self.diagnostics;
        let eps_ok = |e: &f64| *e > 0.0 && *e <= 1.0;
        match cmd {
            Command::Relax => {
                self.solver.config().validate()?;
                if self.solver.formulation != Formulation::FullF || self.solver.scheme != Scheme::ExplicitRk4 {
                    return Err(Error::Config("relax needs formulation full_F with explicit_rk4".into()));
                }
            }
            Command::Spectrum => {
                if d.probe_fields == 0 {
                    return Err(Error::Config("diagnostics.probe_fields must be positive".into()));
                }
            }
            Command::KernelOracle => {
                let o = &d.oracle;
                if o.n_fields == 0 || o.base_c.len() != spec.n_species() || o.base_c.iter().any(|c| !(*c > 0.0)) {
                    return Err(Error::Config("oracle needs n_fields > 0 and one positive base density per species".into()));
                }
                if self.grid.dim != 2 {
                    return Err(Error::Config("kernel-oracle tables are built for dim = 2 only".into()));
                }
            }
            Command::MsDecay => {
                let m = &self.ms;
                if m.amplitudes.len() != spec.n_species() || !eps_ok(&m.epsilon) || !(m.dt > 0.0) || !(m.t_end >= 0.0) || m.record_every == 0 {
                    return Err(Error::Config("ms section: one amplitude per species, epsilon in (0, 1], dt > 0, record_every > 0".into()));
                }
            }
            Command::EpsSweep => {
                if self.solver.formulation != Formulation::PerturbedF {
                    return Err(Error::Config("eps-sweep needs formulation perturbed_f".into()));
                }
                if d.eps_list.len() < 2 || !d.eps_list.iter().all(eps_ok) {
                    return Err(Error::Config("diagnostics.eps_list needs at least two values in (0, 1]".into()));
                }
                for e in &d.eps_list {
                    let mut c = self.solver.config();
                    c.epsilon = *e;
                    c.validate()?;
                }
                d.hyp.validate()?;
                if !d.hyp.is_admissible() {
                    return Err(Error::Config("hypocoercive coefficients violate b² < 4ad".into()));
                }
                if d.equivalence.n_fields == 0 || self.ms.amplitudes.len() != spec.n_species() {
                    return Err(Error::Config("equivalence.n_fields must be positive and ms needs one amplitude per species".into()));
                }
            }
            Command::SourceScaling => {
                if d.eps_list.len() < 2 || !d.eps_list.iter().all(eps_ok) || self.ms.amplitudes.len() != spec.n_species() {
                    return Err(Error::Config("source-scaling needs two or more epsilons in (0, 1] and one amplitude per species".into()));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON without the output section.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        serde_json::to_string(&c).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 of the canonical JSON.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `--out`, then $MIXKINETICS_OUT, then `output.root`, then "runs".
pub fn output_root(cli: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var(OUT_ENV) {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    config.output.root.as_deref().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Shortest-roundtrip would also be exact; CSV uses 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV file whose rows are flushed as written.
pub struct CsvSink {
    writer: csv::Writer<fs::File>,
}

impl CsvSink {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_err)?;
        writer.write_record(header).map_err(csv_err)?;
        writer.flush()?;
        Ok(CsvSink { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields).map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One run directory.
pub struct RunDir {
    pub path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(path: PathBuf) -> Result<Self> {
        fs::create_dir_all(&path)?;
        Ok(RunDir { path, files: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvSink> {
        self.files.push(name.to_string());
        CsvSink::create(&self.path.join(name), header)
    }

    pub fn subdir(&mut self, name: &str) -> Result<RunDir> {
        self.files.push(format!("{name}/"));
        RunDir::create(self.path.join(name))
    }

    pub fn write_manifest(&self, body: Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&body).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        let mut f = fs::File::create(self.path.join("manifest.json"))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

/// Outcome of a finished subcommand.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Value,
}

/// Runs `cmd` under `root`, always leaving a manifest behind.
pub fn execute(cmd: Command, config: &ExperimentConfig, root: &Path) -> Result<RunOutcome> {
    config.validate(cmd)?;
    let hash = config.content_hash();
    let mut dir = RunDir::create(root.join(format!("{}-{hash}", cmd.name())))?;
    let result = match cmd {
        Command::Relax => cmd_relax(config, &mut dir),
        Command::Spectrum => cmd_spectrum(config, &mut dir),
        Command::KernelOracle => cmd_kernel_oracle(config, &mut dir),
        Command::MsDecay => cmd_ms_decay(config, &mut dir),
        Command::EpsSweep => cmd_eps_sweep(config, &mut dir),
        Command::SourceScaling => cmd_source_scaling(config, &mut dir),
    };
    let config_value: Value = serde_json::from_str(&config.canonical_json()).expect("canonical json parses");
    let (status, summary, error) = match &result {
        Ok(s) => ("ok", s.clone(), Value::Null),
        Err(e) => ("failed", Value::Null, Value::String(e.to_string())),
    };
    dir.write_manifest(json!({
        "command": cmd.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "status": status,
        "error": error,
        "files": dir.files(),
        "summary": summary,
        "config": config_value,
    }))?;
    result.map(|summary| RunOutcome { dir: dir.path.clone(), summary })
}

fn fit_json(fit: &LinearFit) -> Value {
    json!({ "slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared })
}

fn cmd_relax(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Value> {
    let spec = cfg.mixture.spec()?;
    let grid = cfg.grid.grid(&spec, 1)?;
    let op = CollisionOperator::new(&spec, &grid, cfg.grid.collision())?;
    let solver = KineticSolver::new(op, cfg.solver.config())?;
    let f0 = counterstream_start(&spec, &grid, cfg.diagnostics.relax_u0)?;
    let mut sink = dir.csv("relax.csv", &["t", "H", "D", "dist"])?;
    let mut write = |r: &RelaxRecord| sink.row(&[fmt_f64(r.t), fmt_f64(r.h), fmt_f64(r.d), fmt_f64(r.dist)]);
    let recs = relaxation(&solver, &f0, &mut write)?;
    let max_increase = recs.windows(2).map(|w| w[1].h - w[0].h).fold(f64::NEG_INFINITY, f64::max);
    let last = recs.last().copied().ok_or_else(|| Error::Config("no records".into()))?;
    Ok(json!({
        "records": recs.len(),
        "initial_dist": recs[0].dist,
        "final_dist": last.dist,
        "final_t": last.t,
        "max_entropy_increase": max_increase,
        "entropy_nonincreasing": max_increase <= 0.0,
        "min_dissipation": recs.iter().map(|r| r.d).fold(f64::INFINITY, f64::min),
    }))
}

/// Conservation, equilibrium and projection probes at one spatial point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorProbes {
    /// Largest |∫ Q_ij| after correction, over pairs and fields.
    pub species_mass: f64,
    /// Largest pairwise momentum sum.
    pub pair_momentum: f64,
    /// Largest pairwise energy sum.
    pub pair_energy: f64,
    /// ‖Q(M, M)‖ for a common-velocity local Maxwellian.
    pub equilibrium_common: f64,
    /// Same with |u_1 - u_2| = 0.5.
    pub equilibrium_distinct: f64,
    pub idempotence: f64,
    pub self_adjointness: f64,
    /// ‖π_L Q(F, F)‖ / ‖Q(F, F)‖.
    pub pi_l_q: f64,
    /// ‖π_L L^ε f‖ / ‖L^ε f‖.
    pub pi_l_leps: f64,
}

/// Seeded probes of criteria-level operator properties on a one-point grid.
pub fn operator_probes(op: &CollisionOperator, basis: &KernelBasis, n_fields: usize, seed: u64) -> Result<OperatorProbes> {
    let spec = op.spec();
    let grid = op.grid();
    let nv = grid.n_vel();
    let n = spec.n_species();
    let dim = grid.dim();
    let w = weight_table(spec, grid, Weight::MuInv);
    let norm = |a: &[f64]| point_inner(&w, a, a).sqrt();
    let mu: Vec<f64> = mu_table(spec, grid).into_iter().flatten().collect();
    let mut rng = seeded_rng(seed);
    let zero = [0.0; 3];
    let mut p = OperatorProbes {
        species_mass: 0.0,
        pair_momentum: 0.0,
        pair_energy: 0.0,
        equilibrium_common: 0.0,
        equilibrium_distinct: 0.0,
        idempotence: 0.0,
        self_adjointness: 0.0,
        pi_l_q: 0.0,
        pi_l_leps: 0.0,
    };
    for _ in 0..n_fields {
        let pert = random_smooth_point(spec, grid, 3, &mut rng);
        let f: Vec<f64> = mu.iter().zip(&pert).map(|(m, q)| m + 0.1 * q).collect();
        for c in op.correctors() {
            let (i, j) = (c.i, c.j);
            let fi = &f[i * nv..(i + 1) * nv];
            let fj = &f[j * nv..(j + 1) * nv];
            let a = op.q_pair(i, j, fi, fj, &zero)?;
            let b = if i == j { a.clone() } else { op.q_pair(j, i, fj, fi, &zero)? };
            let (a, b) = conservative_correction(c, &a, &b);
            let mut z = a;
            if i != j {
                z.extend_from_slice(&b);
            }
            let r = c.residuals(&z);
            let blocks = c.blocks();
            p.species_mass = r[..blocks].iter().fold(p.species_mass, |m, v| m.max(v.abs()));
            p.pair_momentum = r[blocks..blocks + dim].iter().fold(p.pair_momentum, |m, v| m.max(v.abs()));
            p.pair_energy = p.pair_energy.max(r[blocks + dim].abs());
        }
        let q = op.q_point(&f, &f, &zero);
        p.pi_l_q = p.pi_l_q.max(norm(&basis.project(&q)) / norm(&q));
        let g = random_smooth_point(spec, grid, 3, &mut rng);
        let pf = basis.project(&pert);
        let ppf = basis.project(&pf);
        let diff: Vec<f64> = ppf.iter().zip(&pf).map(|(a, b)| a - b).collect();
        p.idempotence = p.idempotence.max(norm(&diff) / norm(&pert));
        let pg = basis.project(&g);
        let sa = (point_inner(&w, &pf, &g) - point_inner(&w, &pert, &pg)).abs() / (norm(&pert) * norm(&g));
        p.self_adjointness = p.self_adjointness.max(sa);
    }
    // Local Maxwellians with c = (1.1, 0.9, ...) and temperature 1.
    let c: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.1 } else { 0.9 }).collect();
    let stack = |u: &dyn Fn(usize) -> Vec3| -> Vec<f64> {
        let mut out = Vec::with_capacity(n * nv);
        for i in 0..n {
            for v in grid.velocities() {
                out.push(maxwellian(dim, spec.masses[i], c[i], &u(i), 1.0, v));
            }
        }
        out
    };
    let common = [0.3, -0.2, 0.0];
    let m = stack(&|_| common);
    p.equilibrium_common = norm(&op.q_point(&m, &m, &common));
    let split = |i: usize| if i == 0 { [0.25, 0.0, 0.0] } else { [-0.25, 0.0, 0.0] };
    let md = stack(&split);
    let rho: f64 = (0..n).map(|i| spec.masses[i] * c[i]).sum();
    let bary = (0..n).fold([0.0; 3], |acc, i| {
        let u = split(i);
        let wgt = spec.masses[i] * c[i] / rho;
        [acc[0] + wgt * u[0], acc[1] + wgt * u[1], acc[2]]
    });
    p.equilibrium_distinct = norm(&op.q_point(&md, &md, &bary));
    let eps = 0.25;
    let meps = stack(&|i| if i == 0 { [eps * 0.2, 0.0, 0.0] } else { [-eps * 0.2, eps * 0.1, 0.0] });
    let mut rng2 = seeded_rng(seed.wrapping_add(1));
    for _ in 0..n_fields {
        let f = random_smooth_point(spec, grid, 3, &mut rng2);
        let l = l_eps_apply(op, &meps, &f, &zero);
        p.pi_l_leps = p.pi_l_leps.max(norm(&basis.project(&l)) / norm(&l));
    }
    Ok(p)
}

fn cmd_spectrum(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Value> {
    let spec = cfg.mixture.spec()?;
    let grid = cfg.grid.grid(&spec, 1)?;
    let op = CollisionOperator::new(&spec, &grid, cfg.grid.collision())?;
    let basis = KernelBasis::new(&spec, &grid);
    let l = assemble_l(&op, DEFAULT_DENSE_LIMIT)?;
    let rep = spectral_report(&l, &basis, cfg.diagnostics.spectrum_head)?;
    let mut sink = dir.csv("spectrum.csv", &["index", "eigenvalue"])?;
    for (k, v) in rep.head_eigenvalues.iter().enumerate() {
        sink.row(&[k.to_string(), fmt_f64(*v)])?;
    }
    let probes = operator_probes(&op, &basis, cfg.diagnostics.probe_fields, cfg.seed)?;
    let mut sink = dir.csv("probes.csv", &["metric", "value"])?;
    let pv = serde_json::to_value(&probes).map_err(|e| Error::Io(e.to_string()))?;
    if let Value::Object(map) = &pv {
        for (k, v) in map {
            sink.row(&[k.clone(), fmt_f64(v.as_f64().unwrap_or(f64::NAN))])?;
        }
    }
    let separation = if rep.kernel_cluster > 0.0 { rep.lambda_gap / rep.kernel_cluster } else { f64::INFINITY };
    Ok(json!({
        "kernel_dim": rep.kernel_dim,
        "expected_kernel_dim": spec.n_species() + grid.dim() + 1,
        "lambda_gap": rep.lambda_gap,
        "kernel_cluster": rep.kernel_cluster,
        "gap_over_cluster": if separation.is_finite() { json!(separation) } else { json!("inf") },
        "max_principal_angle": rep.max_principal_angle,
        "spectral_radius": rep.spectral_radius,
        "operator_asymmetry": l.asymmetry,
        "probes": pv,
    }))
}

fn cmd_kernel_oracle(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Value> {
    let spec = cfg.mixture.spec()?;
    let grid = cfg.grid.grid(&spec, 1)?;
    let op = CollisionOperator::new(&spec, &grid, cfg.grid.collision())?;
    let o = &cfg.diagnostics.oracle;
    let base = BaseMaxwellian { c: o.base_c.clone(), drift: vec![o.base_drift; spec.n_species()] };
    let table = build_table(&op, &base, &o.base_drift, &o.carleman)?;
    let m = base.stacked(&spec, &grid);
    let mut rng = seeded_rng(cfg.seed);
    let mut sink = dir.csv("oracle.csv", &["field", "rel_l2", "max_abs", "norm_direct"])?;
    let mut worst = 0.0f64;
    for k in 0..o.n_fields {
        let f = random_smooth_point_shifted(&spec, &grid, o.degree, &o.base_drift, &mut rng);
        let a = kernel_apply(&table, &grid, &f)?;
        let b = k_eps_direct_filtered(&op, &m, &f, &o.base_drift, PairFilter::UnequalMass)?;
        let num = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        let mx = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let rel = num / den;
        worst = worst.max(rel);
        sink.row(&[k.to_string(), fmt_f64(rel), fmt_f64(mx), fmt_f64(den)])?;
    }
    Ok(json!({
        "n_fields": o.n_fields,
        "max_rel_l2": worst,
        "pairs": table.pairs.iter().map(|p| [p.i, p.j]).collect::<Vec<_>>(),
        "all_finite": table.all_finite(),
        "kappa3_nonnegative": table.kappa3_nonnegative(),
    }))
}

fn cmd_ms_decay(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Value> {
    let spec = cfg.mixture.spec()?;
    let grid = cfg.grid.grid(&spec, cfg.grid.nx)?;
    let m = &cfg.ms;
    let mut state = m.setup().state(&spec, &grid, m.epsilon)?;
    let mut sink = dir.csv(
        "ms_decay.csv",
        &["t", "norm", "sum_residual", "mean_residual", "orthogonality_residual", "incompressibility_residual"],
    )?;
    let steps = ((m.t_end / m.dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps > 0 { m.t_end / steps as f64 } else { 0.0 };
    let t0 = state.t;
    let mut history = Vec::new();
    let mut worst = [0.0f64; 4];
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for k in 0..=steps {
        if k > 0 {
            state = step_ms(&state, h)?;
            state.t = t0 + k as f64 * h;
        }
        let res = [state.sum_residual(), state.mean_residual(), state.orthogonality_residual(), state.incompressibility_residual()];
        for (w, r) in worst.iter_mut().zip(res) {
            *w = w.max(r);
        }
        let nrm = state.c_tilde_norm();
        monotone &= nrm <= prev;
        prev = nrm;
        history.push((state.t, nrm));
        if k % m.record_every == 0 || k == steps {
            sink.row(&[fmt_f64(state.t), fmt_f64(nrm), fmt_f64(res[0]), fmt_f64(res[1]), fmt_f64(res[2]), fmt_f64(res[3])])?;
        }
    }
    let fit = if history.len() >= 2 && history.iter().all(|h| h.1 > 0.0) {
        let (rate, fit) = fit_decay(&history);
        json!({ "rate": rate, "fit": fit_json(&fit) })
    } else {
        Value::Null
    };
    Ok(json!({
        "steps": steps,
        "dt": h,
        "u_bar_zero": m.u_bar == UBarProfile::Zero,
        "norm_nonincreasing": monotone,
        "max_sum_residual": worst[0],
        "max_mean_residual": worst[1],
        "max_orthogonality_residual": worst[2],
        "max_incompressibility_residual": worst[3],
        "decay": fit,
    }))
}

fn cmd_eps_sweep(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Value> {
    let spec = cfg.mixture.spec()?;
    let grid = cfg.grid.grid(&spec, cfg.grid.nx)?;
    let op = CollisionOperator::new(&spec, &grid, cfg.grid.collision())?;
    let d = &cfg.diagnostics;
    let table = stability_sweep(&op, &d.eps_list, &cfg.ms.setup(), &d.initial, &cfg.solver.sweep(), &d.hyp)?;
    let mut runs = Vec::new();
    for (k, r) in table.rows.iter().enumerate() {
        let name = format!("eps-{k:02}");
        let sub = dir.subdir(&name)?;
        let mut inner = RunDir::create(sub.path.clone())?;
        let mut sink = inner.csv("trajectory.csv", &["t", "hyp_norm_f", "F_minus_M"])?;
        for (t, v) in &r.history {
            sink.row(&[fmt_f64(*t), fmt_f64(*v), fmt_f64(r.epsilon * v)])?;
        }
        inner.write_manifest(json!({
            "epsilon": r.epsilon,
            "dt": r.dt,
            "steps": r.steps,
            "sup_f": r.sup_f,
            "sup_F_minus_M": r.sup_metric,
            "final_f": r.final_f,
            "files": inner.files(),
        }))?;
        runs.push(json!({ "epsilon": r.epsilon, "dir": name }));
    }
    let lx: Vec<f64> = table.rows.iter().map(|r| r.epsilon.ln()).collect();
    let lf: Vec<f64> = table.rows.iter().map(|r| r.sup_f.ln()).collect();
    let f_fit = crate::numerics::linear_fit(&lx, &lf);
    let mut sink = dir.csv("sweep.csv", &["epsilon", "metric", "value", "fit_slope", "fit_r2"])?;
    for r in &table.rows {
        sink.row(&[fmt_f64(r.epsilon), "sup_F_minus_M".into(), fmt_f64(r.sup_metric), fmt_f64(table.fit.slope), fmt_f64(table.fit.r_squared)])?;
        sink.row(&[fmt_f64(r.epsilon), "sup_f".into(), fmt_f64(r.sup_f), fmt_f64(f_fit.slope), fmt_f64(f_fit.r_squared)])?;
    }
    let mut rng = seeded_rng(cfg.seed);
    let fields: Vec<_> = (0..d.equivalence.n_fields).map(|_| random_test_field(&spec, &grid, d.equivalence.max_mode, &mut rng)).collect();
    let eq = equivalence_ratios(&spec, &grid, &fields, &d.hyp, &d.eps_list)?;
    let mut sink = dir.csv("equivalence.csv", &["epsilon", "min_ratio", "max_ratio"])?;
    for r in &eq.rows {
        sink.row(&[fmt_f64(r.epsilon), fmt_f64(r.min_ratio), fmt_f64(r.max_ratio)])?;
    }
    Ok(json!({
        "runs": runs,
        "fit": fit_json(&table.fit),
        "delta_b": table.delta_b,
        "sup_f_fit": fit_json(&f_fit),
        "equivalence": {
            "interval": [eq.interval.0, eq.interval.1],
            "lower_drift": eq.lower_drift,
            "upper_drift": eq.upper_drift,
            "drift": eq.drift(),
        },
    }))
}

fn cmd_source_scaling(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Value> {
    let spec = cfg.mixture.spec()?;
    let grid = cfg.grid.grid(&spec, cfg.grid.nx)?;
    let op = CollisionOperator::new(&spec, &grid, cfg.grid.collision())?;
    let rep = source_scaling_probe(&op, &cfg.diagnostics.eps_list, &cfg.ms.setup())?;
    let mut sink = dir.csv("source_scaling.csv", &["epsilon", "metric", "value", "fit_slope", "fit_r2"])?;
    let fit_cols = |f: &Option<LinearFit>| match f {
        Some(f) => [fmt_f64(f.slope), fmt_f64(f.r_squared)],
        None => [String::new(), String::new()],
    };
    for r in &rep.rows {
        for a in 0..2 {
            let [s, q] = fit_cols(&rep.fluid_fit[a]);
            sink.row(&[fmt_f64(r.epsilon), format!("pi_L_S_a{a}"), fmt_f64(r.fluid[a]), s, q])?;
            let [s, q] = fit_cols(&rep.perp_fit[a]);
            sink.row(&[fmt_f64(r.epsilon), format!("S_perp_a{a}"), fmt_f64(r.perp[a]), s, q])?;
        }
    }
    let fj = |f: &Option<LinearFit>| f.as_ref().map(fit_json).unwrap_or(Value::String("undefined".into()));
    Ok(json!({
        "fluid_fit": [fj(&rep.fluid_fit[0]), fj(&rep.fluid_fit[1])],
        "perp_fit": [fj(&rep.perp_fit[0]), fj(&rep.perp_fit[1])],
    }))
}

/// Process exit code of an error: 2 for configuration, 3 for solver failures, 1 for I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidGrid(_) | Error::DimensionOverflow { .. } => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}
