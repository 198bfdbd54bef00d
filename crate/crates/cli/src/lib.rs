//! Experiment runner for perclab.
//!
//! A run reads a plain-text config (see [`perclab::config`]), executes one
//! experiment and writes its data files next to a `manifest.json` holding the
//! full config text, the seed, the library version and the wall time. Data
//! files depend only on the config and the seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use perclab::clusters::{components, sublinear_cluster_prob, theta_sweep, truncation_sweep};
use perclab::config::{Config, Section};
use perclab::network::Conductance;
use perclab::point_process::write_cloud_csv;
use perclab::regularity::{mc_check_connection_with, mc_check_regularity, DEFAULT_C, DEFAULT_RETRY_BUDGET};
use perclab::renorm::{survey_alive, survey_good, Violation};
use perclab::{
    ConductanceCurve, KernelSpec, ModelConfig, Network, RGrid, RenormParams, ThetaEstimator, TransienceParams,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Seed used when neither the command line nor the config gives one.
pub const DEFAULT_SEED: u64 = 1;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] perclab::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(perclab::Error::Parse { .. }) => "config",
            CliError::Core(_) => "model",
            CliError::Invalid(_) => "validation",
            CliError::Io { .. } => "io",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Generate,
    Build,
    ThetaSweep,
    Sublinear,
    TruncateSweep,
    DeltaEff,
    RenormSurvey,
    Transience,
    LemmaCheck,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Generate,
        Experiment::Build,
        Experiment::ThetaSweep,
        Experiment::Sublinear,
        Experiment::TruncateSweep,
        Experiment::DeltaEff,
        Experiment::RenormSurvey,
        Experiment::Transience,
        Experiment::LemmaCheck,
        Experiment::Validate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Generate => "generate",
            Experiment::Build => "build",
            Experiment::ThetaSweep => "theta-sweep",
            Experiment::Sublinear => "sublinear",
            Experiment::TruncateSweep => "truncate-sweep",
            Experiment::DeltaEff => "delta-eff",
            Experiment::RenormSurvey => "renorm-survey",
            Experiment::Transience => "transience",
            Experiment::LemmaCheck => "lemma-check",
            Experiment::Validate => "validate",
        }
    }
}

impl FromStr for Experiment {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .map_or_else(|| invalid(format!("unknown experiment `{s}`")), Ok)
    }
}

/// One data file produced by an experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Output {
    pub name: String,
    pub contents: String,
}

impl Output {
    fn new(name: &str, contents: String) -> Self {
        Output { name: name.to_string(), contents }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Experiment,
    /// The config text exactly as given.
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_time_secs: f64,
    /// Set until every output has been written.
    pub partial: bool,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn experiment_section(config: &Config) -> Section {
    config.section("experiment").cloned().unwrap_or_else(|| Section::new("experiment"))
}

/// `run { seed = ... }` in the config, if present.
pub fn config_seed(config: &Config) -> Result<Option<u64>> {
    match config.section("run") {
        Some(s) => Ok(s.get_u64("seed")?),
        None => Ok(None),
    }
}

fn csv<T: ToString>(header: &str, rows: impl IntoIterator<Item = T>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|x| serde_json::to_string(x).expect("serialisable") + "\n").collect()
}

fn estimators(ex: &Section) -> Result<Vec<ThetaEstimator>> {
    match ex.get_str("estimator").unwrap_or("origin_to_boundary") {
        "both" => Ok(vec![ThetaEstimator::OriginToBoundary, ThetaEstimator::LargestComponentFraction]),
        other => Ok(vec![other.parse()?]),
    }
}

fn kernel_dim(config: &Config) -> Result<usize> {
    Ok(match config.section("model") {
        Some(m) => m.get_usize("dim")?.unwrap_or(2),
        None => 2,
    })
}

/// Execute `experiment` and return its data files; nothing is written.
pub fn execute(experiment: Experiment, config: &Config, seed: u64) -> Result<Vec<Output>> {
    let ex = experiment_section(config);
    match experiment {
        Experiment::Generate | Experiment::Build => {
            let model = ModelConfig::from_config(config)?;
            let n = ex.get_f64("n")?.unwrap_or(32.0);
            let dom = model.domain(n)?;
            let cloud = if ex.get_bool("palm")?.unwrap_or(false) {
                model.sample_palm_cloud(&dom, seed)?
            } else {
                model.sample_cloud(&dom, seed)?
            };
            let mut buf = Vec::new();
            write_cloud_csv(&cloud, &mut buf)?;
            let mut out = vec![Output::new("cloud.csv", String::from_utf8(buf).expect("utf-8"))];
            if experiment == Experiment::Build {
                let g = model.build(&cloud, seed)?;
                let mut buf = Vec::new();
                g.write_edges_csv(&mut buf)?;
                out.push(Output::new("edges.csv", String::from_utf8(buf).expect("utf-8")));
                let largest = components(&g).largest().map_or(0, |(_, s)| s);
                let summary = json!({
                    "vertices": g.vertex_count(),
                    "edges": g.edge_count(),
                    "largest_component": largest,
                    "mean_degree": if g.vertex_count() == 0 { 0.0 } else { 2.0 * g.edge_count() as f64 / g.vertex_count() as f64 },
                });
                out.push(Output::new("summary.json", summary.to_string() + "\n"));
            }
            Ok(out)
        }
        Experiment::ThetaSweep => {
            let model = ModelConfig::from_config(config)?;
            let ps = ex.get_f64_list("p")?.unwrap_or_else(|| vec![0.2, 0.4, 0.6, 0.8, 1.0]);
            let n = ex.get_f64("n")?.unwrap_or(32.0);
            let k = ex.get_f64("k_reach")?.unwrap_or(1.0);
            let replicas = ex.get_usize("replicas")?.unwrap_or(100);
            let mut rows = Vec::new();
            for est in estimators(&ex)? {
                rows.extend(theta_sweep(&model, &ps, n, k, replicas, seed, est)?.iter().map(|r| r.csv_row()));
            }
            Ok(vec![Output::new("theta.csv", csv(perclab::ThetaEstimate::CSV_HEADER, rows))])
        }
        Experiment::Sublinear => {
            let model = ModelConfig::from_config(config)?;
            let sizes = ex.get_f64_list("sizes")?.unwrap_or_else(|| vec![20.0, 40.0, 80.0]);
            let lambda = ex.get_f64("lambda")?.unwrap_or(0.8);
            let replicas = ex.get_usize("replicas")?.unwrap_or(200);
            let mut rows = Vec::new();
            for &n in &sizes {
                let f = sublinear_cluster_prob(&model, lambda, n, replicas, seed)?;
                rows.push(format!("{n},{lambda},{},{},{}", f.value, f.ci, f.replicas));
            }
            Ok(vec![Output::new("sublinear.csv", csv("n,lambda,value,ci,replicas", rows))])
        }
        Experiment::TruncateSweep => {
            let model = ModelConfig::from_config(config)?;
            let ells = ex.get_f64_list("ell")?.unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0, 16.0, f64::INFINITY]);
            if ells.windows(2).any(|w| w[0] >= w[1]) {
                return invalid("truncation lengths must be strictly increasing");
            }
            let n = ex.get_f64("n")?.unwrap_or(32.0);
            let k = ex.get_f64("k_reach")?.unwrap_or(1.0);
            let replicas = ex.get_usize("replicas")?.unwrap_or(100);
            let mut rows = Vec::new();
            for est in estimators(&ex)? {
                for (l, f) in truncation_sweep(&model, &ells, n, k, replicas, seed, est)? {
                    rows.push(format!("{},{l},{},{},{}", est.name(), f.value, f.ci, f.replicas));
                }
            }
            Ok(vec![Output::new("truncation.csv", csv("estimator,ell,value,ci,replicas", rows))])
        }
        Experiment::DeltaEff => {
            let kernel = KernelSpec::from_section(config.require_section("kernel")?, kernel_dim(config)?)?;
            let mus = ex.get_f64_list("mu")?.unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3]);
            let grid = RGrid::new(
                ex.get_f64("r0")?.unwrap_or(100.0),
                ex.get_f64("ratio")?.unwrap_or(4.0),
                ex.get_usize("points")?.unwrap_or(6),
            )?;
            let estimates = mus.iter().map(|&mu| kernel.estimate_delta_eff(mu, &grid)).collect::<perclab::Result<Vec<_>>>()?;
            let rows = estimates.iter().map(|e| format!("{},{},{}", e.mu, e.slope, e.residual));
            Ok(vec![
                Output::new("delta_eff.csv", csv("mu,slope,residual", rows)),
                Output::new("delta_eff.jsonl", jsonl(&estimates)),
            ])
        }
        Experiment::RenormSurvey => renorm_survey(config, &ex, seed),
        Experiment::Transience => transience(config, &ex, seed),
        Experiment::LemmaCheck => lemma_check(config, seed),
        Experiment::Validate => {
            let report = validate(config);
            Ok(vec![Output::new("validation.json", serde_json::to_string_pretty(&report).expect("serialisable") + "\n")])
        }
    }
}

fn renorm_params(config: &Config, dim: usize) -> Result<RenormParams> {
    let empty = Section::new("renorm");
    Ok(RenormParams::from_section(config.section("renorm").unwrap_or(&empty), dim)?)
}

fn transience_params(config: &Config, params: &RenormParams, max_stage: usize) -> Result<TransienceParams> {
    let Some(t) = config.section("transience") else {
        return Ok(TransienceParams::from_renorm(params, 1, max_stage)?);
    };
    let n1 = t.get_usize("n1")?.unwrap_or(1);
    let lambda = t.get_f64("lambda")?.unwrap_or_else(|| perclab::renorm::transience_lambda(params.nu));
    let mu = t.get_f64("mu")?.unwrap_or(params.mu);
    Ok(match (t.get_u64_list("alpha")?, t.get_u64_list("sigma")?) {
        (Some(alpha), Some(sigma)) => TransienceParams::custom(params.dim, lambda, mu, n1, alpha, sigma)?,
        (None, None) => TransienceParams::new(params.dim, lambda, mu, n1, max_stage)?,
        _ => return invalid("transience: give both `alpha` and `sigma` or neither"),
    })
}

fn violations_message(v: &[Violation]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:?}: {}", x.constraint, x.message)).collect();
    format!("renorm parameters violate {} constraint(s): {}", v.len(), parts.join("; "))
}

fn renorm_survey(config: &Config, ex: &Section, seed: u64) -> Result<Vec<Output>> {
    let model = ModelConfig::from_config(config)?;
    let params = renorm_params(config, model.dim())?;
    let violations = params.validate();
    if !violations.is_empty() && !ex.get_bool("allow_violations")?.unwrap_or(false) {
        return invalid(violations_message(&violations));
    }
    let report = match ex.get_str("kind").unwrap_or("alive") {
        "alive" => {
            let max_stage = ex.get_usize("max_stage")?.unwrap_or(params.max_stage());
            if max_stage > params.max_stage() {
                return invalid(format!("max_stage {max_stage} exceeds the {} configured scales", params.max_stage()));
            }
            let n = ex.get_f64("n")?.unwrap_or(params.side(max_stage) + 2.0 * params.k);
            let g = model.sample_graph(n, seed, false)?;
            survey_alive(&g, &params, max_stage)?
        }
        "good" => {
            let max_stage = ex.get_usize("max_stage")?.unwrap_or(2);
            let tp = transience_params(config, &params, max_stage)?;
            let n = ex.get_f64("n")?.unwrap_or(tp.side(max_stage));
            let g = model.sample_graph(n, seed, false)?;
            survey_good(&g, &tp, max_stage)?
        }
        other => return invalid(format!("unknown survey kind `{other}`")),
    };
    Ok(vec![Output::new("renorm.jsonl", report.to_jsonl())])
}

/// Hop radii from a fixed ladder, kept while the ball around `v` holds at most
/// half of the vertices and the exterior is non-empty.
pub fn auto_radii(net: &Network, v: usize) -> perclab::Result<Vec<usize>> {
    let dist = net.distances(v)?;
    let total = dist.len();
    let ladder = (1..=8usize).chain((0..40).map(|i| (12.0 * 1.25f64.powi(i)).round() as usize));
    let mut radii: Vec<usize> = Vec::new();
    for r in ladder {
        let ball = dist.iter().filter(|&&d| d <= r).count();
        if 2 * ball > total || ball == total {
            break;
        }
        if radii.last() != Some(&r) {
            radii.push(r);
        }
    }
    Ok(radii)
}

/// Largest cluster of the graph as a network, with the member nearest the box centre as source.
pub fn cluster_network(graph: &perclab::GeoGraph, conductance: Conductance) -> perclab::Result<(Network, usize)> {
    let part = components(graph);
    let Some((label, _)) = part.largest() else {
        return Err(perclab::Error::Parameter("the graph has no vertices".into()));
    };
    let members = part.members(label);
    let centre = graph.domain().center();
    let d2 = |v: usize| graph.cloud().point(v).iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let source = (0..members.len()).min_by(|&a, &b| d2(members[a]).total_cmp(&d2(members[b])).then(a.cmp(&b))).unwrap();
    let net = Network::from_graph(graph, conductance)?.induced(&members)?;
    Ok((net, source))
}

/// Lattice control with about `vertices` sites, sourced at its centre.
pub fn lattice_control(vertices: usize, dim: usize) -> perclab::Result<(Network, usize)> {
    let side = ((vertices as f64).powf(1.0 / dim as f64).round() as usize).max(2);
    let net = Network::lattice(side, dim)?;
    let mut v = 0;
    for _ in 0..dim {
        v = v * side + side / 2;
    }
    Ok((net, v))
}

fn curve_json(curve: &ConductanceCurve, vertices: usize) -> serde_json::Value {
    json!({
        "vertices": vertices,
        "source": curve.source,
        "flag": curve.flag,
        "monotone": curve.monotone,
        "ns": curve.ns,
        "values": curve.values,
    })
}

fn transience(config: &Config, ex: &Section, seed: u64) -> Result<Vec<Output>> {
    let model = ModelConfig::from_config(config)?;
    let n = ex.get_f64("n")?.unwrap_or(64.0);
    let conductance = match ex.get_str("conductance").unwrap_or("unit") {
        "unit" => Conductance::Unit,
        "length_power" => Conductance::LengthPower { exponent: ex.require_f64("exponent")? },
        other => return invalid(format!("unknown conductance `{other}`")),
    };
    let g = model.sample_graph(n, seed, false)?;
    let (net, v) = cluster_network(&g, conductance)?;
    let radii = match ex.get_u64_list("radii")? {
        Some(r) => r.into_iter().map(|x| x as usize).collect(),
        None => auto_radii(&net, v)?,
    };
    let curve = net.transience_probe(v, &radii)?;
    let mut summary = json!({ "box_side": n, "graph_vertices": g.vertex_count(), "cluster": curve_json(&curve, net.vertex_count()) });
    let mut out = vec![Output::new("conductance.csv", curve.to_csv())];
    match ex.get_str("control").unwrap_or("none") {
        "none" => {}
        "lattice" => {
            let (lat, lv) = lattice_control(net.vertex_count(), model.dim())?;
            let lr = auto_radii(&lat, lv)?;
            let lc = lat.transience_probe(lv, &lr)?;
            summary["lattice"] = curve_json(&lc, lat.vertex_count());
            out.push(Output::new("lattice_conductance.csv", lc.to_csv()));
        }
        other => return invalid(format!("unknown control `{other}`")),
    }
    out.push(Output::new("transience.json", summary.to_string() + "\n"));
    Ok(out)
}

fn lemma_check(config: &Config, seed: u64) -> Result<Vec<Output>> {
    let mut reports = Vec::new();
    if let Some(s) = config.section("regularity") {
        let n = s.get_usize("n")?.unwrap_or(1_000_000);
        let mu = s.get_f64("mu")?.unwrap_or(0.4);
        let trials = s.get_usize("trials")?.unwrap_or(1000);
        reports.push(mc_check_regularity(n, mu, trials, seed)?);
    }
    if let Some(s) = config.section("connection") {
        let kernel = KernelSpec::from_section(config.require_section("kernel")?, kernel_dim(config)?)?;
        reports.push(mc_check_connection_with(
            &kernel,
            s.get_usize("v")?.unwrap_or(200),
            s.get_f64("mu")?.unwrap_or(0.3),
            s.require_f64("distance")?,
            s.get_usize("trials")?.unwrap_or(1000),
            seed,
            s.get_f64("c")?.unwrap_or(DEFAULT_C),
            s.get_usize("budget")?.unwrap_or(DEFAULT_RETRY_BUDGET),
        )?);
    }
    if reports.is_empty() {
        return invalid("lemma-check needs a `regularity` or `connection` section");
    }
    Ok(vec![Output::new("lemmas.jsonl", jsonl(&reports))])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    /// Violated renorm constraints.
    pub violations: Vec<Violation>,
    /// Sections that failed to parse or validate.
    pub errors: Vec<String>,
}

/// Dry run: parse every known section and check the renorm constraints
/// (defaults apply when the `renorm` section is absent).
pub fn validate(config: &Config) -> ValidationReport {
    let mut errors = Vec::new();
    let mut dim = 2;
    if config.section("model").is_some() {
        match ModelConfig::from_config(config) {
            Ok(m) => dim = m.dim(),
            Err(e) => errors.push(format!("model: {e}")),
        }
    } else if let Some(k) = config.section("kernel") {
        if let Err(e) = KernelSpec::from_section(k, dim) {
            errors.push(format!("kernel: {e}"));
        }
    }
    let violations = match renorm_params(config, dim) {
        Ok(p) => {
            if config.section("transience").is_some() {
                if let Err(e) = transience_params(config, &p, 2) {
                    errors.push(format!("transience: {e}"));
                }
            }
            p.validate()
        }
        Err(e) => {
            errors.push(format!("renorm: {e}"));
            Vec::new()
        }
    };
    ValidationReport { valid: violations.is_empty() && errors.is_empty(), violations, errors }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_manifest(out: &Path, m: &Manifest) -> Result<()> {
    write(&out.join(MANIFEST), &(serde_json::to_string_pretty(m).expect("serialisable") + "\n"))
}

/// Parse `config_text`, run the experiment and write outputs plus the manifest into `out`.
///
/// The manifest is written first with `partial = true` and rewritten once every
/// output is on disk, so an interrupted run leaves a manifest marked partial.
pub fn run(experiment: Experiment, config_text: &str, seed: Option<u64>, out: &Path) -> Result<Manifest> {
    let start = Instant::now();
    let config = Config::parse(config_text)?;
    let seed = match seed {
        Some(s) => s,
        None => config_seed(&config)?.unwrap_or(DEFAULT_SEED),
    };
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let mut manifest = Manifest {
        command: experiment,
        config: config_text.to_string(),
        seed,
        version: perclab::VERSION.to_string(),
        threads: rayon::current_num_threads(),
        wall_time_secs: 0.0,
        partial: true,
        outputs: Vec::new(),
        error: None,
    };
    write_manifest(out, &manifest)?;
    let result = execute(experiment, &config, seed);
    let outputs = match result {
        Ok(o) => o,
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.wall_time_secs = start.elapsed().as_secs_f64();
            write_manifest(out, &manifest)?;
            return Err(e);
        }
    };
    for o in &outputs {
        write(&out.join(&o.name), &o.contents)?;
        manifest.outputs.push(o.name.clone());
        write_manifest(out, &manifest)?;
    }
    manifest.partial = false;
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Re-run the experiment recorded in a manifest into `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<Manifest> {
    let m = read_manifest(manifest)?;
    run(m.command, &m.config, Some(m.seed), out)
}
