//! `conflation` command-line front end.
//!
//! Every flag can also come from a JSON config file (`--config`) whose keys
//! are the long flag names; flags given on the command line win. Results go
//! to `--out`, else `$CONFLATION_OUT_DIR`, else `./out`, together with a
//! `manifest.json` describing the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{self, CanonicalParams};
use crate::chain::average_reward;
use crate::conflation::{decompose, make_conflated};
use crate::error::{Error, Result};
use crate::learning::{self, PipelineMode};
use crate::mdp::{Mdp, MdpDocument, Policy, RewardFunction};
use crate::optimize::{optimize, GAIN_TIE_TOL};
use crate::polytope::{export_geometry, sweep_csv, GeometryExport};
use crate::preference::{sample_dataset, ComparisonDistribution, PreferenceDataset, SAMPLER_ID};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "CONFLATION_OUT_DIR";
pub const THEOREM2_TOL: f64 = 1e-6;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_BREACH: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "conflation", version, about = "Reward/value conflation experiments on small average-reward MDPs")]
pub struct Cli {
    /// JSON file with defaults for any flag (keys are the long flag names).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    CanonicalAnalyze,
    ConflationDecompose,
    Learn,
    Pipeline,
    Sweep,
    Geometry,
    TheoremCheck,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed forms, optimum and relative values of the three-state example.
    CanonicalAnalyze(Params),
    /// Fit (c, k, beta) for a proxy reward.
    ConflationDecompose(Params),
    /// Learn a reward from transition comparisons.
    Learn(Params),
    /// Learn, optimize the proxy, and score it under the true reward.
    Pipeline(Params),
    /// Proxy-optimal true gain over an (M, epsilon) grid.
    Sweep(Params),
    /// Planar polytope geometry.
    Geometry(Params),
    /// Numerical check of one of the misalignment theorems.
    TheoremCheck(Params),
}

impl Command {
    fn split(self) -> (CommandName, Params) {
        match self {
            Command::CanonicalAnalyze(p) => (CommandName::CanonicalAnalyze, p),
            Command::ConflationDecompose(p) => (CommandName::ConflationDecompose, p),
            Command::Learn(p) => (CommandName::Learn, p),
            Command::Pipeline(p) => (CommandName::Pipeline, p),
            Command::Sweep(p) => (CommandName::Sweep, p),
            Command::Geometry(p) => (CommandName::Geometry, p),
            Command::TheoremCheck(p) => (CommandName::TheoremCheck, p),
        }
    }
}

/// All experiment settings. Unused fields are ignored by a subcommand.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Params {
    /// Subcommand, only read from config files.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    /// Terminal reward of the canonical example.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Conflation degree of a constructed proxy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Explicit proxy reward, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<Vec<f64>>,
    /// MDP document (JSON) with a reward; replaces the canonical example.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mdp: Option<PathBuf>,
    /// Comparison distribution (JSON list of {pair: {h, hp}, probability}).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<PathBuf>,
    /// Preference dataset (JSON lines) to learn from.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Number of sampled comparisons; exact asymptotic loss when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauge_state: Option<usize>,
    /// Inclusive grid `start:stop:count`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_grid: Option<String>,
    /// Sweep the learned-reward pipeline instead of a constructed proxy.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learned: Option<bool>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem: Option<u8>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<f64>,
    /// Random (beta, c, k) gauges per theorem-1 check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauges: Option<usize>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),*) => {
        Params { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Params {
    /// Flags override the file.
    pub fn overlay(self, file: Params) -> Params {
        overlay!(
            self, file, command, m, epsilon, beta, c, k, r_hat, mdp, comparisons, dataset, n, seed, l2, tol,
            gauge_state, m_grid, epsilon_grid, learned, theorem, beta_star, gauges
        )
    }

    fn canonical(&self) -> Result<CanonicalParams> {
        let m = self.m.ok_or_else(|| usage("--m is required"))?;
        let eps = self.epsilon.ok_or_else(|| usage("--epsilon is required"))?;
        CanonicalParams::new(m, eps)
    }

    fn tol(&self) -> Result<f64> {
        let tol = self.tol.unwrap_or(learning::DEFAULT_TOL);
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidInput(format!("tol = {tol} must be positive")));
        }
        Ok(tol)
    }
}

fn usage(msg: &str) -> Error {
    Error::InvalidInput(format!("usage: {msg}"))
}

/// `start:stop:count`, inclusive of both ends.
pub fn parse_grid(spec: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid `{spec}` is not start:stop:count"));
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| format!("bad grid start in `{spec}`"))?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| format!("bad grid stop in `{spec}`"))?;
    let count: usize = parts[2].trim().parse().map_err(|_| format!("bad grid count in `{spec}`"))?;
    if !start.is_finite() || !stop.is_finite() || count == 0 {
        return Err(format!("grid `{spec}` needs finite ends and a positive count"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (stop - start) / (count - 1) as f64;
    Ok((0..count).map(|i| if i + 1 == count { stop } else { start + step * i as f64 }).collect())
}

struct Outcome {
    files: Vec<(String, String)>,
    summary: Value,
    status: i32,
}

impl Outcome {
    fn new(summary: Value) -> Self {
        Self { files: Vec::new(), summary, status: EXIT_OK }
    }

    fn json(mut self, name: &str, value: &impl Serialize) -> Result<Self> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.files.push((name.to_string(), text));
        Ok(self)
    }

    fn text(mut self, name: &str, text: String) -> Self {
        self.files.push((name.to_string(), text));
        self
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(msg) if msg.starts_with("usage: ") => EXIT_USAGE,
        Error::Singular(_) => EXIT_BREACH,
        _ => EXIT_INPUT,
    }
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn load_config(path: &Path) -> Result<Params> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| usage(&format!("config {}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => Params::default(),
    };
    let (name, params) = match cli.command {
        Some(cmd) => {
            let (name, flags) = cmd.split();
            (name, flags.overlay(file))
        }
        None => {
            let name = file.command.ok_or_else(|| usage("no subcommand given"))?;
            (name, file)
        }
    };
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let outcome = dispatch(name, &params)?;
    fs::create_dir_all(&out_dir)?;
    for (file_name, text) in &outcome.files {
        fs::write(out_dir.join(file_name), text)?;
    }
    let manifest = manifest(name, &params, &outcome);
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("{}", serde_json::to_string(&outcome.summary)?);
    Ok(outcome.status)
}

fn manifest(name: CommandName, params: &Params, outcome: &Outcome) -> Value {
    let mut config = params.clone();
    config.command = Some(name);
    json!({
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "config": config,
        "seeds": { "seed": params.seed, "sampler": SAMPLER_ID },
        "tolerances": {
            "stochastic": crate::mdp::STOCHASTIC_TOL,
            "invariance": crate::chain::INVARIANCE_TOL,
            "occupancy_sum": crate::chain::OCCUPANCY_SUM_TOL,
            "gain_tie": GAIN_TIE_TOL,
            "equivalence": crate::conflation::EQUIVALENCE_TOL,
            "conflation_fit": crate::conflation::FIT_TOL,
            "learning": params.tol.unwrap_or(learning::DEFAULT_TOL),
            "theorem2_deviation": THEOREM2_TOL,
        },
        "outputs": outcome.files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "status": outcome.status,
    })
}

fn dispatch(name: CommandName, p: &Params) -> Result<Outcome> {
    match name {
        CommandName::CanonicalAnalyze => canonical_analyze(p),
        CommandName::ConflationDecompose => conflation_decompose(p),
        CommandName::Learn => learn(p),
        CommandName::Pipeline => pipeline(p),
        CommandName::Sweep => sweep(p),
        CommandName::Geometry => geometry(p),
        CommandName::TheoremCheck => theorem_check(p),
    }
}

/// MDP, true reward and optimal relative value from `--mdp` or the canonical flags.
fn problem(p: &Params) -> Result<(Mdp, RewardFunction, Vec<f64>)> {
    match &p.mdp {
        Some(path) => {
            let (mdp, reward) = MdpDocument::load(path)?.into_parts()?;
            let r = reward.ok_or_else(|| Error::InvalidInput("MDP document has no reward".into()))?;
            let opt = optimize(&mdp, &r)?;
            if !opt.is_unique {
                return Err(Error::IllPosed("optimal policy is not unique; V* is undefined".into()));
            }
            let v = opt
                .optimal_value
                .ok_or_else(|| Error::UnsupportedStructure("optimal chain is multichain".into()))?;
            Ok((mdp, r, v))
        }
        None => {
            let (mdp, r, _, v) = canonical::optimal_value(p.canonical()?)?;
            Ok((mdp, r, v))
        }
    }
}

fn proxy(p: &Params, r: &RewardFunction, v: &[f64]) -> Result<Option<RewardFunction>> {
    if let Some(values) = &p.r_hat {
        let r_hat = RewardFunction::new(values.clone())?;
        r_hat.check_len(r.len())?;
        return Ok(Some(r_hat));
    }
    match p.beta {
        Some(beta) => Ok(Some(make_conflated(r.values(), v, beta, p.c.unwrap_or(1.0), p.k.unwrap_or(0.0))?)),
        None => Ok(None),
    }
}

fn true_gain_of(mdp: &Mdp, r: &RewardFunction, actions: &[usize]) -> Result<f64> {
    average_reward(mdp, r, &Policy::deterministic(actions, mdp.n_actions())?)
}

fn canonical_analyze(p: &Params) -> Result<Outcome> {
    let params = p.canonical()?;
    let analysis = canonical::analyze(params)?;
    let (mdp, r) = canonical::build(params)?;
    let summary = json!({
        "optimal_gain": analysis.optimization.optimal_gain,
        "closed_form_gain": analysis.closed_form_gain,
        "optimal_policy": analysis.optimization.optimal_actions,
        "value_gaps": analysis.value_gaps_solved,
    });
    Outcome::new(summary).json("canonical.json", &analysis)?.json("mdp.json", &MdpDocument::new(&mdp, Some(&r)))
}

fn conflation_decompose(p: &Params) -> Result<Outcome> {
    let (mdp, r, v) = problem(p)?;
    let r_hat = proxy(p, &r, &v)?.ok_or_else(|| usage("give --r-hat or --beta"))?;
    let report = decompose(r_hat.values(), r.values(), &v)?;
    let proxy_opt = optimize(&mdp, &r_hat)?;
    let proxy_true_gain = true_gain_of(&mdp, &r, &proxy_opt.optimal_actions)?;
    let doc = json!({
        "reward": r.values(),
        "optimal_value": v,
        "r_hat": r_hat.values(),
        "report": report,
        "proxy_policy": proxy_opt.optimal_actions,
        "proxy_true_gain": proxy_true_gain,
    });
    let summary = json!({ "is_conflation": report.is_conflation, "beta": report.beta, "c": report.c, "k": report.k });
    Outcome::new(summary).json("decomposition.json", &doc)
}

fn comparisons(p: &Params) -> Result<ComparisonDistribution> {
    match &p.comparisons {
        Some(path) => ComparisonDistribution::load(path),
        None if p.mdp.is_none() => Ok(canonical::default_comparisons()),
        None => Err(usage("--comparisons is required with --mdp")),
    }
}

fn learn(p: &Params) -> Result<Outcome> {
    let (mdp, r, v) = problem(p)?;
    let tol = p.tol()?;
    let gauge = p.gauge_state.unwrap_or(0);
    let mut dataset: Option<PreferenceDataset> = None;
    let learned = if let Some(path) = &p.dataset {
        let data = PreferenceDataset::load(path)?;
        learning::minimize_empirical(&data, mdp.n_states(), gauge, tol, p.l2.unwrap_or(learning::DEFAULT_L2))?
    } else if let Some(n) = p.n {
        let d = comparisons(p)?;
        let data = sample_dataset(&d, &r, &v, n, p.seed.unwrap_or(0))?;
        let learned =
            learning::minimize_empirical(&data, mdp.n_states(), gauge, tol, p.l2.unwrap_or(learning::DEFAULT_L2))?;
        dataset = Some(data);
        learned
    } else {
        learning::minimize_asymptotic(&comparisons(p)?, r.values(), &v, gauge, tol)?
    };
    let summary = json!({
        "r_hat": learned.r_hat.values(),
        "converged": learned.converged,
        "final_loss": learned.final_loss,
    });
    let mut outcome = Outcome::new(summary).json("learned.json", &learned)?;
    if let Some(data) = dataset {
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf)?;
        outcome = outcome.text("dataset.jsonl", String::from_utf8(buf).expect("utf-8 json"));
    }
    if !learned.converged {
        outcome.status = EXIT_NOT_CONVERGED;
    }
    Ok(outcome)
}

fn pipeline_mode(p: &Params) -> PipelineMode {
    match p.n {
        Some(n) => PipelineMode::Sampled { n, seed: p.seed.unwrap_or(0), l2: p.l2.unwrap_or(learning::DEFAULT_L2) },
        None => PipelineMode::Exact,
    }
}

fn pipeline(p: &Params) -> Result<Outcome> {
    let params = p.canonical()?;
    let report = learning::misalignment_pipeline(params, &comparisons(p)?, pipeline_mode(p))?;
    let summary = json!({
        "threshold": report.threshold,
        "above_threshold": report.above_threshold,
        "proxy_policy": report.proxy_policy,
        "true_gain": report.true_gain,
        "misaligned": report.misaligned,
    });
    let mut outcome = Outcome::new(summary).json("pipeline.json", &report)?;
    if !report.learned.converged {
        outcome.status = EXIT_NOT_CONVERGED;
    }
    Ok(outcome)
}

fn grids(p: &Params) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = p.m_grid.as_deref().ok_or_else(|| usage("--m-grid is required"))?;
    let e = p.epsilon_grid.as_deref().ok_or_else(|| usage("--epsilon-grid is required"))?;
    let ms = parse_grid(m).map_err(|e| usage(&e))?;
    let es = parse_grid(e).map_err(|e| usage(&e))?;
    Ok((ms, es))
}

fn policy_label(actions: &[usize]) -> String {
    actions.iter().map(|&a| if a == canonical::MOVE { "move" } else { "stay" }).collect::<Vec<_>>().join("-")
}

fn sweep(p: &Params) -> Result<Outcome> {
    let (ms, es) = grids(p)?;
    let learned = p.learned.unwrap_or(false);
    let beta = p.beta.unwrap_or(1.0);
    let mut csv = String::from("m,epsilon,threshold,proxy_policy,true_gain,aligned_gain,misaligned\n");
    let (mut points, mut misaligned_points, mut not_converged) = (0usize, 0usize, 0usize);
    for &m in &ms {
        for &eps in &es {
            let params = CanonicalParams::new(m, eps)?;
            let (policy, true_gain) = if learned {
                let report = learning::misalignment_pipeline(params, &canonical::default_comparisons(), PipelineMode::Exact)?;
                if !report.learned.converged {
                    not_converged += 1;
                }
                (report.proxy_policy, report.true_gain)
            } else {
                let (mdp, r, _, v) = canonical::optimal_value(params)?;
                let r_hat = make_conflated(r.values(), &v, beta, p.c.unwrap_or(1.0), p.k.unwrap_or(0.0))?;
                let opt = optimize(&mdp, &r_hat)?;
                let gain = true_gain_of(&mdp, &r, &opt.optimal_actions)?;
                (opt.optimal_actions, gain)
            };
            let misaligned = (true_gain - canonical::WORST_GAIN).abs() <= GAIN_TIE_TOL;
            points += 1;
            misaligned_points += usize::from(misaligned);
            let _ = writeln!(
                csv,
                "{m},{eps},{},{},{true_gain},{},{misaligned}",
                canonical::learning_threshold(eps),
                policy_label(&policy),
                canonical::closed_form_gain(params),
            );
        }
    }
    let summary = json!({ "points": points, "misaligned": misaligned_points, "learned": learned });
    let mut outcome = Outcome::new(summary).text("sweep.csv", csv);
    if not_converged > 0 {
        outcome.status = EXIT_NOT_CONVERGED;
    }
    Ok(outcome)
}

fn geometry_summary(geo: &GeometryExport) -> Value {
    json!({
        "aligned_vertex": geo.phi_vertex_labels[geo.aligned_vertex],
        "proxy_vertex": geo.proxy_cone_vertex.map(|i| geo.phi_vertex_labels[i].clone()),
        "proxy_past_normal": geo.proxy_past_normal,
        "feasible_area": geo.feasible_area,
    })
}

fn geometry(p: &Params) -> Result<Outcome> {
    if p.m_grid.is_some() || p.epsilon_grid.is_some() {
        let (ms, es) = grids(p)?;
        let mut rows = Vec::new();
        for &m in &ms {
            for &eps in &es {
                let (mdp, r, _, v) = canonical::optimal_value(CanonicalParams::new(m, eps)?)?;
                let r_hat = proxy(p, &r, &v)?;
                let geo = export_geometry(&mdp, r.values(), &v, r_hat.as_ref().map(RewardFunction::values))?;
                rows.push((m, eps, geo));
            }
        }
        let summary = json!({ "points": rows.len() });
        let docs: Vec<Value> =
            rows.iter().map(|(m, eps, geo)| json!({ "m": m, "epsilon": eps, "geometry": geo })).collect();
        return Ok(Outcome::new(summary).text("geometry_sweep.csv", sweep_csv(&rows)).json("geometry_sweep.json", &docs)?);
    }
    let (mdp, r, v) = problem(p)?;
    let r_hat = proxy(p, &r, &v)?;
    let geo = export_geometry(&mdp, r.values(), &v, r_hat.as_ref().map(RewardFunction::values))?;
    Outcome::new(geometry_summary(&geo)).json("geometry.json", &geo)
}

fn theorem_check(p: &Params) -> Result<Outcome> {
    match p.theorem.ok_or_else(|| usage("--theorem is required"))? {
        1 => theorem1(p),
        2 => theorem2(p),
        _ => theorem3(p),
    }
}

fn theorem1(p: &Params) -> Result<Outcome> {
    let beta_star = p.beta_star.unwrap_or(0.05);
    let (eps_bound, m_bound) = canonical::theorem1_regime(beta_star)?;
    let params = CanonicalParams::new(p.m.unwrap_or(2.0 * m_bound), p.epsilon.unwrap_or(eps_bound / 2.0))?;
    let in_regime = params.epsilon < eps_bound && params.m > m_bound;
    let (mdp, r, _, v) = canonical::optimal_value(params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed.unwrap_or(0));
    let mut trials = Vec::new();
    for _ in 0..p.gauges.unwrap_or(50) {
        let beta = rng.random_range(beta_star..=1.0);
        let c = 10.0 * (1.0 - rng.random::<f64>());
        let k = rng.random_range(-10.0..=10.0);
        let r_hat = make_conflated(r.values(), &v, beta, c, k)?;
        let opt = optimize(&mdp, &r_hat)?;
        let gains = opt
            .all_optimal_policies
            .iter()
            .map(|a| true_gain_of(&mdp, &r, a))
            .collect::<Result<Vec<f64>>>()?;
        let severe = gains.iter().all(|g| (g - canonical::WORST_GAIN).abs() <= GAIN_TIE_TOL);
        trials.push(json!({ "beta": beta, "c": c, "k": k, "proxy_policies": opt.all_optimal_policies, "true_gains": gains, "severe": severe }));
    }
    let all_severe = trials.iter().all(|t| t["severe"] == json!(true));
    let holds = !in_regime || all_severe;
    let doc = json!({
        "theorem": 1,
        "params": params,
        "beta_star": beta_star,
        "epsilon_bound": eps_bound,
        "m_bound": m_bound,
        "in_regime": in_regime,
        "all_severe": all_severe,
        "holds": holds,
        "trials": trials,
    });
    let summary = json!({ "theorem": 1, "in_regime": in_regime, "all_severe": all_severe, "holds": holds });
    let mut outcome = Outcome::new(summary).json("theorem1.json", &doc)?;
    if !holds {
        outcome.status = EXIT_BREACH;
    }
    Ok(outcome)
}

fn theorem2(p: &Params) -> Result<Outcome> {
    let (mdp, r, v) = problem(p)?;
    let d = comparisons(p)?;
    let connected = crate::preference::comparison_graph(&d, mdp.n_states())?.connects_all();
    let learned = learning::minimize_asymptotic(&d, r.values(), &v, p.gauge_state.unwrap_or(0), p.tol()?)?;
    let diff: Vec<f64> = learned.r_hat.values().iter().zip(&v).map(|(a, b)| a - b).collect();
    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
    let deviation = diff.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    let holds = !connected || deviation <= THEOREM2_TOL;
    let doc = json!({
        "theorem": 2,
        "connected": connected,
        "optimal_value": v,
        "learned": learned,
        "deviation": deviation,
        "tolerance": THEOREM2_TOL,
        "holds": holds,
    });
    let summary = json!({ "theorem": 2, "deviation": deviation, "connected": connected, "holds": holds });
    let mut outcome = Outcome::new(summary).json("theorem2.json", &doc)?;
    if !learned.converged {
        outcome.status = EXIT_NOT_CONVERGED;
    } else if !holds {
        outcome.status = EXIT_BREACH;
    }
    Ok(outcome)
}

fn theorem3(p: &Params) -> Result<Outcome> {
    let params = p.canonical()?;
    let report = learning::misalignment_pipeline(params, &comparisons(p)?, pipeline_mode(p))?;
    let expected = if report.above_threshold { canonical::WORST_GAIN } else { report.aligned_gain };
    let holds = (report.true_gain - expected).abs() <= GAIN_TIE_TOL;
    let summary = json!({
        "theorem": 3,
        "threshold": report.threshold,
        "above_threshold": report.above_threshold,
        "misaligned": report.misaligned,
        "true_gain": report.true_gain,
        "holds": holds,
    });
    let doc = json!({ "theorem": 3, "holds": holds, "report": report });
    let mut outcome = Outcome::new(summary).json("theorem3.json", &doc)?;
    if !holds {
        outcome.status = EXIT_BREACH;
    } else if !report.learned.converged {
        outcome.status = EXIT_NOT_CONVERGED;
    }
    Ok(outcome)
}
