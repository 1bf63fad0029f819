use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use decumulate::data::{load_series, stationary_block_bootstrap, BootstrapConfig};
use decumulate::hjb::{rollout_stored_controls, HjbSolver, StoredControls};
use decumulate::market::simulate_paths;
use decumulate::objective::{frontier_point, heatmap_report, percentile_report, rollout, rollout_with_traces, FrontierPoint, Policy, RolloutResult};
use decumulate::paths::SourceTag;
use decumulate::policy::{load_checkpoint, reference_stats, save_checkpoint, PolicyPair};
use decumulate::report::{write_frontier_csv, write_heatmap_csv, write_percentile_csv, write_train_log_csv};
use decumulate::scenario::parse_kappa_list;
use decumulate::trainer::{frontier_sweep, init_wstar_at_var, train as run_training, TrainConfig};
use decumulate::{Kappa, MarketParams, PathSet, ScenarioConfig};
use log::info;
use serde_json::json;

use crate::config::{load_market, RunConfig};
use crate::manifest::{read_paths_info, PathsInfo, Recorder};
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(decumulate::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("file not found: {}", path.display()),
        ))
        .into());
    }
    Ok(())
}

fn load_paths(path: &Path) -> Result<(PathSet, Option<PathsInfo>)> {
    require_file(path)?;
    let info = read_paths_info(path)?;
    let tag = info.map(|i| i.source_tag).unwrap_or(SourceTag::Synthetic);
    let p = PathSet::load(path, tag).with_context(|| format!("loading paths {}", path.display()))?;
    if let Some(i) = info {
        if i.n_paths != p.n_paths() || i.n_periods != p.n_periods() {
            return Err(decumulate::Error::Corrupt(format!("{} disagrees with its manifest", path.display())).into());
        }
    }
    Ok((p, info))
}

fn mismatch(what: &str, fields: &[&str]) -> anyhow::Error {
    decumulate::Error::Data(format!("scenario mismatch between {what}: fields {} differ", fields.join(", "))).into()
}

/// Fields of `sc` that disagree with the shape of a path file.
fn check_paths(sc: &ScenarioConfig, paths: &PathSet, info: Option<&PathsInfo>, what: &str) -> Result<()> {
    let mut bad = Vec::new();
    if paths.n_periods() != sc.n_rebalances {
        bad.push("n_rebalances");
    }
    if let Some(i) = info {
        let horizon = i.dt * i.n_periods as f64;
        if (horizon - sc.horizon_years).abs() > 1e-9 * sc.horizon_years.max(1.0) {
            bad.push("horizon_years");
        }
    }
    if bad.is_empty() { Ok(()) } else { Err(mismatch(what, &bad)) }
}

fn check_scenarios(a: &ScenarioConfig, b: &ScenarioConfig, what: &str) -> Result<()> {
    let bad = a.mismatched_fields(b);
    if bad.is_empty() { Ok(()) } else { Err(mismatch(what, &bad)) }
}

fn print_point(p: &FrontierPoint) -> Result<()> {
    let mut out = Vec::new();
    write_frontier_csv(std::slice::from_ref(p), &mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Market parameter JSON; defaults to the calibrated parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    paths: usize,
    /// Periods per path; defaults to the scenario's rebalance count.
    #[arg(long)]
    periods: Option<usize>,
    /// Years per period; defaults to the scenario's spacing.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also export the paths as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let rec = Recorder::start("simulate");
    let cfg = RunConfig::load(a.config.as_deref())?;
    let market = match &a.params {
        Some(p) => load_market(p)?,
        None => cfg.market,
    };
    if a.paths == 0 {
        return Err(usage("--paths must be positive"));
    }
    let periods = a.periods.unwrap_or(cfg.scenario.n_rebalances);
    let dt = a.dt.unwrap_or(cfg.scenario.dt());
    if periods == 0 || !(dt > 0.0 && dt.is_finite()) {
        return Err(usage("--periods and --dt must be positive"));
    }
    let p = simulate_paths(&market, a.paths, periods, dt, a.seed)?;
    p.save(&a.out)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(c) = &a.csv {
        p.write_csv(create(c)?)?;
        outputs.push(c);
    }
    let info = PathsInfo { n_paths: a.paths, n_periods: periods, dt, source_tag: SourceTag::Synthetic };
    let inputs: Vec<&Path> = a.params.iter().chain(&a.config).map(PathBuf::as_path).collect();
    let config = json!({ "market": market, "n_paths": a.paths, "n_periods": periods, "dt": dt });
    rec.finish(&a.out, config, json!({ "simulate": a.seed }), &inputs, &outputs, Some(info))?;
    println!("wrote {} paths x {} periods to {}", a.paths, periods, a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    /// Monthly CSV with columns date, stock and bond returns.
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expected block length in months.
    #[arg(long, default_value_t = 3.0)]
    block: f64,
    #[arg(long)]
    paths: usize,
    /// Rebalance periods per path; defaults to the scenario's.
    #[arg(long)]
    periods: Option<usize>,
    /// Months compounded into one period; defaults to 12 times the scenario spacing.
    #[arg(long)]
    months_per_period: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn bootstrap(a: BootstrapArgs) -> Result<()> {
    let rec = Recorder::start("bootstrap");
    let cfg = RunConfig::load(a.config.as_deref())?;
    if a.paths == 0 {
        return Err(usage("--paths must be positive"));
    }
    if !(a.block >= 1.0 && a.block.is_finite()) {
        return Err(usage("--block must be at least one month"));
    }
    let months = a.months_per_period.unwrap_or((cfg.scenario.dt() * 12.0).round() as usize);
    let periods = a.periods.unwrap_or(cfg.scenario.n_rebalances);
    if months == 0 || periods == 0 {
        return Err(usage("--periods and --months-per-period must be positive"));
    }
    require_file(&a.series)?;
    let s = load_series(&a.series)?;
    let c = BootstrapConfig {
        expected_block_months: a.block,
        n_paths: a.paths,
        periods_per_rebalance: months,
        n_rebalances: periods,
        seed: a.seed,
    };
    let p = stationary_block_bootstrap(&s, &c)?;
    p.save(&a.out)?;
    let info = PathsInfo { n_paths: a.paths, n_periods: periods, dt: months as f64 / 12.0, source_tag: SourceTag::Bootstrap };
    let inputs: Vec<&Path> = std::iter::once(a.series.as_path()).chain(a.config.as_deref()).collect();
    rec.finish(&a.out, serde_json::to_value(c)?, json!({ "bootstrap": a.seed }), &inputs, &[&a.out], Some(info))?;
    println!("wrote {} bootstrap paths x {} periods to {}", a.paths, periods, a.out.display());
    Ok(())
}

/// Training flags shared by `train` and `frontier`.
#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_wstar: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Borrowing spread over the bond return while wealth is negative.
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        let t: &mut TrainConfig = &mut c.train;
        if let Some(v) = self.iterations {
            t.n_iterations = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.lr_params = v;
        }
        if let Some(v) = self.lr_wstar {
            t.lr_wstar = v;
        }
        if let Some(v) = self.eval_every {
            t.eval_every = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.spread {
            c.market.borrow_spread = v;
        }
        if let Some(v) = self.epsilon {
            c.scenario.epsilon = v;
        }
        t.validate().map_err(|e| usage(e.to_string()))?;
        c.market.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    paths: PathBuf,
    /// Weight on expected shortfall; `inf` for the pure-ES objective.
    #[arg(long)]
    kappa: Option<Kappa>,
    /// Warm-start from this checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let rec = Recorder::start("train");
    let mut cfg = a.flags.resolve()?;
    if let Some(k) = a.kappa {
        cfg.scenario.kappa = k;
    }
    cfg.scenario.validate().map_err(|e| usage(e.to_string()))?;
    let (paths, info) = load_paths(&a.paths)?;
    check_paths(&cfg.scenario, &paths, info.as_ref(), "configuration and paths")?;
    let pair = match &a.init {
        Some(ck) => {
            require_file(ck)?;
            let (mut p, _) = load_checkpoint(ck)?;
            check_scenarios(&p.scenario.with_kappa(cfg.scenario.kappa), &cfg.scenario, "checkpoint and configuration")?;
            p.scenario = cfg.scenario;
            p
        }
        None => {
            let stats = reference_stats(&paths, &cfg.scenario)?;
            let mut p = PolicyPair::cold(cfg.scenario, stats, cfg.nets.withdrawal, cfg.nets.allocation, cfg.train.seed)?;
            init_wstar_at_var(&mut p, &paths, &cfg.market)?;
            p
        }
    };
    let outcome = run_training(pair, &paths, &cfg.market, &cfg.train)?;
    save_checkpoint(&outcome.best, cfg.train.seed, &a.out)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(l) = &a.log {
        write_train_log_csv(&outcome.log, create(l)?)?;
        outputs.push(l);
    }
    let r = rollout(&outcome.best, &paths, &outcome.best.scenario, &cfg.market)?;
    let point = frontier_point(&r, &outcome.best.scenario, outcome.best.w_star)?;
    let mut inputs = vec![a.paths.as_path()];
    inputs.extend(a.init.as_deref());
    inputs.extend(a.flags.config.as_deref());
    rec.finish(&a.out, serde_json::to_value(&cfg)?, json!({ "train": cfg.train.seed }), &inputs, &outputs, None)?;
    info!("best objective {:.6} at iteration {}", outcome.best_objective, outcome.best_iteration);
    print_point(&point)
}

#[derive(Args, Debug)]
pub struct FrontierArgs {
    #[arg(long)]
    paths: PathBuf,
    /// Comma-separated ascending kappa values, e.g. `0.05,0.2,1,inf`.
    #[arg(long)]
    kappas: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

fn kappa_tag(k: Kappa) -> String {
    k.to_string().replace('.', "p")
}

pub fn frontier(a: FrontierArgs) -> Result<()> {
    let rec = Recorder::start("frontier");
    let cfg = a.flags.resolve()?;
    let kappas = parse_kappa_list(&a.kappas).map_err(|e| usage(e.to_string()))?;
    if kappas.windows(2).any(|w| w[0].as_f64() >= w[1].as_f64()) {
        return Err(usage("--kappas must be strictly ascending"));
    }
    let (paths, info) = load_paths(&a.paths)?;
    check_paths(&cfg.scenario, &paths, info.as_ref(), "configuration and paths")?;
    fs::create_dir_all(&a.out_dir)?;
    let stats = reference_stats(&paths, &cfg.scenario)?;
    let sweep = frontier_sweep(
        &kappas,
        &paths,
        &cfg.scenario,
        &cfg.market,
        &cfg.train,
        &stats,
        (cfg.nets.withdrawal, cfg.nets.allocation),
    )?;
    let mut outputs = Vec::new();
    for sp in &sweep.points {
        let tag = kappa_tag(sp.kappa);
        let ck = a.out_dir.join(format!("kappa_{tag}.ckpt"));
        save_checkpoint(&sp.outcome.best, cfg.train.seed, &ck)?;
        let log = a.out_dir.join(format!("train_log_{tag}.csv"));
        write_train_log_csv(&sp.outcome.log, create(&log)?)?;
        outputs.push(ck);
        outputs.push(log);
    }
    let points: Vec<FrontierPoint> = sweep.points.iter().map(|p| p.point).collect();
    let csv = a.out_dir.join("frontier.csv");
    write_frontier_csv(&points, create(&csv)?)?;
    outputs.push(csv.clone());
    let mut inputs = vec![a.paths.as_path()];
    inputs.extend(a.flags.config.as_deref());
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let failures: Vec<String> = sweep.failures.iter().map(|(k, e)| format!("kappa {k}: {e}")).collect();
    let config = json!({ "run": cfg, "kappas": a.kappas, "failures": failures });
    rec.finish(&a.out_dir, config, json!({ "train": cfg.train.seed }), &inputs, &outs, None)?;
    print!("{}", fs::read_to_string(&csv)?);
    if !failures.is_empty() {
        return Err(decumulate::Error::Numerical(format!("training failed for {}", failures.join("; "))).into());
    }
    Ok(())
}

/// A checkpoint or a stored control table given on the command line.
enum Loaded {
    Net(PolicyPair),
    Table(StoredControls),
}

impl Loaded {
    fn open(model: Option<&Path>, controls: Option<&Path>) -> Result<Self> {
        match (model, controls) {
            (Some(m), None) => {
                require_file(m)?;
                Ok(Loaded::Net(load_checkpoint(m)?.0))
            }
            (None, Some(c)) => {
                require_file(c)?;
                Ok(Loaded::Table(StoredControls::load(c)?))
            }
            _ => Err(usage("give exactly one of --model and --controls")),
        }
    }

    fn scenario(&self) -> ScenarioConfig {
        match self {
            Loaded::Net(p) => p.scenario,
            Loaded::Table(c) => c.scenario,
        }
    }

    fn w_star(&self) -> f64 {
        match self {
            Loaded::Net(p) => p.w_star,
            Loaded::Table(c) => c.w_star,
        }
    }

    fn policy(&self) -> &dyn Policy {
        match self {
            Loaded::Net(p) => p,
            Loaded::Table(c) => c,
        }
    }

    fn rollout(&self, paths: &PathSet, m: &MarketParams, traces: bool) -> Result<RolloutResult> {
        Ok(match self {
            Loaded::Net(p) if traces => rollout_with_traces(p, paths, &p.scenario, m)?,
            Loaded::Net(p) => rollout(p, paths, &p.scenario, m)?,
            Loaded::Table(c) => rollout_stored_controls(c, paths, m, traces)?,
        })
    }
}

#[derive(Args, Debug)]
pub struct PolicySource {
    /// Network checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Stored HJB control table.
    #[arg(long)]
    controls: Option<PathBuf>,
    #[arg(long)]
    paths: PathBuf,
    /// Configuration whose scenario must match the policy's.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    spread: Option<f64>,
}

impl PolicySource {
    fn load(&self) -> Result<(Loaded, PathSet, MarketParams)> {
        let pol = Loaded::open(self.model.as_deref(), self.controls.as_deref())?;
        let sc = pol.scenario();
        let mut market = MarketParams::crsp_calibrated();
        if let Some(c) = &self.config {
            let cfg = RunConfig::load(Some(c))?;
            check_scenarios(&sc, &cfg.scenario, "policy and configuration")?;
            market = cfg.market;
        }
        if let Some(s) = self.spread {
            market.borrow_spread = s;
        }
        market.validate().map_err(|e| usage(e.to_string()))?;
        let (paths, info) = load_paths(&self.paths)?;
        check_paths(&sc, &paths, info.as_ref(), "policy and paths")?;
        Ok((pol, paths, market))
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![self.paths.as_path()];
        v.extend(self.model.as_deref());
        v.extend(self.controls.as_deref());
        v.extend(self.config.as_deref());
        v
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    src: PolicySource,
    /// Frontier-format CSV with the evaluated point.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let rec = Recorder::start("eval");
    let (pol, paths, market) = a.src.load()?;
    let r = pol.rollout(&paths, &market, false)?;
    let point = frontier_point(&r, &pol.scenario(), pol.w_star())?;
    if let Some(o) = &a.out {
        write_frontier_csv(&[point], create(o)?)?;
        let config = json!({ "scenario": pol.scenario(), "market": market });
        rec.finish(o, config, json!({}), &a.src.inputs(), &[o], None)?;
    }
    print_point(&point)
}

#[derive(Args, Debug)]
pub struct HjbArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<Kappa>,
    /// Nodes per asset axis (power of two).
    #[arg(long)]
    grid: Option<usize>,
    /// Solve at this threshold instead of optimising it.
    #[arg(long)]
    w_star: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Stored control table; a JSON manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

pub fn hjb(a: HjbArgs) -> Result<()> {
    let rec = Recorder::start("hjb");
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(k) = a.kappa {
        cfg.scenario.kappa = k;
    }
    if let Some(e) = a.epsilon {
        cfg.scenario.epsilon = e;
    }
    if let Some(s) = a.spread {
        cfg.market.borrow_spread = s;
    }
    if let Some(n) = a.grid {
        cfg.grid = None;
        cfg.grid_nodes = n;
    }
    let spec = cfg.grid_spec();
    spec.validate().map_err(|e| usage(e.to_string()))?;
    cfg.scenario.validate().map_err(|e| usage(e.to_string()))?;
    let solver = HjbSolver::new(&cfg.market, &cfg.scenario, &spec)?;
    let (value, w_star, controls, profile) = match a.w_star {
        Some(ws) => {
            let s = solver.solve_fixed_wstar(ws)?;
            (s.value, ws, s.grid.controls, Vec::new())
        }
        None => {
            let s = solver.optimize_wstar(&cfg.wstar_search)?;
            (s.value, s.w_star, s.grid.controls, s.coarse_profile)
        }
    };
    controls.save(&a.out)?;
    let mut side = a.out.as_os_str().to_owned();
    side.push(".json");
    let side = PathBuf::from(side);
    let config = json!({
        "run": cfg,
        "value_t0": value,
        "w_star": w_star,
        "boundary_mass": solver.boundary_mass(),
        "coarse_profile": profile,
    });
    let inputs: Vec<&Path> = a.config.iter().map(PathBuf::as_path).collect();
    rec.finish(&a.out, config, json!({}), &inputs, &[&a.out, &side], None)?;
    println!("value_t0,w_star");
    println!("{value:?},{w_star:?}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    src: PolicySource,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated percentile levels.
    #[arg(long, default_value = "5,50,95")]
    levels: String,
    /// Largest wealth on the heat map axis.
    #[arg(long, default_value_t = 1500.0)]
    heat_max: f64,
    #[arg(long, default_value_t = 10.0)]
    heat_step: f64,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let rec = Recorder::start("report");
    let levels: Vec<f64> = a
        .levels
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("bad percentile level {s:?}"))))
        .collect::<Result<_>>()?;
    if levels.iter().any(|l| !(0.0..=100.0).contains(l)) {
        return Err(usage("percentile levels must lie in [0, 100]"));
    }
    if !(a.heat_step > 0.0 && a.heat_max > 0.0) {
        return Err(usage("--heat-max and --heat-step must be positive"));
    }
    let (pol, paths, market) = a.src.load()?;
    let sc = pol.scenario();
    let r = pol.rollout(&paths, &market, true)?;
    let rep = percentile_report(&r, &sc, &levels)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut outputs = Vec::new();
    for (name, table) in [("wealth", &rep.wealth), ("withdrawal", &rep.withdrawal), ("stock_fraction", &rep.stock_fraction)] {
        let f = a.out_dir.join(format!("percentiles_{name}.csv"));
        write_percentile_csv(table, create(&f)?)?;
        outputs.push(f);
    }
    let n = (a.heat_max / a.heat_step).floor() as usize;
    let wealth: Vec<f64> = (0..=n).map(|k| k as f64 * a.heat_step).collect();
    let times: Vec<usize> = (0..=sc.n_rebalances).collect();
    let h = heatmap_report(pol.policy(), &sc, &wealth, &times)?;
    for (name, values) in [("withdrawal", &h.withdrawal), ("allocation", &h.allocation)] {
        let f = a.out_dir.join(format!("heatmap_{name}.csv"));
        write_heatmap_csv(&h, values, create(&f)?)?;
        outputs.push(f);
    }
    let point = frontier_point(&r, &sc, pol.w_star())?;
    let f = a.out_dir.join("summary.csv");
    write_frontier_csv(&[point], create(&f)?)?;
    outputs.push(f);
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let config = json!({ "scenario": sc, "market": market, "levels": levels, "heat_max": a.heat_max, "heat_step": a.heat_step });
    rec.finish(&a.out_dir, config, json!({}), &a.src.inputs(), &outs, None)?;
    for o in &outputs {
        println!("{}", o.display());
    }
    Ok(())
}

