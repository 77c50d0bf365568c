use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hc_core::fixtures;
use hc_core::nalgebra::DMatrix;
use hc_core::io::{export_results, parse_feeder, samples_csv, CaseTag, Feeder, IoError, RegionFile};
use hc_core::pipeline::{run_pipeline, ModelSelect, PipelineError, PipelineOptions, PipelineResult};
use hc_core::powerflow::{branch_flow_residual, solve_distflow, solve_lindist_voltages, InjectionProfile};
use hc_core::region::{compare_regions, OperatingRegion};
use hc_core::sensitivity::SensitivityMatrices;
use hc_core::validate::{
    check_boundary_feasibility, monte_carlo_validate, oracle_region, BoundaryReport, MonteCarloReport, OracleRegion,
    ReactiveSampling,
};

#[derive(Parser)]
#[command(name = "hc", version, about = "Feasible operating regions for radial distribution feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build sensitivity matrices and print diagnostics.
    Build {
        #[command(flatten)]
        feeder: FeederArg,
        /// Write matrices.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one DistFlow power flow.
    Powerflow {
        #[command(flatten)]
        feeder: FeederArg,
        /// Net real injections in pu, comma separated, one per node in file order of ids.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p: Vec<f64>,
        /// Net reactive injections in pu.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q: Vec<f64>,
        /// CSV with columns node,p,q (pu); unlisted nodes inject nothing.
        #[arg(long, conflicts_with_all = ["p", "q"])]
        injections: Option<PathBuf>,
    },
    /// Full pipeline: current bounds, regions, endpoint checks, Monte Carlo, export.
    Run {
        #[command(flatten)]
        feeder: FeederArg,
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        mc: McArgs,
        /// Also run the grid oracle (feeders with at most three resources).
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 1e-3)]
        grid_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo on an existing regions.json.
    Validate {
        #[command(flatten)]
        feeder: FeederArg,
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long)]
        region: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force feasible region on a grid and compare with the computed regions.
    Oracle {
        #[command(flatten)]
        feeder: FeederArg,
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 1e-3)]
        grid_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FeederArg {
    /// Feeder JSON file, or a bundled name (twonode, ieee13).
    #[arg(long)]
    feeder: String,
}

#[derive(Args)]
struct CaseArgs {
    /// Override the capability case of every resource.
    #[arg(long, value_enum)]
    case: Option<CaseOpt>,
    /// Power factor for the constant-pf case.
    #[arg(long)]
    pf: Option<f64>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, value_enum, default_value_t = ModelOpt::Inner)]
    model: ModelOpt,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// How reactive injections are drawn for box and quadratic resources.
    #[arg(long, value_enum, default_value_t = SamplingOpt::Interpolated)]
    sampling: SamplingOpt,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseOpt {
    UnityPf,
    ConstantPf,
    Box,
    Quadratic,
}

impl From<CaseOpt> for CaseTag {
    fn from(c: CaseOpt) -> Self {
        match c {
            CaseOpt::UnityPf => CaseTag::UnityPf,
            CaseOpt::ConstantPf => CaseTag::ConstantPf,
            CaseOpt::Box => CaseTag::Box,
            CaseOpt::Quadratic => CaseTag::Quadratic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelOpt {
    Inner,
    Lindist,
    Both,
}

impl From<ModelOpt> for ModelSelect {
    fn from(m: ModelOpt) -> Self {
        match m {
            ModelOpt::Inner => ModelSelect::Inner,
            ModelOpt::Lindist => ModelSelect::Lindist,
            ModelOpt::Both => ModelSelect::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingOpt {
    Interpolated,
    Independent,
}

impl From<SamplingOpt> for ReactiveSampling {
    fn from(s: SamplingOpt) -> Self {
        match s {
            SamplingOpt::Interpolated => ReactiveSampling::Interpolated,
            SamplingOpt::Independent => ReactiveSampling::Independent,
        }
    }
}

/// Failure classes, each with its own exit code.
enum Failure {
    Validation(String),
    Input(anyhow::Error),
    Solver(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::File { .. } => Failure::Io(anyhow!(e).context("io")),
            e => Failure::Input(anyhow!(e).context("cli-io")),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => e.into(),
            PipelineError::Sensitivity(e) => Failure::Solver(anyhow!(e).context("feeder-graph")),
            PipelineError::Region(e) => Failure::Solver(anyhow!(e).context("hosting-capacity")),
            PipelineError::Validation(e) => Failure::Solver(anyhow!(e).context("validation-harness")),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_feeder(arg: &FeederArg) -> Result<Feeder, Failure> {
    let path = Path::new(&arg.feeder);
    if !path.exists() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(&arg.feeder);
        if let Some(f) = fixtures::load(stem) {
            return Ok(f?);
        }
    }
    Ok(parse_feeder(path)?)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Outcome {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Io)?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display())).map_err(Failure::Io)
}

fn id_list(feeder: &Feeder) -> Vec<usize> {
    feeder.network.node_ids().to_vec()
}

fn cmd_build(feeder: &Feeder, out: Option<&Path>) -> Outcome {
    let net = &feeder.network;
    let m = SensitivityMatrices::from_network(net).map_err(|e| Failure::Solver(anyhow!(e).context("feeder-graph")))?;
    println!("feeder {}: {} non-root nodes, substation {}", feeder.name, net.len(), net.substation_id());
    println!("internal order (external ids): {:?}", net.node_ids());
    println!("det(I - A) = {}", m.det_i_minus_a());
    println!("||C(I - A) - I||_inf = {:.3e}", m.inverse_residual());
    let min_eig = |mm: &DMatrix<f64>| mm.clone().symmetric_eigenvalues().min();
    println!("min eig Mp = {:.6e}, min eig Mq = {:.6e}", min_eig(&m.m_p), min_eig(&m.m_q));
    if let Some(dir) = out {
        let rows = |x: &DMatrix<f64>| -> Vec<Vec<f64>> { x.row_iter().map(|r| r.iter().copied().collect()).collect() };
        let doc = serde_json::json!({
            "node_ids": net.node_ids(),
            "a": rows(&m.a),
            "c": rows(&m.c),
            "m_p": rows(&m.m_p),
            "m_q": rows(&m.m_q),
            "h": rows(&m.h),
            "d_r": rows(&m.d_r),
            "d_x": rows(&m.d_x),
        });
        write_file(dir, "matrices.json", &(serde_json::to_string_pretty(&doc).expect("matrices serialise") + "\n"))?;
    }
    Ok(())
}

fn read_injections(feeder: &Feeder, path: &Path) -> Result<InjectionProfile, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Io)?;
    let mut inj = InjectionProfile::zeros(feeder.network.len());
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Failure::Input(anyhow!("{}:{}: {reason}", path.display(), k + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected node,p,q, got {} columns", cols.len())));
        }
        let id: usize = cols[0].parse().map_err(|e| bad(format!("node: {e}")))?;
        let pos = feeder.network.position_of(id).ok_or_else(|| bad(format!("unknown node {id}")))?;
        inj.p[pos] = cols[1].parse().map_err(|e| bad(format!("p: {e}")))?;
        inj.q[pos] = cols[2].parse().map_err(|e| bad(format!("q: {e}")))?;
    }
    Ok(inj)
}

fn cmd_powerflow(feeder: &Feeder, p: &[f64], q: &[f64], injections: Option<&Path>) -> Outcome {
    let net = &feeder.network;
    let n = net.len();
    let inj = match injections {
        Some(path) => read_injections(feeder, path)?,
        None => {
            // values are given in ascending external id order
            let mut ids = id_list(feeder);
            ids.sort_unstable();
            let mut inj = InjectionProfile::zeros(n);
            for (vals, target) in [(p, &mut inj.p), (q, &mut inj.q)] {
                if !vals.is_empty() && vals.len() != n {
                    return Err(Failure::Input(anyhow!("expected {n} values, got {}", vals.len())));
                }
                for (id, &v) in ids.iter().zip(vals) {
                    target[net.position_of(*id).expect("id from network")] = v;
                }
            }
            inj
        }
    };
    let m = SensitivityMatrices::from_network(net).map_err(|e| Failure::Solver(anyhow!(e).context("feeder-graph")))?;
    let sol = solve_distflow(net, &m, &inj).map_err(|e| Failure::Solver(anyhow!(e).context("distflow-solver")))?;
    let lin = solve_lindist_voltages(&m, &inj).map_err(|e| Failure::Solver(anyhow!(e).context("distflow-solver")))?;
    println!("converged in {} iterations, max residual {:.3e}", sol.iterations, branch_flow_residual(net, &inj, &sol));
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "node", "|V| distflow", "|V| lindist", "l", "P flow");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| net.node_ids()[i]);
    for i in order {
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>12.6e} {:>12.6}",
            net.node_ids()[i],
            sol.v[i].sqrt(),
            lin[i].sqrt(),
            sol.l[i],
            sol.p_flow[i]
        );
    }
    Ok(())
}

fn describe_boundary(label: &str, b: &BoundaryReport) -> String {
    let show = |v: &hc_core::validate::BoundaryVerdict| match v {
        hc_core::validate::BoundaryVerdict::Feasible => "feasible".to_string(),
        hc_core::validate::BoundaryVerdict::Violated { nodes, worst_excursion } => {
            format!("VIOLATED at nodes {nodes:?} (worst {worst_excursion:.3e})")
        }
    };
    format!("{label} endpoints: upper {}, lower {}", show(&b.upper), show(&b.lower))
}

fn describe_mc(label: &str, r: &MonteCarloReport) -> String {
    let lo = r.v_min.iter().copied().fold(f64::INFINITY, f64::min).sqrt();
    let hi = r.v_max.iter().copied().fold(f64::NEG_INFINITY, f64::max).sqrt();
    format!(
        "{label} monte carlo: {} samples, {} violations, {} diverged, |V| in [{lo:.5}, {hi:.5}]",
        r.sample_count, r.violation_count, r.diverged_count
    )
}

fn region_table(feeder: &Feeder, res: &PipelineResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6} {:>11} {:>11} {:>11} {:>11} {:>11}", "node", "lindist-", "lindist+", "p_c-", "p_c+", "delta_p_c");
    for r in &res.export.rows {
        let _ = writeln!(
            s,
            "{:>6} {:>11.6} {:>11.6} {:>11.6} {:>11.6} {:>11.6}",
            r.node, r.p_lindist_minus, r.p_lindist_plus, r.p_c_minus, r.p_c_plus, r.delta_p_c
        );
    }
    if !res.comparison.bounds.fallback_corners.is_empty() {
        let _ = writeln!(
            s,
            "note: {} used branch current limits for diverged corners {:?}",
            feeder.name, res.comparison.bounds.fallback_corners
        );
    }
    s
}

fn containment_lines(feeder: &Feeder, inner: &OperatingRegion, lindist: &OperatingRegion, oracle: &OracleRegion) -> (Vec<String>, bool) {
    let step = oracle.grid_step;
    let mut ok = true;
    let mut lines = Vec::new();
    for (i, iv) in oracle.intervals.iter().enumerate() {
        let Some((lo, hi)) = *iv else { continue };
        let contained = inner.p_minus[i] >= lo - step - 1e-12 && inner.p_plus[i] <= hi + step + 1e-12;
        ok &= contained;
        lines.push(format!(
            "node {}: inner [{:.6}, {:.6}] oracle [{:.6}, {:.6}] lindist [{:.6}, {:.6}] -> {}",
            feeder.network.node_ids()[i],
            inner.p_minus[i],
            inner.p_plus[i],
            lo,
            hi,
            lindist.p_minus[i],
            lindist.p_plus[i],
            if contained { "contained" } else { "NOT contained" }
        ));
    }
    (lines, ok)
}

fn cmd_run(feeder: &Feeder, opts: &PipelineOptions, out: Option<&Path>) -> Outcome {
    let res = run_pipeline(feeder, opts)?;
    print!("{}", region_table(feeder, &res));
    println!("{}", describe_boundary("inner", &res.boundary_inner));
    println!("{}", describe_boundary("lindist", &res.boundary_lindist));
    println!(
        "reactive constraint activity at lossless optima: upper {}, lower {}",
        if res.activity_upper.all_active() { "all active" } else { "INACTIVE nodes" },
        if res.activity_lower.all_active() { "all active" } else { "INACTIVE nodes" },
    );
    let non_monotone = &res.export.summary["non_monotone_nodes_inner"];
    if non_monotone.as_array().is_some_and(|a| !a.is_empty()) {
        println!("warning: reactive swing outweighs real-power range at nodes {non_monotone}; interpolated dispatch is not covered there");
    }
    for (label, r) in res.mc_reports() {
        println!("{}", describe_mc(label, r));
    }
    let mut oracle_ok = true;
    if let Some(oracle) = &res.oracle {
        let (lines, ok) = containment_lines(feeder, &res.comparison.inner, &res.comparison.lindist, oracle);
        for l in lines {
            println!("oracle {l}");
        }
        println!("oracle containment: {}", if ok { "PASS" } else { "FAIL" });
        oracle_ok = ok;
    }
    if let Some(dir) = out {
        let written = export_results(&res.export, &res.regions, &res.mc_reports(), dir)?;
        for p in written {
            println!("wrote {}", p.display());
        }
    }

    let model = opts.model;
    let mut failed = Vec::new();
    let endpoints_ok = |b: &BoundaryReport| b.upper.is_feasible() && b.lower.is_feasible();
    let mc_ok = |r: &Option<MonteCarloReport>| r.as_ref().is_none_or(|r| r.violation_count == 0 && r.diverged_count == 0);
    if model.inner() && !(endpoints_ok(&res.boundary_inner) && mc_ok(&res.mc_inner)) {
        failed.push("inner");
    }
    if model.lindist() && !(endpoints_ok(&res.boundary_lindist) && mc_ok(&res.mc_lindist)) {
        failed.push("lindist");
    }
    if !oracle_ok {
        failed.push("oracle");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("validation failed for {}", failed.join(", "))))
    }
}

fn cmd_validate(feeder: &Feeder, case: &CaseArgs, mc: &McArgs, region: &Path, out: Option<&Path>) -> Outcome {
    let regions = RegionFile::read(region)?;
    regions.check_against(&feeder.network)?;
    let case_tag = case.case.map(CaseTag::from);
    let cap = feeder.capability(case_tag, case.pf)?;
    let net = &feeder.network;
    let m = SensitivityMatrices::from_network(net).map_err(|e| Failure::Solver(anyhow!(e).context("feeder-graph")))?;
    let model: ModelSelect = mc.model.into();
    let mut failed = Vec::new();
    for (label, wanted, reg) in [("inner", model.inner(), &regions.inner), ("lindist", model.lindist(), &regions.lindist)] {
        if !wanted {
            continue;
        }
        let solver = |e: hc_core::validate::ValidationError| Failure::Solver(anyhow!(e).context("validation-harness"));
        let b = check_boundary_feasibility(net, &m, reg).map_err(solver)?;
        let r = monte_carlo_validate(net, &m, reg, &cap, mc.samples, mc.seed, mc.sampling.into()).map_err(solver)?;
        println!("{}", describe_boundary(label, &b));
        println!("{}", describe_mc(label, &r));
        if let Some(dir) = out {
            write_file(dir, &format!("mc_voltages_{label}.csv"), &samples_csv(&r))?;
            write_file(dir, &format!("mc_report_{label}.json"), &(serde_json::to_string_pretty(&r).expect("report serialises") + "\n"))?;
        }
        if !(b.upper.is_feasible() && b.lower.is_feasible() && r.violation_count == 0 && r.diverged_count == 0) {
            failed.push(label);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("validation failed for {}", failed.join(", "))))
    }
}

fn cmd_oracle(feeder: &Feeder, case: &CaseArgs, grid_step: f64, out: Option<&Path>) -> Outcome {
    let net = &feeder.network;
    let cap = feeder.capability(case.case.map(CaseTag::from), case.pf)?;
    let m = SensitivityMatrices::from_network(net).map_err(|e| Failure::Solver(anyhow!(e).context("feeder-graph")))?;
    let cmp = compare_regions(net, &m, &cap).map_err(|e| Failure::Solver(anyhow!(e).context("hosting-capacity")))?;
    let oracle = oracle_region(net, &m, &cap, grid_step).map_err(|e| Failure::Solver(anyhow!(e).context("validation-harness")))?;
    let (lines, ok) = containment_lines(feeder, &cmp.inner, &cmp.lindist, &oracle);
    for l in &lines {
        println!("{l}");
    }
    println!("{} power flows evaluated; containment {}", oracle.evaluations, if ok { "PASS" } else { "FAIL" });
    if let Some(dir) = out {
        write_file(dir, "oracle.json", &(serde_json::to_string_pretty(&oracle).expect("oracle serialises") + "\n"))?;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Validation("inner region not contained in oracle region".into()))
    }
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Build { feeder, out } => cmd_build(&load_feeder(&feeder)?, out.as_deref()),
        Command::Powerflow { feeder, p, q, injections } => cmd_powerflow(&load_feeder(&feeder)?, &p, &q, injections.as_deref()),
        Command::Run { feeder, case, mc, oracle, grid_step, out } => {
            let opts = PipelineOptions {
                case: case.case.map(CaseTag::from),
                pf: case.pf,
                model: mc.model.into(),
                samples: mc.samples,
                seed: mc.seed,
                sampling: mc.sampling.into(),
                oracle_step: oracle.then_some(grid_step),
            };
            cmd_run(&load_feeder(&feeder)?, &opts, out.as_deref())
        }
        Command::Validate { feeder, case, mc, region, out } => cmd_validate(&load_feeder(&feeder)?, &case, &mc, &region, out.as_deref()),
        Command::Oracle { feeder, case, grid_step, out } => cmd_oracle(&load_feeder(&feeder)?, &case, grid_step, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(msg) => eprintln!("hc: {msg}"),
                Failure::Input(e) | Failure::Solver(e) | Failure::Io(e) => eprintln!("hc: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
