use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use surropte::basis::BasisSpec;
use surropte::data::{load_csv, ColumnMap, Dataset};
use surropte::diagnostics::{check_assumptions, AssumptionReport};
use surropte::outcome::{Link, OutcomeModelSpec};
use surropte::pipeline::{EstimatorConfig, EstimatorKind, Prepared, PropensityModel};
use surropte::resampling::{run_resampling, CiMethod, PerturbationConfig, PteReport};
use surropte::simulation::{
    default_truth_grid, format_table, generate as generate_data, monte_carlo_truth, run_scenario, write_rows_csv, DgpOptions,
    Scenario, ScenarioSpec, Setting, SimEstimator, TruthValues,
};

use crate::output::{
    csv_err, csv_writer, num, out_dir, read_manifest, sha256_file, write_json, RunManifest,
};
use crate::{DiagnoseArgs, EstimateArgs, Failure, GenerateArgs, SimulateArgs, TruthArgs};

fn required<'a>(v: &'a Option<String>, what: &str) -> Result<&'a str, Failure> {
    match v.as_deref().map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Failure::Validation(format!("missing required column mapping: {what}"))),
    }
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect()
}

fn parse<T: std::str::FromStr<Err = surropte::Error>>(text: &str) -> Result<T, Failure> {
    text.parse::<T>().map_err(Failure::from)
}

fn estimator_kinds(text: &str) -> Result<Vec<EstimatorKind>, Failure> {
    match text {
        "both" => Ok(vec![EstimatorKind::Dr, EstimatorKind::Ipw]),
        other => Ok(vec![parse(other)?]),
    }
}

struct Inputs {
    data: Dataset,
    config: EstimatorConfig,
    kinds: Vec<EstimatorKind>,
    pc: PerturbationConfig,
    digest: String,
}

fn inputs(args: &EstimateArgs) -> Result<Inputs, Failure> {
    let input = args
        .input
        .as_deref()
        .ok_or_else(|| Failure::Validation("missing required argument: --input".into()))?;
    let schema = ColumnMap {
        y: required(&args.y, "y")?.into(),
        s: required(&args.s, "s")?.into(),
        a: required(&args.a, "a")?.into(),
        x: split_list(required(&args.x, "x")?),
    };
    let kinds = estimator_kinds(&args.estimator)?;
    let mut pc = PerturbationConfig::new(args.b, args.seed);
    pc.ci_level = args.ci_level;
    pc.ci_method = parse::<CiMethod>(&args.ci_method)?;
    pc.validate()?;

    let default_terms = schema.x.join(", ");
    let propensity = if args.randomized {
        PropensityModel::Randomized
    } else {
        let text = args.ps_basis.as_deref().unwrap_or(&default_terms);
        PropensityModel::Logistic(BasisSpec::parse(text, true)?)
    };
    let outcome = if kinds.contains(&EstimatorKind::Dr) {
        let index = args.or_index.as_deref().unwrap_or(&default_terms);
        let regression = args.or_regression.as_deref().unwrap_or(&default_terms);
        Some(OutcomeModelSpec::new(
            BasisSpec::parse(index, false)?,
            BasisSpec::parse(regression, true)?,
            parse::<Link>(&args.link)?,
        ))
    } else {
        None
    };
    let mut config = EstimatorConfig::new(propensity, outcome);
    config.c0 = args.c0;
    config.grid_size = args.grid_size;

    let path = Path::new(input);
    let digest = sha256_file(path)?;
    let data = load_csv(path, &schema)?;
    Ok(Inputs {
        data,
        config,
        kinds,
        pc,
        digest,
    })
}

#[derive(Serialize)]
struct EstimateSummary {
    estimator: EstimatorKind,
    pte: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    ci_level: f64,
    ci_method: CiMethod,
    delta: f64,
    se_delta: f64,
    delta_g: f64,
    se_delta_g: f64,
    lambda: f64,
    replicates: usize,
    n_failed: usize,
}

impl From<&PteReport> for EstimateSummary {
    fn from(r: &PteReport) -> Self {
        EstimateSummary {
            estimator: r.estimator,
            pte: r.point.pte,
            se: r.se_pte,
            ci_lo: r.ci_pte.0,
            ci_hi: r.ci_pte.1,
            ci_level: r.ci_level,
            ci_method: r.ci_method,
            delta: r.point.delta,
            se_delta: r.se_delta,
            delta_g: r.point.delta_g,
            se_delta_g: r.se_delta_g,
            lambda: r.lambda,
            replicates: r.replicates.len(),
            n_failed: r.n_failed,
        }
    }
}

#[derive(Serialize)]
struct PteFile {
    n: usize,
    estimates: Vec<EstimateSummary>,
}

pub fn estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let inp = inputs(args)?;
    let dir = out_dir(&args.out)?;
    let prepared = Prepared::new(&inp.data, &inp.config)?;
    let reports: Vec<PteReport> = inp
        .kinds
        .iter()
        .map(|&k| run_resampling(&prepared, k, &inp.pc))
        .collect::<surropte::Result<_>>()?;

    write_json(
        &dir.join("pte.json"),
        &PteFile {
            n: inp.data.len(),
            estimates: reports.iter().map(EstimateSummary::from).collect(),
        },
    )?;

    let mut w = csv_writer(&dir.join("gcurve.csv"))?;
    w.write_record(["estimator", "s", "g", "se_g", "ci_lo", "ci_hi"]).map_err(csv_err)?;
    for r in &reports {
        let c = &r.curve;
        for k in 0..c.s.len() {
            w.write_record([
                r.estimator.name().to_string(),
                num(c.s[k]),
                num(c.g[k]),
                num(c.se[k]),
                num(c.lo[k]),
                num(c.hi[k]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("replicates.csv"))?;
    w.write_record(["estimator", "rep", "delta", "delta_g", "pte", "status"]).map_err(csv_err)?;
    for r in &reports {
        for rec in &r.replicates {
            let (d, dg, p) = match &rec.effects {
                Some(e) => (num(e.delta), num(e.delta_g), num(e.pte)),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                r.estimator.name().to_string(),
                rec.rep.to_string(),
                d,
                dg,
                p,
                rec.status.clone(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    for r in &reports {
        println!(
            "{:<4} PTE {:.4} (SE {:.4}, {:.0}% CI {:.4} to {:.4})  delta {:.4}  delta_g {:.4}  failed {}/{}",
            r.estimator.name(),
            r.point.pte,
            r.se_pte,
            100.0 * r.ci_level,
            r.ci_pte.0,
            r.ci_pte.1,
            r.point.delta,
            r.point.delta_g,
            r.n_failed,
            r.replicates.len()
        );
    }

    let mut m = RunManifest::new("estimate", args, args.seed);
    m.input_sha256 = Some(inp.digest);
    m.outputs = vec!["pte.json".into(), "gcurve.csv".into(), "replicates.csv".into()];
    m.finish(&dir, crate::output::MANIFEST, started)
}

#[derive(Serialize)]
struct DiagnoseFile {
    estimator: EstimatorKind,
    pte: f64,
    delta: f64,
    replicates: usize,
    seed: u64,
    report: AssumptionReport,
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let from = Path::new(&args.from);
    let manifest = read_manifest(from)?;
    if manifest.command != "estimate" {
        return Err(Failure::Validation(format!(
            "{} was written by '{}', not 'estimate'",
            from.display(),
            manifest.command
        )));
    }
    let est: EstimateArgs = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Failure::Validation(format!("malformed estimate configuration: {e}")))?;
    let inp = inputs(&est)?;
    if manifest.input_sha256.as_deref() != Some(inp.digest.as_str()) {
        return Err(Failure::Validation(
            "input file changed since the estimate was produced".into(),
        ));
    }
    let kind = match &args.estimator {
        Some(text) => {
            let k: EstimatorKind = parse(text)?;
            if !inp.kinds.contains(&k) {
                return Err(Failure::Validation(format!(
                    "estimator '{text}' was not part of the estimate"
                )));
            }
            k
        }
        None => inp.kinds[0],
    };
    let mut pc = inp.pc.clone();
    if let Some(b) = args.b {
        pc.replicates = b;
    }
    pc.validate()?;
    let prepared = Prepared::new(&inp.data, &inp.config)?;
    let base = prepared.base(kind)?;
    let report = check_assumptions(&prepared, &base, &pc, args.u_grid_size)?;

    let dir = out_dir(args.out.as_deref().unwrap_or(&args.from))?;
    for (label, c) in [("survival", &report.survival_order), ("mean", &report.mean_order)] {
        println!(
            "{label:<8} max violation {:.4} at u = {:.4} (SE {:.4}) {}",
            c.max_violation,
            c.at,
            c.se,
            if c.flagged { "FLAGGED" } else { "ok" }
        );
    }
    println!("overlap [{:.4}, {:.4}]", report.overlap.0, report.overlap.1);
    write_json(
        &dir.join("diagnose.json"),
        &DiagnoseFile {
            estimator: kind,
            pte: base.effects.pte,
            delta: base.effects.delta,
            replicates: pc.replicates,
            seed: pc.seed,
            report,
        },
    )?;
    let mut m = RunManifest::new("diagnose", args, pc.seed);
    m.input_sha256 = Some(inp.digest);
    m.outputs = vec!["diagnose.json".into()];
    m.finish(&dir, "diagnose_manifest.json", started)
}

fn setting(v: u8) -> Result<Setting, Failure> {
    Setting::try_from(v).map_err(Failure::from)
}

/// Seed for truth draws, kept apart from the scenario's data streams.
fn truth_seed(seed: u64) -> u64 {
    !seed
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let st = setting(args.setting)?;
    let scenario: Scenario = parse(&args.scenario)?;
    let estimators: Vec<SimEstimator> = split_list(&args.estimators)
        .iter()
        .map(|e| parse(e))
        .collect::<Result<_, _>>()?;
    let spec = ScenarioSpec::new(st, args.n, scenario, args.reps, args.seed);
    spec.validate()?;
    let pc = PerturbationConfig::new(args.b, args.seed);
    pc.validate()?;
    let dir = out_dir(&args.out)?;

    let mut input_sha256 = None;
    let truth: TruthValues = match &args.truth {
        Some(path) => {
            let p = Path::new(path);
            input_sha256 = Some(sha256_file(p)?);
            let text = std::fs::read_to_string(p)?;
            let t: TruthFile = serde_json::from_str(&text)
                .map_err(|e| Failure::Validation(format!("malformed truth file: {e}")))?;
            if t.setting != args.setting {
                return Err(Failure::Validation(format!(
                    "truth file is for setting {}, not {}",
                    t.setting, args.setting
                )));
            }
            t.truth
        }
        None => {
            let dgp = DgpOptions::default();
            let grid = default_truth_grid(st, args.seed, &dgp)?;
            monte_carlo_truth(st, args.truth_n, args.truth_reps, &grid, truth_seed(args.seed), &dgp)?
        }
    };

    let result = run_scenario(&spec, &estimators, &pc, &truth, None)?;
    write_rows_csv(&result.rows, dir.join("table.csv"))?;
    let table = format_table(&result.rows);
    std::fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");

    let mut w = csv_writer(&dir.join("reps.csv"))?;
    w.write_record(["rep", "estimator", "pte", "se", "ci_lo", "ci_hi", "status"]).map_err(csv_err)?;
    for r in &result.records {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        w.write_record([
            r.rep.to_string(),
            r.estimator.name().to_string(),
            opt(r.pte),
            opt(r.se),
            opt(r.ci.map(|c| c.0)),
            opt(r.ci.map(|c| c.1)),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut m = RunManifest::new("simulate", args, args.seed);
    m.input_sha256 = input_sha256;
    m.outputs = vec!["table.csv".into(), "table.txt".into(), "reps.csv".into()];
    m.finish(&dir, crate::output::MANIFEST, started)
}

#[derive(Serialize, serde::Deserialize)]
struct TruthFile {
    setting: u8,
    n: usize,
    reps: usize,
    truth: TruthValues,
}

pub fn truth(args: &TruthArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let st = setting(args.setting)?;
    let dgp = DgpOptions::default();
    let grid = default_truth_grid(st, args.seed, &dgp)?;
    let t = monte_carlo_truth(st, args.n, args.reps, &grid, truth_seed(args.seed), &dgp)?;
    let dir = out_dir(&args.out)?;
    println!(
        "setting {}: delta {:.4}  delta_g {:.4}  PTE {:.4}  lambda {:.4}",
        args.setting, t.delta, t.delta_g, t.pte, t.lambda
    );
    let mut w = csv_writer(&dir.join("truth_gcurve.csv"))?;
    w.write_record(["s", "g"]).map_err(csv_err)?;
    for (s, g) in t.grid.points().iter().zip(&t.g_curve) {
        w.write_record([num(*s), num(*g)]).map_err(csv_err)?;
    }
    w.flush()?;
    write_json(
        &dir.join("truth.json"),
        &TruthFile {
            setting: args.setting,
            n: args.n,
            reps: args.reps,
            truth: t,
        },
    )?;
    let mut m = RunManifest::new("truth", args, args.seed);
    m.outputs = vec!["truth.json".into(), "truth_gcurve.csv".into()];
    m.finish(&dir, crate::output::MANIFEST, started)
}

/// Simulated data with the potential outcomes appended as `y0, y1, s0, s1`.
pub fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let st = setting(args.setting)?;
    let data = generate_data(st, args.n, args.seed, &DgpOptions::default())?;
    if let Some(parent) = Path::new(&args.out).parent() {
        if !parent.as_os_str().is_empty() {
            out_dir(&parent.to_string_lossy())?;
        }
    }
    data.write_csv(&args.out)?;
    Ok(())
}
