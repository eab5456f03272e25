//! Command implementations. Each returns a [`Report`]; failures that stop a
//! command are returned as errors, recoverable ones land in the report.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use manyiv_core::estimators::{estimate, EstimatorId};
use manyiv_core::inference::{
    check_balance, compute_theta, invert_test, pretest_ftilde, run_test, Engine, GridSpec,
    Identification, Sidedness, ZeroDiagA,
};
use manyiv_core::montecarlo::simulate;
use manyiv_core::{Dataset, ProjectionBundle, SimDesign, TestId, VarianceId};

use crate::args::{Cli, Command, DataArgs, EngineArg, Format, Global};
use crate::designs;
use crate::ingest::{ingest_csv, ColumnRoles};
use crate::plot::power_curves;
use crate::report::{
    AssumptionSection, EstimateRow, PretestSection, Report, SetRow, SimulationSection, TestRow,
};

/// Files written besides standard output.
#[derive(Debug, Default)]
pub struct Outputs {
    pub written: Vec<PathBuf>,
}

struct Prepared {
    data: Dataset,
    bundle: ProjectionBundle,
    report: Report,
}

fn prepare(command: &str, args: &DataArgs, global: &Global) -> Result<Prepared> {
    if !(global.alpha > 0.0 && global.alpha < 1.0) {
        bail!("--alpha must lie in (0, 1), got {}", global.alpha);
    }
    let roles = ColumnRoles {
        outcome: args.outcome.clone(),
        endogenous: args.endogenous.clone(),
        instruments: args.instruments.clone(),
        controls: args.controls.clone(),
        expand: global.expand.clone(),
    };
    let loaded = ingest_csv(&args.input, &roles)?;
    let bundle = ProjectionBundle::build(&loaded.data).context("building the projections")?;
    let mut report = Report::new(command, global.alpha);
    report.warnings = loaded.warnings;
    if bundle.k_z() < loaded.summary.k_z {
        report.warnings.push(format!(
            "instruments are collinear: rank {} of {} columns",
            bundle.k_z(),
            loaded.summary.k_z
        ));
    }
    report.data = Some(loaded.summary);
    Ok(Prepared {
        data: loaded.data,
        bundle,
        report,
    })
}

fn wald_z(alpha: f64) -> f64 {
    Sidedness::TwoSided.critical_value(alpha)
}

/// The zero-diagonal matrix and its balance report; failures become warnings.
fn zero_diag(p: &mut Prepared) -> Option<ZeroDiagA> {
    match compute_theta(&p.bundle) {
        Ok(a) => {
            let check = check_balance(&p.bundle, &a);
            if !check.pass {
                p.report.warnings.push(format!(
                    "balance conditions violated ({}); the many-controls test may not control size",
                    check.violations().join("; ")
                ));
            } else if check.warn {
                p.report
                    .warnings
                    .push("leverage is close to the balance bound".into());
            }
            p.report.assumption_check = Some(AssumptionSection::from(&check));
            Some(a)
        }
        Err(e) => {
            p.report
                .warnings
                .push(format!("zero-diagonal weights unavailable: {e}"));
            None
        }
    }
}

fn pretest_section(p: &mut Prepared) -> Option<bool> {
    match pretest_ftilde(&p.data, &p.bundle) {
        Ok(out) => {
            let strong = out.decision == Identification::Strong;
            if out.approximate {
                p.report.warnings.push(
                    "controls were partialled out for the pre-test; F-tilde is approximate".into(),
                );
            }
            p.report.pretest = Some(PretestSection::from(&out));
            Some(strong)
        }
        Err(e) => {
            p.report.warnings.push(format!("pre-test unavailable: {e}"));
            None
        }
    }
}

fn add_estimate(
    p: &mut Prepared,
    id: EstimatorId,
    a: Option<&ZeroDiagA>,
    strict: bool,
) -> Result<()> {
    match estimate(id, &p.data, &p.bundle, a) {
        Ok(e) => p
            .report
            .estimates
            .push(EstimateRow::new(&e, wald_z(p.report.alpha))),
        Err(e) if strict => return Err(anyhow!("{id}: {e}")),
        Err(e) => {
            p.report.warnings.push(format!("{id} unavailable: {e}"));
            p.report
                .estimates
                .push(EstimateRow::failed(id.name(), e.to_string()));
        }
    }
    Ok(())
}

fn stat_label(test: TestId, variance: Option<VarianceId>) -> String {
    match variance {
        Some(v) => format!("{test}({v})"),
        None => test.to_string(),
    }
}

fn add_set(
    p: &mut Prepared,
    test: TestId,
    variance: Option<VarianceId>,
    a: Option<&ZeroDiagA>,
    engine: Option<EngineArg>,
    grid: Option<GridSpec>,
    strict: bool,
) -> Result<()> {
    let engine = match engine {
        Some(EngineArg::Grid) => Engine::Grid,
        Some(EngineArg::Polynomial) => Engine::Polynomial,
        None if variance == Some(VarianceId::Phi3) => Engine::Grid,
        None => Engine::Polynomial,
    };
    let label = stat_label(test, variance);
    match invert_test(
        &p.data,
        &p.bundle,
        a,
        test,
        variance,
        p.report.alpha,
        engine,
        grid,
    ) {
        Ok(set) => {
            for n in &set.notes {
                p.report.warnings.push(format!("{label}: {n}"));
            }
            p.report.confidence_sets.push(SetRow::new(label, &set));
        }
        Err(e) if strict => return Err(anyhow!("{label}: {e}")),
        Err(e) => p
            .report
            .warnings
            .push(format!("{label} set unavailable: {e}")),
    }
    Ok(())
}

fn analyze(args: &DataArgs, global: &Global) -> Result<Report> {
    let mut p = prepare("analyze", args, global)?;
    let strong = pretest_section(&mut p);
    if !p.data.has_controls() {
        for id in [EstimatorId::Tsls, EstimatorId::Jive1, EstimatorId::Jive2] {
            add_estimate(&mut p, id, None, false)?;
        }
        let certified = strong == Some(true);
        if let Some(row) = p
            .report
            .estimates
            .iter_mut()
            .find(|r| r.estimator == "jive2")
        {
            row.reliable = Some(certified);
            if let (Some(w), true) = (row.wald, certified) {
                p.report
                    .confidence_sets
                    .push(SetRow::interval("jive-wald".into(), w.lo, w.hi));
            }
        }
        if !certified {
            p.report.warnings.push(
                "F-tilde does not certify strong identification; the JIVE t-test may be size \
                 distorted, use the robust LM or AR sets"
                    .into(),
            );
        }
        add_set(
            &mut p,
            TestId::Lm,
            Some(VarianceId::Psi2),
            None,
            None,
            None,
            false,
        )?;
        add_set(
            &mut p,
            TestId::Ar,
            Some(VarianceId::Phi2),
            None,
            None,
            None,
            false,
        )?;
    } else {
        let a = zero_diag(&mut p);
        for id in [
            EstimatorId::Tsls,
            EstimatorId::Beta1Ijive,
            EstimatorId::Beta2Naive,
        ] {
            add_estimate(&mut p, id, None, false)?;
        }
        if let Some(a) = &a {
            add_estimate(&mut p, EstimatorId::Beta3, Some(a), false)?;
            add_set(&mut p, TestId::ArW, None, Some(a), None, None, false)?;
        }
    }
    Ok(p.report)
}

fn pretest(args: &DataArgs, global: &Global) -> Result<Report> {
    let mut p = prepare("pretest", args, global)?;
    let out = pretest_ftilde(&p.data, &p.bundle)?;
    if out.approximate {
        p.report
            .warnings
            .push("controls were partialled out for the pre-test; F-tilde is approximate".into());
    }
    p.report.pretest = Some(PretestSection::from(&out));
    Ok(p.report)
}

fn parse_test(s: &str) -> Result<TestId> {
    TestId::parse(s)
        .ok_or_else(|| anyhow!("unknown statistic {s:?}; expected ar, lm, arw, ar1 or ar2"))
}

fn parse_variance(s: Option<&str>, test: TestId) -> Result<Option<VarianceId>> {
    match s {
        Some(v) => VarianceId::parse(v)
            .map(Some)
            .ok_or_else(|| anyhow!("unknown normalizer {v:?}")),
        None => Ok(match test {
            TestId::Ar => Some(VarianceId::Phi2),
            TestId::Lm => Some(VarianceId::Psi2),
            _ => None,
        }),
    }
}

fn test_cmd(
    args: &DataArgs,
    global: &Global,
    beta0: f64,
    stat: &str,
    variance: Option<&str>,
) -> Result<Report> {
    let mut p = prepare("test", args, global)?;
    let test = parse_test(stat)?;
    let variance = parse_variance(variance, test)?;
    let a = if test == TestId::ArW {
        Some(zero_diag(&mut p).ok_or_else(|| anyhow!("arw needs the zero-diagonal weights"))?)
    } else {
        None
    };
    let out = run_test(
        test,
        variance,
        &p.data,
        &p.bundle,
        a.as_ref(),
        beta0,
        global.alpha,
    )?;
    p.report
        .tests
        .push(TestRow::new(stat_label(test, variance), &out));
    Ok(p.report)
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, points] = parts.as_slice() else {
        bail!("--grid expects lo:hi:points, got {s:?}");
    };
    Ok(GridSpec {
        lo: lo.trim().parse().context("grid lower end")?,
        hi: hi.trim().parse().context("grid upper end")?,
        points: points.trim().parse().context("grid points")?,
        outer_points: 600,
    })
}

fn confset(
    args: &DataArgs,
    global: &Global,
    stats: &[String],
    variance: Option<&str>,
    engine: Option<EngineArg>,
    grid: Option<&str>,
) -> Result<Report> {
    let mut p = prepare("confset", args, global)?;
    let grid = grid.map(parse_grid).transpose()?;
    let tests: Vec<TestId> = if stats.is_empty() {
        if p.data.has_controls() {
            vec![TestId::ArW]
        } else {
            vec![TestId::Lm, TestId::Ar]
        }
    } else {
        stats.iter().map(|s| parse_test(s)).collect::<Result<_>>()?
    };
    let a = if p.data.has_controls() {
        zero_diag(&mut p)
    } else {
        None
    };
    for test in tests {
        let v = parse_variance(variance, test)?;
        add_set(&mut p, test, v, a.as_ref(), engine, grid, true)?;
    }
    Ok(p.report)
}

fn estimate_cmd(args: &DataArgs, global: &Global, names: &[String]) -> Result<Report> {
    let mut p = prepare("estimate", args, global)?;
    let ids: Vec<EstimatorId> = if names.is_empty() {
        if p.data.has_controls() {
            vec![
                EstimatorId::Tsls,
                EstimatorId::Beta1Ijive,
                EstimatorId::Beta2Naive,
                EstimatorId::Beta3,
            ]
        } else {
            vec![EstimatorId::Tsls, EstimatorId::Jive1, EstimatorId::Jive2]
        }
    } else {
        names
            .iter()
            .map(|n| EstimatorId::parse(n).ok_or_else(|| anyhow!("unknown estimator {n:?}")))
            .collect::<Result<_>>()?
    };
    let a = if ids.contains(&EstimatorId::Beta3) {
        if !p.data.has_controls() {
            compute_theta(&p.bundle).ok()
        } else {
            zero_diag(&mut p)
        }
    } else {
        None
    };
    for id in ids {
        add_estimate(&mut p, id, a.as_ref(), true)?;
    }
    Ok(p.report)
}

/// Reads a design file, or a bundled design when no such file exists.
pub fn load_design(spec: &str) -> Result<SimDesign> {
    let path = Path::new(spec);
    let text = if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?
    } else if let Some(t) = designs::bundled(spec) {
        t.to_string()
    } else {
        bail!(
            "no design file {spec:?} and no bundled design of that name (bundled: {})",
            designs::names().join(", ")
        );
    };
    Ok(SimDesign::parse(&text)?)
}

fn simulate_cmd(global: &Global, design: &str, reps: Option<usize>) -> Result<Report> {
    let mut d = load_design(design)?;
    if let Some(s) = global.seed {
        d.seed = s;
    }
    if let Some(r) = reps {
        d.reps = r;
    }
    d.validate()?;
    let sim = simulate(&d)?;
    let mut report = Report::new("simulate", d.alpha);
    for row in &sim.rejection {
        if row.errors > 0 {
            report.warnings.push(format!(
                "{} at delta {}: {} replications failed",
                row.statistic, row.delta, row.errors
            ));
        }
    }
    report.simulation = Some(SimulationSection::from(&sim));
    Ok(report)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Report> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze { data } => analyze(data, g),
        Command::Pretest { data } => pretest(data, g),
        Command::Test {
            data,
            beta0,
            stat,
            variance,
        } => test_cmd(data, g, *beta0, stat, variance.as_deref()),
        Command::Confset {
            data,
            stat,
            variance,
            engine,
            grid,
        } => confset(data, g, stat, variance.as_deref(), *engine, grid.as_deref()),
        Command::Estimate { data, estimator } => estimate_cmd(data, g, estimator),
        Command::Simulate { design, reps, .. } => simulate_cmd(g, design, *reps),
        Command::Designs { .. } => Ok(Report::new("designs", g.alpha)),
    }
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Text => report.to_text(),
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    }
}

fn write(path: &Path, text: &str, out: &mut Outputs) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    out.written.push(path.to_path_buf());
    Ok(())
}

/// Writes the `--out` files for a finished report.
pub fn write_outputs(cli: &Cli, report: &Report) -> Result<Outputs> {
    let mut out = Outputs::default();
    let Some(target) = &cli.global.out else {
        return Ok(out);
    };
    if let Command::Simulate { plot, .. } = &cli.command {
        std::fs::create_dir_all(target)
            .with_context(|| format!("creating {}", target.display()))?;
        let sim = report
            .simulation
            .as_ref()
            .expect("simulate fills the section");
        let stem = &sim.design;
        write(
            &target.join(format!("{stem}.csv")),
            &report.simulation_csv(),
            &mut out,
        )?;
        write(
            &target.join(format!("{stem}.json")),
            &(report.to_json() + "\n"),
            &mut out,
        )?;
        if let Some(b) = report.bias_csv() {
            write(&target.join(format!("{stem}_bias.csv")), &b, &mut out)?;
        }
        if *plot {
            match power_curves(sim) {
                Some(svg) => write(&target.join(format!("{stem}.svg")), &svg, &mut out)?,
                None => eprintln!("warning: a single delta value; no plot written"),
            }
        }
        return Ok(out);
    }
    let csv = target
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let text = if csv {
        report.to_csv()
    } else {
        report.to_json() + "\n"
    };
    write(target, &text, &mut out)?;
    Ok(out)
}
