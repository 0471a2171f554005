use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use renewal_lab::error::{Error, Result};
use renewal_lab::experiments::{
    arcsine_convergence_report, darling_kac_report, section5_audit, series_check_report,
};
use renewal_lab::laws::{custom_return, power_law_return, puncture, ReturnLaw};
use renewal_lab::mc::SimConfig;
use renewal_lab::occupation::{audit_grid, sn_distribution, sn_distribution_dp};
use renewal_lab::renewal::renewal_fast;
use renewal_lab::report::{ExperimentReport, Table, Verdict};

/// Used when `--shards` is absent; never changes results.
const SHARDS_ENV: &str = "RENEWAL_LAB_SHARDS";
const DEFAULT_SHARDS: usize = 8;

#[derive(Parser, Debug)]
#[command(name = "renewal-lab", version, about = "Exact and Monte Carlo experiments on transient renewal chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the return law and its punctured version.
    Law(Common),
    /// Renewal sequence with first-order diagnostics.
    Renewal(Common),
    /// Decay regime of (1-z)^-1 A(z)^2 for a balanced power series.
    SeriesCheck(Common),
    /// Exact grid sums, limit and Monte Carlo for the last surviving visit.
    Arcsine(Common),
    /// Ratio-identity audit of the marked chain.
    Identity(Common),
    /// Occupation-count law, Abel audits and survivor tables.
    Occupation(Common),
    /// Occupation moments of the recurrent chain.
    DarlingKac(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Tail index of the power-law return time.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Survival probability at each return.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Horizon; comma-separated list for `arcsine`.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Table size of the return law (series length for `series-check`).
    #[arg(long)]
    n_max: Option<usize>,
    /// Explicit return masses a_1, a_2, ... (replaces the power law).
    #[arg(long, value_delimiter = ',')]
    masses: Vec<f64>,
    /// Monte Carlo paths; 0 disables sampling.
    #[arg(long, default_value_t = 0)]
    samples: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    shards: Option<usize>,
    /// start:stop:count, inclusive.
    #[arg(long, default_value = "0.1:0.9:9")]
    t_grid: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the extension of --out, else json.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Common {
    fn format(&self) -> Format {
        self.format.unwrap_or_else(|| match self.out.as_ref().and_then(|p| p.extension()) {
            Some(ext) if ext == "csv" => Format::Csv,
            _ => Format::Json,
        })
    }

    fn shards(&self) -> usize {
        self.shards
            .or_else(|| std::env::var(SHARDS_ENV).ok().and_then(|v| v.parse().ok()))
            .unwrap_or(DEFAULT_SHARDS)
            .max(1)
    }

    fn n_or(&self, default: usize) -> usize {
        self.n.first().copied().unwrap_or(default)
    }

    fn t_grid(&self) -> Result<Vec<f64>> {
        parse_grid(&self.t_grid)
    }

    fn sim(&self) -> SimConfig {
        SimConfig::new(self.seed, self.samples).with_shards(self.shards())
    }

    fn law(&self, n_max: usize) -> Result<ReturnLaw> {
        if self.masses.is_empty() {
            power_law_return(self.beta, n_max)
        } else {
            custom_return(&self.masses)
        }
    }

    fn config(&self, command: &str) -> Value {
        json!({
            "subcommand": command,
            "beta": self.beta,
            "p": self.p,
            "n": self.n,
            "n_max": self.n_max,
            "masses": self.masses,
            "samples": self.samples,
            "seed": self.seed,
            "shards": self.shards(),
            "t_grid": self.t_grid,
            "format": match self.format() { Format::Csv => "csv", Format::Json => "json" },
        })
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("t-grid must be start:stop:count, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) || start > stop {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    Ok((0..count)
        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
        .collect())
}

fn emit(report: &ExperimentReport, args: &Common) -> Result<()> {
    match (args.format(), &args.out) {
        (Format::Json, Some(path)) => std::fs::write(path, report.to_json_string() + "\n")?,
        (Format::Json, None) => println!("{}", report.to_json_string()),
        (Format::Csv, Some(path)) => {
            report.write_csv_files(path)?;
        }
        (Format::Csv, None) => {
            let mut out = std::io::stdout().lock();
            for (i, (name, table)) in report.tables.iter().enumerate() {
                if report.tables.len() > 1 {
                    if i > 0 {
                        writeln!(out)?;
                    }
                    writeln!(out, "# {name}")?;
                }
                table.write_csv(&mut out)?;
            }
        }
    }
    Ok(())
}

fn write_raw(args: &Common, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &args.out {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            write(&mut f)?;
            f.flush()?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn law_cmd(args: &Common) -> Result<ExperimentReport> {
    let n_max = args.n_max.unwrap_or(1 << 16);
    let tl = puncture(args.law(n_max)?, args.p)?;
    let rows = args.n_or(1000);
    let mut table = Table::new(&["n", "a_n", "g_n", "tail_a", "tail_g"]);
    for n in 1..=rows {
        table.push(vec![
            n.into(),
            tl.base().mass(n).into(),
            tl.g(n).into(),
            tl.base().tail(n).into(),
            tl.defective_tail(n).into(),
        ]);
    }
    let mut report = ExperimentReport::new("law");
    report.set_meta("truncation_remainder", tl.base().truncation_remainder());
    if let Some(c) = tl.base().c_tail() {
        report.set_meta("c_tail", c);
    }
    report.add_table("law", table);
    Ok(report)
}

fn renewal_cmd(args: &Common) -> Result<Option<ExperimentReport>> {
    let n = args.n_or(1 << 16);
    let tl = puncture(args.law(args.n_max.unwrap_or(n.max(1)))?, args.p)?;
    let rs = renewal_fast(&tl, n)?;
    if args.format() == Format::Csv {
        write_raw(args, |mut w| rs.write_csv(&mut w))?;
        return Ok(None);
    }
    let mut buf = Vec::new();
    rs.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut table = Table::new(&header);
    for line in lines {
        let mut cells = line.split(',');
        let n: usize = cells.next().and_then(|c| c.parse().ok()).unwrap_or_default();
        let mut row = vec![n.into()];
        row.extend(cells.map(|c| c.parse::<f64>().unwrap_or(f64::NAN).into()));
        table.push(row);
    }
    let mut report = ExperimentReport::new("renewal");
    report.set_meta("total_mass", 1.0 / (1.0 - args.p));
    report.add_table("renewal", table);
    Ok(Some(report))
}

fn identity_cmd(args: &Common) -> Result<ExperimentReport> {
    let n = args.n_or(10);
    let law = args.law(args.n_max.unwrap_or(1 << 12))?;
    let table = audit_grid(&law, &[args.p], &[n], n)?;
    let mut report = ExperimentReport::new("identity");
    report.add_table("audit", table);
    report.verdicts.push(Verdict::audit(
        "ratio_identity",
        "lhs against joint_factor x sum_factor, gap reported per row".into(),
    ));
    Ok(report)
}

fn occupation_cmd(args: &Common) -> Result<ExperimentReport> {
    let n = args.n_or(60);
    let law = args.law(args.n_max.unwrap_or(1 << 12))?;
    let conv = sn_distribution(&law, n, n)?;
    let dp = sn_distribution_dp(&law, n, n)?;
    let mut dist = Table::new(&["m", "F_m", "F_m_dp", "pmf"]);
    for m in 0..=n {
        dist.push(vec![m.into(), conv.f[m].into(), dp.f[m].into(), conv.pmf(m).into()]);
    }
    let sim = args.sim();
    let cfg = (args.samples > 0).then_some(&sim);
    let mut report = section5_audit(&law, &[args.p], &[n], &args.t_grid()?, cfg)?;
    report.add_table("distribution", dist);
    Ok(report)
}

fn run(cli: Cli) -> Result<bool> {
    let (name, args) = match &cli.command {
        Command::Law(a) => ("law", a),
        Command::Renewal(a) => ("renewal", a),
        Command::SeriesCheck(a) => ("series-check", a),
        Command::Arcsine(a) => ("arcsine", a),
        Command::Identity(a) => ("identity", a),
        Command::Occupation(a) => ("occupation", a),
        Command::DarlingKac(a) => ("darling-kac", a),
    };
    if !(args.p > 0.0 && args.p < 1.0) && name != "series-check" && name != "darling-kac" {
        return Err(Error::POutOfRange(args.p));
    }
    args.t_grid()?;
    let report = match cli.command {
        Command::Law(ref a) => Some(law_cmd(a)?),
        Command::Renewal(ref a) => renewal_cmd(a)?,
        Command::SeriesCheck(ref a) => Some(series_check_report(a.beta, a.n_max.unwrap_or(1 << 20), a.n_or(100_000))?),
        Command::Arcsine(ref a) => {
            let n_list = if a.n.is_empty() { vec![10_000] } else { a.n.clone() };
            let sim = a.sim();
            let cfg = (a.samples > 0).then_some(&sim);
            Some(arcsine_convergence_report(a.beta, a.p, &n_list, &a.t_grid()?, cfg)?)
        }
        Command::Identity(ref a) => Some(identity_cmd(a)?),
        Command::Occupation(ref a) => Some(occupation_cmd(a)?),
        Command::DarlingKac(ref a) => {
            let samples = if a.samples == 0 { 20_000 } else { a.samples };
            let sim = SimConfig::new(a.seed, samples).with_shards(a.shards());
            let n = a.n_or(1_000_000);
            Some(darling_kac_report(a.beta, n as u64, &sim, a.n_max.unwrap_or(1 << 20))?)
        }
    };
    let Some(mut report) = report else {
        return Ok(true);
    };
    report.set_meta("config", args.config(name));
    emit(&report, args)?;
    for v in &report.verdicts {
        eprintln!("{:?} {}: {}", v.status, v.id, v.detail);
    }
    Ok(report.passed())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::CapacityExceeded { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1:0.9:9").unwrap().len(), 9);
        let g = parse_grid("0:1:5").unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0.5:0.5:1").unwrap(), vec![0.5]);
        for bad in ["0.1:0.9", "a:b:c", "0.9:0.1:3", "0:2:3", "0:1:0"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }
}
