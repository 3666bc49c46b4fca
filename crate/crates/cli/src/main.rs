use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use maxent_rank::domain::{Fixture, League, PointsSystem, TeamId};
use maxent_rank::estimate::{fit, FitConfig, FitError, FittedModel, FrozenStructural, PriorConfig};
use maxent_rank::ingest::{clean, parse_csv, parse_venue, write_audit_csv, write_csv, CleanOutput};
use maxent_rank::model::{interpret_structural, HomeModel, Parameters, StructuralSummary, StructuralValues, TryModel, VariantConfig};
use maxent_rank::rank::{
    build_table, compare_rankings, merit_points, pppm_all, team_records, Method, PrevSeasonRanks, TeamRecord,
};
use maxent_rank::simulate::{recovery_study, SimConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_REJECTED: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_TEAM_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "maxent-rank", version, about = "Rank teams from match results with a maximum-entropy model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Apply the cleaning rules to a results CSV and write the audit log.
    Clean {
        input: PathBuf,
        output: PathBuf,
        audit: PathBuf,
    },
    /// Fit the model to a results CSV and write the fitted model as JSON.
    Fit {
        input: PathBuf,
        model: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Write the PPPM table, and with previous ranks the Merit Points table
    /// and a comparison of the two.
    Rank {
        model: PathBuf,
        input: PathBuf,
        table: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_matches: u32,
        /// CSV with columns team,rank.
        #[arg(long)]
        prev_ranks: Option<PathBuf>,
    },
    /// Simulate seasons from known parameters and refit each one.
    Simulate {
        truth: PathBuf,
        fixtures: PathBuf,
        report: PathBuf,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Summarise what the structural parameters of a model imply.
    Interpret {
        /// Fitted model JSON, or structural values JSON with --structural.
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        structural: bool,
    },
    /// Repeat the run recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct FitArgs {
    /// JSON overriding the default points system.
    #[arg(long)]
    points_system: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    prior_weight: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::OppositionDependent)]
    variant: VariantArg,
    #[arg(long, value_enum, default_value_t = HomeArg::Single)]
    home_model: HomeArg,
    /// JSON with any of rho_n, rho_d, tau_b, tau_z, kappa held fixed.
    #[arg(long)]
    freeze_structural: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    OppositionDependent,
    OppositionIndependent,
    OffensiveDefensive,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum HomeArg {
    Single,
    TeamSpecific,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    subcommand: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_config: Option<FitConfig>,
    points: PointsSystem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    command: Command,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthTeam {
    name: String,
    strength: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Truth {
    teams: Vec<TruthTeam>,
    rho_n: f64,
    rho_d: f64,
    tau_b: f64,
    tau_z: f64,
    kappa: f64,
}

#[derive(Deserialize)]
struct FixtureRow {
    home_team: String,
    away_team: String,
    venue: String,
}

#[derive(Deserialize)]
struct PrevRankRow {
    team: String,
    rank: u32,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_manifest(primary: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m)? + "\n";
    write_file(&sibling(primary, ".manifest.json"), &text)
}

impl FitArgs {
    fn points(&self) -> Result<PointsSystem> {
        let ps = match &self.points_system {
            Some(p) => read_json::<PointsSystem>(p)?,
            None => PointsSystem::default(),
        };
        ps.validate()?;
        Ok(ps)
    }

    fn config(&self) -> Result<FitConfig> {
        let freeze = match &self.freeze_structural {
            Some(p) => read_json::<FrozenStructural>(p)?,
            None => FrozenStructural::default(),
        };
        let try_model = match self.variant {
            VariantArg::OppositionDependent => TryModel::OppositionDependent,
            VariantArg::OppositionIndependent => TryModel::OppositionIndependent,
            VariantArg::OffensiveDefensive => TryModel::OffensiveDefensive,
        };
        let home_model = match self.home_model {
            HomeArg::Single => HomeModel::SingleKappa,
            HomeArg::TeamSpecific => HomeModel::TeamSpecific,
        };
        let cfg = FitConfig {
            points: self.points()?,
            variant: VariantConfig { try_model, home_model },
            prior: PriorConfig::with_weight(self.prior_weight),
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            freeze,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn absolutize(&mut self) -> Result<()> {
        if let Some(p) = &self.points_system {
            self.points_system = Some(absolute(p)?);
        }
        if let Some(p) = &self.freeze_structural {
            self.freeze_structural = Some(absolute(p)?);
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.points_system.iter().chain(&self.freeze_structural).cloned().collect()
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Clean { .. } => "clean",
            Command::Fit { .. } => "fit",
            Command::Rank { .. } => "rank",
            Command::Simulate { .. } => "simulate",
            Command::Interpret { .. } => "interpret",
            Command::Rerun { .. } => "rerun",
        }
    }

    /// Same command with every path made absolute, for the manifest.
    fn absolutized(&self) -> Result<Command> {
        let mut c = self.clone();
        match &mut c {
            Command::Clean { input, output, audit } => {
                *input = absolute(input)?;
                *output = absolute(output)?;
                *audit = absolute(audit)?;
            }
            Command::Fit { input, model, fit } => {
                *input = absolute(input)?;
                *model = absolute(model)?;
                fit.absolutize()?;
            }
            Command::Rank { model, input, table, prev_ranks, .. } => {
                *model = absolute(model)?;
                *input = absolute(input)?;
                *table = absolute(table)?;
                if let Some(p) = prev_ranks {
                    *p = absolute(p)?;
                }
            }
            Command::Simulate { truth, fixtures, report, fit, .. } => {
                *truth = absolute(truth)?;
                *fixtures = absolute(fixtures)?;
                *report = absolute(report)?;
                fit.absolutize()?;
            }
            Command::Interpret { input, output, .. } => {
                *input = absolute(input)?;
                *output = absolute(output)?;
            }
            Command::Rerun { .. } => {}
        }
        Ok(c)
    }

    fn manifest(&self, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<RunManifest> {
        let (fit_config, points, seed) = match self {
            Command::Fit { fit, .. } => (Some(fit.config()?), fit.points()?, None),
            Command::Simulate { fit, seed, .. } => (Some(fit.config()?), fit.points()?, Some(*seed)),
            _ => (None, PointsSystem::default(), None),
        };
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: self.name().to_string(),
            inputs: inputs.iter().map(|p| absolute(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| absolute(p)).collect::<Result<_>>()?,
            fit_config,
            points,
            seed,
            command: self.absolutized()?,
        })
    }
}

fn read_clean(input: &Path) -> Result<CleanOutput> {
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let rows = parse_csv(file).with_context(|| format!("parsing {}", input.display()))?;
    Ok(clean(&rows))
}

fn report_rejections(out: &CleanOutput) -> bool {
    for r in &out.rejected {
        eprintln!("rejected row {}: {}", r.row, r.reason);
    }
    !out.rejected.is_empty()
}

fn print_summary(label: &str, s: &StructuralSummary) {
    println!(
        "  {label}: wide {:.3}, narrow {:.3}, draw {:.3}; home win {:.3}, away win {:.3} (ratio {:.2}); \
         both bonus {:.4}, zero bonus {:.3}; expected points {:.2} v {:.2}",
        s.wide,
        s.narrow,
        s.draw,
        s.home_win,
        s.away_win,
        s.home_away_win_ratio,
        s.both_bonus,
        s.zero_bonus,
        s.expected_home_points,
        s.expected_away_points
    );
}

fn cmd_clean(cmd: &Command, input: &Path, output: &Path, audit: &Path) -> Result<u8> {
    let out = read_clean(input)?;
    write_file(output, &write_csv(&out.rows)?)?;
    write_file(audit, &write_audit_csv(&out.actions)?)?;
    write_manifest(output, &cmd.manifest(vec![input.into()], vec![output.into(), audit.into()])?)?;
    println!(
        "{} rows kept, {} cleaning actions, {} rows rejected",
        out.rows.len(),
        out.actions.len(),
        out.rejected.len()
    );
    Ok(if report_rejections(&out) { EXIT_REJECTED } else { 0 })
}

fn cmd_fit(cmd: &Command, input: &Path, model: &Path, args: &FitArgs) -> Result<u8> {
    let cfg = args.config()?;
    let out = read_clean(input)?;
    if report_rejections(&out) {
        return Ok(EXIT_REJECTED);
    }
    if !out.actions.is_empty() {
        eprintln!("{} cleaning actions applied; run `clean` to review them", out.actions.len());
    }
    let league = out.league;
    let fm = match fit(&league.counts(&cfg.points), &cfg) {
        Ok(fm) => fm.with_teams(league.teams.clone()),
        Err(FitError::NonConvergence { diagnosis, iterations, gradient_norm, .. }) => {
            eprintln!(
                "fit did not converge after {iterations} iterations (max gradient {gradient_norm:.3e}): {}",
                diagnosis.describe(&league.teams)
            );
            return Ok(EXIT_NOT_CONVERGED);
        }
        Err(e) => {
            eprintln!("fit failed: {}", describe_fit_error(&e, &league.teams));
            return Ok(EXIT_NOT_CONVERGED);
        }
    };
    write_file(model, &(serde_json::to_string_pretty(&fm)? + "\n"))?;
    let mut inputs = vec![input.to_path_buf()];
    inputs.extend(args.inputs());
    write_manifest(model, &cmd.manifest(inputs, vec![model.into()])?)?;

    let r = &fm.report;
    println!(
        "converged in {} iterations; log-likelihood {:.6}; max gradient {:.2e}",
        r.iterations, r.log_likelihood, r.gradient_norm
    );
    let l = &fm.levels;
    print!("rho_n {:.4}, rho_d {:.4}", l.rho_n, l.rho_d);
    for (name, v) in [("tau_b", l.tau_b), ("tau_z", l.tau_z), ("tau", l.tau), ("kappa", l.kappa)] {
        if let Some(v) = v {
            print!(", {name} {v:.4}");
        }
    }
    println!();
    let interp = interpret_structural(&fm.parameters);
    print_summary("at home", &interp.with_home_advantage);
    print_summary("neutral", &interp.neutral);
    Ok(0)
}

fn describe_fit_error(e: &FitError, names: &[String]) -> String {
    let name = |t: &TeamId| names.get(t.0).cloned().unwrap_or_else(|| t.to_string());
    match e {
        FitError::TeamWithoutMatches(t) => {
            format!("team {} has no matches and there is no prior; supply a prior weight", name(t))
        }
        other => other.to_string(),
    }
}

/// Position in `model_teams` of every team in `league`, or `None` if the two
/// sets of teams differ.
fn align_teams(model_teams: &[String], league: &League) -> Option<Vec<usize>> {
    let a: BTreeSet<&String> = model_teams.iter().collect();
    let b: BTreeSet<&String> = league.teams.iter().collect();
    if a != b || a.len() != model_teams.len() {
        return None;
    }
    Some(league.teams.iter().map(|t| model_teams.iter().position(|m| m == t).unwrap()).collect())
}

fn cmd_rank(
    cmd: &Command,
    model: &Path,
    input: &Path,
    table: &Path,
    min_matches: u32,
    prev_ranks: Option<&Path>,
) -> Result<u8> {
    let fm: FittedModel = read_json(model)?;
    fm.parameters.validate().context("model parameters")?;
    let out = read_clean(input)?;
    if report_rejections(&out) {
        return Ok(EXIT_REJECTED);
    }
    let league = out.league;
    let Some(pos) = align_teams(&fm.teams, &league) else {
        let a: BTreeSet<&String> = fm.teams.iter().collect();
        let b: BTreeSet<&String> = league.teams.iter().collect();
        let only_model: Vec<_> = a.difference(&b).collect();
        let only_data: Vec<_> = b.difference(&a).collect();
        eprintln!("teams differ between model and results: only in model {only_model:?}, only in results {only_data:?}");
        return Ok(EXIT_TEAM_MISMATCH);
    };
    let n = fm.teams.len();
    let ps = fm.points;
    let by_league = team_records(&league.matches, n, &ps);
    let mut records = vec![TeamRecord::default(); n];
    for (l, &m) in pos.iter().enumerate() {
        records[m] = by_league[l];
    }
    let ratings = pppm_all(&fm.parameters)?;
    let pppm_table = build_table(&fm.teams, &ratings, &records, Method::Pppm, min_matches)?;
    write_file(table, &pppm_table.to_csv()?)?;
    let mut inputs = vec![model.to_path_buf(), input.to_path_buf()];
    let mut outputs = vec![table.to_path_buf()];

    println!("PPPM table, {} teams ({} ranked)", n, pppm_table.rows.iter().filter(|r| r.is_ranked()).count());
    for r in &pppm_table.rows {
        let rank = r.rank.map(|k| k.to_string()).unwrap_or_else(|| "NR".into());
        println!("  {rank:>3} {:<24} {:.3}  P{} W{} D{} L{}  LPPM {:.2}", r.team, r.rating, r.played, r.won, r.drawn, r.lost, r.lppm);
    }

    if let Some(prev_path) = prev_ranks {
        let mut reader = csv::Reader::from_path(prev_path).with_context(|| format!("opening {}", prev_path.display()))?;
        let mut prev = BTreeMap::new();
        for row in reader.deserialize::<PrevRankRow>() {
            let row = row.with_context(|| format!("parsing {}", prev_path.display()))?;
            prev.insert(row.team, row.rank);
        }
        let prev = PrevSeasonRanks(prev);
        let mut merit = vec![0.0; n];
        for (l, &m) in pos.iter().enumerate() {
            merit[m] = if records[m].played == 0 { 0.0 } else { merit_points(&league, TeamId(l), &prev, &ps)? };
        }
        let merit_table = build_table(&fm.teams, &merit, &records, Method::MeritPoints, min_matches)?;
        let comparison = compare_rankings(&pppm_table, &merit_table)?;
        let merit_path = sibling(table, ".merit.csv");
        let cmp_path = sibling(table, ".comparison.csv");
        write_file(&merit_path, &merit_table.to_csv()?)?;
        write_file(&cmp_path, &comparison.to_csv()?)?;
        inputs.push(prev_path.to_path_buf());
        outputs.extend([merit_path, cmp_path]);
        println!(
            "mean absolute rank difference between PPPM and Merit Points: {:.2} over {} teams",
            comparison.mean_abs_rank_diff,
            comparison.rows.len()
        );
    }
    write_manifest(table, &cmd.manifest(inputs, outputs)?)?;
    Ok(0)
}

fn cmd_simulate(
    cmd: &Command,
    truth_path: &Path,
    fixtures_path: &Path,
    report: &Path,
    replicates: usize,
    seed: u64,
    args: &FitArgs,
) -> Result<u8> {
    let cfg = args.config()?;
    let truth: Truth = read_json(truth_path)?;
    let names: Vec<String> = truth.teams.iter().map(|t| t.name.clone()).collect();
    let strengths: Vec<f64> = truth.teams.iter().map(|t| t.strength).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        bail!("{}: duplicate team names", truth_path.display());
    }
    let structural = StructuralValues {
        rho_n: truth.rho_n,
        rho_d: truth.rho_d,
        tau_b: truth.tau_b,
        tau_z: truth.tau_z,
        kappa: truth.kappa,
    };
    let mut params = Parameters::from_levels(&strengths, &structural)
        .with_context(|| format!("invalid truth in {}", truth_path.display()))?;
    params.spec.points = cfg.points;

    let mut reader =
        csv::Reader::from_path(fixtures_path).with_context(|| format!("opening {}", fixtures_path.display()))?;
    let mut fixtures = Vec::new();
    for (k, row) in reader.deserialize::<FixtureRow>().enumerate() {
        let row = row.with_context(|| format!("parsing {}", fixtures_path.display()))?;
        let id = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .map(TeamId)
                .with_context(|| format!("fixture {}: unknown team {name:?}", k + 1))
        };
        let venue = parse_venue(&row.venue).with_context(|| format!("fixture {}: unknown venue {:?}", k + 1, row.venue))?;
        let (home, away) = (id(&row.home_team)?, id(&row.away_team)?);
        if home == away {
            bail!("fixture {}: team plays itself", k + 1);
        }
        fixtures.push(Fixture { home, away, venue });
    }
    if fixtures.is_empty() {
        bail!("{}: no fixtures", fixtures_path.display());
    }

    let rep = recovery_study(&params, &fixtures, &SimConfig { seed, replicates }, &cfg);
    write_file(report, &rep.to_csv()?)?;
    let mut inputs = vec![truth_path.to_path_buf(), fixtures_path.to_path_buf()];
    inputs.extend(args.inputs());
    write_manifest(report, &cmd.manifest(inputs, vec![report.into()])?)?;

    println!("{} replicates, seed {seed}; {} did not converge", replicates, rep.non_convergent);
    for s in rep.summaries.iter().filter(|s| !s.name.starts_with("strength")) {
        match s.median {
            Some(m) => println!("  {:<6} truth {:.4}  median {:.4}", s.name, s.truth, m),
            None => println!("  {:<6} truth {:.4}  no converged fits", s.name, s.truth),
        }
    }
    if let Some(r) = rep.median_spearman {
        println!("  median Spearman correlation of strengths {r:.3}");
    }
    for r in rep.replicates.iter().filter(|r| !r.converged) {
        eprintln!("replicate {}: {}", r.replicate, r.error.as_deref().unwrap_or("did not converge"));
    }
    Ok(if rep.non_convergent > 0 { EXIT_NOT_CONVERGED } else { 0 })
}

fn cmd_interpret(cmd: &Command, input: &Path, output: &Path, structural: bool) -> Result<u8> {
    let params = if structural {
        let v: StructuralValues = read_json(input)?;
        Parameters::from_levels(&[1.0], &v).context("invalid structural values")?
    } else {
        read_json::<FittedModel>(input)?.parameters
    };
    params.validate().context("model parameters")?;
    let interp = interpret_structural(&params);
    write_file(output, &(serde_json::to_string_pretty(&interp)? + "\n"))?;
    write_manifest(output, &cmd.manifest(vec![input.into()], vec![output.into()])?)?;
    print_summary("at home", &interp.with_home_advantage);
    print_summary("neutral", &interp.neutral);
    Ok(0)
}

fn run(cmd: &Command) -> Result<u8> {
    match cmd {
        Command::Clean { input, output, audit } => cmd_clean(cmd, input, output, audit),
        Command::Fit { input, model, fit } => cmd_fit(cmd, input, model, fit),
        Command::Rank { model, input, table, min_matches, prev_ranks } => {
            cmd_rank(cmd, model, input, table, *min_matches, prev_ranks.as_deref())
        }
        Command::Simulate { truth, fixtures, report, replicates, seed, fit } => {
            cmd_simulate(cmd, truth, fixtures, report, *replicates, *seed, fit)
        }
        Command::Interpret { input, output, structural } => cmd_interpret(cmd, input, output, *structural),
        Command::Rerun { manifest } => {
            let m: RunManifest = read_json(manifest)?;
            if matches!(m.command, Command::Rerun { .. }) {
                bail!("{}: manifest records a rerun", manifest.display());
            }
            run(&m.command)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
