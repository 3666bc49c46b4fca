//! Browser demo: explore the outcome distribution of one match, fit a league
//! pasted as CSV, and sweep the prior weight.
//!
//! Every operation takes and returns JSON strings. The plain functions are
//! testable natively; the `#[wasm_bindgen]` wrappers turn errors into
//! JavaScript exceptions.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use maxent_rank::domain::{Fixture, League, PointsSystem, TeamId, Venue};
use maxent_rank::estimate::{fit, FitConfig, FitError, PriorConfig};
use maxent_rank::ingest::{clean, parse_csv};
use maxent_rank::model::{Parameters, StructuralValues};
use maxent_rank::rank::{build_table, pppm_all, team_records, Method};

#[derive(Deserialize)]
struct MatchQuery {
    home_strength: f64,
    away_strength: f64,
    neutral: bool,
    #[serde(flatten)]
    structural: StructuralValues,
}

#[derive(Serialize)]
struct MatchView {
    /// Home wide, home narrow, draw, away narrow, away wide.
    result: Vec<f64>,
    /// Both bonus, home only, away only, neither.
    tries: Vec<f64>,
    expected_points: [f64; 2],
}

#[derive(Serialize)]
struct TeamView {
    team: String,
    rank: Option<u32>,
    pppm: f64,
    strength: f64,
    played: u32,
    won: u32,
    drawn: u32,
    lost: u32,
    lppm: f64,
}

#[derive(Serialize)]
struct LeagueView {
    teams: Vec<TeamView>,
    structural: StructuralValues,
    iterations: usize,
    cleaning_actions: usize,
    rejected_rows: Vec<usize>,
}

#[derive(Serialize)]
struct SweepView {
    weights: Vec<f64>,
    teams: Vec<String>,
    /// `pppm[k][i]`: team `i` at `weights[k]`; `null` where the fit failed.
    pppm: Vec<Option<Vec<f64>>>,
}

/// Outcome probabilities for one match between teams of the given strengths.
pub fn explore_outcomes(query: &str) -> Result<String, String> {
    let q: MatchQuery = serde_json::from_str(query).map_err(|e| e.to_string())?;
    let p = Parameters::from_levels(&[q.home_strength, q.away_strength], &q.structural).map_err(|e| e.to_string())?;
    let venue = if q.neutral { Venue::Neutral } else { Venue::HomeGround };
    let fixture = Fixture { home: TeamId(0), away: TeamId(1), venue };
    let d = p.distribution(&fixture);
    let (h, a) = p.expected_points(&fixture);
    let view = MatchView { result: d.result.to_vec(), tries: d.tries.to_vec(), expected_points: [h, a] };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn load(csv: &str) -> Result<(League, usize, Vec<usize>), String> {
    let rows = parse_csv(csv.as_bytes()).map_err(|e| e.to_string())?;
    let out = clean(&rows);
    let rejected = out.rejected.iter().map(|r| r.row).collect();
    if out.league.matches.is_empty() {
        return Err("no usable matches".into());
    }
    Ok((out.league, out.actions.len(), rejected))
}

fn fit_error(e: FitError, names: &[String]) -> String {
    match e {
        FitError::NonConvergence { diagnosis, .. } => diagnosis.describe(names),
        e => e.to_string(),
    }
}

/// Cleans and fits a results CSV and returns the PPPM table.
pub fn fit_league(csv: &str, prior_weight: f64, min_matches: u32) -> Result<String, String> {
    let (league, cleaning_actions, rejected_rows) = load(csv)?;
    let ps = PointsSystem::default();
    let cfg = FitConfig { prior: PriorConfig::with_weight(prior_weight), ..Default::default() };
    let fm = fit(&league.counts(&ps), &cfg).map_err(|e| fit_error(e, &league.teams))?;
    let ratings = pppm_all(&fm.parameters).map_err(|e| e.to_string())?;
    let records = team_records(&league.matches, league.teams.len(), &ps);
    let table = build_table(&league.teams, &ratings, &records, Method::Pppm, min_matches).map_err(|e| e.to_string())?;
    let strengths = fm.parameters.strengths();
    let teams = table
        .rows
        .into_iter()
        .map(|r| {
            let id = league.team_id(&r.team).expect("table rows come from the league");
            TeamView {
                strength: strengths[id.0],
                team: r.team,
                rank: r.rank,
                pppm: r.rating,
                played: r.played,
                won: r.won,
                drawn: r.drawn,
                lost: r.lost,
                lppm: r.lppm,
            }
        })
        .collect();
    let p = &fm.parameters;
    let view = LeagueView {
        teams,
        structural: StructuralValues {
            rho_n: p.rho_n(),
            rho_d: p.rho_d(),
            tau_b: p.tau_b(),
            tau_z: p.tau_z(),
            kappa: p.kappa(),
        },
        iterations: fm.report.iterations,
        cleaning_actions,
        rejected_rows,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// PPPM of every team at each prior weight in `weights` (a JSON array).
pub fn prior_sweep(csv: &str, weights: &str) -> Result<String, String> {
    let weights: Vec<f64> = serde_json::from_str(weights).map_err(|e| e.to_string())?;
    let (league, _, _) = load(csv)?;
    let counts = league.counts(&PointsSystem::default());
    let pppm = weights
        .iter()
        .map(|&w| {
            let cfg = FitConfig { prior: PriorConfig::with_weight(w), ..Default::default() };
            fit(&counts, &cfg).ok().and_then(|fm| pppm_all(&fm.parameters).ok())
        })
        .collect();
    serde_json::to_string(&SweepView { weights, teams: league.teams, pppm }).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = exploreOutcomes)]
pub fn explore_outcomes_js(query: &str) -> Result<String, JsError> {
    explore_outcomes(query).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fitLeague)]
pub fn fit_league_js(csv: &str, prior_weight: f64, min_matches: u32) -> Result<String, JsError> {
    fit_league(csv, prior_weight, min_matches).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = priorSweep)]
pub fn prior_sweep_js(csv: &str, weights: &str) -> Result<String, JsError> {
    prior_sweep(csv, weights).map_err(|e| JsError::new(&e))
}
