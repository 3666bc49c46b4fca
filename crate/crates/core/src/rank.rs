//! Ratings and tables: projected points per match, league points per match,
//! Merit Points, and comparisons between rankings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Fixture, League, MatchRecord, PointsSystem, Side, TeamId, Venue};
use crate::model::Parameters;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("need at least two teams, got {0}")]
    TooFewTeams(usize),
    #[error("team {0} has no matches")]
    NoMatches(TeamId),
    #[error("team {0} is out of range")]
    UnknownTeam(TeamId),
    #[error("ratings cover {ratings} teams, records {records}")]
    LengthMismatch { ratings: usize, records: usize },
    #[error("the two tables share no ranked team")]
    EmptyIntersection,
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Expected points per match for `team` over a full home-and-away schedule
/// against every other team in the model.
pub fn pppm(params: &Parameters, team: TeamId) -> Result<f64, RankError> {
    let m = params.n_teams();
    if m < 2 {
        return Err(RankError::TooFewTeams(m));
    }
    if team.0 >= m {
        return Err(RankError::UnknownTeam(team));
    }
    let mut total = 0.0;
    for j in (0..m).filter(|&j| j != team.0) {
        let home = Fixture { home: team, away: TeamId(j), venue: Venue::HomeGround };
        let away = Fixture { home: TeamId(j), away: team, venue: Venue::HomeGround };
        total += params.expected_points(&home).0 + params.expected_points(&away).1;
    }
    Ok(total / (2 * (m - 1)) as f64)
}

pub fn pppm_all(params: &Parameters) -> Result<Vec<f64>, RankError> {
    (0..params.n_teams()).map(|i| pppm(params, TeamId(i))).collect()
}

/// Playing record of one team.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamRecord {
    pub played: u32,
    pub won: u32,
    pub drawn: u32,
    pub lost: u32,
    pub points: i64,
}

impl TeamRecord {
    pub fn lppm(&self) -> Option<f64> {
        (self.played > 0).then(|| self.points as f64 / f64::from(self.played))
    }
}

pub fn team_records(matches: &[MatchRecord], n_teams: usize, ps: &PointsSystem) -> Vec<TeamRecord> {
    let mut out = vec![TeamRecord::default(); n_teams];
    for m in matches {
        let o = m.outcome(ps);
        let (ph, pa) = o.points(ps);
        for (team, side, pts) in [(m.home, Side::Home, ph), (m.away, Side::Away, pa)] {
            let r = &mut out[team.0];
            r.played += 1;
            r.points += i64::from(pts);
            match o.result.winner() {
                None => r.drawn += 1,
                Some(w) if w == side => r.won += 1,
                Some(_) => r.lost += 1,
            }
        }
    }
    out
}

/// League points per match, bonuses included.
pub fn lppm(matches: &[MatchRecord], team: TeamId, ps: &PointsSystem) -> Result<f64, RankError> {
    let n = matches.iter().map(|m| m.home.0.max(m.away.0) + 1).max().unwrap_or(0).max(team.0 + 1);
    team_records(matches, n, ps)[team.0].lppm().ok_or(RankError::NoMatches(team))
}

/// Previous-season rank by team name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevSeasonRanks(pub BTreeMap<String, u32>);

impl PrevSeasonRanks {
    pub fn get(&self, team: &str) -> Option<u32> {
        self.0.get(team).copied()
    }
}

/// Additional points, in tenths, for one opponent of the given previous-season rank.
pub fn additional_tenths(prev_rank: Option<u32>) -> u32 {
    match prev_rank {
        Some(1..=25) => 3,
        Some(26..=50) => 2,
        Some(51..=75) => 1,
        _ => 0,
    }
}

/// LPPM plus the additional points for the listed opponents.
pub fn merit_from_lppm(lppm: f64, opponent_ranks: &[Option<u32>]) -> f64 {
    let tenths: u32 = opponent_ranks.iter().map(|&r| additional_tenths(r)).sum();
    (lppm * 10.0 + f64::from(tenths)) / 10.0
}

/// Merit Points of `team`: LPPM plus additional points summed over its
/// opponents in `league`.
pub fn merit_points(
    league: &League,
    team: TeamId,
    prev: &PrevSeasonRanks,
    ps: &PointsSystem,
) -> Result<f64, RankError> {
    if team.0 >= league.teams.len() {
        return Err(RankError::UnknownTeam(team));
    }
    let rec = team_records(&league.matches, league.teams.len(), ps)[team.0];
    if rec.played == 0 {
        return Err(RankError::NoMatches(team));
    }
    let tenths: u32 = league
        .matches
        .iter()
        .filter(|m| m.involves(team))
        .map(|m| {
            let opp = if m.home == team { m.away } else { m.home };
            additional_tenths(prev.get(league.name(opp)))
        })
        .sum();
    // one rounding: (points + tenths * played / 10) / played
    let played = f64::from(rec.played);
    Ok((rec.points as f64 * 10.0 + f64::from(tenths) * played) / (10.0 * played))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Pppm,
    MeritPoints,
    Lppm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub team: String,
    pub rating: f64,
    /// `None` for teams below the match threshold (NR).
    pub rank: Option<u32>,
    pub played: u32,
    pub won: u32,
    pub drawn: u32,
    pub lost: u32,
    pub lppm: f64,
}

impl TableRow {
    pub fn is_ranked(&self) -> bool {
        self.rank.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub method: Method,
    pub min_matches: u32,
    pub rows: Vec<TableRow>,
}

fn tied(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Sorts by rating (stable) and assigns competition ranks ("1224") to teams
/// with at least `min_matches` matches; the rest stay in the table as NR.
pub fn build_table(
    names: &[String],
    ratings: &[f64],
    records: &[TeamRecord],
    method: Method,
    min_matches: u32,
) -> Result<RankingTable, RankError> {
    if ratings.len() != records.len() || names.len() != records.len() {
        return Err(RankError::LengthMismatch { ratings: ratings.len(), records: records.len() });
    }
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    order.sort_by(|&a, &b| ratings[b].total_cmp(&ratings[a]));
    let mut rows = Vec::with_capacity(order.len());
    let mut ranked = 0u32;
    let mut last: Option<(f64, u32)> = None;
    for i in order {
        let r = &records[i];
        let rank = if r.played >= min_matches {
            ranked += 1;
            let rank = match last {
                Some((prev, rank)) if tied(prev, ratings[i]) => rank,
                _ => ranked,
            };
            last = Some((ratings[i], rank));
            Some(rank)
        } else {
            None
        };
        rows.push(TableRow {
            team: names[i].clone(),
            rating: ratings[i],
            rank,
            played: r.played,
            won: r.won,
            drawn: r.drawn,
            lost: r.lost,
            lppm: r.lppm().unwrap_or(0.0),
        });
    }
    Ok(RankingTable { method, min_matches, rows })
}

impl RankingTable {
    pub fn row(&self, team: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.team == team)
    }

    /// CSV with columns team, rating, rank, P, W, D, L, LPPM, flags.
    pub fn to_csv(&self) -> Result<String, RankError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| RankError::Csv(e.to_string());
        w.write_record(["team", "rating", "rank", "P", "W", "D", "L", "LPPM", "flags"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.team.clone(),
                format!("{:.6}", r.rating),
                r.rank.map(|k| k.to_string()).unwrap_or_default(),
                r.played.to_string(),
                r.won.to_string(),
                r.drawn.to_string(),
                r.lost.to_string(),
                format!("{:.2}", r.lppm),
                if r.is_ranked() { String::new() } else { "NR".to_string() },
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| RankError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub team: String,
    pub rank_a: u32,
    pub rank_b: u32,
    /// rank_b - rank_a
    pub rank_diff: i64,
    pub rating_a: f64,
    pub rating_b: f64,
    /// Rating minus LPPM under each method.
    pub adjustment_a: f64,
    pub adjustment_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: Method,
    pub method_b: Method,
    pub rows: Vec<ComparisonRow>,
    pub mean_abs_rank_diff: f64,
}

/// Rank differences over the teams ranked in both tables, in the order of `a`.
pub fn compare_rankings(a: &RankingTable, b: &RankingTable) -> Result<Comparison, RankError> {
    let rows: Vec<ComparisonRow> = a
        .rows
        .iter()
        .filter_map(|ra| {
            let rb = b.row(&ra.team)?;
            let (ka, kb) = (ra.rank?, rb.rank?);
            Some(ComparisonRow {
                team: ra.team.clone(),
                rank_a: ka,
                rank_b: kb,
                rank_diff: i64::from(kb) - i64::from(ka),
                rating_a: ra.rating,
                rating_b: rb.rating,
                adjustment_a: ra.rating - ra.lppm,
                adjustment_b: rb.rating - rb.lppm,
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(RankError::EmptyIntersection);
    }
    let total: i64 = rows.iter().map(|r| r.rank_diff.abs()).sum();
    let mean_abs_rank_diff = total as f64 / rows.len() as f64;
    Ok(Comparison { method_a: a.method, method_b: b.method, rows, mean_abs_rank_diff })
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String, RankError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| RankError::Csv(e.to_string());
        w.write_record(["team", "rank_a", "rank_b", "rank_diff", "rating_a", "rating_b", "adjustment_a", "adjustment_b"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.team.clone(),
                r.rank_a.to_string(),
                r.rank_b.to_string(),
                r.rank_diff.to_string(),
                format!("{:.6}", r.rating_a),
                format!("{:.6}", r.rating_b),
                format!("{:.6}", r.adjustment_a),
                format!("{:.6}", r.adjustment_b),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| RankError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
