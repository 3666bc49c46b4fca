//! Outcome probabilities for the multi-outcome Bradley-Terry family.
//!
//! Every outcome cell has a log-weight that is linear in the log-parameters:
//! a side earning `a` league points carries its log-strength with coefficient
//! `a`, structural parameters enter as offsets, and home advantage enters
//! with coefficient `a - b`. Cells are normalised per block (five result
//! cells, four try cells) with a max-shifted exponential sum, so strengths
//! far apart never overflow.
//!
//! The cell layout is written once as [`Slot`] coefficients; both this module
//! and the estimator evaluate the same templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    league_points, Fixture, PointsSystem, ResultOutcome, TeamId, TryOutcome, Venue,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("weight overflow: level-form weights are not finite, evaluate in the log domain")]
    Overflow,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no positive scale gives generalized mean 1: {0}")]
    NoRoot(String),
    #[error("strength of team {0} is infinite; the arithmetic mean is undefined, use the generalized mean")]
    InfiniteStrength(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TryModel {
    /// Four-way try outcome with both/zero-bonus propensities.
    #[default]
    OppositionDependent,
    /// Each side earns its bonus independently, with a single propensity.
    OppositionIndependent,
    /// Per-team defensive strength; offensive strength is strength / defence.
    OffensiveDefensive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HomeModel {
    #[default]
    SingleKappa,
    /// Separate home and away strengths per team, no shared home parameter.
    TeamSpecific,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantConfig {
    pub try_model: TryModel,
    pub home_model: HomeModel,
}

/// Everything about a model except its parameter values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub points: PointsSystem,
    pub variant: VariantConfig,
}

/// Named places a log-parameter can occupy in a cell's log-weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    HomeStrength,
    AwayStrength,
    HomeDelta,
    AwayDelta,
    RhoN,
    RhoD,
    TauB,
    TauZ,
    Tau,
    Kappa,
}

const N_SLOTS: usize = 10;

pub(crate) type CellTerms = Vec<(Slot, f64)>;

impl ModelSpec {
    /// Log-weight templates for the five result cells, in [`ResultOutcome::ALL`] order.
    pub(crate) fn result_template(&self, venue: Venue) -> Vec<CellTerms> {
        let home_adv = venue == Venue::HomeGround && self.variant.home_model == HomeModel::SingleKappa;
        ResultOutcome::ALL
            .iter()
            .map(|&r| {
                let (ph, pa) = r.points(&self.points);
                let (ph, pa) = (f64::from(ph), f64::from(pa));
                let mut terms = vec![(Slot::HomeStrength, ph), (Slot::AwayStrength, pa)];
                match r {
                    ResultOutcome::HomeNarrow | ResultOutcome::AwayNarrow => terms.push((Slot::RhoN, 1.0)),
                    ResultOutcome::Draw => terms.push((Slot::RhoD, 1.0)),
                    _ => {}
                }
                if home_adv && ph != pa {
                    terms.push((Slot::Kappa, ph - pa));
                }
                terms
            })
            .collect()
    }

    /// Log-weight templates for the four try cells, in [`TryOutcome::ALL`] order.
    pub(crate) fn try_template(&self, venue: Venue) -> Vec<CellTerms> {
        let home_adv = venue == Venue::HomeGround && self.variant.home_model == HomeModel::SingleKappa;
        TryOutcome::ALL
            .iter()
            .map(|&t| {
                let (a, b) = t.points();
                let (a, b) = (f64::from(a), f64::from(b));
                let mut terms = vec![(Slot::HomeStrength, a), (Slot::AwayStrength, b)];
                match self.variant.try_model {
                    TryModel::OppositionDependent => match t {
                        TryOutcome::BothBonus => terms.push((Slot::TauB, 1.0)),
                        TryOutcome::ZeroBonus => terms.push((Slot::TauZ, 1.0)),
                        _ => {}
                    },
                    TryModel::OppositionIndependent => terms.push((Slot::Tau, a + b)),
                    TryModel::OffensiveDefensive => {
                        // omega^a delta^(1-b) per side with omega = pi / delta
                        terms.push((Slot::HomeDelta, (1.0 - b) - a));
                        terms.push((Slot::AwayDelta, (1.0 - a) - b));
                    }
                }
                if home_adv && a != b {
                    terms.push((Slot::Kappa, a - b));
                }
                terms.retain(|&(_, c)| c != 0.0);
                terms
            })
            .collect()
    }
}

/// Structural parameters in log form. Entries the variant does not use stay at 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Structural {
    pub log_rho_n: f64,
    pub log_rho_d: f64,
    pub log_tau_b: f64,
    pub log_tau_z: f64,
    pub log_tau: f64,
    pub log_kappa: f64,
}

/// Structural parameters in level form, as read from or written to files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralValues {
    pub rho_n: f64,
    pub rho_d: f64,
    pub tau_b: f64,
    pub tau_z: f64,
    pub kappa: f64,
}

impl StructuralValues {
    pub const UNIT: StructuralValues =
        StructuralValues { rho_n: 1.0, rho_d: 1.0, tau_b: 1.0, tau_z: 1.0, kappa: 1.0 };

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.rho_n, self.rho_d, self.tau_b, self.tau_z, self.kappa];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(
                "structural parameters must be positive and finite".into(),
            ))
        }
    }

    pub fn to_log(&self) -> Structural {
        Structural {
            log_rho_n: self.rho_n.ln(),
            log_rho_d: self.rho_d.ln(),
            log_tau_b: self.tau_b.ln(),
            log_tau_z: self.tau_z.ln(),
            log_tau: 0.0,
            log_kappa: self.kappa.ln(),
        }
    }
}

impl Structural {
    pub fn values(&self) -> StructuralValues {
        StructuralValues {
            rho_n: self.log_rho_n.exp(),
            rho_d: self.log_rho_d.exp(),
            tau_b: self.log_tau_b.exp(),
            tau_z: self.log_tau_z.exp(),
            kappa: self.log_kappa.exp(),
        }
    }
}

/// Team-level quantities for one side of a match.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TeamSide {
    /// Effective log-strength for this match (home or away strength under
    /// the team-specific home model).
    pub log_strength: f64,
    /// Log defensive strength; only read by the offensive-defensive model.
    pub log_delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matchup {
    pub home: TeamSide,
    pub away: TeamSide,
    pub venue: Venue,
}

impl Matchup {
    pub fn new(home_log_strength: f64, away_log_strength: f64, venue: Venue) -> Self {
        Self {
            home: TeamSide { log_strength: home_log_strength, log_delta: 0.0 },
            away: TeamSide { log_strength: away_log_strength, log_delta: 0.0 },
            venue,
        }
    }
}

fn slot_values(m: &Matchup, s: &Structural) -> [f64; N_SLOTS] {
    let mut v = [0.0; N_SLOTS];
    v[Slot::HomeStrength as usize] = m.home.log_strength;
    v[Slot::AwayStrength as usize] = m.away.log_strength;
    v[Slot::HomeDelta as usize] = m.home.log_delta;
    v[Slot::AwayDelta as usize] = m.away.log_delta;
    v[Slot::RhoN as usize] = s.log_rho_n;
    v[Slot::RhoD as usize] = s.log_rho_d;
    v[Slot::TauB as usize] = s.log_tau_b;
    v[Slot::TauZ as usize] = s.log_tau_z;
    v[Slot::Tau as usize] = s.log_tau;
    v[Slot::Kappa as usize] = s.log_kappa;
    v
}

fn eval(template: &[CellTerms], values: &[f64; N_SLOTS]) -> Vec<f64> {
    template
        .iter()
        .map(|terms| terms.iter().map(|&(slot, c)| c * values[slot as usize]).sum())
        .collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalised probabilities from log-weights, plus the log normaliser.
pub fn normalize_log_weights(log_w: &[f64]) -> (Vec<f64>, f64) {
    let lz = log_sum_exp(log_w);
    (log_w.iter().map(|w| (w - lz).exp()).collect(), lz)
}

/// Result and try probabilities for one ordered matchup. Joint probabilities
/// are products of the two blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub result: [f64; 5],
    pub tries: [f64; 4],
}

impl OutcomeDistribution {
    pub fn joint(&self, r: ResultOutcome, t: TryOutcome) -> f64 {
        self.result[r.index()] * self.tries[t.index()]
    }

    /// Expected (home, away) league points over all twenty joint outcomes.
    pub fn expected_points(&self, ps: &PointsSystem) -> (f64, f64) {
        let mut home = 0.0;
        let mut away = 0.0;
        for r in ResultOutcome::ALL {
            for t in TryOutcome::ALL {
                let p = self.joint(r, t);
                let (a, b) = league_points(r, t, ps);
                home += p * f64::from(a);
                away += p * f64::from(b);
            }
        }
        (home, away)
    }
}

impl ModelSpec {
    pub fn result_log_weights(&self, m: &Matchup, s: &Structural) -> [f64; 5] {
        let w = eval(&self.result_template(m.venue), &slot_values(m, s));
        [w[0], w[1], w[2], w[3], w[4]]
    }

    pub fn try_log_weights(&self, m: &Matchup, s: &Structural) -> [f64; 4] {
        let w = eval(&self.try_template(m.venue), &slot_values(m, s));
        [w[0], w[1], w[2], w[3]]
    }

    pub fn distribution(&self, m: &Matchup, s: &Structural) -> OutcomeDistribution {
        let (r, _) = normalize_log_weights(&self.result_log_weights(m, s));
        let (t, _) = normalize_log_weights(&self.try_log_weights(m, s));
        OutcomeDistribution { result: [r[0], r[1], r[2], r[3], r[4]], tries: [t[0], t[1], t[2], t[3]] }
    }
}

fn level_weights<const N: usize>(log_w: [f64; N]) -> Result<[f64; N], ModelError> {
    let w = log_w.map(f64::exp);
    if w.iter().all(|x| x.is_finite()) {
        Ok(w)
    } else {
        Err(ModelError::Overflow)
    }
}

/// Unnormalised result weights for home strength `pi_i` against `pi_j` under
/// the default variant: (k^4 pi_i^4, rho_n k^3 pi_i^4 pi_j, rho_d pi_i^2 pi_j^2,
/// rho_n pi_i pi_j^4 / k^3, pi_j^4 / k^4). `at_home = false` drops `k`.
pub fn result_weights(
    pi_i: f64,
    pi_j: f64,
    structural: &StructuralValues,
    at_home: bool,
) -> Result<[f64; 5], ModelError> {
    check_positive(&[pi_i, pi_j])?;
    structural.validate()?;
    let venue = if at_home { Venue::HomeGround } else { Venue::Neutral };
    let m = Matchup::new(pi_i.ln(), pi_j.ln(), venue);
    level_weights(ModelSpec::default().result_log_weights(&m, &structural.to_log()))
}

/// Unnormalised try weights (tau_b pi_i pi_j, k pi_i, pi_j / k, tau_z) under the default variant.
pub fn try_weights(
    pi_i: f64,
    pi_j: f64,
    structural: &StructuralValues,
    at_home: bool,
) -> Result<[f64; 4], ModelError> {
    check_positive(&[pi_i, pi_j])?;
    structural.validate()?;
    let venue = if at_home { Venue::HomeGround } else { Venue::Neutral };
    let m = Matchup::new(pi_i.ln(), pi_j.ln(), venue);
    level_weights(ModelSpec::default().try_log_weights(&m, &structural.to_log()))
}

fn check_positive(xs: &[f64]) -> Result<(), ModelError> {
    if xs.iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter("strengths must be positive and finite".into()))
    }
}

/// Fitted or hypothesised parameter values, held in log form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub spec: ModelSpec,
    pub log_strengths: Vec<f64>,
    pub structural: Structural,
    /// Per-team log defensive strength (offensive-defensive model), else empty.
    #[serde(default)]
    pub log_delta: Vec<f64>,
    /// Per-team log home/away split: log home strength = alpha + split,
    /// log away strength = alpha - split (team-specific home model), else empty.
    #[serde(default)]
    pub home_split: Vec<f64>,
}

impl Parameters {
    /// All strengths and structural parameters at 1.
    pub fn unit(spec: ModelSpec, n_teams: usize) -> Self {
        let per_team = |on: bool| if on { vec![0.0; n_teams] } else { Vec::new() };
        Self {
            spec,
            log_strengths: vec![0.0; n_teams],
            structural: Structural::default(),
            log_delta: per_team(spec.variant.try_model == TryModel::OffensiveDefensive),
            home_split: per_team(spec.variant.home_model == HomeModel::TeamSpecific),
        }
    }

    /// Default-variant parameters from level-form values.
    pub fn from_levels(strengths: &[f64], structural: &StructuralValues) -> Result<Self, ModelError> {
        check_positive(strengths)?;
        structural.validate()?;
        Ok(Self {
            spec: ModelSpec::default(),
            log_strengths: strengths.iter().map(|p| p.ln()).collect(),
            structural: structural.to_log(),
            log_delta: Vec::new(),
            home_split: Vec::new(),
        })
    }

    pub fn n_teams(&self) -> usize {
        self.log_strengths.len()
    }

    pub fn strengths(&self) -> Vec<f64> {
        self.log_strengths.iter().map(|a| a.exp()).collect()
    }

    pub fn rho_n(&self) -> f64 {
        self.structural.log_rho_n.exp()
    }
    pub fn rho_d(&self) -> f64 {
        self.structural.log_rho_d.exp()
    }
    pub fn tau_b(&self) -> f64 {
        self.structural.log_tau_b.exp()
    }
    pub fn tau_z(&self) -> f64 {
        self.structural.log_tau_z.exp()
    }
    pub fn tau(&self) -> f64 {
        self.structural.log_tau.exp()
    }
    pub fn kappa(&self) -> f64 {
        self.structural.log_kappa.exp()
    }

    /// Home strengths under the team-specific home model (plain strengths otherwise).
    pub fn home_strengths(&self) -> Vec<f64> {
        (0..self.n_teams()).map(|i| (self.log_strengths[i] + self.split(i)).exp()).collect()
    }

    pub fn away_strengths(&self) -> Vec<f64> {
        (0..self.n_teams()).map(|i| (self.log_strengths[i] - self.split(i)).exp()).collect()
    }

    /// Defensive strengths (offensive-defensive model).
    pub fn deltas(&self) -> Vec<f64> {
        self.log_delta.iter().map(|d| d.exp()).collect()
    }

    /// Offensive strengths, strength / defence (offensive-defensive model).
    pub fn omegas(&self) -> Vec<f64> {
        self.log_strengths.iter().zip(&self.log_delta).map(|(a, d)| (a - d).exp()).collect()
    }

    fn split(&self, i: usize) -> f64 {
        self.home_split.get(i).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_teams();
        let od = self.spec.variant.try_model == TryModel::OffensiveDefensive;
        let ts = self.spec.variant.home_model == HomeModel::TeamSpecific;
        if od != (self.log_delta.len() == n) || (!od && !self.log_delta.is_empty()) {
            return Err(ModelError::InvalidParameter("defensive strengths do not match the variant".into()));
        }
        if ts != (self.home_split.len() == n) || (!ts && !self.home_split.is_empty()) {
            return Err(ModelError::InvalidParameter("home/away strengths do not match the variant".into()));
        }
        let s = &self.structural;
        let structural = [s.log_rho_n, s.log_rho_d, s.log_tau_b, s.log_tau_z, s.log_tau, s.log_kappa];
        let all = self
            .log_strengths
            .iter()
            .chain(&self.log_delta)
            .chain(&self.home_split)
            .chain(&structural);
        for v in all {
            if !v.is_finite() {
                return Err(ModelError::InvalidParameter("parameters must be positive and finite".into()));
            }
        }
        self.spec.points.validate().map_err(|e| ModelError::InvalidParameter(e.to_string()))
    }

    pub fn side(&self, team: TeamId, role: Venue, is_home: bool) -> TeamSide {
        let i = team.0;
        let split = if role == Venue::HomeGround { self.split(i) } else { 0.0 };
        TeamSide {
            log_strength: self.log_strengths[i] + if is_home { split } else { -split },
            log_delta: self.log_delta.get(i).copied().unwrap_or(0.0),
        }
    }

    pub fn matchup(&self, fixture: &Fixture) -> Matchup {
        Matchup {
            home: self.side(fixture.home, fixture.venue, true),
            away: self.side(fixture.away, fixture.venue, false),
            venue: fixture.venue,
        }
    }

    pub fn distribution(&self, fixture: &Fixture) -> OutcomeDistribution {
        self.spec.distribution(&self.matchup(fixture), &self.structural)
    }

    pub fn result_probs(&self, fixture: &Fixture) -> [f64; 5] {
        self.distribution(fixture).result
    }

    pub fn try_probs(&self, fixture: &Fixture) -> [f64; 4] {
        self.distribution(fixture).tries
    }

    /// Expected (home, away) league points for the fixture.
    pub fn expected_points(&self, fixture: &Fixture) -> (f64, f64) {
        self.distribution(fixture).expected_points(&self.spec.points)
    }

    /// Rescales strengths by `c` and co-transforms structural parameters so
    /// every outcome distribution is unchanged.
    pub fn gauge_transform(&self, c: f64) -> Result<Parameters, ModelError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(ModelError::InvalidParameter("gauge scale must be positive".into()));
        }
        let l = c.ln();
        let ps = &self.spec.points;
        let mut out = self.clone();
        for a in &mut out.log_strengths {
            *a += l;
        }
        // The wide result cells carry total exponent win + loss; narrow cells one
        // more, draw cells 2 * draw. Structural offsets absorb the difference.
        let wide = f64::from(ps.win_points + ps.loss_points);
        out.structural.log_rho_n -= l;
        out.structural.log_rho_d -= l * (f64::from(2 * ps.draw_points) - wide);
        match self.spec.variant.try_model {
            TryModel::OppositionDependent => {
                out.structural.log_tau_b -= l;
                out.structural.log_tau_z += l;
            }
            TryModel::OppositionIndependent => out.structural.log_tau -= l,
            TryModel::OffensiveDefensive => {
                for d in &mut out.log_delta {
                    *d += 0.5 * l;
                }
            }
        }
        Ok(out)
    }

    /// Gauge-transforms onto generalized mean strength 1.
    pub fn normalized(&self) -> Result<Parameters, ModelError> {
        let c = solve_scale(&self.strengths())?;
        self.gauge_transform(c)
    }
}

/// (1/m) sum 2 pi / (1 + pi). Infinite strengths contribute 2.
pub fn generalized_mean(strengths: &[f64]) -> f64 {
    if strengths.is_empty() {
        return f64::NAN;
    }
    let total: f64 = strengths.iter().map(|&p| gm_term(p)).sum();
    total / strengths.len() as f64
}

fn gm_term(p: f64) -> f64 {
    if p.is_infinite() {
        2.0
    } else {
        2.0 * p / (1.0 + p)
    }
}

/// The unique `c > 0` with `generalized_mean(c * strengths) == 1`, by
/// bisection on `log c` down to adjacent floating-point values.
pub fn solve_scale(strengths: &[f64]) -> Result<f64, ModelError> {
    if strengths.is_empty() {
        return Err(ModelError::NoRoot("no strengths".into()));
    }
    if strengths.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(ModelError::InvalidParameter("strengths must be non-negative".into()));
    }
    let m = strengths.len() as f64;
    let infinite = strengths.iter().filter(|p| p.is_infinite()).count() as f64;
    let finite_positive = strengths.iter().filter(|p| p.is_finite() && **p > 0.0).count();
    // As c -> 0 the mean tends to 2 * infinite / m; as c -> inf to 2 * (nonzero) / m.
    if 2.0 * infinite >= m {
        return Err(ModelError::NoRoot("half or more of the strengths are infinite".into()));
    }
    if finite_positive == 0 || 2.0 * (infinite + finite_positive as f64) <= m {
        return Err(ModelError::NoRoot("too many zero strengths".into()));
    }
    let g = |log_c: f64| -> f64 {
        let c = log_c.exp();
        strengths.iter().map(|&p| gm_term(c * p)).sum::<f64>() / m - 1.0
    };
    if g(0.0) == 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) > 0.0 {
        lo *= 2.0;
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = g(mid);
        if v == 0.0 {
            return Ok(mid.exp());
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Divides by the arithmetic mean.
pub fn arithmetic_normalize(strengths: &[f64]) -> Result<Vec<f64>, ModelError> {
    if let Some(i) = strengths.iter().position(|p| p.is_infinite()) {
        return Err(ModelError::InfiniteStrength(i));
    }
    check_positive(strengths)?;
    let mean = strengths.iter().sum::<f64>() / strengths.len() as f64;
    Ok(strengths.iter().map(|p| p / mean).collect())
}

/// Outcome probabilities for a hypothetical match between two teams of
/// strength 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralSummary {
    pub wide: f64,
    pub narrow: f64,
    pub draw: f64,
    pub home_win: f64,
    pub away_win: f64,
    /// P(home win) / P(away win).
    pub home_away_win_ratio: f64,
    pub both_bonus: f64,
    pub zero_bonus: f64,
    pub expected_home_points: f64,
    pub expected_away_points: f64,
}

/// Interpretation of the structural parameters, with the fitted home
/// advantage and with home advantage switched off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub with_home_advantage: StructuralSummary,
    pub neutral: StructuralSummary,
}

pub fn interpret_structural(params: &Parameters) -> Interpretation {
    let mean_delta = if params.log_delta.is_empty() {
        0.0
    } else {
        params.log_delta.iter().sum::<f64>() / params.log_delta.len() as f64
    };
    let side = TeamSide { log_strength: 0.0, log_delta: mean_delta };
    let summary = |venue: Venue| {
        let m = Matchup { home: side, away: side, venue };
        let d = params.spec.distribution(&m, &params.structural);
        let (eh, ea) = d.expected_points(&params.spec.points);
        let r = &d.result;
        let home_win = r[0] + r[1];
        let away_win = r[3] + r[4];
        StructuralSummary {
            wide: r[0] + r[4],
            narrow: r[1] + r[3],
            draw: r[2],
            home_win,
            away_win,
            home_away_win_ratio: home_win / away_win,
            both_bonus: d.tries[TryOutcome::BothBonus.index()],
            zero_bonus: d.tries[TryOutcome::ZeroBonus.index()],
            expected_home_points: eh,
            expected_away_points: ea,
        }
    };
    Interpretation { with_home_advantage: summary(Venue::HomeGround), neutral: summary(Venue::Neutral) }
}

/// A general pairwise model over an arbitrary finite set of point awards:
/// P(i gets a, j gets b) is proportional to pi_i^a pi_j^b.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSet {
    pub outcomes: Vec<(f64, f64)>,
}

impl OutcomeSet {
    pub fn binary() -> Self {
        Self { outcomes: vec![(1.0, 0.0), (0.0, 1.0)] }
    }

    pub fn probs(&self, log_i: f64, log_j: f64) -> Vec<f64> {
        let lw: Vec<f64> = self.outcomes.iter().map(|&(a, b)| a * log_i + b * log_j).collect();
        normalize_log_weights(&lw).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> StructuralValues {
        StructuralValues { rho_n: 0.448, rho_d: 0.212, tau_b: 0.042, tau_z: 2.801, kappa: 1.113 }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mean_weights_match_structural_values() {
        let s = StructuralValues { kappa: 1.0, ..reference() };
        let w = result_weights(1.0, 1.0, &s, true).unwrap();
        let expect = [1.0, 0.448, 0.212, 0.448, 1.0];
        for (a, b) in w.iter().zip(expect) {
            assert!(close(*a, b, 1e-12), "{w:?}");
        }
    }

    #[test]
    fn home_wide_weight_is_kappa_to_the_fourth() {
        let w = result_weights(1.0, 1.0, &reference(), true).unwrap();
        assert!(close(w[0], 1.113f64.powi(4), 1e-12));
        assert!(close(w[0], 1.534, 1e-3));
        let neutral = result_weights(1.0, 1.0, &reference(), false).unwrap();
        assert!(close(neutral[0], 1.0, 1e-15));
    }

    #[test]
    fn equal_strengths_reflect() {
        let s = StructuralValues { kappa: 1.0, ..reference() };
        let w = result_weights(1.7, 1.7, &s, true).unwrap();
        assert!(close(w[0], w[4], 1e-12) && close(w[1], w[3], 1e-12));
    }

    #[test]
    fn explicit_weight_formulas() {
        let s = reference();
        let (pi, pj, k) = (1.9, 0.6, s.kappa);
        let w = result_weights(pi, pj, &s, true).unwrap();
        let expect = [
            k.powi(4) * pi.powi(4),
            s.rho_n * k.powi(3) * pi.powi(4) * pj,
            s.rho_d * pi.powi(2) * pj.powi(2),
            s.rho_n * pi * pj.powi(4) / k.powi(3),
            pj.powi(4) / k.powi(4),
        ];
        for (a, b) in w.iter().zip(expect) {
            assert!(close(*a, b, 1e-12 * b.max(1.0)), "{a} vs {b}");
        }
        let t = try_weights(pi, pj, &s, true).unwrap();
        let expect = [s.tau_b * pi * pj, k * pi, pj / k, s.tau_z];
        for (a, b) in t.iter().zip(expect) {
            assert!(close(*a, b, 1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn overflow_reported() {
        let s = StructuralValues::UNIT;
        assert_eq!(result_weights(1e90, 1.0, &s, true), Err(ModelError::Overflow));
        // the log-domain route stays finite
        let p = Parameters::from_levels(&[1e90, 1.0], &s).unwrap();
        let f = Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround };
        let d = p.distribution(&f);
        assert!(d.result.iter().all(|x| x.is_finite()));
        assert!(close(d.result[0] + d.result[1], 1.0, 1e-12));
    }

    #[test]
    fn both_bonus_probability_for_mean_teams() {
        let s = StructuralValues { kappa: 1.0, ..reference() };
        let p = Parameters::from_levels(&[1.0, 1.0], &s).unwrap();
        let f = Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround };
        let t = p.try_probs(&f);
        // enumerate the four weights by hand: 0.042, 1, 1, 2.801
        assert!(close(t[0], 0.042 / 4.843, 1e-12));
        assert!(close(t[0], 0.00867, 1e-5));
        let r = p.result_probs(&f);
        let narrow = 2.0 * 0.448 / (2.0 + 2.0 * 0.448 + 0.212);
        assert!(close(r[1] + r[3], narrow, 1e-12));
    }

    #[test]
    fn expected_points_for_mean_teams() {
        let s = StructuralValues { kappa: 1.0, ..reference() };
        let p = Parameters::from_levels(&[1.0, 1.0], &s).unwrap();
        let f = Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround };
        let (h, a) = p.expected_points(&f);
        // brute force over twenty joint cells with explicit weights
        let rw = [1.0, 0.448, 0.212, 0.448, 1.0];
        let tw = [0.042, 1.0, 1.0, 2.801];
        let rz: f64 = rw.iter().sum();
        let tz: f64 = tw.iter().sum();
        let rpts = [(4, 0), (4, 1), (2, 2), (1, 4), (0, 4)];
        let tpts = [(1, 1), (1, 0), (0, 1), (0, 0)];
        let mut oracle = (0.0, 0.0);
        for (ri, rp) in rpts.iter().enumerate() {
            for (ti, tp) in tpts.iter().enumerate() {
                let pr = rw[ri] / rz * tw[ti] / tz;
                oracle.0 += pr * f64::from(rp.0 + tp.0);
                oracle.1 += pr * f64::from(rp.1 + tp.1);
            }
        }
        assert!(close(h, oracle.0, 1e-12) && close(a, oracle.1, 1e-12));
        assert!(close(h, 2.359, 5e-4));
        assert!(close(h, a, 1e-12));
    }

    #[test]
    fn dominant_home_side_expects_at_least_four() {
        let p = Parameters::from_levels(&[1e6, 1.0], &reference()).unwrap();
        let f = Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround };
        let (h, _) = p.expected_points(&f);
        let bonus = p.try_probs(&f);
        assert!(h >= 4.0);
        assert!(close(h, 4.0 + bonus[0] + bonus[1], 1e-5));
    }

    #[test]
    fn swapping_sides_swaps_points_without_home_advantage() {
        let s = StructuralValues { kappa: 1.0, ..reference() };
        let p = Parameters::from_levels(&[2.5, 0.7], &s).unwrap();
        let ab = p.expected_points(&Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround });
        let ba = p.expected_points(&Fixture { home: TeamId(1), away: TeamId(0), venue: Venue::HomeGround });
        assert!(close(ab.0, ba.1, 1e-12) && close(ab.1, ba.0, 1e-12));
    }

    #[test]
    fn interpretation_of_structural_means() {
        let p = Parameters::from_levels(&[1.0], &reference()).unwrap();
        let i = interpret_structural(&p).with_home_advantage;
        assert!(close(i.wide, 0.654, 1e-3), "{i:?}");
        assert!(close(i.home_away_win_ratio, 2.20, 5e-3), "{i:?}");
        let uniform = Parameters::from_levels(&[1.0], &StructuralValues::UNIT).unwrap();
        let u = interpret_structural(&uniform).neutral;
        assert!(close(u.draw, 0.2, 1e-15));
    }

    #[test]
    fn offensive_defensive_reduces_to_default() {
        let s = reference();
        let spec = ModelSpec {
            variant: VariantConfig { try_model: TryModel::OffensiveDefensive, ..Default::default() },
            ..Default::default()
        };
        let mut od = Parameters::unit(spec, 2);
        od.log_strengths = vec![0.3f64, -0.8];
        od.structural = s.to_log();
        let delta = s.tau_z.sqrt();
        od.log_delta = vec![delta.ln(); 2];
        let mut def = Parameters::from_levels(&[0.3f64.exp(), (-0.8f64).exp()], &s).unwrap();
        def.structural.log_tau_b = -(s.tau_z.ln());
        for venue in [Venue::HomeGround, Venue::Neutral] {
            let f = Fixture { home: TeamId(0), away: TeamId(1), venue };
            let (a, b) = (od.distribution(&f), def.distribution(&f));
            for i in 0..4 {
                assert!(close(a.tries[i], b.tries[i], 1e-12));
            }
            for i in 0..5 {
                assert!(close(a.result[i], b.result[i], 1e-12));
            }
        }
    }

    #[test]
    fn opposition_independent_is_product_of_bernoullis() {
        let spec = ModelSpec {
            variant: VariantConfig { try_model: TryModel::OppositionIndependent, ..Default::default() },
            ..Default::default()
        };
        let mut p = Parameters::unit(spec, 2);
        p.log_strengths = vec![0.4, -0.2];
        p.structural.log_tau = (0.3f64).ln();
        p.structural.log_kappa = 0.1;
        let f = Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround };
        let t = p.try_probs(&f);
        let wh = 0.3 * 0.4f64.exp() * 0.1f64.exp();
        let wa = 0.3 * (-0.2f64).exp() / 0.1f64.exp();
        let (ph, pa) = (wh / (1.0 + wh), wa / (1.0 + wa));
        assert!(close(t[0], ph * pa, 1e-12));
        assert!(close(t[1], ph * (1.0 - pa), 1e-12));
        assert!(close(t[2], (1.0 - ph) * pa, 1e-12));
        assert!(close(t[3], (1.0 - ph) * (1.0 - pa), 1e-12));
    }

    #[test]
    fn generalized_mean_cases() {
        assert_eq!(generalized_mean(&[1.0, 1.0, 1.0]), 1.0);
        assert_eq!(solve_scale(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        for x in [0.01, 0.5, 3.0, 1234.5] {
            assert!(close(generalized_mean(&[x, 1.0 / x]), 1.0, 1e-15));
            assert!(close(solve_scale(&[x, 1.0 / x]).unwrap(), 1.0, 1e-12));
        }
        let c = solve_scale(&[3.0, 1.0]).unwrap();
        assert!(close(c, 1.0 / 3f64.sqrt(), 1e-12));
        assert!(solve_scale(&[0.0, 0.0]).is_err());
        let with_inf = [f64::INFINITY, 1.0, 2.0, 0.5];
        let c = solve_scale(&with_inf).unwrap();
        let scaled: Vec<f64> = with_inf.iter().map(|p| c * p).collect();
        assert!(close(generalized_mean(&scaled), 1.0, 1e-12));
        assert!(solve_scale(&[f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn arithmetic_normalization() {
        let v = arithmetic_normalize(&[2.0, 4.0]).unwrap();
        assert!(close(v[0], 2.0 / 3.0, 1e-15) && close(v[1], 4.0 / 3.0, 1e-15));
        assert_eq!(arithmetic_normalize(&[0.5, 1.5]).unwrap(), vec![0.5, 1.5]);
        assert_eq!(arithmetic_normalize(&[1.0, f64::INFINITY]), Err(ModelError::InfiniteStrength(1)));
    }

    #[test]
    fn gauge_group_action() {
        let p = Parameters::from_levels(&[0.5, 2.0, 1.3], &reference()).unwrap();
        assert_eq!(p.gauge_transform(1.0).unwrap(), p);
        let ab = p.gauge_transform(2.0).unwrap().gauge_transform(3.0).unwrap();
        let direct = p.gauge_transform(6.0).unwrap();
        for (x, y) in ab.log_strengths.iter().zip(&direct.log_strengths) {
            assert!(close(*x, *y, 1e-12));
        }
        assert!(close(ab.structural.log_tau_z, direct.structural.log_tau_z, 1e-12));
        let g = p.gauge_transform(2.0).unwrap();
        assert!(close(g.rho_n(), p.rho_n() / 2.0, 1e-12));
        assert!(close(g.tau_b(), p.tau_b() / 2.0, 1e-12));
        assert!(close(g.tau_z(), p.tau_z() * 2.0, 1e-12));
        assert!(close(g.rho_d(), p.rho_d(), 1e-15));
        assert!(close(g.kappa(), p.kappa(), 1e-15));
    }

    fn variant_strategy() -> impl Strategy<Value = VariantConfig> {
        (0..3usize, 0..3usize).prop_map(|(t, h)| VariantConfig {
            try_model: [TryModel::OppositionDependent, TryModel::OppositionIndependent, TryModel::OffensiveDefensive][t],
            home_model: [HomeModel::SingleKappa, HomeModel::TeamSpecific, HomeModel::None][h],
        })
    }

    fn params_strategy() -> impl Strategy<Value = Parameters> {
        (variant_strategy(), prop::collection::vec(-2.0f64..2.0, 12)).prop_map(|(variant, v)| {
            let spec = ModelSpec { variant, ..Default::default() };
            let mut p = Parameters::unit(spec, 3);
            p.log_strengths = v[0..3].to_vec();
            p.structural = Structural {
                log_rho_n: v[3],
                log_rho_d: v[4],
                log_tau_b: v[5],
                log_tau_z: v[6],
                log_tau: v[7],
                log_kappa: v[8] * 0.3,
            };
            if !p.log_delta.is_empty() {
                p.log_delta = v[9..12].to_vec();
            }
            if !p.home_split.is_empty() {
                p.home_split = v[9..12].iter().map(|x| x * 0.2).collect();
            }
            p
        })
    }

    fn fixtures() -> Vec<Fixture> {
        let mut out = Vec::new();
        for h in 0..3 {
            for a in 0..3 {
                if h != a {
                    for venue in [Venue::HomeGround, Venue::Neutral] {
                        out.push(Fixture { home: TeamId(h), away: TeamId(a), venue });
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn blocks_sum_to_one(p in params_strategy()) {
            for f in fixtures() {
                let d = p.distribution(&f);
                prop_assert!((d.result.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!((d.tries.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(d.result.iter().chain(&d.tries).all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn gauge_leaves_outcomes_unchanged(p in params_strategy(), log_c in (0.1f64).ln()..(10.0f64).ln()) {
            let g = p.gauge_transform(log_c.exp()).unwrap();
            for f in fixtures() {
                let (a, b) = (p.distribution(&f), g.distribution(&f));
                for r in ResultOutcome::ALL {
                    for t in TryOutcome::ALL {
                        prop_assert!((a.joint(r, t) - b.joint(r, t)).abs() <= 1e-12);
                    }
                }
            }
        }

        #[test]
        fn home_wide_increases_with_home_strength(p in params_strategy(), bump in 0.01f64..1.0) {
            let f = Fixture { home: TeamId(0), away: TeamId(1), venue: Venue::HomeGround };
            let mut q = p.clone();
            q.log_strengths[0] += bump;
            prop_assert!(q.result_probs(&f)[0] > p.result_probs(&f)[0]);
        }

        #[test]
        fn solve_scale_commutes_with_gauge(v in prop::collection::vec(-3.0f64..3.0, 1..8), log_c in -2.0f64..2.0) {
            let s: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let c = log_c.exp();
            let scaled: Vec<f64> = s.iter().map(|x| x * c).collect();
            let lhs = solve_scale(&scaled).unwrap();
            let rhs = solve_scale(&s).unwrap() / c;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }

        #[test]
        fn constant_defence_matches_some_default_model(p in params_strategy(), d in -1.0f64..1.0) {
            let spec = ModelSpec { variant: VariantConfig { try_model: TryModel::OffensiveDefensive, home_model: HomeModel::SingleKappa }, ..Default::default() };
            let mut od = Parameters::unit(spec, 3);
            od.log_strengths = p.log_strengths.clone();
            od.structural = p.structural;
            od.log_delta = vec![d; 3];
            let mut def = Parameters::unit(ModelSpec::default(), 3);
            def.log_strengths = p.log_strengths.clone();
            def.structural = p.structural;
            def.structural.log_tau_b = -2.0 * d;
            def.structural.log_tau_z = 2.0 * d;
            for f in fixtures() {
                let (a, b) = (od.distribution(&f), def.distribution(&f));
                for i in 0..4 {
                    prop_assert!((a.tries[i] - b.tries[i]).abs() <= 1e-12);
                }
            }
        }
    }
}
