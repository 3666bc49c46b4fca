//! Maximum-likelihood fitting.
//!
//! The likelihood is the fully normalised product over fixtures of the
//! result and try blocks, so per-pair normalisers are exact rather than
//! nuisance parameters. Each block is a small log-linear model: a cell's
//! log-weight is a sparse linear form in the packed log-parameter vector.
//! The score of such a model is observed minus expected coefficient totals,
//! which for strengths is observed minus expected league points.
//!
//! The symmetric prior adds, for every team, a weighted notional win and
//! loss against a dummy opponent of fixed strength.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Fixture, OutcomeCounts, PointsSystem, TeamId, Venue};
use crate::model::{
    normalize_log_weights, CellTerms, HomeModel, ModelError, ModelSpec, OutcomeSet, Parameters,
    Slot, StructuralValues, TryModel, VariantConfig,
};

/// Log-strength distance from the median, and structural |log| size, beyond
/// which a fitted parameter is treated as running off to infinity.
const DIVERGENCE_LIMIT: f64 = 15.0;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no matches and no prior: nothing to fit")]
    NoData,
    #[error("team {0} has no matches and there is no prior; supply a prior weight")]
    TeamWithoutMatches(TeamId),
    #[error("schedule splits into {0} disconnected groups and there is no prior; supply a prior weight")]
    Disconnected(usize),
    #[error("parameters cover {params} teams but the data has {data}")]
    TeamCountMismatch { params: usize, data: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fit did not converge after {iterations} iterations (max gradient {gradient_norm:.3e}): {diagnosis}")]
    NonConvergence {
        diagnosis: Diagnosis,
        /// Best iterate, in the optimisation gauge.
        best: Box<Parameters>,
        iterations: usize,
        gradient_norm: f64,
    },
}

/// Why a fit failed to converge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Diagnosis {
    /// Team earned maximum points in every match.
    PerfectRecord(TeamId),
    /// Team earned no points at all.
    PointlessRecord(TeamId),
    TeamDiverging(TeamId),
    /// A structural parameter heads to 0 or infinity, typically because the
    /// outcome it governs never (or always) occurs.
    StructuralDiverging { parameter: String, reason: String },
    IterationLimit,
    LineSearchStalled,
}

impl Diagnosis {
    pub fn team(&self) -> Option<TeamId> {
        match self {
            Diagnosis::PerfectRecord(t) | Diagnosis::PointlessRecord(t) | Diagnosis::TeamDiverging(t) => Some(*t),
            _ => None,
        }
    }

    /// Human-readable text with team ids replaced by names.
    pub fn describe(&self, names: &[String]) -> String {
        let name = |t: &TeamId| names.get(t.0).cloned().unwrap_or_else(|| t.to_string());
        match self {
            Diagnosis::PerfectRecord(t) => format!(
                "team {} took maximum points in every match; strength diverging; supply a prior weight",
                name(t)
            ),
            Diagnosis::PointlessRecord(t) => format!(
                "team {} took no points in any match; strength diverging to zero; supply a prior weight",
                name(t)
            ),
            Diagnosis::TeamDiverging(t) => {
                format!("strength of team {} diverging; supply a prior weight", name(t))
            }
            Diagnosis::StructuralDiverging { parameter, reason } => {
                format!("{parameter} diverging ({reason}); freeze structural parameters")
            }
            Diagnosis::IterationLimit => "iteration limit reached".to_string(),
            Diagnosis::LineSearchStalled => "line search made no progress".to_string(),
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe(&[]))
    }
}

/// Notional matches against a dummy team: each team records `weight` wins
/// and `weight` losses against an opponent of strength `dummy_strength`,
/// with no home advantage and no bonuses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub weight: f64,
    pub dummy_strength: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { weight: 0.0, dummy_strength: 1.0 }
    }
}

impl PriorConfig {
    pub fn with_weight(weight: f64) -> Self {
        Self { weight, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(FitError::InvalidConfig("prior weight must be finite and non-negative".into()));
        }
        if !(self.dummy_strength.is_finite() && self.dummy_strength > 0.0) {
            return Err(FitError::InvalidConfig("dummy strength must be positive".into()));
        }
        Ok(())
    }
}

/// Structural parameters held fixed during a fit, in level form. Values the
/// variant does not use are ignored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrozenStructural {
    pub rho_n: Option<f64>,
    pub rho_d: Option<f64>,
    pub tau_b: Option<f64>,
    pub tau_z: Option<f64>,
    pub kappa: Option<f64>,
}

impl FrozenStructural {
    pub fn all(v: &StructuralValues) -> Self {
        Self {
            rho_n: Some(v.rho_n),
            rho_d: Some(v.rho_d),
            tau_b: Some(v.tau_b),
            tau_z: Some(v.tau_z),
            kappa: Some(v.kappa),
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    fn validate(&self) -> Result<(), FitError> {
        for v in [self.rho_n, self.rho_d, self.tau_b, self.tau_z, self.kappa].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return Err(FitError::InvalidConfig("frozen values must be positive and finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub points: PointsSystem,
    pub variant: VariantConfig,
    pub prior: PriorConfig,
    /// Maximum absolute score component at convergence.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub freeze: FrozenStructural,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            points: PointsSystem::default(),
            variant: VariantConfig::default(),
            prior: PriorConfig::default(),
            tolerance: 1e-8,
            max_iterations: 500,
            freeze: FrozenStructural::default(),
        }
    }
}

impl FitConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec { points: self.points, variant: self.variant }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        self.points.validate().map_err(|e| FitError::InvalidConfig(e.to_string()))?;
        self.prior.validate()?;
        self.freeze.validate()?;
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(FitError::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Packed order of the log-parameters: strengths, narrow, draw, try
/// parameters of the variant, home parameters of the variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_teams: usize,
    pub variant: VariantConfig,
}

impl Layout {
    pub fn new(n_teams: usize, variant: VariantConfig) -> Self {
        Self { n_teams, variant }
    }

    pub fn alpha(&self, i: usize) -> usize {
        i
    }
    pub fn rho_n(&self) -> usize {
        self.n_teams
    }
    pub fn rho_d(&self) -> usize {
        self.n_teams + 1
    }
    fn try_start(&self) -> usize {
        self.n_teams + 2
    }
    fn try_len(&self) -> usize {
        match self.variant.try_model {
            TryModel::OppositionDependent => 2,
            TryModel::OppositionIndependent => 1,
            TryModel::OffensiveDefensive => self.n_teams,
        }
    }
    pub fn tau_b(&self) -> Option<usize> {
        (self.variant.try_model == TryModel::OppositionDependent).then(|| self.try_start())
    }
    pub fn tau_z(&self) -> Option<usize> {
        (self.variant.try_model == TryModel::OppositionDependent).then(|| self.try_start() + 1)
    }
    pub fn tau(&self) -> Option<usize> {
        (self.variant.try_model == TryModel::OppositionIndependent).then(|| self.try_start())
    }
    pub fn delta(&self, i: usize) -> Option<usize> {
        (self.variant.try_model == TryModel::OffensiveDefensive).then(|| self.try_start() + i)
    }
    fn home_start(&self) -> usize {
        self.try_start() + self.try_len()
    }
    pub fn kappa(&self) -> Option<usize> {
        (self.variant.home_model == HomeModel::SingleKappa).then(|| self.home_start())
    }
    pub fn split(&self, i: usize) -> Option<usize> {
        (self.variant.home_model == HomeModel::TeamSpecific).then(|| self.home_start() + i)
    }

    pub fn len(&self) -> usize {
        self.home_start()
            + match self.variant.home_model {
                HomeModel::SingleKappa => 1,
                HomeModel::TeamSpecific => self.n_teams,
                HomeModel::None => 0,
            }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter labels in packed order, with team names where given.
    pub fn labels(&self, names: &[String]) -> Vec<String> {
        let team = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        let mut out: Vec<String> = (0..self.n_teams).map(|i| format!("strength[{}]", team(i))).collect();
        out.push("rho_n".into());
        out.push("rho_d".into());
        match self.variant.try_model {
            TryModel::OppositionDependent => {
                out.push("tau_b".into());
                out.push("tau_z".into());
            }
            TryModel::OppositionIndependent => out.push("tau".into()),
            TryModel::OffensiveDefensive => {
                out.extend((0..self.n_teams).map(|i| format!("delta[{}]", team(i))))
            }
        }
        match self.variant.home_model {
            HomeModel::SingleKappa => out.push("kappa".into()),
            HomeModel::TeamSpecific => {
                out.extend((0..self.n_teams).map(|i| format!("home_away[{}]", team(i))))
            }
            HomeModel::None => {}
        }
        out
    }

    pub fn pack(&self, p: &Parameters) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        x[..self.n_teams].copy_from_slice(&p.log_strengths);
        x[self.rho_n()] = p.structural.log_rho_n;
        x[self.rho_d()] = p.structural.log_rho_d;
        if let (Some(b), Some(z)) = (self.tau_b(), self.tau_z()) {
            x[b] = p.structural.log_tau_b;
            x[z] = p.structural.log_tau_z;
        }
        if let Some(t) = self.tau() {
            x[t] = p.structural.log_tau;
        }
        if let Some(k) = self.kappa() {
            x[k] = p.structural.log_kappa;
        }
        for i in 0..self.n_teams {
            if let Some(d) = self.delta(i) {
                x[d] = p.log_delta[i];
            }
            if let Some(s) = self.split(i) {
                x[s] = p.home_split[i];
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64], points: PointsSystem) -> Parameters {
        let mut p = Parameters::unit(ModelSpec { points, variant: self.variant }, self.n_teams);
        p.log_strengths.copy_from_slice(&x[..self.n_teams]);
        p.structural.log_rho_n = x[self.rho_n()];
        p.structural.log_rho_d = x[self.rho_d()];
        if let (Some(b), Some(z)) = (self.tau_b(), self.tau_z()) {
            p.structural.log_tau_b = x[b];
            p.structural.log_tau_z = x[z];
        }
        if let Some(t) = self.tau() {
            p.structural.log_tau = x[t];
        }
        if let Some(k) = self.kappa() {
            p.structural.log_kappa = x[k];
        }
        for i in 0..self.n_teams {
            if let Some(d) = self.delta(i) {
                p.log_delta[i] = x[d];
            }
            if let Some(s) = self.split(i) {
                p.home_split[i] = x[s];
            }
        }
        p
    }

    /// Packed-vector terms a slot expands to for this fixture.
    fn slot_terms(&self, slot: Slot, f: &Fixture) -> Vec<(usize, f64)> {
        let home_ground = f.venue == Venue::HomeGround;
        let (h, a) = (f.home.0, f.away.0);
        let mut out = Vec::with_capacity(2);
        match slot {
            Slot::HomeStrength => {
                out.push((self.alpha(h), 1.0));
                if let (true, Some(s)) = (home_ground, self.split(h)) {
                    out.push((s, 1.0));
                }
            }
            Slot::AwayStrength => {
                out.push((self.alpha(a), 1.0));
                if let (true, Some(s)) = (home_ground, self.split(a)) {
                    out.push((s, -1.0));
                }
            }
            Slot::HomeDelta => out.extend(self.delta(h).map(|d| (d, 1.0))),
            Slot::AwayDelta => out.extend(self.delta(a).map(|d| (d, 1.0))),
            Slot::RhoN => out.push((self.rho_n(), 1.0)),
            Slot::RhoD => out.push((self.rho_d(), 1.0)),
            Slot::TauB => out.extend(self.tau_b().map(|i| (i, 1.0))),
            Slot::TauZ => out.extend(self.tau_z().map(|i| (i, 1.0))),
            Slot::Tau => out.extend(self.tau().map(|i| (i, 1.0))),
            Slot::Kappa => out.extend(self.kappa().map(|i| (i, 1.0))),
        }
        out
    }

    fn compile(&self, template: &[CellTerms], f: &Fixture) -> Vec<Cell> {
        template
            .iter()
            .map(|terms| {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                for &(slot, c) in terms {
                    for (idx, k) in self.slot_terms(slot, f) {
                        *acc.entry(idx).or_insert(0.0) += c * k;
                    }
                }
                Cell { terms: acc.into_iter().filter(|&(_, c)| c != 0.0).collect(), offset: 0.0 }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Cell {
    terms: Vec<(usize, f64)>,
    offset: f64,
}

#[derive(Clone, Debug)]
struct Block {
    cells: Vec<Cell>,
    counts: Vec<f64>,
    total: f64,
}

/// A sum of independent multinomial log-likelihoods, each log-linear in a
/// shared parameter vector.
#[derive(Clone, Debug)]
struct Problem {
    n_params: usize,
    blocks: Vec<Block>,
    observed: Vec<f64>,
}

impl Problem {
    fn new(n_params: usize, blocks: Vec<Block>) -> Self {
        let mut observed = vec![0.0; n_params];
        for b in &blocks {
            for (cell, &k) in b.cells.iter().zip(&b.counts) {
                if k != 0.0 {
                    for &(i, c) in &cell.terms {
                        observed[i] += k * c;
                    }
                }
            }
        }
        Self { n_params, blocks, observed }
    }

    fn log_weights(cells: &[Cell], x: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(cells.iter().map(|c| c.offset + c.terms.iter().map(|&(i, k)| k * x[i]).sum::<f64>()));
    }

    /// Log-likelihood and, when asked, its gradient.
    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut expected = grad.as_ref().map(|_| vec![0.0; self.n_params]);
        let mut lw = Vec::new();
        let mut ll = 0.0;
        for b in &self.blocks {
            Self::log_weights(&b.cells, x, &mut lw);
            let (p, lz) = normalize_log_weights(&lw);
            for (w, &k) in lw.iter().zip(&b.counts) {
                if k != 0.0 {
                    ll += k * w;
                }
            }
            ll -= b.total * lz;
            if let Some(e) = expected.as_mut() {
                for (cell, pc) in b.cells.iter().zip(&p) {
                    for &(i, c) in &cell.terms {
                        e[i] += b.total * pc * c;
                    }
                }
            }
        }
        if let (Some(g), Some(e)) = (grad, expected) {
            for i in 0..self.n_params {
                g[i] = self.observed[i] - e[i];
            }
        }
        ll
    }

    fn expected(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params];
        self.evaluate(x, Some(&mut g));
        self.observed.iter().zip(&g).map(|(o, g)| o - g).collect()
    }
}

fn data_blocks(layout: &Layout, spec: &ModelSpec, counts: &OutcomeCounts) -> Vec<Block> {
    let mut blocks = Vec::new();
    for (f, c) in &counts.pairs {
        let rt = c.result_matches();
        if rt > 0 {
            blocks.push(Block {
                cells: layout.compile(&spec.result_template(f.venue), f),
                counts: c.result.iter().map(|&k| f64::from(k)).collect(),
                total: f64::from(rt),
            });
        }
        let tt = c.try_matches();
        if tt > 0 {
            blocks.push(Block {
                cells: layout.compile(&spec.try_template(f.venue), f),
                counts: c.tries.iter().map(|&k| f64::from(k)).collect(),
                total: f64::from(tt),
            });
        }
    }
    blocks
}

/// One weighted win and one weighted loss per team against the dummy.
fn prior_blocks(strength_index: impl Fn(usize) -> usize, n_teams: usize, prior: &PriorConfig) -> Vec<Block> {
    if prior.weight == 0.0 {
        return Vec::new();
    }
    let w = prior.weight;
    (0..n_teams)
        .map(|i| Block {
            cells: vec![
                Cell { terms: vec![(strength_index(i), 1.0)], offset: 0.0 },
                Cell { terms: Vec::new(), offset: prior.dummy_strength.ln() },
            ],
            counts: vec![w, w],
            total: 2.0 * w,
        })
        .collect()
}

fn build_problem(layout: &Layout, spec: &ModelSpec, counts: &OutcomeCounts, prior: &PriorConfig) -> Problem {
    let mut blocks = data_blocks(layout, spec, counts);
    blocks.extend(prior_blocks(|i| layout.alpha(i), layout.n_teams, prior));
    Problem::new(layout.len(), blocks)
}

fn check_inputs(params: &Parameters, counts: &OutcomeCounts, prior: &PriorConfig) -> Result<Layout, FitError> {
    params.validate()?;
    prior.validate()?;
    if counts.n_teams > params.n_teams() {
        return Err(FitError::TeamCountMismatch { params: params.n_teams(), data: counts.n_teams });
    }
    Ok(Layout::new(params.n_teams(), params.spec.variant))
}

/// Log-likelihood of the counts plus the prior, including every per-pair
/// normaliser.
pub fn log_likelihood(params: &Parameters, counts: &OutcomeCounts, prior: &PriorConfig) -> Result<f64, FitError> {
    let layout = check_inputs(params, counts, prior)?;
    let problem = build_problem(&layout, &params.spec, counts, prior);
    Ok(problem.evaluate(&layout.pack(params), None))
}

/// Gradient of [`log_likelihood`] with respect to the log-parameters, in
/// [`Layout`] order.
pub fn score(params: &Parameters, counts: &OutcomeCounts, prior: &PriorConfig) -> Result<Vec<f64>, FitError> {
    let layout = check_inputs(params, counts, prior)?;
    let problem = build_problem(&layout, &params.spec, counts, prior);
    let mut g = vec![0.0; layout.len()];
    problem.evaluate(&layout.pack(params), Some(&mut g));
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
}

impl Residual {
    pub fn abs(&self) -> f64 {
        (self.observed - self.expected).abs()
    }

    pub fn relative(&self) -> f64 {
        self.abs() / self.observed.abs().max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the score over free parameters.
    pub gradient_norm: f64,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted step, starting point first.
    pub trace: Vec<f64>,
    /// League points per team, prior matches included on both sides.
    pub team_points: Vec<Residual>,
    /// Observed and expected statistic for every free parameter.
    pub statistics: Vec<Residual>,
    /// Offensive-defensive model: per-team try bonuses gained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub try_bonus_gained: Option<Vec<Residual>>,
    /// Offensive-defensive model: per-team matches without conceding a try bonus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub try_bonus_not_conceded: Option<Vec<Residual>>,
}

/// Level-form view of a parameter set, for readers of the JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub strengths: Vec<f64>,
    pub rho_n: f64,
    pub rho_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_strengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub away_strengths: Option<Vec<f64>>,
}

impl LevelSummary {
    pub fn of(p: &Parameters) -> Self {
        let v = p.spec.variant;
        let od = v.try_model == TryModel::OffensiveDefensive;
        let ts = v.home_model == HomeModel::TeamSpecific;
        let dep = v.try_model == TryModel::OppositionDependent;
        Self {
            strengths: p.strengths(),
            rho_n: p.rho_n(),
            rho_d: p.rho_d(),
            tau_b: dep.then(|| p.tau_b()),
            tau_z: dep.then(|| p.tau_z()),
            tau: (v.try_model == TryModel::OppositionIndependent).then(|| p.tau()),
            kappa: (v.home_model == HomeModel::SingleKappa).then(|| p.kappa()),
            deltas: od.then(|| p.deltas()),
            omegas: od.then(|| p.omegas()),
            home_strengths: ts.then(|| p.home_strengths()),
            away_strengths: ts.then(|| p.away_strengths()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Team names by id; empty when fitted from bare counts.
    #[serde(default)]
    pub teams: Vec<String>,
    pub variant: VariantConfig,
    pub points: PointsSystem,
    pub prior: PriorConfig,
    pub freeze: FrozenStructural,
    /// Gauge-normalised to generalized mean strength 1.
    pub parameters: Parameters,
    /// As converged.
    pub raw_parameters: Parameters,
    pub levels: LevelSummary,
    pub report: ConvergenceReport,
}

impl FittedModel {
    pub fn with_teams(mut self, names: Vec<String>) -> Self {
        self.teams = names;
        self
    }

    pub fn n_teams(&self) -> usize {
        self.parameters.n_teams()
    }
}

struct Optimum {
    x: Vec<f64>,
    f: f64,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
    stalled: bool,
    trace: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS ascent of `problem` over the coordinates in `free`.
fn maximize(problem: &Problem, x0: Vec<f64>, free: &[usize], tol: f64, max_iter: usize) -> Optimum {
    let n = free.len();
    let mut x = x0;
    let mut full_g = vec![0.0; problem.n_params];
    // minimise the negative log-likelihood
    let mut eval = |x: &[f64], g: &mut Vec<f64>| -> f64 {
        let ll = problem.evaluate(x, Some(&mut full_g));
        g.clear();
        g.extend(free.iter().map(|&i| -full_g[i]));
        -ll
    };
    let mut g = Vec::with_capacity(n);
    let mut f = eval(&x, &mut g);
    let mut trace = vec![-f];
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut iterations = 0;
    let mut stalled = false;
    let mut g_new = Vec::with_capacity(n);
    let mut x_new = x.clone();

    while max_abs(&g) > tol && iterations < max_iter {
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(n);
            h_is_identity = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            x_new.clone_from(&x);
            for (k, &i) in free.iter().enumerate() {
                x_new[i] += t * d[k];
            }
            let f_try = eval(&x_new, &mut g_new);
            if f_try.is_finite() {
                let armijo = f_try <= f + 1e-4 * t * slope;
                // near the optimum f changes at rounding level only; take the
                // step if it still shrinks the gradient
                let rounding = (f_try - f).abs() <= 1e-13 * (1.0 + f.abs()) && max_abs(&g_new) < max_abs(&g);
                if armijo || rounding {
                    accepted = Some(f_try);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(f_new) = accepted else {
            if h_is_identity {
                stalled = true;
                break;
            }
            h = identity(n);
            h_is_identity = true;
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = free.iter().map(|&i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * yy.sqrt() && sy > 0.0 {
            if h_is_identity {
                let scale = sy / yy;
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            h_is_identity = false;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        trace.push(-f);
    }
    let gradient_norm = max_abs(&g);
    Optimum { x, f: -f, gradient_norm, iterations, converged: gradient_norm <= tol, stalled, trace }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// H <- (I - r s y') H (I - r y s') + r s s', r = 1 / s'y.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + r * yhy) * r;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += c * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Whether shifting all strengths can be absorbed by the free structural
/// parameters, which leaves the data likelihood flat along that direction.
fn gauge_is_free(layout: &Layout, ps: &PointsSystem, free: &[bool]) -> bool {
    let draw_moves = 2 * ps.draw_points != ps.win_points + ps.loss_points;
    let try_free = match layout.variant.try_model {
        TryModel::OppositionDependent => free[layout.tau_b().unwrap()] && free[layout.tau_z().unwrap()],
        TryModel::OppositionIndependent => free[layout.tau().unwrap()],
        TryModel::OffensiveDefensive => true,
    };
    free[layout.rho_n()] && (!draw_moves || free[layout.rho_d()]) && try_free
}

/// Maximum-likelihood fit with the gauge normalised afterwards.
pub fn fit(counts: &OutcomeCounts, config: &FitConfig) -> Result<FittedModel, FitError> {
    config.validate()?;
    let m = counts.n_teams;
    let w = config.prior.weight;
    if m == 0 || (counts.is_empty() && w == 0.0) {
        return Err(FitError::NoData);
    }
    if w == 0.0 {
        let played = counts.matches_played();
        if let Some(i) = played.iter().position(|&k| k == 0) {
            return Err(FitError::TeamWithoutMatches(TeamId(i)));
        }
        let groups = components(m, counts.pairs.keys().map(|f| (f.home.0, f.away.0)));
        if groups > 1 {
            return Err(FitError::Disconnected(groups));
        }
    }

    let spec = config.spec();
    let layout = Layout::new(m, config.variant);
    let mut start = Parameters::unit(spec, m);
    let mut free = vec![true; layout.len()];
    let fz = &config.freeze;
    let mut hold = |idx: Option<usize>, v: Option<f64>, x: &mut f64| {
        if let (Some(i), Some(v)) = (idx, v) {
            free[i] = false;
            *x = v.ln();
        }
    };
    hold(Some(layout.rho_n()), fz.rho_n, &mut start.structural.log_rho_n);
    hold(Some(layout.rho_d()), fz.rho_d, &mut start.structural.log_rho_d);
    hold(layout.tau_b(), fz.tau_b, &mut start.structural.log_tau_b);
    hold(layout.tau_z(), fz.tau_z, &mut start.structural.log_tau_z);
    hold(layout.kappa(), fz.kappa, &mut start.structural.log_kappa);
    if w == 0.0 && gauge_is_free(&layout, &config.points, &free) {
        free[layout.alpha(0)] = false;
    }
    let free_idx: Vec<usize> = (0..layout.len()).filter(|&i| free[i]).collect();

    let problem = build_problem(&layout, &spec, counts, &config.prior);
    let opt = maximize(&problem, layout.pack(&start), &free_idx, config.tolerance, config.max_iterations);
    let raw = layout.unpack(&opt.x, config.points);

    let fail = |diagnosis: Diagnosis| FitError::NonConvergence {
        diagnosis,
        best: Box::new(raw.clone()),
        iterations: opt.iterations,
        gradient_norm: opt.gradient_norm,
    };
    let normalized = match raw.normalized() {
        Ok(p) => p,
        Err(_) => return Err(fail(diagnose(&raw, &raw, counts, &config.points).unwrap_or(Diagnosis::IterationLimit))),
    };
    if let Some(d) = diagnose(&raw, &normalized, counts, &config.points) {
        return Err(fail(d));
    }
    if !opt.converged {
        return Err(fail(if opt.stalled { Diagnosis::LineSearchStalled } else { Diagnosis::IterationLimit }));
    }

    let report = build_report(&problem, &layout, &opt, &free_idx, &raw, counts, &config.prior);
    Ok(FittedModel {
        teams: Vec::new(),
        variant: config.variant,
        points: config.points,
        prior: config.prior,
        freeze: config.freeze,
        levels: LevelSummary::of(&normalized),
        parameters: normalized,
        raw_parameters: raw,
        report,
    })
}

/// Fit with every structural parameter held at `fixed`; only strengths and
/// per-team variant parameters move.
pub fn freeze_and_refit(
    counts: &OutcomeCounts,
    fixed: &StructuralValues,
    config: &FitConfig,
) -> Result<FittedModel, FitError> {
    fixed.validate()?;
    let config = FitConfig { freeze: FrozenStructural::all(fixed), ..config.clone() };
    fit(counts, &config)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn diagnose(raw: &Parameters, norm: &Parameters, counts: &OutcomeCounts, ps: &PointsSystem) -> Option<Diagnosis> {
    let med = median(&norm.log_strengths);
    let worst = norm
        .log_strengths
        .iter()
        .enumerate()
        .map(|(i, a)| (i, (a - med).abs()))
        .filter(|(_, d)| *d > DIVERGENCE_LIMIT || !d.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, _)) = worst {
        let team = TeamId(i);
        let played = counts.matches_played()[i];
        let points = team_points(counts, ps)[i];
        let max_points = i64::from(played) * i64::from(ps.max_points());
        return Some(if points == max_points {
            Diagnosis::PerfectRecord(team)
        } else if points == 0 {
            Diagnosis::PointlessRecord(team)
        } else {
            Diagnosis::TeamDiverging(team)
        });
    }
    let stats = counts.suff_stats(ps);
    let v = norm.spec.variant;
    let s = &norm.structural;
    let mut checks: Vec<(&str, f64, String)> = vec![
        ("rho_n", s.log_rho_n, format!("{} narrow results observed", stats.narrow)),
        ("rho_d", s.log_rho_d, format!("{} draws observed", stats.draws)),
    ];
    match v.try_model {
        TryModel::OppositionDependent => {
            checks.push(("tau_b", s.log_tau_b, format!("{} matches with both try bonuses", stats.both_bonus)));
            checks.push(("tau_z", s.log_tau_z, format!("{} matches without a try bonus", stats.zero_bonus)));
        }
        TryModel::OppositionIndependent => checks.push(("tau", s.log_tau, "try bonus frequency extreme".into())),
        TryModel::OffensiveDefensive => {
            for (i, d) in norm.log_delta.iter().enumerate() {
                if (d - median(&norm.log_delta)).abs() > DIVERGENCE_LIMIT {
                    return Some(Diagnosis::StructuralDiverging {
                        parameter: format!("defence of team {}", TeamId(i)),
                        reason: "try bonus record extreme".into(),
                    });
                }
            }
        }
    }
    match v.home_model {
        HomeModel::SingleKappa => checks.push(("kappa", s.log_kappa, "home record extreme".into())),
        HomeModel::TeamSpecific => {
            for (i, sp) in raw.home_split.iter().enumerate() {
                if sp.abs() > DIVERGENCE_LIMIT {
                    return Some(Diagnosis::StructuralDiverging {
                        parameter: format!("home/away split of team {}", TeamId(i)),
                        reason: "home or away record extreme".into(),
                    });
                }
            }
        }
        HomeModel::None => {}
    }
    checks
        .into_iter()
        .find(|(_, x, _)| x.abs() > DIVERGENCE_LIMIT || !x.is_finite())
        .map(|(p, _, reason)| Diagnosis::StructuralDiverging { parameter: p.to_string(), reason })
}

fn team_points(counts: &OutcomeCounts, ps: &PointsSystem) -> Vec<i64> {
    counts.suff_stats(ps).points
}

fn build_report(
    problem: &Problem,
    layout: &Layout,
    opt: &Optimum,
    free_idx: &[usize],
    raw: &Parameters,
    counts: &OutcomeCounts,
    prior: &PriorConfig,
) -> ConvergenceReport {
    let expected = problem.expected(&opt.x);
    let labels = layout.labels(&[]);
    let residual = |i: usize| Residual { name: labels[i].clone(), observed: problem.observed[i], expected: expected[i] };
    let team_points = (0..layout.n_teams).map(residual).collect();
    let statistics = free_idx.iter().map(|&i| residual(i)).collect();
    let (gained, not_conceded) = if raw.spec.variant.try_model == TryModel::OffensiveDefensive {
        let (g, c) = try_bonus_residuals(raw, counts, prior);
        (Some(g), Some(c))
    } else {
        (None, None)
    };
    ConvergenceReport {
        converged: opt.converged,
        iterations: opt.iterations,
        gradient_norm: opt.gradient_norm,
        log_likelihood: opt.f,
        trace: opt.trace.clone(),
        team_points,
        statistics,
        try_bonus_gained: gained,
        try_bonus_not_conceded: not_conceded,
    }
}

/// Per-team try bonuses gained and matches without a try bonus conceded,
/// observed against expected over the fixtures with try data.
pub fn try_bonus_residuals(
    params: &Parameters,
    counts: &OutcomeCounts,
    _prior: &PriorConfig,
) -> (Vec<Residual>, Vec<Residual>) {
    let m = params.n_teams();
    let mut gained = vec![(0.0, 0.0); m];
    let mut clean = vec![(0.0, 0.0); m];
    for (f, c) in &counts.pairs {
        if c.try_matches() == 0 {
            continue;
        }
        let p = params.try_probs(f);
        let n = f64::from(c.try_matches());
        let obs = |idx: usize| f64::from(c.tries[idx]);
        // cells: both, home only, away only, none
        let home_gain = (obs(0) + obs(1), n * (p[0] + p[1]));
        let away_gain = (obs(0) + obs(2), n * (p[0] + p[2]));
        let home_clean = (obs(1) + obs(3), n * (p[1] + p[3]));
        let away_clean = (obs(2) + obs(3), n * (p[2] + p[3]));
        let add = |acc: &mut (f64, f64), (o, e): (f64, f64)| {
            acc.0 += o;
            acc.1 += e;
        };
        add(&mut gained[f.home.0], home_gain);
        add(&mut gained[f.away.0], away_gain);
        add(&mut clean[f.home.0], home_clean);
        add(&mut clean[f.away.0], away_clean);
    }
    let to = |v: Vec<(f64, f64)>, label: &str| {
        v.into_iter()
            .enumerate()
            .map(|(i, (o, e))| Residual { name: format!("{label}[#{i}]"), observed: o, expected: e })
            .collect()
    };
    (to(gained, "try_bonus_gained"), to(clean, "try_bonus_not_conceded"))
}

/// Observed (a, b) outcome counts per ordered pair for an [`OutcomeSet`].
pub type SetCounts = BTreeMap<(usize, usize), Vec<u32>>;

#[derive(Clone, Debug, PartialEq)]
pub struct SetFit {
    pub log_strengths: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

impl SetFit {
    /// Outcome probabilities for `i` against `j`.
    pub fn probs(&self, set: &OutcomeSet, i: usize, j: usize) -> Vec<f64> {
        set.probs(self.log_strengths[i], self.log_strengths[j])
    }
}

/// Maximum-likelihood strengths for the general pairwise model.
pub fn fit_outcome_set(
    set: &OutcomeSet,
    n_teams: usize,
    counts: &SetCounts,
    prior: &PriorConfig,
    tolerance: f64,
    max_iterations: usize,
) -> Result<SetFit, FitError> {
    prior.validate()?;
    if n_teams == 0 || set.outcomes.is_empty() {
        return Err(FitError::NoData);
    }
    let mut blocks = Vec::new();
    for (&(i, j), k) in counts {
        if i >= n_teams || j >= n_teams || k.len() != set.outcomes.len() {
            return Err(FitError::InvalidConfig(format!("bad counts for pair ({i}, {j})")));
        }
        let cells = set
            .outcomes
            .iter()
            .map(|&(a, b)| {
                let mut terms = Vec::new();
                if i == j {
                    terms.push((i, a + b));
                } else {
                    terms.push((i, a));
                    terms.push((j, b));
                }
                terms.retain(|t| t.1 != 0.0);
                Cell { terms, offset: 0.0 }
            })
            .collect();
        let total: u32 = k.iter().sum();
        if total > 0 {
            blocks.push(Block { cells, counts: k.iter().map(|&c| f64::from(c)).collect(), total: f64::from(total) });
        }
    }
    blocks.extend(prior_blocks(|i| i, n_teams, prior));
    let problem = Problem::new(n_teams, blocks);
    let sums: Vec<f64> = set.outcomes.iter().map(|(a, b)| a + b).collect();
    let shift_invariant = sums.iter().all(|s| *s == sums[0]);
    let free: Vec<usize> = if prior.weight == 0.0 && shift_invariant { (1..n_teams).collect() } else { (0..n_teams).collect() };
    let opt = maximize(&problem, vec![0.0; n_teams], &free, tolerance, max_iterations);
    Ok(SetFit {
        log_strengths: opt.x,
        iterations: opt.iterations,
        gradient_norm: opt.gradient_norm,
        converged: opt.converged,
    })
}
