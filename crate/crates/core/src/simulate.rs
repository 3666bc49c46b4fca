//! Sampling seasons from a parameterised model, and parameter-recovery studies.
//!
//! Every fixture draws from its own ChaCha8 stream position, keyed by
//! (seed, replicate, fixture index), so replicates are independent of each
//! other and of the order they run in.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Fixture, MatchOutcome, OutcomeCounts, ResultOutcome, TeamId, TryOutcome, Venue};
use crate::estimate::{fit, FitConfig, FitError};
use crate::model::{HomeModel, Parameters, TryModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: usize,
}

/// Random stream for one fixture of one replicate.
pub fn fixture_rng(seed: u64, replicate: u64, fixture_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    // one 16-word block per fixture
    rng.set_word_pos(u128::from(fixture_index) * 16);
    rng
}

fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws the result and try outcomes independently from their blocks.
pub fn sample_match(params: &Parameters, fixture: &Fixture, rng: &mut impl RngCore) -> (ResultOutcome, TryOutcome) {
    let d = params.distribution(fixture);
    let r = pick(&d.result, uniform(rng));
    let t = pick(&d.tries, uniform(rng));
    (ResultOutcome::ALL[r], TryOutcome::ALL[t])
}

pub fn simulate_season(params: &Parameters, fixtures: &[Fixture], seed: u64, replicate: u64) -> OutcomeCounts {
    let mut counts = OutcomeCounts::new(params.n_teams());
    for (k, f) in fixtures.iter().enumerate() {
        let mut rng = fixture_rng(seed, replicate, k as u64);
        let (r, t) = sample_match(params, f, &mut rng);
        counts.record(*f, MatchOutcome { result: r, tries: Some(t) });
    }
    counts
}

/// Every ordered pair once, at the home team's ground.
pub fn double_round_robin(n_teams: usize) -> Vec<Fixture> {
    let mut out = Vec::with_capacity(n_teams * n_teams.saturating_sub(1));
    for h in 0..n_teams {
        for a in 0..n_teams {
            if h != a {
                out.push(Fixture { home: TeamId(h), away: TeamId(a), venue: Venue::HomeGround });
            }
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side has no spread.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let r = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            ranks[i] = r;
        }
        k = e + 1;
    }
    ranks
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Normalised fitted values, in [`RecoveryReport::parameters`] order.
    pub estimates: Vec<f64>,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub seed: u64,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub replicates: Vec<ReplicateResult>,
    pub summaries: Vec<ParameterSummary>,
    pub non_convergent: usize,
    pub median_spearman: Option<f64>,
    /// False when the true strengths have no spread.
    pub spearman_defined: bool,
}

/// Structural parameters the variant uses, as (name, level value).
fn structural_of(p: &Parameters) -> Vec<(String, f64)> {
    let v = p.spec.variant;
    let mut out = vec![("rho_n".to_string(), p.rho_n()), ("rho_d".to_string(), p.rho_d())];
    match v.try_model {
        TryModel::OppositionDependent => {
            out.push(("tau_b".into(), p.tau_b()));
            out.push(("tau_z".into(), p.tau_z()));
        }
        TryModel::OppositionIndependent => out.push(("tau".into(), p.tau())),
        TryModel::OffensiveDefensive => {}
    }
    if v.home_model == HomeModel::SingleKappa {
        out.push(("kappa".into(), p.kappa()));
    }
    out
}

fn estimates_of(p: &Parameters) -> Vec<(String, f64)> {
    let mut out = structural_of(p);
    out.extend(p.strengths().into_iter().enumerate().map(|(i, s)| (format!("strength[{i}]"), s)));
    out
}

/// Simulates `cfg.replicates` seasons from `truth` and fits each one.
/// Failed fits are recorded and excluded from the summaries.
pub fn recovery_study(truth: &Parameters, fixtures: &[Fixture], cfg: &SimConfig, fit_config: &FitConfig) -> RecoveryReport {
    let truth_norm = truth.normalized().unwrap_or_else(|_| truth.clone());
    let truth_named = estimates_of(&truth_norm);
    let names: Vec<String> = truth_named.iter().map(|(n, _)| n.clone()).collect();
    let truth_values: Vec<f64> = truth_named.iter().map(|(_, v)| *v).collect();
    let true_strengths = truth_norm.strengths();
    let spearman_defined = spearman(&true_strengths, &true_strengths).is_some();

    let fit_config = FitConfig { points: truth.spec.points, variant: truth.spec.variant, ..fit_config.clone() };
    let mut replicates = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let counts = simulate_season(truth, fixtures, cfg.seed, r as u64);
        match fit(&counts, &fit_config) {
            Ok(fm) => {
                let est: Vec<f64> = estimates_of(&fm.parameters).into_iter().map(|(_, v)| v).collect();
                replicates.push(ReplicateResult {
                    replicate: r,
                    converged: true,
                    error: None,
                    spearman: spearman(&true_strengths, &fm.parameters.strengths()),
                    estimates: est,
                });
            }
            Err(e) => {
                let estimates = match &e {
                    FitError::NonConvergence { best, .. } => best
                        .normalized()
                        .map(|p| estimates_of(&p).into_iter().map(|(_, v)| v).collect())
                        .unwrap_or_default(),
                    _ => Vec::new(),
                };
                replicates.push(ReplicateResult {
                    replicate: r,
                    converged: false,
                    error: Some(e.to_string()),
                    estimates,
                    spearman: None,
                });
            }
        }
    }

    let ok: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.converged).collect();
    let summaries = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<f64> = ok.iter().map(|r| r.estimates[k]).collect();
            let n = vals.len() as f64;
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / n);
            let sd = mean.filter(|_| vals.len() > 1).map(|m| {
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
            });
            ParameterSummary {
                name: name.clone(),
                truth: truth_values[k],
                median: median(&vals),
                mean,
                bias: mean.map(|m| m - truth_values[k]),
                sd,
            }
        })
        .collect();
    let rhos: Vec<f64> = ok.iter().filter_map(|r| r.spearman).collect();
    RecoveryReport {
        seed: cfg.seed,
        parameters: names,
        truth: truth_values,
        non_convergent: replicates.len() - ok.len(),
        median_spearman: median(&rhos),
        spearman_defined,
        replicates,
        summaries,
    }
}

impl RecoveryReport {
    pub fn summary(&self, name: &str) -> Option<&ParameterSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    /// One row per replicate per parameter.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["replicate", "parameter", "truth", "estimate", "converged"])?;
        for r in &self.replicates {
            for (k, name) in self.parameters.iter().enumerate() {
                let est = r.estimates.get(k).map(|v| format!("{v:.17e}")).unwrap_or_default();
                w.write_record([
                    r.replicate.to_string(),
                    name.clone(),
                    format!("{:.17e}", self.truth[k]),
                    est,
                    r.converged.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
