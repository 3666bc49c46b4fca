//! Matches, outcome classification and the sufficient statistics of the model.
//!
//! A match is reduced to two categorical outcomes: one of five result outcomes
//! (wide/narrow win for either side, or a draw) and one of four try-bonus
//! outcomes. League points, and everything the estimator needs, follow from
//! those two values and the [`PointsSystem`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("invalid points system: {0}")]
    InvalidPointsSystem(String),
    #[error("invalid match: {0}")]
    InvalidMatch(String),
}

/// Index of a team inside a [`League`] or a parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TeamId(pub usize);

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Venue {
    HomeGround,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Home,
    Away,
}

/// League points awarded for results and bonuses.
///
/// The losing bonus and the try bonus are each worth one point. A losing
/// margin of exactly `losing_bonus_margin` still earns the losing bonus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointsSystem {
    pub win_points: i32,
    pub draw_points: i32,
    pub loss_points: i32,
    pub losing_bonus_margin: u32,
    pub try_bonus_threshold: u32,
}

impl Default for PointsSystem {
    fn default() -> Self {
        Self {
            win_points: 4,
            draw_points: 2,
            loss_points: 0,
            losing_bonus_margin: 7,
            try_bonus_threshold: 4,
        }
    }
}

impl PointsSystem {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.win_points > self.draw_points && self.draw_points > self.loss_points) {
            return Err(DomainError::InvalidPointsSystem(
                "require win_points > draw_points > loss_points".into(),
            ));
        }
        if self.loss_points < 0 {
            return Err(DomainError::InvalidPointsSystem("loss_points must be >= 0".into()));
        }
        if self.try_bonus_threshold < 1 {
            return Err(DomainError::InvalidPointsSystem(
                "try_bonus_threshold must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Largest number of league points one side can take from a match.
    pub fn max_points(&self) -> i32 {
        self.win_points + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResultOutcome {
    HomeWide,
    HomeNarrow,
    Draw,
    AwayNarrow,
    AwayWide,
}

impl ResultOutcome {
    pub const ALL: [ResultOutcome; 5] = [
        ResultOutcome::HomeWide,
        ResultOutcome::HomeNarrow,
        ResultOutcome::Draw,
        ResultOutcome::AwayNarrow,
        ResultOutcome::AwayWide,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The same result seen with home and away exchanged.
    pub fn mirrored(self) -> Self {
        match self {
            ResultOutcome::HomeWide => ResultOutcome::AwayWide,
            ResultOutcome::HomeNarrow => ResultOutcome::AwayNarrow,
            ResultOutcome::Draw => ResultOutcome::Draw,
            ResultOutcome::AwayNarrow => ResultOutcome::HomeNarrow,
            ResultOutcome::AwayWide => ResultOutcome::HomeWide,
        }
    }

    pub fn is_narrow(self) -> bool {
        matches!(self, ResultOutcome::HomeNarrow | ResultOutcome::AwayNarrow)
    }

    pub fn winner(self) -> Option<Side> {
        match self {
            ResultOutcome::HomeWide | ResultOutcome::HomeNarrow => Some(Side::Home),
            ResultOutcome::Draw => None,
            ResultOutcome::AwayNarrow | ResultOutcome::AwayWide => Some(Side::Away),
        }
    }

    /// (home, away) league points from the result alone.
    pub fn points(self, ps: &PointsSystem) -> (i32, i32) {
        let (w, d, l) = (ps.win_points, ps.draw_points, ps.loss_points);
        match self {
            ResultOutcome::HomeWide => (w, l),
            ResultOutcome::HomeNarrow => (w, l + 1),
            ResultOutcome::Draw => (d, d),
            ResultOutcome::AwayNarrow => (l + 1, w),
            ResultOutcome::AwayWide => (l, w),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TryOutcome {
    BothBonus,
    HomeBonus,
    AwayBonus,
    ZeroBonus,
}

impl TryOutcome {
    pub const ALL: [TryOutcome; 4] = [
        TryOutcome::BothBonus,
        TryOutcome::HomeBonus,
        TryOutcome::AwayBonus,
        TryOutcome::ZeroBonus,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_flags(home: bool, away: bool) -> Self {
        match (home, away) {
            (true, true) => TryOutcome::BothBonus,
            (true, false) => TryOutcome::HomeBonus,
            (false, true) => TryOutcome::AwayBonus,
            (false, false) => TryOutcome::ZeroBonus,
        }
    }

    /// (home, away) bonus points.
    pub fn points(self) -> (i32, i32) {
        match self {
            TryOutcome::BothBonus => (1, 1),
            TryOutcome::HomeBonus => (1, 0),
            TryOutcome::AwayBonus => (0, 1),
            TryOutcome::ZeroBonus => (0, 0),
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            TryOutcome::HomeBonus => TryOutcome::AwayBonus,
            TryOutcome::AwayBonus => TryOutcome::HomeBonus,
            other => other,
        }
    }
}

pub fn classify_result(home_score: u32, away_score: u32, ps: &PointsSystem) -> ResultOutcome {
    let margin = i64::from(home_score) - i64::from(away_score);
    let narrow = margin.unsigned_abs() <= u64::from(ps.losing_bonus_margin);
    match (margin.signum(), narrow) {
        (0, _) => ResultOutcome::Draw,
        (1, true) => ResultOutcome::HomeNarrow,
        (1, false) => ResultOutcome::HomeWide,
        (_, true) => ResultOutcome::AwayNarrow,
        (_, false) => ResultOutcome::AwayWide,
    }
}

pub fn classify_try(home_tries: u32, away_tries: u32, ps: &PointsSystem) -> TryOutcome {
    TryOutcome::from_flags(
        home_tries >= ps.try_bonus_threshold,
        away_tries >= ps.try_bonus_threshold,
    )
}

pub fn league_points(r: ResultOutcome, t: TryOutcome, ps: &PointsSystem) -> (i32, i32) {
    let (rh, ra) = r.points(ps);
    let (th, ta) = t.points();
    (rh + th, ra + ta)
}

/// One cleaned fixture.
///
/// `award` marks a declared win recorded without a score: the named side
/// takes a narrow win and neither side a try bonus, whatever the score
/// fields say.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub home: TeamId,
    pub away: TeamId,
    pub home_score: u32,
    pub away_score: u32,
    pub home_tries: u32,
    pub away_tries: u32,
    pub venue: Venue,
    pub award: Option<Side>,
}

/// The classified outcome of a match. `tries` is `None` for awarded matches,
/// which carry no evidence about try propensity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchOutcome {
    pub result: ResultOutcome,
    pub tries: Option<TryOutcome>,
}

impl MatchOutcome {
    pub fn points(&self, ps: &PointsSystem) -> (i32, i32) {
        league_points(self.result, self.tries.unwrap_or(TryOutcome::ZeroBonus), ps)
    }
}

impl MatchRecord {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.home == self.away {
            return Err(DomainError::InvalidMatch(format!("team {} plays itself", self.home)));
        }
        if self.award.is_none()
            && (self.home_score < 5 * self.home_tries || self.away_score < 5 * self.away_tries)
        {
            return Err(DomainError::InvalidMatch(format!(
                "score {}-{} cannot contain tries {}-{}",
                self.home_score, self.away_score, self.home_tries, self.away_tries
            )));
        }
        Ok(())
    }

    pub fn outcome(&self, ps: &PointsSystem) -> MatchOutcome {
        match self.award {
            Some(Side::Home) => MatchOutcome { result: ResultOutcome::HomeNarrow, tries: None },
            Some(Side::Away) => MatchOutcome { result: ResultOutcome::AwayNarrow, tries: None },
            None => MatchOutcome {
                result: classify_result(self.home_score, self.away_score, ps),
                tries: Some(classify_try(self.home_tries, self.away_tries, ps)),
            },
        }
    }

    pub fn involves(&self, team: TeamId) -> bool {
        self.home == team || self.away == team
    }
}

/// Team names plus the matches between them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct League {
    pub teams: Vec<String>,
    pub matches: Vec<MatchRecord>,
}

impl League {
    pub fn team_id(&self, name: &str) -> Option<TeamId> {
        self.teams.iter().position(|t| t == name).map(TeamId)
    }

    pub fn name(&self, id: TeamId) -> &str {
        &self.teams[id.0]
    }

    /// Id for `name`, registering it if new.
    pub fn intern(&mut self, name: &str) -> TeamId {
        match self.team_id(name) {
            Some(id) => id,
            None => {
                self.teams.push(name.to_string());
                TeamId(self.teams.len() - 1)
            }
        }
    }

    pub fn counts(&self, ps: &PointsSystem) -> OutcomeCounts {
        OutcomeCounts::from_matches(self.teams.len(), &self.matches, ps)
    }
}

/// Home team, away team and venue: the unit the likelihood is grouped by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fixture {
    pub home: TeamId,
    pub away: TeamId,
    pub venue: Venue,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Indexed by [`ResultOutcome::index`].
    pub result: [u32; 5],
    /// Indexed by [`TryOutcome::index`].
    pub tries: [u32; 4],
}

impl PairCounts {
    pub fn result_matches(&self) -> u32 {
        self.result.iter().sum()
    }

    pub fn try_matches(&self) -> u32 {
        self.tries.iter().sum()
    }
}

/// Outcome frequencies per ordered (home, away, venue) fixture.
///
/// Awarded matches add to the result counts only, so a fixture's try total
/// can be smaller than its result total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub n_teams: usize,
    pub pairs: BTreeMap<Fixture, PairCounts>,
}

impl OutcomeCounts {
    pub fn new(n_teams: usize) -> Self {
        Self { n_teams, pairs: BTreeMap::new() }
    }

    pub fn from_matches(n_teams: usize, matches: &[MatchRecord], ps: &PointsSystem) -> Self {
        let mut counts = Self::new(n_teams);
        for m in matches {
            let fixture = Fixture { home: m.home, away: m.away, venue: m.venue };
            counts.record(fixture, m.outcome(ps));
        }
        counts
    }

    pub fn record(&mut self, fixture: Fixture, outcome: MatchOutcome) {
        let n = fixture.home.0.max(fixture.away.0) + 1;
        self.n_teams = self.n_teams.max(n);
        let entry = self.pairs.entry(fixture).or_default();
        entry.result[outcome.result.index()] += 1;
        if let Some(t) = outcome.tries {
            entry.tries[t.index()] += 1;
        }
    }

    pub fn total_matches(&self) -> u32 {
        self.pairs.values().map(PairCounts::result_matches).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Matches played per team (result counts).
    pub fn matches_played(&self) -> Vec<u32> {
        let mut played = vec![0; self.n_teams];
        for (f, c) in &self.pairs {
            played[f.home.0] += c.result_matches();
            played[f.away.0] += c.result_matches();
        }
        played
    }

    pub fn suff_stats(&self, ps: &PointsSystem) -> SuffStats {
        let mut s = SuffStats::zeros(self.n_teams);
        for (f, c) in &self.pairs {
            for r in ResultOutcome::ALL {
                let k = i64::from(c.result[r.index()]);
                if k == 0 {
                    continue;
                }
                let (ph, pa) = r.points(ps);
                s.add_points(f, k, ph, pa);
                match r {
                    ResultOutcome::Draw => s.draws += k as u64,
                    _ if r.is_narrow() => s.narrow += k as u64,
                    _ => {}
                }
            }
            for t in TryOutcome::ALL {
                let k = i64::from(c.tries[t.index()]);
                if k == 0 {
                    continue;
                }
                let (ph, pa) = t.points();
                s.add_points(f, k, ph, pa);
                match t {
                    TryOutcome::BothBonus => s.both_bonus += k as u64,
                    TryOutcome::ZeroBonus => s.zero_bonus += k as u64,
                    _ => {}
                }
            }
        }
        s
    }
}

/// The statistic (p, n, d, b, z, h).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffStats {
    /// League points per team.
    pub points: Vec<i64>,
    pub narrow: u64,
    pub draws: u64,
    pub both_bonus: u64,
    pub zero_bonus: u64,
    /// Home minus away league points, summed over matches at a home ground.
    pub home_diff: i64,
}

impl SuffStats {
    pub fn zeros(n_teams: usize) -> Self {
        Self { points: vec![0; n_teams], ..Default::default() }
    }

    fn add_points(&mut self, f: &Fixture, k: i64, ph: i32, pa: i32) {
        self.points[f.home.0] += k * i64::from(ph);
        self.points[f.away.0] += k * i64::from(pa);
        if f.venue == Venue::HomeGround {
            self.home_diff += k * i64::from(ph - pa);
        }
    }

    pub fn total_points(&self) -> i64 {
        self.points.iter().sum()
    }
}

/// Aggregates (p, n, d, b, z, h) over `matches`. The team count is taken
/// from the largest id seen.
pub fn sufficient_stats(matches: &[MatchRecord], ps: &PointsSystem) -> SuffStats {
    let n_teams = matches.iter().map(|m| m.home.0.max(m.away.0) + 1).max().unwrap_or(0);
    OutcomeCounts::from_matches(n_teams, matches, ps).suff_stats(ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps() -> PointsSystem {
        PointsSystem::default()
    }

    fn game(hs: u32, as_: u32, ht: u32, at: u32, venue: Venue) -> MatchRecord {
        MatchRecord {
            home: TeamId(0),
            away: TeamId(1),
            home_score: hs,
            away_score: as_,
            home_tries: ht,
            away_tries: at,
            venue,
            award: None,
        }
    }

    #[test]
    fn result_classification() {
        assert_eq!(classify_result(24, 10, &ps()), ResultOutcome::HomeWide);
        assert_eq!(classify_result(20, 15, &ps()), ResultOutcome::HomeNarrow);
        assert_eq!(classify_result(10, 17, &ps()), ResultOutcome::AwayNarrow);
        assert_eq!(classify_result(10, 18, &ps()), ResultOutcome::AwayWide);
        assert_eq!(classify_result(12, 12, &ps()), ResultOutcome::Draw);
    }

    #[test]
    fn try_classification() {
        assert_eq!(classify_try(4, 1, &ps()), TryOutcome::HomeBonus);
        assert_eq!(classify_try(5, 4, &ps()), TryOutcome::BothBonus);
        assert_eq!(classify_try(3, 3, &ps()), TryOutcome::ZeroBonus);
        assert_eq!(classify_try(0, 4, &ps()), TryOutcome::AwayBonus);
    }

    #[test]
    fn points_table() {
        let p = ps();
        assert_eq!(league_points(ResultOutcome::HomeWide, TryOutcome::HomeBonus, &p), (5, 0));
        assert_eq!(league_points(ResultOutcome::AwayNarrow, TryOutcome::ZeroBonus, &p), (1, 4));
        assert_eq!(league_points(ResultOutcome::Draw, TryOutcome::BothBonus, &p), (3, 3));
    }

    #[test]
    fn points_system_validation() {
        assert!(ps().validate().is_ok());
        let bad = PointsSystem { draw_points: 4, ..ps() };
        assert!(bad.validate().is_err());
        let bad = PointsSystem { try_bonus_threshold: 0, ..ps() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_match_stats() {
        let s = sufficient_stats(&[game(24, 10, 4, 1, Venue::HomeGround)], &ps());
        assert_eq!(s.points, vec![5, 0]);
        assert_eq!((s.narrow, s.draws, s.both_bonus, s.zero_bonus, s.home_diff), (0, 0, 0, 0, 5));
    }

    #[test]
    fn neutral_match_excluded_from_home_diff() {
        let s = sufficient_stats(&[game(20, 15, 1, 1, Venue::Neutral)], &ps());
        assert_eq!(s.points, vec![4, 1]);
        assert_eq!(s.narrow, 1);
        assert_eq!(s.zero_bonus, 1);
        assert_eq!(s.home_diff, 0);
    }

    #[test]
    fn empty_stats() {
        let s = sufficient_stats(&[], &ps());
        assert_eq!(s, SuffStats::zeros(0));
    }

    #[test]
    fn awarded_match_has_no_try_evidence() {
        let mut m = game(0, 0, 0, 0, Venue::HomeGround);
        m.award = Some(Side::Away);
        let o = m.outcome(&ps());
        assert_eq!(o.result, ResultOutcome::AwayNarrow);
        assert_eq!(o.tries, None);
        assert_eq!(o.points(&ps()), (1, 4));
        let c = OutcomeCounts::from_matches(2, &[m], &ps());
        let pc = c.pairs.values().next().unwrap();
        assert_eq!(pc.result_matches(), 1);
        assert_eq!(pc.try_matches(), 0);
        assert_eq!(c.suff_stats(&ps()).points, vec![1, 4]);
    }

    #[test]
    fn record_validation() {
        assert!(game(10, 0, 3, 0, Venue::HomeGround).validate().is_err());
        let mut m = game(10, 0, 2, 0, Venue::HomeGround);
        assert!(m.validate().is_ok());
        m.away = TeamId(0);
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn points_per_match_in_range(hs in 0u32..80, as_ in 0u32..80, ht in 0u32..12, at in 0u32..12) {
            let p = ps();
            let (h, a) = league_points(classify_result(hs, as_, &p), classify_try(ht, at, &p), &p);
            prop_assert!((4..=7).contains(&(h + a)));
        }

        #[test]
        fn result_is_antisymmetric(hs in 0u32..100, as_ in 0u32..100, margin in 0u32..20) {
            let p = PointsSystem { losing_bonus_margin: margin, ..ps() };
            prop_assert_eq!(classify_result(hs, as_, &p).mirrored(), classify_result(as_, hs, &p));
        }

        #[test]
        fn total_points_match_per_match_sum(games in prop::collection::vec((0usize..5, 1usize..5, 0u32..60, 0u32..60, 0u32..8, 0u32..8, any::<bool>()), 0..40)) {
            let p = ps();
            let matches: Vec<MatchRecord> = games.iter().map(|&(h, off, hs, as_, ht, at, neutral)| MatchRecord {
                home: TeamId(h),
                away: TeamId((h + off) % 5),
                home_score: hs, away_score: as_, home_tries: ht, away_tries: at,
                venue: if neutral { Venue::Neutral } else { Venue::HomeGround },
                award: None,
            }).collect();
            let s = sufficient_stats(&matches, &p);
            let direct: i64 = matches.iter().map(|m| { let (a, b) = m.outcome(&p).points(&p); i64::from(a + b) }).sum();
            prop_assert_eq!(s.total_points(), direct);
        }

        #[test]
        fn mirrored_schedule_has_zero_home_diff(games in prop::collection::vec((0u32..60, 0u32..60, 0u32..8, 0u32..8), 1..20)) {
            let p = ps();
            let mut matches = Vec::new();
            for &(hs, as_, ht, at) in &games {
                let m = game(hs, as_, ht, at, Venue::HomeGround);
                let back = MatchRecord {
                    home: m.away,
                    away: m.home,
                    home_score: as_,
                    away_score: hs,
                    home_tries: at,
                    away_tries: ht,
                    ..m.clone()
                };
                matches.push(m);
                matches.push(back);
            }
            prop_assert_eq!(sufficient_stats(&matches, &p).home_diff, 0);
        }
    }
}
