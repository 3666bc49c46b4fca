//! Reading result CSVs and repairing self-inconsistent rows.
//!
//! Cleaning applies five rules to each row, in a fixed order, and records
//! every change in an audit log:
//!
//! * R1 tries impossible for the score: swap the try counts if that fixes
//!   it, otherwise cut the offending side to `score / 5` tries;
//! * R2 venue `tbc` becomes `Neutral`;
//! * R3 a declared win with a 0-0 score and no tries becomes an awarded
//!   result (`Won-awarded` / `Loss-awarded`), a narrow win without bonuses;
//! * R4 a blank try count becomes `score / 5`;
//! * R5 a score contradicting the declared result, where the tries agree
//!   with the declaration and the reversed score is possible, is reversed.
//!
//! Rows that cannot be repaired are rejected and reported, never dropped.
//! Cleaned output uses the input schema, so cleaning is idempotent.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{League, MatchRecord, Side, Venue};

pub const HEADER: [&str; 9] = [
    "date",
    "home_team",
    "away_team",
    "home_score",
    "away_score",
    "home_tries",
    "away_tries",
    "venue",
    "declared_result",
];

pub const AUDIT_HEADER: [&str; 6] = ["row", "rule", "field", "before", "after", "description"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}; expected {}", HEADER.join(","))]
    Header { found: Vec<String> },
    #[error("row {row}, column {column}: cannot read {value:?} as a non-negative integer")]
    Cell { row: usize, column: &'static str, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: usize, expected: usize, found: usize },
    #[error("audit row {row}: {reason}")]
    Audit { row: usize, reason: String },
}

/// One CSV data row, before validation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawMatchRow {
    pub date: String,
    pub home_team: String,
    pub away_team: String,
    pub home_score: Option<u32>,
    pub away_score: Option<u32>,
    pub home_tries: Option<u32>,
    pub away_tries: Option<u32>,
    pub venue: String,
    pub declared_result: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::R1 => "R1",
            Rule::R2 => "R2",
            Rule::R3 => "R3",
            Rule::R4 => "R4",
            Rule::R5 => "R5",
        }
    }

    fn parse(s: &str) -> Option<Rule> {
        Some(match s {
            "R1" => Rule::R1,
            "R2" => Rule::R2,
            "R3" => Rule::R3,
            "R4" => Rule::R4,
            "R5" => Rule::R5,
            _ => return None,
        })
    }
}

/// One rule applied to one row. Multi-field changes list fields, and their
/// before/after values, separated by `;`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningAction {
    /// 1-based data row number.
    pub row: usize,
    pub rule: Rule,
    pub field: String,
    pub before: String,
    pub after: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleanOutput {
    /// Accepted rows after cleaning, in input order.
    pub rows: Vec<RawMatchRow>,
    /// 1-based input row number of each accepted row.
    pub row_numbers: Vec<usize>,
    /// Accepted rows as matches; teams numbered by first appearance.
    pub league: League,
    pub actions: Vec<CleaningAction>,
    pub rejected: Vec<Rejection>,
}

fn parse_count(row: usize, column: &'static str, s: &str) -> Result<Option<u32>, IngestError> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<u32>()
        .map(Some)
        .map_err(|_| IngestError::Cell { row, column, value: s.to_string() })
}

/// Reads the result schema; blank numeric cells become `None`.
pub fn parse_csv(input: impl Read) -> Result<Vec<RawMatchRow>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != HEADER {
        return Err(IngestError::Header { found: header });
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        if rec.len() != HEADER.len() {
            return Err(IngestError::FieldCount { row, expected: HEADER.len(), found: rec.len() });
        }
        rows.push(RawMatchRow {
            date: rec[0].to_string(),
            home_team: rec[1].trim().to_string(),
            away_team: rec[2].trim().to_string(),
            home_score: parse_count(row, "home_score", &rec[3])?,
            away_score: parse_count(row, "away_score", &rec[4])?,
            home_tries: parse_count(row, "home_tries", &rec[5])?,
            away_tries: parse_count(row, "away_tries", &rec[6])?,
            venue: rec[7].trim().to_string(),
            declared_result: rec[8].trim().to_string(),
        });
    }
    Ok(rows)
}

fn opt(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv(rows: &[RawMatchRow]) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.date.clone(),
            r.home_team.clone(),
            r.away_team.clone(),
            opt(r.home_score),
            opt(r.away_score),
            opt(r.home_tries),
            opt(r.away_tries),
            r.venue.clone(),
            r.declared_result.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_audit_csv(actions: &[CleaningAction]) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AUDIT_HEADER)?;
    for a in actions {
        w.write_record([
            a.row.to_string(),
            a.rule.as_str().to_string(),
            a.field.clone(),
            a.before.clone(),
            a.after.clone(),
            a.description.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_audit_csv(input: impl Read) -> Result<Vec<CleaningAction>, IngestError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != AUDIT_HEADER {
        return Err(IngestError::Header { found: header });
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |reason: &str| IngestError::Audit { row: k + 1, reason: reason.to_string() };
        out.push(CleaningAction {
            row: rec[0].parse().map_err(|_| bad("row is not a number"))?,
            rule: Rule::parse(&rec[1]).ok_or_else(|| bad("unknown rule"))?,
            field: rec[2].to_string(),
            before: rec[3].to_string(),
            after: rec[4].to_string(),
            description: rec[5].to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Declared {
    Win,
    Draw,
    Loss,
    AwardedWin,
    AwardedLoss,
}

const AWARDED_WIN: &str = "Won-awarded";
const AWARDED_LOSS: &str = "Loss-awarded";

fn parse_declared(s: &str) -> Result<Option<Declared>, String> {
    let d = match s.trim().to_ascii_lowercase().as_str() {
        "" => return Ok(None),
        "won" | "win" | "w" => Declared::Win,
        "draw" | "drew" | "drawn" | "d" => Declared::Draw,
        "loss" | "lost" | "lose" | "l" => Declared::Loss,
        "won-awarded" => Declared::AwardedWin,
        "loss-awarded" => Declared::AwardedLoss,
        _ => return Err(format!("unknown declared result {s:?}")),
    };
    Ok(Some(d))
}

/// `Home` or `Neutral`, case-insensitive.
pub fn parse_venue(s: &str) -> Option<Venue> {
    match s.trim().to_ascii_lowercase().as_str() {
        "home" => Some(Venue::HomeGround),
        "neutral" => Some(Venue::Neutral),
        _ => None,
    }
}

/// Which side a score or try count favours, or `None` for level.
fn leader(home: u32, away: u32) -> Option<Side> {
    match home.cmp(&away) {
        std::cmp::Ordering::Greater => Some(Side::Home),
        std::cmp::Ordering::Less => Some(Side::Away),
        std::cmp::Ordering::Equal => None,
    }
}

fn declared_leader(d: Declared) -> Option<Side> {
    match d {
        Declared::Win | Declared::AwardedWin => Some(Side::Home),
        Declared::Loss | Declared::AwardedLoss => Some(Side::Away),
        Declared::Draw => None,
    }
}

fn fits(score: u32, tries: Option<u32>) -> bool {
    tries.is_none_or(|t| score >= 5 * t)
}

struct Changes {
    fields: Vec<&'static str>,
    before: Vec<String>,
    after: Vec<String>,
}

impl Changes {
    fn new() -> Self {
        Self { fields: Vec::new(), before: Vec::new(), after: Vec::new() }
    }

    fn push(&mut self, field: &'static str, before: String, after: String) {
        self.fields.push(field);
        self.before.push(before);
        self.after.push(after);
    }

    fn into_action(self, row: usize, rule: Rule, description: String) -> Option<CleaningAction> {
        (!self.fields.is_empty()).then(|| CleaningAction {
            row,
            rule,
            field: self.fields.join(";"),
            before: self.before.join(";"),
            after: self.after.join(";"),
            description,
        })
    }
}

/// Applies R1-R5 to one row. Returns the repaired row and its actions, or
/// the reason it cannot be used.
pub fn clean_row(row: usize, raw: &RawMatchRow) -> Result<(RawMatchRow, Vec<CleaningAction>), String> {
    let mut r = raw.clone();
    let mut actions = Vec::new();
    if r.home_team.is_empty() || r.away_team.is_empty() {
        return Err("team name missing".into());
    }
    if r.home_team == r.away_team {
        return Err(format!("{} listed as both home and away", r.home_team));
    }
    let (Some(hs), Some(as_)) = (r.home_score, r.away_score) else {
        return Err("score missing".into());
    };
    let declared = parse_declared(&r.declared_result)?;

    // R1
    if !fits(hs, r.home_tries) || !fits(as_, r.away_tries) {
        let mut c = Changes::new();
        let swapped_ok = matches!((r.home_tries, r.away_tries), (Some(ht), Some(at)) if hs >= 5 * at && as_ >= 5 * ht);
        let description = if swapped_ok {
            let (ht, at) = (r.home_tries.unwrap(), r.away_tries.unwrap());
            c.push("home_tries", ht.to_string(), at.to_string());
            c.push("away_tries", at.to_string(), ht.to_string());
            r.home_tries = Some(at);
            r.away_tries = Some(ht);
            "try counts swapped to match the score".to_string()
        } else {
            if !fits(hs, r.home_tries) {
                c.push("home_tries", opt(r.home_tries), (hs / 5).to_string());
                r.home_tries = Some(hs / 5);
            }
            if !fits(as_, r.away_tries) {
                c.push("away_tries", opt(r.away_tries), (as_ / 5).to_string());
                r.away_tries = Some(as_ / 5);
            }
            "tries reduced to the most the score allows".to_string()
        };
        actions.extend(c.into_action(row, Rule::R1, description));
    }

    // R2
    if r.venue.eq_ignore_ascii_case("tbc") {
        let mut c = Changes::new();
        c.push("venue", r.venue.clone(), "Neutral".into());
        r.venue = "Neutral".into();
        actions.extend(c.into_action(row, Rule::R2, "venue to be confirmed treated as neutral".into()));
    }
    if parse_venue(&r.venue).is_none() {
        return Err(format!("unknown venue {:?}", r.venue));
    }

    // R3
    let no_tries = r.home_tries.unwrap_or(0) == 0 && r.away_tries.unwrap_or(0) == 0;
    let mut declared = declared;
    if matches!(declared, Some(Declared::Win | Declared::Loss)) && hs == 0 && as_ == 0 && no_tries {
        let win = declared == Some(Declared::Win);
        let token = if win { AWARDED_WIN } else { AWARDED_LOSS };
        let mut c = Changes::new();
        c.push("declared_result", r.declared_result.clone(), token.into());
        r.declared_result = token.into();
        for (field, tries) in [("home_tries", &mut r.home_tries), ("away_tries", &mut r.away_tries)] {
            if tries.is_none() {
                c.push(field, String::new(), "0".into());
                *tries = Some(0);
            }
        }
        declared = Some(if win { Declared::AwardedWin } else { Declared::AwardedLoss });
        let side = if win { "home" } else { "away" };
        actions.extend(c.into_action(row, Rule::R3, format!("declared {side} win without a score awarded as a narrow win without try bonuses")));
    }

    // R4
    let mut c = Changes::new();
    if r.home_tries.is_none() {
        c.push("home_tries", String::new(), (hs / 5).to_string());
        r.home_tries = Some(hs / 5);
    }
    if r.away_tries.is_none() {
        c.push("away_tries", String::new(), (as_ / 5).to_string());
        r.away_tries = Some(as_ / 5);
    }
    actions.extend(c.into_action(row, Rule::R4, "blank try count set to the most the score allows".into()));

    let (ht, at) = (r.home_tries.unwrap_or(0), r.away_tries.unwrap_or(0));

    // R5
    if let Some(d @ (Declared::Win | Declared::Loss)) = declared {
        let want = declared_leader(d);
        let score_lead = leader(hs, as_);
        if score_lead.is_some() && score_lead != want && leader(ht, at) == want && as_ >= 5 * ht && hs >= 5 * at {
            let mut c = Changes::new();
            c.push("home_score", hs.to_string(), as_.to_string());
            c.push("away_score", as_.to_string(), hs.to_string());
            r.home_score = Some(as_);
            r.away_score = Some(hs);
            actions.extend(c.into_action(row, Rule::R5, "score reversed to agree with the declared result and tries".into()));
        }
    }

    let (hs, as_) = (r.home_score.unwrap_or(0), r.away_score.unwrap_or(0));
    match declared {
        Some(Declared::AwardedWin | Declared::AwardedLoss) => {}
        Some(d) if declared_leader(d) != leader(hs, as_) => {
            return Err(format!("declared result {:?} contradicts score {hs}-{as_}", r.declared_result));
        }
        _ => {
            if !fits(hs, Some(ht)) || !fits(as_, Some(at)) {
                return Err(format!("score {hs}-{as_} cannot contain tries {ht}-{at}"));
            }
        }
    }
    Ok((r, actions))
}

fn to_record(league: &mut League, r: &RawMatchRow) -> MatchRecord {
    let home = league.intern(&r.home_team);
    let away = league.intern(&r.away_team);
    let award = match parse_declared(&r.declared_result) {
        Ok(Some(Declared::AwardedWin)) => Some(Side::Home),
        Ok(Some(Declared::AwardedLoss)) => Some(Side::Away),
        _ => None,
    };
    MatchRecord {
        home,
        away,
        home_score: r.home_score.unwrap_or(0),
        away_score: r.away_score.unwrap_or(0),
        home_tries: r.home_tries.unwrap_or(0),
        away_tries: r.away_tries.unwrap_or(0),
        venue: parse_venue(&r.venue).unwrap_or(Venue::Neutral),
        award,
    }
}

/// Cleans every row; exact duplicates of an earlier row are rejected.
pub fn clean(rows: &[RawMatchRow]) -> CleanOutput {
    let mut out = CleanOutput::default();
    let mut seen = std::collections::HashMap::new();
    for (k, raw) in rows.iter().enumerate() {
        let row = k + 1;
        if let Some(first) = seen.get(raw) {
            out.rejected.push(Rejection { row, reason: format!("exact duplicate of row {first}") });
            continue;
        }
        seen.insert(raw.clone(), row);
        match clean_row(row, raw) {
            Ok((r, actions)) => {
                let rec = to_record(&mut out.league, &r);
                out.league.matches.push(rec);
                out.actions.extend(actions);
                out.rows.push(r);
                out.row_numbers.push(row);
            }
            Err(reason) => out.rejected.push(Rejection { row, reason }),
        }
    }
    out
}

fn set_field(r: &mut RawMatchRow, field: &str, value: &str) -> Result<(), String> {
    let count = |v: &str| -> Result<Option<u32>, String> {
        if v.is_empty() {
            Ok(None)
        } else {
            v.parse().map(Some).map_err(|_| format!("bad value {v:?} for {field}"))
        }
    };
    match field {
        "home_score" => r.home_score = count(value)?,
        "away_score" => r.away_score = count(value)?,
        "home_tries" => r.home_tries = count(value)?,
        "away_tries" => r.away_tries = count(value)?,
        "venue" => r.venue = value.to_string(),
        "declared_result" => r.declared_result = value.to_string(),
        _ => return Err(format!("unknown field {field:?}")),
    }
    Ok(())
}

/// Applies logged actions to raw rows, in log order.
pub fn replay(rows: &[RawMatchRow], actions: &[CleaningAction]) -> Result<Vec<RawMatchRow>, IngestError> {
    let mut out = rows.to_vec();
    for a in actions {
        let bad = |reason: String| IngestError::Audit { row: a.row, reason };
        let target = out.get_mut(a.row.wrapping_sub(1)).ok_or_else(|| bad("row out of range".into()))?;
        let fields: Vec<&str> = a.field.split(';').collect();
        let after: Vec<&str> = a.after.split(';').collect();
        if fields.len() != after.len() {
            return Err(bad("field and value counts differ".into()));
        }
        for (f, v) in fields.iter().zip(&after) {
            set_field(target, f, v).map_err(bad)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(hs: Option<u32>, as_: Option<u32>, ht: Option<u32>, at: Option<u32>, venue: &str, declared: &str) -> RawMatchRow {
        RawMatchRow {
            date: "2017-09-09".into(),
            home_team: "Ashford".into(),
            away_team: "Bexley".into(),
            home_score: hs,
            away_score: as_,
            home_tries: ht,
            away_tries: at,
            venue: venue.into(),
            declared_result: declared.into(),
        }
    }

    #[test]
    fn parse_reads_blanks_as_absent() {
        let text = "date,home_team,away_team,home_score,away_score,home_tries,away_tries,venue,declared_result\n\
                    d,A,B,10,5,,1,Home,Won\n";
        let rows = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].home_tries, None);
        assert_eq!(rows[0].away_tries, Some(1));
    }

    #[test]
    fn parse_rejects_bad_cells_and_headers() {
        let text = "date,home_team,away_team,home_score,away_score,home_tries,away_tries,venue,declared_result\n\
                    d,A,B,12a,5,1,1,Home,Won\n";
        match parse_csv(text.as_bytes()) {
            Err(IngestError::Cell { row: 1, column: "home_score", .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_csv("a,b\n1,2\n".as_bytes()), Err(IngestError::Header { .. })));
    }

    #[test]
    fn r1_swap_branch() {
        let (r, a) = clean_row(1, &row(Some(10), Some(20), Some(4), Some(1), "Home", "Loss")).unwrap();
        assert_eq!((r.home_tries, r.away_tries), (Some(1), Some(4)));
        assert_eq!(a[0].rule, Rule::R1);
        assert_eq!(a[0].field, "home_tries;away_tries");
        assert_eq!(a[0].before, "4;1");
    }

    #[test]
    fn r1_reduce_branch() {
        let (r, a) = clean_row(1, &row(Some(12), Some(0), Some(3), Some(0), "Home", "Won")).unwrap();
        assert_eq!(r.home_tries, Some(2));
        assert_eq!((a[0].field.as_str(), a[0].before.as_str(), a[0].after.as_str()), ("home_tries", "3", "2"));
    }

    #[test]
    fn r2_tbc_becomes_neutral() {
        let (r, a) = clean_row(1, &row(Some(12), Some(0), Some(2), Some(0), "tbc", "Won")).unwrap();
        assert_eq!(r.venue, "Neutral");
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].rule, Rule::R2);
    }

    #[test]
    fn r3_awarded_win() {
        let out = clean(&[row(Some(0), Some(0), Some(0), Some(0), "Home", "Won")]);
        assert_eq!(out.actions.len(), 1);
        assert_eq!(out.actions[0].rule, Rule::R3);
        let m = &out.league.matches[0];
        assert_eq!(m.award, Some(Side::Home));
        let ps = crate::domain::PointsSystem::default();
        assert_eq!(m.outcome(&ps).points(&ps), (4, 1));
    }

    #[test]
    fn r4_blank_tries() {
        let (r, a) = clean_row(1, &row(Some(23), Some(9), None, None, "Home", "")).unwrap();
        assert_eq!((r.home_tries, r.away_tries), (Some(4), Some(1)));
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].field, "home_tries;away_tries");
    }

    #[test]
    fn r5_reverses_score() {
        let (r, a) = clean_row(1, &row(Some(10), Some(15), Some(2), Some(1), "Home", "Won")).unwrap();
        assert_eq!((r.home_score, r.away_score), (Some(15), Some(10)));
        assert_eq!(a[0].rule, Rule::R5);
    }

    #[test]
    fn unrepairable_rows_are_rejected() {
        let out = clean(&[
            row(None, Some(3), None, None, "Home", ""),
            row(Some(3), Some(10), Some(0), Some(2), "Home", "Won"),
            row(Some(3), Some(0), Some(0), Some(0), "Away", ""),
            row(Some(3), Some(0), Some(0), Some(0), "Home", "Won"),
        ]);
        assert_eq!(out.rejected.iter().map(|r| r.row).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(out.rows.len(), 1);
        let dup = row(Some(3), Some(0), Some(0), Some(0), "Home", "");
        let out = clean(&[dup.clone(), dup]);
        assert_eq!(out.rejected, vec![Rejection { row: 2, reason: "exact duplicate of row 1".into() }]);
    }

    #[test]
    fn cleaning_is_idempotent_and_replayable() {
        let raw = vec![
            row(Some(10), Some(20), Some(4), Some(1), "Home", "Loss"),
            row(Some(12), Some(0), Some(3), None, "tbc", "Won"),
            row(Some(0), Some(0), None, None, "Neutral", "Loss"),
            row(Some(10), Some(15), Some(2), Some(1), "Home", "Won"),
        ];
        let once = clean(&raw);
        assert!(once.rejected.is_empty());
        let twice = clean(&once.rows);
        assert_eq!(twice.rows, once.rows);
        assert!(twice.actions.is_empty());
        assert_eq!(replay(&raw, &once.actions).unwrap(), once.rows);
        let audit = write_audit_csv(&once.actions).unwrap();
        assert_eq!(parse_audit_csv(audit.as_bytes()).unwrap(), once.actions);
        let csv = write_csv(&once.rows).unwrap();
        assert_eq!(parse_csv(csv.as_bytes()).unwrap(), once.rows);
    }
}
