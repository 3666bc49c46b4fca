use maxent_rank_web::{explore_outcomes, fit_league, prior_sweep};
use serde_json::Value;

const SEASON: &str = include_str!("../../core/tests/data/season8.csv");

#[test]
fn outcome_probabilities_sum_to_one() {
    let q = r#"{"home_strength":1.5,"away_strength":0.8,"neutral":false,
        "rho_n":0.448,"rho_d":0.212,"tau_b":0.042,"tau_z":2.801,"kappa":1.113}"#;
    let v: Value = serde_json::from_str(&explore_outcomes(q).unwrap()).unwrap();
    for key in ["result", "tries"] {
        let s: f64 = v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    let pts = v["expected_points"].as_array().unwrap();
    assert!(pts[0].as_f64().unwrap() > pts[1].as_f64().unwrap());
}

#[test]
fn outcome_query_errors_are_messages() {
    assert!(explore_outcomes("{}").is_err());
    let bad = r#"{"home_strength":-1,"away_strength":1,"neutral":true,
        "rho_n":0.4,"rho_d":0.2,"tau_b":0.04,"tau_z":2.8,"kappa":1.1}"#;
    assert!(explore_outcomes(bad).is_err());
}

#[test]
fn league_table_is_sorted() {
    let v: Value = serde_json::from_str(&fit_league(SEASON, 4.0, 0).unwrap()).unwrap();
    let teams = v["teams"].as_array().unwrap();
    assert_eq!(teams.len(), 8);
    let pppm: Vec<f64> = teams.iter().map(|t| t["pppm"].as_f64().unwrap()).collect();
    assert!(pppm.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(teams[0]["rank"], 1);
}

#[test]
fn undefeated_team_error_names_team() {
    let csv = "date,home_team,away_team,home_score,away_score,home_tries,away_tries,venue,declared_result\n\
               d,Alpha,Beta,40,0,6,0,Home,Won\n\
               d,Beta,Gamma,20,15,2,2,Home,Won\n\
               d,Gamma,Beta,18,12,3,1,Home,Won\n\
               d,Gamma,Alpha,3,35,0,5,Home,Loss\n";
    let e = fit_league(csv, 0.0, 0).unwrap_err();
    assert!(e.contains("Alpha"), "{e}");
}

#[test]
fn sweep_has_one_row_per_weight() {
    let v: Value = serde_json::from_str(&prior_sweep(SEASON, "[0, 1, 4, 16]").unwrap()).unwrap();
    let rows = v["pppm"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let spread = |r: &Value| {
        let xs: Vec<f64> = r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min)
    };
    // a heavier prior pulls ratings together
    assert!(spread(&rows[3]) < spread(&rows[1]));
}
