use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxent-rank")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

const HEADER: &str = "date,home_team,away_team,home_score,away_score,home_tries,away_tries,venue,declared_result\n";

#[test]
fn clean_matches_golden_files_and_lists_rejections() {
    let dir = TempDir::new().unwrap();
    let raw = data("clean_raw.csv");
    let o = run(dir.path(), &["clean", raw.to_str().unwrap(), "out.csv", "audit.csv"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("rejected row 8"));
    assert_eq!(read(dir.path(), "out.csv"), fs::read_to_string(data("clean_expected.csv")).unwrap());
    assert_eq!(read(dir.path(), "audit.csv"), fs::read_to_string(data("audit_expected.csv")).unwrap());
    assert!(read(dir.path(), "audit.csv").lines().any(|l| l.contains(",R2,")));
    assert!(dir.path().join("out.csv.manifest.json").exists());

    let o = run(dir.path(), &["clean", "out.csv", "again.csv", "audit2.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(dir.path(), "again.csv"), read(dir.path(), "out.csv"));
    assert_eq!(read(dir.path(), "audit2.csv").lines().count(), 1);
}

#[test]
fn unreadable_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["clean", "missing.csv", "out.csv", "audit.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.csv"));
    let o = run(dir.path(), &["fit"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_writes_model_and_rerun_reproduces_it() {
    let dir = TempDir::new().unwrap();
    let input = data("season8.csv");
    let o = run(dir.path(), &["fit", input.to_str().unwrap(), "model.json", "--prior-weight", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("converged"));
    let first = read(dir.path(), "model.json");
    let model: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(model["teams"].as_array().unwrap().len(), 8);
    assert_eq!(model["prior"]["weight"], 4.0);

    fs::remove_file(dir.path().join("model.json")).unwrap();
    let o = run(dir.path(), &["rerun", "model.json.manifest.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(dir.path(), "model.json"), first);
}

#[test]
fn offensive_defensive_model_carries_deltas() {
    let dir = TempDir::new().unwrap();
    let input = data("season8.csv");
    let o = run(
        dir.path(),
        &["fit", input.to_str().unwrap(), "od.json", "--prior-weight", "4", "--variant", "offensive-defensive"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model: serde_json::Value = serde_json::from_str(&read(dir.path(), "od.json")).unwrap();
    assert_eq!(model["levels"]["deltas"].as_array().unwrap().len(), 8);
}

#[test]
fn undefeated_team_without_prior_exits_4_naming_team() {
    let dir = TempDir::new().unwrap();
    let csv = format!(
        "{HEADER}\
         d,Alpha,Beta,40,0,6,0,Home,Won\n\
         d,Gamma,Alpha,3,35,0,5,Home,Loss\n\
         d,Beta,Gamma,20,15,2,2,Home,Won\n\
         d,Gamma,Beta,18,12,3,1,Home,Won\n\
         d,Beta,Alpha,0,28,0,4,Home,Loss\n"
    );
    fs::write(dir.path().join("in.csv"), csv).unwrap();
    let o = run(dir.path(), &["fit", "in.csv", "m.json", "--prior-weight", "0"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("Alpha"), "{}", stderr(&o));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn rank_tables_and_comparison() {
    let dir = TempDir::new().unwrap();
    let input = data("season8.csv");
    let input = input.to_str().unwrap();
    assert_eq!(code(&run(dir.path(), &["fit", input, "m.json", "--prior-weight", "4"])), 0);
    fs::write(dir.path().join("prev.csv"), "team,rank\nAshford,12\nBexley,40\nCarlton,70\n").unwrap();
    let o = run(dir.path(), &["rank", "m.json", input, "t.csv", "--min-matches", "0", "--prev-ranks", "prev.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("mean absolute rank difference"));
    let table = read(dir.path(), "t.csv");
    assert!(table.starts_with("team,rating,rank,P,W,D,L,LPPM,flags\n"));
    assert_eq!(table.lines().count(), 9);
    assert!(dir.path().join("t.csv.merit.csv").exists());
    assert!(read(dir.path(), "t.csv.comparison.csv").lines().count() > 1);

    let o = run(dir.path(), &["rank", "m.json", input, "t8.csv", "--min-matches", "8"]);
    assert_eq!(code(&o), 0);
    let nr = read(dir.path(), "t8.csv").lines().filter(|l| l.ends_with(",NR")).count();
    assert!(nr > 0 && nr < 8);
}

#[test]
fn rank_with_different_teams_exits_5() {
    let dir = TempDir::new().unwrap();
    let input = data("season8.csv");
    assert_eq!(code(&run(dir.path(), &["fit", input.to_str().unwrap(), "m.json", "--prior-weight", "4"])), 0);
    fs::write(dir.path().join("other.csv"), format!("{HEADER}d,Ashford,Zenith,20,10,2,1,Home,Won\n")).unwrap();
    let o = run(dir.path(), &["rank", "m.json", "other.csv", "t.csv"]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("Zenith"));
}

const TRUTH: &str = r#"{"teams":[{"name":"A","strength":2.0},{"name":"B","strength":1.0},{"name":"C","strength":0.7},{"name":"D","strength":0.5}],
"rho_n":0.448,"rho_d":0.212,"tau_b":0.042,"tau_z":2.801,"kappa":1.113}"#;

fn fixtures() -> String {
    let teams = ["A", "B", "C", "D"];
    let mut s = String::from("home_team,away_team,venue\n");
    for _ in 0..3 {
        for h in teams {
            for a in teams.iter().filter(|&&a| a != h) {
                s.push_str(&format!("{h},{a},Home\n"));
            }
        }
    }
    s
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("truth.json"), TRUTH).unwrap();
    fs::write(dir.path().join("fx.csv"), fixtures()).unwrap();
    let args = |out: &'static str| {
        vec!["simulate", "truth.json", "fx.csv", out, "--replicates", "3", "--seed", "7", "--prior-weight", "1"]
    };
    let a = run(dir.path(), &args("r1.csv"));
    let b = run(dir.path(), &args("r2.csv"));
    assert!([0, 4].contains(&code(&a)), "{}", stderr(&a));
    assert_eq!(code(&a), code(&b));
    assert_eq!(read(dir.path(), "r1.csv"), read(dir.path(), "r2.csv"));

    let o = run(dir.path(), &["simulate", "truth.json", "fx.csv", "one.csv", "--replicates", "1", "--prior-weight", "1"]);
    assert!([0, 4].contains(&code(&o)));
    // five structural parameters and four strengths
    assert_eq!(read(dir.path(), "one.csv").lines().count(), 1 + 9);
}

#[test]
fn simulate_rejects_truth_without_kappa() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("truth.json"), TRUTH.replace(r#","kappa":1.113"#, "")).unwrap();
    fs::write(dir.path().join("fx.csv"), fixtures()).unwrap();
    let o = run(dir.path(), &["simulate", "truth.json", "fx.csv", "r.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
}

#[test]
fn interpret_structural_values() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"rho_n":0.448,"rho_d":0.212,"tau_b":0.042,"tau_z":2.801,"kappa":1.113}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["interpret", "s.json", "i.json", "--structural"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&read(dir.path(), "i.json")).unwrap();
    let ratio = v["with_home_advantage"]["home_away_win_ratio"].as_f64().unwrap();
    assert!((ratio - 2.2).abs() < 0.01);
}
