use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chainorder::dataset::{read_order, Dataset};
use chainorder::ordering::brute_force_order;
use chainorder::training::load_model;
use chainorder::{Exec, TabularScorer};
use tempfile::TempDir;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        fs::write(self.path(name), text).unwrap();
        self.p(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_chainorder")).args(args).output().unwrap()
    }

    /// Runs and asserts success.
    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Generates and trains a small rotation model; returns (config, data, model).
    fn trained(&self, n: usize) -> (String, String, String) {
        let conf = self.write("rot.conf", &format!("gen.n = {n}\ntrain.steps = 25\n"));
        let (data, model) = (self.p("rot.csv"), self.p("rot.json"));
        self.ok(&["gen", "--config", &conf, "--seed", "2", "--out", &data]);
        self.ok(&["train", "--config", &conf, "--seed", "2", "--data", &data, "--out", &model]);
        (conf, data, model)
    }
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn workflow_produces_expected_files() {
    let sb = Sandbox::new();
    let (_, data, model) = sb.trained(20);

    assert_eq!(lines(&sb.path("rot.csv")).len(), 21);
    assert_eq!(lines(&sb.path("rot.csv.truth")).len(), 20);
    let history = lines(&sb.path("rot.json.history.csv"));
    assert_eq!(history.len(), 26, "header plus one row per step");

    sb.ok(&["order", "--model", &model, "--data", &data, "--out", &sb.p("order.txt")]);
    let (order, ll) = read_order(sb.path("order.txt")).unwrap();
    assert_eq!(order.len(), 20);
    assert!(ll.unwrap().is_finite());

    let eval = sb.ok(&["eval", "--order", &sb.p("order.txt"), "--truth", &sb.p("rot.csv.truth"), "--data", &data]);
    let rows: Vec<&str> = eval.lines().collect();
    assert_eq!(rows[0], "dataset,method,seed,tau_forward,tau_reverse,tau_best,wall_time_ms");
    assert_eq!(rows.len(), 3);
    for row in &rows[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        let (fwd, rev, best): (f64, f64, f64) =
            (fields[3].parse().unwrap(), fields[4].parse().unwrap(), fields[5].parse().unwrap());
        assert_eq!(rev, -fwd);
        assert_eq!(best, fwd.abs());
    }

    let prop = sb.ok(&["propagate", "--model", &model, "--data", &data, "--start", "3", "--steps", "7"]);
    let prop: Vec<&str> = prop.lines().collect();
    assert_eq!(prop[0], "step,learned,euclidean");
    assert_eq!(prop.len(), 9);
    assert!(prop[1].starts_with("0,3,3"));
}

#[test]
fn brute_matches_library_search() {
    let sb = Sandbox::new();
    let (_, data, model) = sb.trained(7);
    sb.ok(&["order", "--model", &model, "--data", &data, "--method", "brute", "--out", &sb.p("brute.txt")]);
    let (cli, _) = read_order(sb.path("brute.txt")).unwrap();

    let net = load_model(sb.path("rot.json")).unwrap().net;
    let dataset = Dataset::read_csv(&data).unwrap();
    let scorer = TabularScorer::from_model(&net, dataset.states(), Exec::Serial).unwrap();
    assert_eq!(cli, brute_force_order(&scorer).unwrap());
}

#[test]
fn sampled_with_every_start_matches_full() {
    let sb = Sandbox::new();
    let (_, data, model) = sb.trained(15);
    sb.ok(&["order", "--model", &model, "--data", &data, "--out", &sb.p("full.txt")]);
    sb.ok(&[
        "order", "--model", &model, "--data", &data, "--method", "sampled", "--starts", "15", "--out", &sb.p("s.txt"),
    ]);
    assert_eq!(fs::read(sb.path("full.txt")).unwrap(), fs::read(sb.path("s.txt")).unwrap());
}

#[test]
fn headerless_dataset_is_rejected() {
    let sb = Sandbox::new();
    let data = sb.write("bare.csv", "0.1,0.2\n0.3,0.4\n");
    let out = sb.run(&["train", "--data", &data, "--out", &sb.p("m.json")]);
    assert_eq!(code(&out), Some(2));
    assert!(stderr(&out).contains("bare.csv"), "{}", stderr(&out));
    assert!(!sb.path("m.json").exists());
}

#[test]
fn config_errors_name_the_field() {
    let sb = Sandbox::new();
    for (text, field) in [
        ("train.lr = fast\n", "train.lr"),
        ("train.bogus = 1\n", "train.bogus"),
        ("gen.kind = helix\n", "gen.kind"),
        ("eval.seeds =\n", "eval.seeds"),
    ] {
        let conf = sb.write("bad.conf", text);
        let out = sb.run(&["gen", "--config", &conf, "--out", &sb.p("x.csv")]);
        assert_eq!(code(&out), Some(2), "{text}");
        assert!(stderr(&out).contains(field), "{text}: {}", stderr(&out));
    }
}

#[test]
fn mismatched_inputs_exit_with_error() {
    let sb = Sandbox::new();
    let (_, data, model) = sb.trained(12);

    let bits = sb.write("bits.conf", "gen.kind = bitflip\ngen.n = 12\ngen.dim = 4\n");
    sb.ok(&["gen", "--config", &bits, "--out", &sb.p("bits.csv")]);
    let out = sb.run(&["order", "--model", &model, "--data", &sb.p("bits.csv")]);
    assert_eq!(code(&out), Some(2));

    let out = sb.run(&["order", "--model", &model, "--data", &data, "--method", "brute"]);
    assert_eq!(code(&out), Some(2), "12 states is beyond exhaustive search");

    let short = sb.write("short.txt", "0\n1\n2\n");
    let out = sb.run(&["eval", "--order", &short, "--truth", &sb.p("rot.csv.truth")]);
    assert_eq!(code(&out), Some(2));

    let out = sb.run(&["oneshot", "--model", &model, "--classes", &data, "--way", "5"]);
    assert_eq!(code(&out), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let sb = Sandbox::new();
    let out = sb.run(&["gradcheck", "--dims", "4", "--triples", "20"]);
    assert_eq!(code(&out), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("dims,triples,max_relative_error,passed\n4,20,"));
    assert!(csv.trim_end().ends_with("true"));

    let out = sb.run(&["gradcheck", "--dims", "4", "--triples", "5", "--corrupt"]);
    assert_eq!(code(&out), Some(1));

    let out = sb.run(&["gradcheck", "--dims", "100"]);
    assert_eq!(code(&out), Some(2));
}

#[test]
fn oneshot_reports_accuracy() {
    let sb = Sandbox::new();
    let conf = sb.write(
        "cl.conf",
        "gen.kind = clusters\ngen.classes = 5\ngen.n = 10\ntrain.steps = 10\noneshot.episodes = 12\n",
    );
    sb.ok(&["gen", "--config", &conf, "--out", &sb.p("cl.csv")]);
    sb.ok(&["train", "--config", &conf, "--data", &sb.p("cl.csv"), "--out", &sb.p("cl.json")]);
    let classes: Vec<String> = (0..5).map(|c| sb.p(&format!("cl.class{c}.csv"))).collect();
    let (model, report) = (sb.p("cl.json"), sb.p("report.csv"));
    let mut args = vec!["oneshot", "--config", &conf, "--model", &model, "--report", &report, "--classes"];
    args.extend(classes.iter().map(String::as_str));
    let summary = sb.ok(&args);
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["5", "5", "12", "5"]);
    let acc: f64 = row[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(lines(&sb.path("report.csv")).len(), 1 + 12 * 5 * 5);
}
