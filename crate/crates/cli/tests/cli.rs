use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scenegram::grammar::format::parse_grammar;
use scenegram::sampler::{scene_to_assignment, Sampler};
use tempfile::TempDir;

const SMALL_CURVES: &str = "
[symbols]
C J
[pose_spaces]
C width=10 height=10 orientations=8
J width=10 height=10
[params]
rho = 0.99
epsilon C = 0.01
[rules]
C 0.05 -> J{offsets 0,0}
C 0.73 -> J{offsets 0,0} C{offsets 1,0 rotate}
C 0.11 -> J{offsets 0,0} C{offsets 1,1 rotate}
C 0.11 -> J{offsets 0,0} C{offsets 1,-1 rotate}
";

const TREE: &str = "
[symbols]
A B C
[pose_spaces]
A width=1 height=1
B width=2 height=1
C width=2 height=1
[params]
rho = 0.8
epsilon A = 0.6
epsilon B = 0.2
epsilon C = 0.1
[rules]
A 0.7 -> B{offsets 0,0 1,0}
A 0.3 ->
B 0.5 -> C{offsets 0,0}
B 0.5 ->
";

const CYCLIC: &str = "
[symbols]
A
[pose_spaces]
A width=2 height=1
[params]
rho = 0.5
epsilon A = 0.5
[rules]
A 0.5 -> A{offsets 1,0}
A 0.5 -> A{offsets -1,0}
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenegram")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn flag(name: &str, value: impl AsRef<Path>) -> String {
    format!("--{name}={}", value.as_ref().display())
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_outputs_exist(dir: &Path) {
    let m = manifest(dir);
    for p in m["outputs"].as_array().unwrap() {
        assert!(Path::new(p.as_str().unwrap()).exists(), "missing {p}");
    }
}

#[test]
fn sample_count_zero_writes_no_scenes() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let out = t.path().join("s");
    let o = run(&["sample", &flag("grammar", &g), "--count=0", &flag("out-dir", &out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["manifest.json"]);
    assert!(manifest(&out)["outputs"].as_array().unwrap().is_empty());
}

#[test]
fn sampling_is_reproducible_byte_for_byte() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for dir in [&a, &b] {
        let o = run(&["sample", &flag("grammar", &g), "--count=3", "--seed=11", &flag("out-dir", dir)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for i in 0..3 {
        for suffix in [".txt", "_C.pgm", "_J.pgm"] {
            let name = format!("scene_{i:04}{suffix}");
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    assert_outputs_exist(&a);
}

#[test]
fn cyclic_grammar_is_a_validation_error() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "cyc.grammar", CYCLIC);
    let o = run(&["sample", &flag("grammar", &g), &flag("out-dir", t.path().join("s"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("cyclic"), "{}", stderr(&o));
}

#[test]
fn bad_paths_are_validation_errors() {
    let t = TempDir::new().unwrap();
    let o = run(&["infer", "--grammar=/nonexistent/x.grammar", &flag("out-dir", t.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/nonexistent/x.grammar"));
}

#[test]
fn variable_budget_is_a_capacity_error() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let cfg = write(t.path(), "cfg.toml", "[capacity]\nmax_variables = 10\n");
    let o = run(&["infer", &flag("config", &cfg), &flag("grammar", &g), &flag("out-dir", t.path().join("i"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn show_config_round_trips_through_config_file() {
    let t = TempDir::new().unwrap();
    let o = run(&["--show-config", "--damping=0.25"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("damping = 0.25"));
    let cfg = write(t.path(), "cfg.toml", &text);
    let again = run(&["--show-config", &flag("config", &cfg)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    let bad = write(t.path(), "bad.toml", "[bp]\nnot_a_key = 1\n");
    assert_eq!(code(&run(&["--show-config", &flag("config", &bad)])), 2);
}

#[test]
fn detection_pipeline_end_to_end() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let (s, c, i, e) = (t.path().join("s"), t.path().join("c"), t.path().join("i"), t.path().join("e"));
    assert_eq!(code(&run(&["sample", &flag("grammar", &g), "--count=1", "--seed=2", &flag("out-dir", &s)])), 0);
    let map = s.join("scene_0000_J.pgm");
    assert_eq!(code(&run(&["corrupt", &flag("map", &map), "--seed=5", &flag("out-dir", &c)])), 0);
    let dump = t.path().join("graph.txt");
    let o = run(&[
        "infer",
        &flag("grammar", &g),
        &flag("image", c.join("scene_0000_J_noisy.pgm")),
        &flag("dump-graph", &dump),
        &flag("out-dir", &i),
    ]);
    assert!(matches!(code(&o), 0 | 4), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&dump).unwrap().starts_with("# variables"));
    assert_outputs_exist(&i);
    let m = manifest(&i);
    assert!(m["results"]["iterations"].as_u64().unwrap() > 0);
    assert!(m["grammar_sha256"].as_str().unwrap().len() == 64);

    let o = run(&["eval", &flag("beliefs", i.join("beliefs_J.pgm")), &flag("truth", &map), &flag("out-dir", &e)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = std::fs::read_to_string(e.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("threshold,precision,recall\n"));
    let auc: f64 = metrics.lines().last().unwrap().strip_prefix("# auc,").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn non_convergence_exit_code_still_writes_beliefs() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let out = t.path().join("i");
    let o = run(&["infer", &flag("grammar", &g), "--max-iters=1", "--clamp=J@4,4", &flag("out-dir", &out)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(out.join("beliefs.csv").exists());
    assert_eq!(manifest(&out)["results"]["converged"], false);
}

#[test]
fn uniform_evidence_gives_prior_marginals() {
    let t = TempDir::new().unwrap();
    let gpath = write(t.path(), "tree.grammar", TREE);
    let out = t.path().join("i");
    let o = run(&["infer", &flag("grammar", &gpath), "--tolerance=1e-12", "--max-iters=500", &flag("out-dir", &out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("beliefs.csv")).unwrap();
    let beliefs: Vec<f64> = r.records().map(|rec| rec.unwrap()[5].parse().unwrap()).collect();

    // Monte Carlo reference from the sampler
    let g = parse_grammar(TREE).unwrap();
    let fg = scenegram::factorgraph::compile(&g);
    let sampler = Sampler::new(&g).unwrap();
    let n = 40_000;
    let mut on = vec![0usize; g.num_bricks()];
    for s in 0..n {
        let a = scene_to_assignment(&sampler.sample(s), &g, fg.layout());
        for (b, c) in on.iter_mut().enumerate() {
            *c += a.values[b] as usize;
        }
    }
    for (b, &c) in on.iter().enumerate() {
        let freq = c as f64 / n as f64;
        let p = beliefs[b];
        let sd = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
        assert!((freq - p).abs() < 4.0 * sd, "brick {b}: belief {p} sampler {freq}");
    }
}

#[test]
fn clamping_an_eye_gives_two_face_modes() {
    let t = TempDir::new().unwrap();
    let g = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../grammars/face_simple.grammar");
    let out = t.path().join("c");
    let o = run(&["condition", &flag("grammar", &g), "--clamp=E@24,18", "--symbol=F", &flag("out-dir", &out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("modes.csv")).unwrap();
    let xs: Vec<u32> = r.records().take(2).map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    assert!(xs.iter().min().unwrap() < &24 && xs.iter().max().unwrap() > &24, "{xs:?}");
    assert_outputs_exist(&out);
}

#[test]
fn learn_smoke() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let train = t.path().join("train");
    assert_eq!(code(&run(&["sample", &flag("grammar", &g), "--count=2", &flag("out-dir", &train)])), 0);
    let out = t.path().join("l");
    let o = run(&["learn", &flag("grammar", &g), &flag("training-dir", &train), "--iters=1", "--max-iters=20", &flag("out-dir", &out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let learned = std::fs::read_to_string(out.join("learned.grammar")).unwrap();
    let lg = parse_grammar(&learned).expect("learned grammar re-validates");
    assert_eq!(lg.rules().len(), 4);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2);
    assert!(traj.starts_with("iteration,P(C#0),P(C#1),P(C#2),P(C#3),epsilon(C),epsilon(J)"));
    assert_eq!(manifest(&out)["results"]["examples"], 2);
}

#[test]
fn learn_without_examples_fails() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = run(&["learn", &flag("grammar", &g), &flag("training-dir", &empty), &flag("out-dir", t.path().join("l"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_reports_shape_mismatch_and_missing_positives() {
    let t = TempDir::new().unwrap();
    let a = write(t.path(), "a.pgm", "P2\n2 2\n255\n0 255\n255 255\n");
    let b = write(t.path(), "b.pgm", "P2\n3 1\n255\n0 0 0\n");
    let blank = write(t.path(), "blank.pgm", "P2\n2 2\n255\n255 255\n255 255\n");
    let o = run(&["eval", &flag("beliefs", &a), &flag("truth", &b), &flag("out-dir", t.path().join("e"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("2x2") && stderr(&o).contains("3x1"), "{}", stderr(&o));
    let o = run(&["eval", &flag("beliefs", &a), &flag("truth", &blank), &flag("out-dir", t.path().join("e"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no positives"));
}

#[test]
fn localization_eval_round_trip() {
    let t = TempDir::new().unwrap();
    let g = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../grammars/face_simple.grammar");
    let i = t.path().join("i");
    let o = run(&["infer", &flag("grammar", &g), "--clamp=N@20,10", &flag("out-dir", &i)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let truth = write(t.path(), "truth.csv", "symbol,x,y\nN,20,10\nF,23,14\n");
    let e = t.path().join("e");
    let o = run(&["eval", "--mode=localization", &flag("beliefs", i.join("beliefs.csv")), &flag("truth", &truth), &flag("out-dir", &e)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = std::fs::read_to_string(e.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("symbol,pred_x,pred_y,true_x,true_y,error"));
    assert_eq!(lines.next(), Some("N,20,10,20,10,0"));
    assert!(metrics.lines().last().unwrap().starts_with("# mean_error,"));
}

#[test]
fn benchmark_emits_grammar_and_baseline_rows() {
    let t = TempDir::new().unwrap();
    let g = write(t.path(), "c.grammar", SMALL_CURVES);
    let out = t.path().join("b");
    let o = run(&["benchmark", &flag("grammar", &g), "--count=2", "--max-iters=30", &flag("out-dir", &out)]);
    assert!(matches!(code(&o), 0 | 4), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("benchmark.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",grammar,")).count(), 2);
    assert_eq!(text.lines().filter(|l| l.contains(",no-context,")).count(), 2);
}

#[test]
fn score_evidence_moves_beliefs() {
    let t = TempDir::new().unwrap();
    let g = write(
        t.path(),
        "one.grammar",
        "[symbols]\nA\n[pose_spaces]\nA width=2 height=1\n[params]\nrho = 0.9\nepsilon A = 0.1\n",
    );
    let scores = write(t.path(), "s.csv", "symbol,x,y,orientation,scale,score\nA,0,0,0,0,3\nA,1,0,0,0,-3\n");
    let cal = write(t.path(), "cal.csv", "symbol,slope,offset\nA,1,-2\n");
    let out = t.path().join("i");
    let o = run(&["infer", &flag("grammar", &g), &flag("scores", &scores), &flag("calibration", &cal), &flag("out-dir", &out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("beliefs.csv")).unwrap();
    let b: Vec<f64> = r.records().map(|rec| rec.unwrap()[5].parse().unwrap()).collect();
    // a lone self-rooted brick's posterior is the calibrated probability
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    assert!((b[0] - sig(1.0)).abs() < 1e-6, "{b:?}");
    assert!((b[1] - sig(-5.0)).abs() < 1e-6, "{b:?}");
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../grammars").join(name)
}

#[test]
fn shipped_curve_grammar_samples_contour_maps() {
    let t = TempDir::new().unwrap();
    let o = run(&["sample", &flag("grammar", shipped("curve.grammar")), "--count=4", &flag("out-dir", t.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let maps: Vec<_> = (0..4).map(|i| t.path().join(format!("scene_{i:04}_J.pgm"))).collect();
    assert!(maps.iter().all(|p| p.exists()));
    assert_eq!(manifest(t.path())["seeds"].as_array().unwrap().len(), 4);
}

#[test]
fn clamped_face_part_raises_nearby_face_beliefs() {
    let t = TempDir::new().unwrap();
    let o = run(&["infer", &flag("grammar", shipped("face.grammar")), "--clamp=L@12,12", &flag("out-dir", t.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(t.path().join("beliefs.csv")).unwrap();
    let faces: Vec<(f64, f64, f64)> = r
        .records()
        .map(|rec| rec.unwrap())
        .filter(|rec| &rec[0] == "F")
        .map(|rec| (rec[1].parse().unwrap(), rec[2].parse().unwrap(), rec[5].parse().unwrap()))
        .collect();
    let mean = faces.iter().map(|f| f.2).sum::<f64>() / faces.len() as f64;
    let best = faces.iter().cloned().fold((0.0, 0.0, 0.0), |a, f| if f.2 > a.2 { f } else { a });
    assert!(best.2 > 50.0 * mean, "peak {} mean {mean}", best.2);
    // the left eye sits up and to the left of the face centre
    assert!(best.0 > 12.0 && best.1 > 12.0 && (best.0 - 12.0).hypot(best.1 - 12.0) < 6.0, "{best:?}");
}
