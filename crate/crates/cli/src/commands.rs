use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use scenegram::bp::{Evidence, Lbp, Marginals};
use scenegram::em::{fit, TrainingExample};
use scenegram::eval::{belief_map, find_modes, localization_error, pr_auc};
use scenegram::evidence::{add_cell_evidence, add_score_evidence, corrupt_contour_map, gaussian_evidence, ScoreField};
use scenegram::experiments::curves::{detect_curves, sample_contour_maps};
use scenegram::factorgraph::{compile_with_budget, FactorGraph, VarId};
use scenegram::grammar::format::write_grammar;
use scenegram::grammar::{BrickId, Grammar, SymbolId};
use scenegram::sampler::{parse_scene, write_scene, Sampler};

use crate::config::Config;
use crate::io::{self, symbol};
use crate::manifest::RunManifest;

/// Whether inference reached its tolerance; non-convergence maps to its
/// own exit code after all outputs are written.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

pub struct Ctx<'a> {
    pub config: &'a Config,
    pub dump_graph: Option<&'a Path>,
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load(ctx: &Ctx, path: &Path, manifest: &mut RunManifest) -> Result<(Grammar, FactorGraph)> {
    let (g, hash) = io::read_grammar(path)?;
    manifest.grammar_sha256 = Some(hash);
    let t = Instant::now();
    let fg = compile_with_budget(&g, ctx.config.capacity.max_variables)?;
    manifest.timing("compile", t);
    if let Some(p) = ctx.dump_graph {
        std::fs::write(p, fg.dump(&g)).with_context(|| format!("writing graph dump {}", p.display()))?;
        manifest.output(p);
    }
    Ok((g, fg))
}

/// Writes `beliefs_<SYM>.pgm` per symbol and `beliefs.csv`.
fn write_beliefs(g: &Grammar, fg: &FactorGraph, m: &Marginals, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    for (s, sym) in g.symbols().iter().enumerate() {
        let map = belief_map(g, fg.layout(), m, SymbolId(s as u32));
        let path = dir.join(format!("beliefs_{}.pgm", sym.name));
        io::write_graymap(&path, &io::probability_to_graymap(&map))?;
        manifest.output(&path);
    }
    let path = dir.join("beliefs.csv");
    io::write_beliefs_csv(&path, g, fg.layout(), m)?;
    manifest.output(&path);
    Ok(())
}

fn record_run(manifest: &mut RunManifest, m: &Marginals) -> Status {
    manifest.result("iterations", m.iterations);
    manifest.result("converged", m.converged);
    manifest.result("final_residual", m.residuals.last().copied());
    if m.converged {
        Status::Ok
    } else {
        eprintln!("warning: LBP stopped after {} iterations without reaching the tolerance", m.iterations);
        Status::NotConverged
    }
}

pub fn sample(ctx: &Ctx, grammar: &Path, count: usize, seed: u64, dir: &Path) -> Result<Status> {
    out_dir(dir)?;
    let mut manifest = RunManifest::new("sample", ctx.config);
    let (g, hash) = io::read_grammar(grammar)?;
    manifest.grammar_sha256 = Some(hash);
    let sampler = Sampler::new(&g)?;
    let t = Instant::now();
    for i in 0..count {
        let s = seed + i as u64;
        manifest.seeds.push(s);
        let scene = sampler.sample(s);
        let path = dir.join(format!("scene_{i:04}.txt"));
        std::fs::write(&path, write_scene(&scene, &g)).with_context(|| format!("writing {}", path.display()))?;
        manifest.output(&path);
        for (k, sym) in g.symbols().iter().enumerate() {
            let space = &sym.poses;
            let occ = scene.occupancy(&g, SymbolId(k as u32));
            let map = scenegram::image::Grid::from_vec(space.width() as usize, space.height() as usize, occ);
            let path = dir.join(format!("scene_{i:04}_{}.pgm", sym.name));
            io::write_graymap(&path, &io::binary_to_graymap(&map))?;
            manifest.output(&path);
        }
    }
    manifest.timing("sample", t);
    manifest.write(dir)?;
    Ok(Status::Ok)
}

pub fn corrupt(ctx: &Ctx, map: &Path, seed: u64, dir: &Path) -> Result<Status> {
    out_dir(dir)?;
    let mut manifest = RunManifest::new("corrupt", ctx.config);
    manifest.seeds.push(seed);
    let truth = io::read_binary_map(map)?;
    let n = &ctx.config.noise;
    let img = corrupt_contour_map(&truth, n.mu0, n.mu1, n.sigma, seed);
    let stem = map.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    let path = dir.join(format!("{stem}_noisy.pgm"));
    io::write_graymap(&path, &scenegram::image::Graymap::from_values(&img, 255))?;
    manifest.output(&path);
    manifest.write(dir)?;
    Ok(Status::Ok)
}

pub struct EvidenceArgs<'a> {
    pub image: Option<&'a Path>,
    pub image_symbol: &'a str,
    pub scores: Option<&'a Path>,
    pub calibration: Option<&'a Path>,
}

fn build_evidence(ctx: &Ctx, g: &Grammar, fg: &FactorGraph, args: &EvidenceArgs) -> Result<Evidence> {
    let mut ev = Evidence::uniform(fg.num_vars());
    if let Some(path) = args.image {
        let img = io::read_graymap(path)?.to_f64();
        let n = &ctx.config.noise;
        let lo = gaussian_evidence(&img, n.mu0, n.mu1, n.sigma);
        add_cell_evidence(&mut ev, g, fg.layout(), symbol(g, args.image_symbol)?, &lo)?;
    }
    if let Some(path) = args.scores {
        let fields = io::read_scores(path, g)?;
        let calibration = io::read_calibration(args.calibration, g)?;
        for (s, field) in fields.into_iter().enumerate() {
            if let Some(scores) = field {
                let sym = SymbolId(s as u32);
                let prior = g.symbol(sym).self_rooting;
                if !(prior > 0.0 && prior < 1.0) {
                    bail!("score evidence for `{}` needs a self-rooting probability in (0, 1)", g.symbol(sym).name);
                }
                let sf = ScoreField { symbol: sym, scores, calibration: calibration[s], prior };
                add_score_evidence(&mut ev, g, fg.layout(), &sf);
            }
        }
    }
    Ok(ev)
}

fn clamps(g: &Grammar, fg: &FactorGraph, specs: &[String]) -> Result<Vec<(VarId, bool)>> {
    specs
        .iter()
        .map(|s| io::parse_clamp(g, s).map(|(b, on)| (fg.layout().x(b), on)))
        .collect()
}

pub fn infer(ctx: &Ctx, grammar: &Path, evidence: &EvidenceArgs, clamp: &[String], dir: &Path) -> Result<Status> {
    out_dir(dir)?;
    let mut manifest = RunManifest::new("infer", ctx.config);
    manifest.seeds.push(ctx.config.bp.seed);
    let (g, fg) = load(ctx, grammar, &mut manifest)?;
    let ev = build_evidence(ctx, &g, &fg, evidence)?;
    let clamps = clamps(&g, &fg, clamp)?;
    let t = Instant::now();
    let m = Lbp::new(&fg, &ctx.config.bp).run(&ev, &clamps);
    manifest.timing("lbp", t);
    let status = record_run(&mut manifest, &m);
    write_beliefs(&g, &fg, &m, dir, &mut manifest)?;
    manifest.write(dir)?;
    println!("iterations {} converged {}", m.iterations, m.converged);
    Ok(status)
}

pub fn condition(ctx: &Ctx, grammar: &Path, clamp: &[String], target: &str, radius: usize, dir: &Path) -> Result<Status> {
    if clamp.is_empty() {
        bail!("condition needs at least one --clamp");
    }
    out_dir(dir)?;
    let mut manifest = RunManifest::new("condition", ctx.config);
    manifest.seeds.push(ctx.config.bp.seed);
    let (g, fg) = load(ctx, grammar, &mut manifest)?;
    let target_id = symbol(&g, target)?;
    let clamps = clamps(&g, &fg, clamp)?;
    let t = Instant::now();
    let m = Lbp::new(&fg, &ctx.config.bp).run(&Evidence::uniform(fg.num_vars()), &clamps);
    manifest.timing("lbp", t);
    let status = record_run(&mut manifest, &m);
    write_beliefs(&g, &fg, &m, dir, &mut manifest)?;
    let modes = find_modes(&belief_map(&g, fg.layout(), &m, target_id), radius);
    let path = dir.join("modes.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["rank", "x", "y", "peak", "mass"])?;
    for (rank, mode) in modes.iter().enumerate() {
        w.write_record([rank.to_string(), mode.x.to_string(), mode.y.to_string(), mode.peak.to_string(), mode.mass.to_string()])?;
    }
    w.flush()?;
    manifest.output(&path);
    manifest.write(dir)?;
    for mode in modes.iter().take(3) {
        println!("{target} mode at ({}, {}) peak {:.4} mass {:.4}", mode.x, mode.y, mode.peak, mode.mass);
    }
    Ok(status)
}

/// Scene files (`*.txt`) in `dir`, sorted by name.
fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading training directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn learn(ctx: &Ctx, grammar: &Path, training: &Path, iters: usize, observe: &[String], dir: &Path) -> Result<Status> {
    out_dir(dir)?;
    let mut manifest = RunManifest::new("learn", ctx.config);
    manifest.seeds.push(ctx.config.bp.seed);
    let (g, fg) = load(ctx, grammar, &mut manifest)?;
    // terminal symbols are observed unless told otherwise
    let observed: Vec<SymbolId> = if observe.is_empty() {
        (0..g.num_symbols() as u32).map(SymbolId).filter(|&s| g.rules_for(s).is_empty()).collect()
    } else {
        observe.iter().map(|n| symbol(&g, n)).collect::<Result<_>>()?
    };
    let mut examples = Vec::new();
    for path in scene_files(training)? {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let scene = parse_scene(&text, &g).with_context(|| format!("parsing {}", path.display()))?;
        let clamps = observed
            .iter()
            .flat_map(|&s| g.bricks().range(s))
            .map(|b| (fg.layout().x(BrickId(b)), scene.contains(BrickId(b))))
            .collect();
        examples.push(TrainingExample { evidence: Evidence::uniform(fg.num_vars()), clamps });
    }
    manifest.result("examples", examples.len());
    let t = Instant::now();
    let (learned, state) = fit(&g, &examples, iters, &ctx.config.em())?;
    manifest.timing("em", t);
    for s in &state.degenerate {
        eprintln!("warning: degenerate statistics for `{}`; its rule probabilities were left unchanged", g.symbol(*s).name);
    }
    if state.unconverged_runs > 0 {
        eprintln!("note: {} LBP runs stopped at max_iters", state.unconverged_runs);
    }
    manifest.result("iterations", state.iterations);
    manifest.result("converged", state.converged);
    manifest.result("unconverged_lbp_runs", state.unconverged_runs);
    manifest.result("degenerate", state.degenerate.iter().map(|s| g.symbol(*s).name.clone()).collect::<Vec<_>>());

    let path = dir.join("learned.grammar");
    std::fs::write(&path, write_grammar(&learned)).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(&path);

    let path = dir.join("trajectory.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["iteration".to_string()];
    for (i, r) in g.rules().iter().enumerate() {
        let k = g.rules_for(r.lhs).iter().position(|id| id.index() == i).unwrap_or(0);
        header.push(format!("P({}#{k})", g.symbol(r.lhs).name));
    }
    header.extend(g.symbols().iter().map(|s| format!("epsilon({})", s.name)));
    w.write_record(&header)?;
    for (i, (rules, eps)) in state.rule_trajectory.iter().zip(&state.self_rooting_trajectory).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(rules.iter().chain(eps).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    manifest.output(&path);
    manifest.write(dir)?;
    println!("EM ran {} iterations (converged {})", state.iterations, state.converged);
    Ok(Status::Ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    PrAuc,
    Localization,
}

pub fn eval(ctx: &Ctx, beliefs: &Path, truth: &Path, mode: EvalMode, dir: &Path) -> Result<Status> {
    out_dir(dir)?;
    let mut manifest = RunManifest::new("eval", ctx.config);
    let path = dir.join("metrics.csv");
    match mode {
        EvalMode::PrAuc => {
            let p = io::graymap_to_probability(&io::read_graymap(beliefs)?);
            let t = io::read_binary_map(truth)?;
            if !p.same_shape(&t) {
                bail!("beliefs are {}x{} but truth is {}x{}", p.width, p.height, t.width, t.height);
            }
            let curve = pr_auc(&p.data, &t.data)?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["threshold", "precision", "recall"])?;
            for q in &curve.points {
                w.write_record([q.threshold.to_string(), q.precision.to_string(), q.recall.to_string()])?;
            }
            w.flush()?;
            drop(w);
            append_line(&path, &format!("# auc,{}", curve.auc))?;
            manifest.result("auc", curve.auc);
            println!("auc {:.4}", curve.auc);
        }
        EvalMode::Localization => {
            let rows = io::read_beliefs_csv(beliefs)?;
            let truth = io::read_locations(truth)?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["symbol", "pred_x", "pred_y", "true_x", "true_y", "error"])?;
            let mut total = 0.0;
            for loc in &truth {
                // first row wins ties, matching ascending brick order
                let best = rows
                    .iter()
                    .filter(|r| r.symbol == loc.symbol)
                    .fold(None::<&io::BeliefRow>, |acc, r| match acc {
                        Some(a) if a.belief >= r.belief => Some(a),
                        _ => Some(r),
                    })
                    .with_context(|| format!("no beliefs for symbol `{}`", loc.symbol))?;
                let err = localization_error((best.x as f64, best.y as f64), (loc.x, loc.y));
                total += err;
                w.write_record([
                    loc.symbol.clone(),
                    best.x.to_string(),
                    best.y.to_string(),
                    loc.x.to_string(),
                    loc.y.to_string(),
                    err.to_string(),
                ])?;
            }
            w.flush()?;
            drop(w);
            let mean = if truth.is_empty() { 0.0 } else { total / truth.len() as f64 };
            append_line(&path, &format!("# mean_error,{mean}"))?;
            manifest.result("mean_error", mean);
            println!("mean localization error {mean:.3}");
        }
    }
    manifest.output(&path);
    manifest.write(dir)?;
    Ok(Status::Ok)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Synthetic curve-detection benchmark: one grammar and one baseline row
/// per image.
pub fn benchmark(ctx: &Ctx, grammar: &Path, count: usize, seed: u64, dir: &Path) -> Result<Status> {
    out_dir(dir)?;
    let mut manifest = RunManifest::new("benchmark", ctx.config);
    let (g, fg) = load(ctx, grammar, &mut manifest)?;
    symbol(&g, "J")?;
    let maps = sample_contour_maps(&g, count, seed)?;
    let path = dir.join("benchmark.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "model", "auc", "iterations", "converged"])?;
    let (mut sg, mut sb) = (0.0, 0.0);
    let mut status = Status::Ok;
    let t = Instant::now();
    for (s, map) in &maps {
        manifest.seeds.push(*s);
        let d = detect_curves(&g, &fg, map, &ctx.config.noise(), *s, &ctx.config.bp)?;
        if !d.converged {
            status = Status::NotConverged;
        }
        w.write_record([s.to_string(), "grammar".into(), d.auc_grammar.to_string(), d.iterations.to_string(), d.converged.to_string()])?;
        w.write_record([s.to_string(), "no-context".into(), d.auc_baseline.to_string(), String::new(), String::new()])?;
        sg += d.auc_grammar;
        sb += d.auc_baseline;
    }
    w.flush()?;
    manifest.timing("detect", t);
    manifest.output(&path);
    let n = maps.len().max(1) as f64;
    manifest.result("mean_auc_grammar", sg / n);
    manifest.result("mean_auc_no_context", sb / n);
    manifest.write(dir)?;
    println!("mean auc grammar {:.4} no-context {:.4}", sg / n, sb / n);
    if status == Status::NotConverged {
        eprintln!("warning: LBP did not reach the tolerance on some images");
    }
    Ok(status)
}
