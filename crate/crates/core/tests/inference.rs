mod common;

use common::{enumerate_joint, enumerate_marginals, is_forest, random_grammar, rng};
use rand::Rng;
use scenegram::bp::{run_lbp, BpConfig, Evidence, Schedule};
use scenegram::factorgraph::{compile, eval_factor, VarId};
use scenegram::sampler::{joint_log_prob, scene_to_assignment, LogProb, Sampler};

fn exact_cfg() -> BpConfig {
    BpConfig { damping: 0.0, tolerance: 1e-14, max_iters: 500, ..BpConfig::default() }
}

#[test]
fn lbp_is_exact_on_forests() {
    let mut r = rng(5);
    let mut checked = 0;
    let mut seed = 0;
    while checked < 15 {
        seed += 1;
        let g = random_grammar(&mut rng(seed), 3, 2);
        let fg = compile(&g);
        if fg.num_vars() > 16 || !is_forest(&fg) {
            continue;
        }
        let mut ev = Evidence::uniform(fg.num_vars());
        for v in 0..fg.layout().num_bricks() as u32 {
            ev.set(VarId(v), [r.random_range(0.1..1.0), r.random_range(0.1..1.0)]);
        }
        let exact = enumerate_marginals(&fg, &ev);
        for schedule in [Schedule::SynchronousFlood, Schedule::FactorSweep] {
            let m = run_lbp(&fg, &ev, &[], &BpConfig { schedule, ..exact_cfg() });
            assert!(m.converged, "grammar seed {seed}");
            for (v, (&b, &e)) in m.beliefs.iter().zip(&exact).enumerate() {
                assert!((b - e).abs() < 1e-8, "grammar seed {seed} var {v}: lbp {b} exact {e}");
            }
        }
        checked += 1;
    }
}

#[test]
fn joint_density_is_normalized_and_matches_factors() {
    for seed in 1..40 {
        let g = random_grammar(&mut rng(seed), 3, 2);
        let fg = compile(&g);
        if fg.num_vars() > 18 {
            continue;
        }
        let (total, _) = enumerate_joint(&g, fg.layout());
        assert!((total - 1.0).abs() < 1e-9, "seed {seed}: total {total}");

        let sampler = Sampler::new(&g).unwrap();
        for s in 0..20 {
            let a = scene_to_assignment(&sampler.sample(s), &g, fg.layout());
            assert!(a.is_structurally_valid(&g, fg.layout()));
            let LogProb::Finite(lp) = joint_log_prob(&a, &g, fg.layout()).unwrap() else {
                panic!("sampled scene has zero probability");
            };
            let by_factors: f64 = fg
                .factors()
                .map(|f| {
                    let local: Vec<bool> = f.scope.iter().map(|v| a.values[v.index()]).collect();
                    eval_factor(&f, &local).unwrap().ln()
                })
                .sum();
            assert!((lp - by_factors).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_evidence_on_a_forest_gives_prior_marginals() {
    let mut seed = 100;
    loop {
        seed += 1;
        let g = random_grammar(&mut rng(seed), 3, 2);
        let fg = compile(&g);
        if fg.num_vars() > 16 || !is_forest(&fg) || fg.num_vars() < 6 {
            continue;
        }
        let (_, prior) = enumerate_joint(&g, fg.layout());
        let m = run_lbp(&fg, &Evidence::uniform(fg.num_vars()), &[], &exact_cfg());
        for (b, p) in m.beliefs.iter().zip(&prior) {
            assert!((b - p).abs() < 1e-8);
        }
        break;
    }
}

#[test]
fn beliefs_are_normalized_under_clamps() {
    let g = random_grammar(&mut rng(3), 3, 3);
    let fg = compile(&g);
    let m = run_lbp(&fg, &Evidence::uniform(fg.num_vars()), &[(VarId(0), true)], &BpConfig::default());
    for v in 0..fg.num_vars() as u32 {
        let b = m.belief(VarId(v));
        assert!((b[0] + b[1] - 1.0).abs() < 1e-9);
    }
}
