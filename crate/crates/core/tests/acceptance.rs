//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown;
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use posi_rip::bounds::{
    compute_bounds, corollary_rates, empirical_lower_bound, u_bar, u_orth, u_rip, u_sparse, BellGrid, BellParams,
    BoundsConfig, RhoChoice,
};
use posi_rip::contrast::{ContrastOptions, DirectionSet};
use posi_rip::design::{make_equicorr, make_gaussian, DesignMatrix};
use posi_rip::distributions::{normal_quantile, Dof};
use posi_rip::family::ModelFamily;
use posi_rip::posi_mc::{coverage_sim, estimate_k, CoverageConfig, GammaSample};
use posi_rip::rip::{delta, kappa, delta_bound_from_kappa, RipOptions};
use statrs::distribution::{ContinuousCDF, StudentsT};

type Check = std::result::Result<String, String>;
type Criterion = fn() -> Check;

struct SuiteDesign {
    name: &'static str,
    x: DesignMatrix,
    s: usize,
}

fn suite() -> Vec<SuiteDesign> {
    vec![
        SuiteDesign { name: "identity p=10", x: DesignMatrix::identity(10), s: 3 },
        SuiteDesign { name: "gauss n=40 p=10 seed=11", x: make_gaussian(40, 10, 11), s: 3 },
        SuiteDesign { name: "gauss n=60 p=12 seed=5", x: make_gaussian(60, 12, 5), s: 2 },
        SuiteDesign { name: "gauss n=30 p=8 seed=3", x: make_gaussian(30, 8, 3), s: 4 },
        SuiteDesign { name: "equicorr p=12 k=8 c=0.15", x: make_equicorr(12, 8, 0.15).unwrap(), s: 3 },
    ]
}

fn dirs(x: &DesignMatrix, s: usize) -> DirectionSet {
    DirectionSet::build(x, &ModelFamily::sparse(x.p(), s).unwrap(), ContrastOptions::default()).unwrap()
}

fn exhaustive_delta(x: &DesignMatrix, s: usize) -> f64 {
    delta(x, s, RipOptions::default()).unwrap().value
}

fn within(elapsed: Duration, limit: f64, what: &str) -> std::result::Result<(), String> {
    let secs = elapsed.as_secs_f64();
    if secs > limit {
        return Err(format!("{what} took {secs:.1}s, limit {limit}s"));
    }
    Ok(())
}

fn orthogonal_oracle() -> Check {
    let start = Instant::now();
    let x = DesignMatrix::identity(10);
    let est = estimate_k(&dirs(&x, 3), 0.05, Dof::Infinite, 1_000_000, 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let oracle = normal_quantile((1.0 + 0.95f64.powf(0.1)) / 2.0).unwrap();
    within(elapsed, 30.0, "estimate")?;
    let diff = (est.k_hat - oracle).abs();
    let msg = format!("k_hat {:.4} vs {:.4}, |diff| {:.4}, {:.1}s", est.k_hat, oracle, diff, elapsed.as_secs_f64());
    if diff <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn equicorr_rip_exactness() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (p, k) in [(10, 5), (10, 9), (12, 10), (20, 10), (20, 19), (30, 20)] {
        for c in [0.05, 0.1, 0.2] {
            if k as f64 * c * c >= 1.0 {
                continue;
            }
            let x = make_equicorr(p, k, c).unwrap();
            for s in 1..=k {
                if posi_rip::family::binomial_f64(p as u64, s as u64) > 5e4 {
                    continue;
                }
                let d = exhaustive_delta(&x, s);
                worst = worst.max((d - c * ((s - 1) as f64).sqrt()).abs());
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 10.0, "grid")?;
    let msg = format!("{cases} cases, max error {worst:.2e}, {:.1}s", elapsed.as_secs_f64());
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn kappa_dominance() -> Check {
    let start = Instant::now();
    let mut checked = 0;
    let mut seed = 0u64;
    let mut worst = f64::NEG_INFINITY;
    while checked < 50 {
        seed += 1;
        if seed > 500 {
            return Err(format!("only {checked} designs with kappa < 1"));
        }
        let n = 30 + (seed as usize * 7) % 71;
        let p = 4 + (seed as usize) % 9;
        let s = 1 + (seed as usize / 3) % 4;
        let x = make_gaussian(n, p, seed);
        let k = kappa(&x, s, RipOptions::default()).unwrap().value;
        if k >= 1.0 {
            continue;
        }
        let d = exhaustive_delta(&x, s);
        worst = worst.max(d - delta_bound_from_kappa(k).unwrap());
        checked += 1;
    }
    let elapsed = start.elapsed();
    within(elapsed, 60.0, "designs")?;
    let msg = format!("{checked} designs, max(delta - 2k/(1-k)) {worst:.3e}, {:.1}s", elapsed.as_secs_f64());
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sparse_width_validity() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for d in suite() {
        let (mean, se) = GammaSample::simulate(&dirs(&d.x, d.s), Dof::Infinite, 100_000, 21).gauss_width();
        let bound = u_sparse(d.x.p(), d.s).unwrap();
        ok &= mean <= bound + 3.0 * se;
        lines.push(format!("{}: {mean:.3} <= {bound:.3}", d.name));
    }
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rip_width_validity() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for d in suite() {
        let dl = exhaustive_delta(&d.x, d.s);
        let (mean, se) = GammaSample::simulate(&dirs(&d.x, d.s), Dof::Infinite, 100_000, 22).gauss_width();
        let bound = u_rip(d.x.p(), d.s, dl).map_err(|e| format!("{}: {e}", d.name))?;
        ok &= mean <= bound + 3.0 * se;
        lines.push(format!("{}: {mean:.3} <= {bound:.3} (delta {dl:.3})", d.name));
    }
    for p in [1, 2, 10, 100, 1000] {
        for s in [1, p.min(3), p] {
            ok &= u_rip(p, s, 0.0).unwrap() == u_orth(p).unwrap();
        }
    }
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sandwich() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for d in suite() {
        let dl = exhaustive_delta(&d.x, d.s);
        let ds = dirs(&d.x, d.s);
        for r in [Dof::Infinite, Dof::Finite(10)] {
            let est = GammaSample::simulate(&ds, r, 100_000, 23).estimate(0.05).unwrap();
            let cfg = BoundsConfig {
                p: d.x.p(),
                s: d.s,
                n: d.x.n(),
                delta: dl,
                alpha: 0.05,
                r,
                grid: 1000,
                rho: RhoChoice::Models,
            };
            let b = compute_bounds(&cfg, None).map_err(|e| format!("{}: {e}", d.name))?;
            let tilde = b.u_tilde_rip.ok_or_else(|| format!("{}: no u_tilde_rip", d.name))?;
            let lo = est.k_hat - 3.0 * est.k_se;
            let fine = lo <= b.u_bar_sparse && lo <= b.u_bar_rip && lo <= tilde;
            ok &= fine;
            if !fine || r == Dof::Infinite {
                lines.push(format!(
                    "{} r={r}: K {:.3} <= ({:.3}, {:.3}, {:.3})",
                    d.name, est.k_hat, b.u_bar_sparse, b.u_bar_rip, tilde
                ));
            }
        }
    }
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn b_ell_oracle() -> Check {
    let mut worst_q = 0.0f64;
    let mut worst_res = 0.0f64;
    for q in [5u64, 20, 50] {
        for r in [Dof::Finite(10), Dof::Finite(50), Dof::Infinite] {
            let oracle = match r {
                Dof::Infinite => 1.959_963_984_540_054,
                Dof::Finite(m) => StudentsT::new(0.0, 1.0, m as f64).unwrap().inverse_cdf(0.975),
            };
            let params = BellParams::new(q, r, 1.0, 0.05, 4000).unwrap();
            let grid = BellGrid::for_params(&params).unwrap();
            let b = grid.solve(r, 0.05).map_err(|e| e.to_string())?;
            worst_q = worst_q.max((b - oracle).abs());
            worst_res = worst_res.max((grid.h(b, r).unwrap() - 0.05).abs());
            for ln_rho in [10f64.ln(), 1e6f64.ln(), 300.0] {
                let params = BellParams::with_ln_rho(q, r, ln_rho, 0.05, 1000).unwrap();
                let grid = BellGrid::for_params(&params).unwrap();
                let b = grid.solve(r, 0.05).map_err(|e| e.to_string())?;
                worst_res = worst_res.max((grid.h(b, r).unwrap() - 0.05).abs());
            }
        }
    }
    let msg = format!("max |B - t quantile| {worst_q:.2e}, max |H(B) - l| {worst_res:.2e}");
    if worst_q <= 5e-3 && worst_res <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn coverage() -> Check {
    let x = DesignMatrix::identity(5);
    let fam = ModelFamily::sparse(5, 5).unwrap();
    let mu = vec![0.0; 5];
    let k_hat = estimate_k(&dirs(&x, 5), 0.05, Dof::Infinite, 200_000, 31).unwrap().k_hat;
    let k_sparse = u_bar(u_sparse(5, 5).unwrap(), 0.05, Dof::Infinite).unwrap();
    let run = |k| {
        let cfg = CoverageConfig { sigma: 1.0, alpha: 0.05, r: Dof::Infinite, k, reps: 10_000, seed: 32 };
        coverage_sim(&x, &mu, &fam, cfg).unwrap()
    };
    let (a, b) = (run(k_hat), run(k_sparse));
    let se = (0.95f64 * 0.05 / 10_000.0).sqrt();
    let ok = (a.coverage - 0.95).abs() <= 3.0 * se && b.coverage >= 0.95 - 3.0 * se;
    let msg = format!(
        "K_hat {:.3}: coverage {:.4}; U_bar_sparse {:.3}: coverage {:.4}; se {:.4}",
        k_hat, a.coverage, k_sparse, b.coverage, se
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lower_chain() -> Check {
    let (p, k, c) = (64, 32, 0.1);
    let x = make_equicorr(p, k, c).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for s in [2, 4] {
        let emp = empirical_lower_bound(p, k, c, s, 100_000, 41).unwrap();
        let sample = GammaSample::simulate(&dirs(&x, s), Dof::Infinite, 2000, 42);
        let (mean, se) = sample.gauss_width();
        let gap = (mean - sample.median_gamma_inf()).abs();
        let fine = emp.value - 3.0 * emp.se <= mean + 3.0 * se && gap <= (2.0 * 2f64.ln()).sqrt() + 3.0 * se;
        ok &= fine;
        lines.push(format!("s={s}: lower {:.3} <= E[gamma] {mean:.3}, mean-median gap {gap:.3}", emp.value));
    }
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rate_band() -> Check {
    let mut ratios = Vec::new();
    let mut p = 64usize;
    while p <= 4096 {
        let delta = (p as f64).powf(-0.25);
        let s = ((p as f64).cbrt() - 1e-9).ceil() as usize;
        let r = corollary_rates(p, s, delta).unwrap();
        ratios.push(r.upper / r.lower);
        p *= 2;
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let msg = format!("upper/lower ratios in [{lo:.3}, {hi:.3}] over p = 64..4096");
    if lo.is_finite() && hi / lo <= 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = dir.path().join("grid.json");
    std::fs::write(
        &spec,
        r#"{"ensembles": ["equicorr:p=10,k=5,c=0.2", "gauss:n=30,p=8,seed=4"], "s": [2], "alpha": [0.05, 0.1],
            "r": ["inf", 10], "reps": 2000, "seed": 9, "grid": 200}"#,
    )
    .unwrap();
    let spec = spec.to_str().unwrap().to_string();
    let commands: Vec<Vec<String>> = [
        "estimate --ensemble gauss:n=30,p=8,seed=2 --s 3 --reps 5000 --r 10 --seed 4",
        "rip --ensemble gauss:n=30,p=10,seed=2 --s 4",
        "bounds --ensemble gauss:n=30,p=8,seed=2 --s 3 --grid 300",
        "lower --p 20 --k 10 --c 0.2 --s 3 --reps 3000",
        "bl --q 20 --r 10 --rho 1e30 --grid 500",
        "cover --ensemble identity:p=4 --s 2 --k estimate --k-reps 3000 --reps 2000 --r 8",
    ]
    .iter()
    .map(|c| c.split_whitespace().map(String::from).collect())
    .chain(std::iter::once(vec!["scan".into(), "--grid-spec".into(), spec]))
    .collect();
    for cmd in &commands {
        let mut outputs = Vec::new();
        for workers in ["1", "2", "8", "8"] {
            let args = ["posi", "--workers", workers].into_iter().map(String::from).chain(cmd.iter().cloned());
            let out = posi_rip::cli::run(args);
            if out.code != 0 {
                return Err(format!("{} failed: {}", cmd[0], out.stderr.trim()));
            }
            outputs.push(out.stdout);
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            return Err(format!("{} output differs across worker counts", cmd[0]));
        }
    }
    Ok(format!("{} commands byte-identical at 1, 2, 8 workers and on rerun", commands.len()))
}

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("orthogonal oracle", orthogonal_oracle),
        ("equi-correlated RIP exactness", equicorr_rip_exactness),
        ("kappa dominance", kappa_dominance),
        ("sparse width validity", sparse_width_validity),
        ("RIP width validity", rip_width_validity),
        ("sandwich", sandwich),
        ("B_l oracle", b_ell_oracle),
        ("coverage", coverage),
        ("lower-bound chain", lower_chain),
        ("rate band", rate_band),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
