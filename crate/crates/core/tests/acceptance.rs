//! Acceptance criteria 1-9. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured values and the pinned tolerance.
//!
//! Run alone with `cargo test -p suffcast --test acceptance`.

use std::io::Write as _;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use suffcast::forecaster::{ForecastMethod, OrderPolicy};
use suffcast::sdr::{default_c_t, DEFAULT_CENSORING};
use suffcast::simulation::{Dgp, DgpSpec, Link, StudyConfig, StudyTable};
use suffcast::{
    dr_kernel, dr_kernel_pairform, estimated_factors_known_loadings, fit_factors, monte_carlo_study,
    select_dimension, sir_kernel, slice, tm_kernel, KernelMethod, VarianceMode,
};

const SEED: u64 = 20_160_401;
const N_REPS: usize = 200;

/// Written straight to stderr so the line shows even when libtest captures
/// the output of passing tests.
fn report(n: usize, pass: bool, detail: String) {
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn table_config(link: Link) -> StudyConfig {
    StudyConfig {
        spec: DgpSpec {
            link,
            seed: SEED,
            ..DgpSpec::default()
        },
        methods: vec![ForecastMethod::Sir, ForecastMethod::Dr, ForecastMethod::Nlpc],
        n_reps: N_REPS,
        ..StudyConfig::default()
    }
}

fn model_one() -> &'static StudyTable {
    static TABLE: OnceLock<StudyTable> = OnceLock::new();
    TABLE.get_or_init(|| monte_carlo_study(&table_config(Link::I)).expect("model I study"))
}

fn medians(table: &StudyTable, method: ForecastMethod) -> (f64, f64, f64) {
    let row = table.row(method).expect("method row");
    let pct = |c: Option<suffcast::simulation::CellStats>| c.map_or(f64::NAN, |c| 100.0 * c.median);
    (pct(row.r2_phi1), pct(row.r2_phi2), pct(row.oos_r2))
}

#[test]
fn criterion_1_model_one_directions() {
    let table = model_one();
    let (dr1, dr2, _) = medians(table, ForecastMethod::Dr);
    let (sir1, sir2, _) = medians(table, ForecastMethod::Sir);
    let pass = dr1 >= 95.0 && dr2 >= 90.0 && sir2 <= 40.0 && table.failures() == 0;
    report(
        1,
        pass,
        format!(
            "DR R2(phi1)={dr1:.1}% (>=95) R2(phi2)={dr2:.1}% (>=90); SIR R2(phi1)={sir1:.1}% R2(phi2)={sir2:.1}% (<=40); failures={}",
            table.failures()
        ),
    );
}

#[test]
fn criterion_2_model_three_directions() {
    let mut config = table_config(Link::III);
    config.methods = vec![ForecastMethod::Sir, ForecastMethod::Dr];
    config.forecast_metrics = false;
    let table = monte_carlo_study(&config).unwrap();
    let (dr1, dr2, _) = medians(&table, ForecastMethod::Dr);
    let (sir1, sir2, _) = medians(&table, ForecastMethod::Sir);
    let pass = dr1 >= 95.0 && dr2 >= 93.0 && sir1 <= 50.0 && sir2 <= 50.0 && table.failures() == 0;
    report(
        2,
        pass,
        format!("DR {dr1:.1}% (>=95) / {dr2:.1}% (>=93); SIR {sir1:.1}% / {sir2:.1}% (both <=50)"),
    );
}

#[test]
fn criterion_3_model_one_forecasts() {
    let table = model_one();
    let (_, _, dr) = medians(table, ForecastMethod::Dr);
    let (_, _, sir) = medians(table, ForecastMethod::Sir);
    let (_, _, pc) = medians(table, ForecastMethod::Nlpc);
    let pass = dr >= 80.0 && sir <= 25.0 && (pc - 21.3).abs() <= 10.0 && sir < pc && pc < dr;
    report(
        3,
        pass,
        format!("out-of-sample R2: DR={dr:.1}% (>=80) SIR={sir:.1}% (<=25) NL-PC={pc:.1}% (21.3+-10, between)"),
    );
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

#[test]
fn criterion_4_dr_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let mut uneven = 0;
    for i in 0..50 {
        let h = 2 + i % 9;
        let k = 1 + i % 6;
        let t = if i == 0 { 20 } else if i == 1 { 500 } else { rng.random_range(20..=500) };
        if t % h != 0 {
            uneven += 1;
        }
        let f = normal_matrix(&mut rng, t, k);
        let y: Vec<f64> = (0..t)
            .map(|s| f[(s, 0)].powi(2) + 0.5 * rng.random::<f64>())
            .collect();
        let slices = slice(&y, h).unwrap();
        let direct = dr_kernel(&f, &slices, VarianceMode::Pooled).unwrap();
        let pairs = dr_kernel_pairform(&f, &slices, VarianceMode::Pooled).unwrap();
        worst = worst.max(rel_frobenius(&direct.matrix, &pairs.matrix));
    }
    report(
        4,
        worst <= 1e-10 && uneven > 0,
        format!("max relative Frobenius gap {worst:.2e} (<=1e-10) over 50 instances, {uneven} with T mod H != 0"),
    );
}

/// Explicit K x K x K tensors per slice, with its own slicing.
fn tm_oracle(f: &DMatrix<f64>, y: &[f64], h_count: usize) -> DMatrix<f64> {
    let (t, k) = f.shape();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap().then(a.cmp(&b)));
    let mut slices = vec![Vec::new(); h_count];
    for (rank, &s) in order.iter().enumerate() {
        slices[rank * h_count / t].push(s);
    }
    let means: Vec<f64> = (0..k).map(|a| (0..t).map(|s| f[(s, a)]).sum::<f64>() / t as f64).collect();
    let g = |s: usize, a: usize| f[(s, a)] - means[a];
    let mut global = vec![vec![vec![0.0; k]; k]; k];
    for s in 0..t {
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    global[a][b][c] += g(s, a) * g(s, b) * g(s, c) / t as f64;
                }
            }
        }
    }
    let mut m = DMatrix::zeros(k, k);
    for members in &slices {
        let n = members.len() as f64;
        let sm: Vec<f64> = (0..k).map(|a| members.iter().map(|&s| g(s, a)).sum::<f64>() / n).collect();
        let mut mu = vec![vec![vec![0.0; k]; k]; k];
        for &s in members {
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        mu[a][b][c] += (g(s, a) - sm[a]) * (g(s, b) - sm[b]) * (g(s, c) - sm[c]) / n;
                    }
                }
            }
        }
        for c in 0..k {
            for d in 0..k {
                let mut acc = 0.0;
                for a in 0..k {
                    for b in a..k {
                        acc += (mu[a][b][c] - global[a][b][c]) * (mu[a][b][d] - global[a][b][d]);
                    }
                }
                m[(c, d)] += n / t as f64 * acc;
            }
        }
    }
    m
}

#[test]
fn criterion_5_tm_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 1..=3 {
        for t in [8, 13, 21, 30] {
            for h in [2, 3, 4] {
                let f = normal_matrix(&mut rng, t, k).map(|v: f64| v + 0.3 * v * v);
                let y: Vec<f64> = (0..t).map(|s| f[(s, 0)].sin() + 0.1 * rng.random::<f64>()).collect();
                let slices = slice(&y, h).unwrap();
                let got = tm_kernel(&f, &slices).unwrap();
                worst = worst.max(rel_frobenius(&got.matrix, &tm_oracle(&f, &y, h)));
                cases += 1;
            }
        }
    }
    report(
        5,
        worst <= 1e-10,
        format!("max relative Frobenius gap {worst:.2e} (<=1e-10) over {cases} instances"),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_6_invariance() {
    let sizes = [2_000usize, 8_000, 32_000];
    let seeds = 20u64;
    let mut dr_med = Vec::new();
    let mut tm_med = Vec::new();
    for &t in &sizes {
        let spec = DgpSpec {
            p: 50,
            t,
            n_test: 0,
            k: 2,
            phi1: vec![1.0, 0.0],
            phi2: vec![0.0, 1.0],
            link: Link::I,
            seed: SEED + 6,
            ..DgpSpec::default()
        };
        let dgp = Dgp::new(spec).unwrap();
        let gaps: Vec<(f64, f64)> = (0..seeds)
            .into_par_iter()
            .map(|rep| {
                let draw = dgp.sample(rep).unwrap();
                let f_hat = estimated_factors_known_loadings(&draw.x, &draw.loadings).unwrap();
                let slices = slice(&draw.y, 10).unwrap();
                let dr = |f: &DMatrix<f64>| dr_kernel(f, &slices, VarianceMode::Pooled).unwrap().matrix;
                let tm = |f: &DMatrix<f64>| tm_kernel(f, &slices).unwrap().matrix;
                (
                    (dr(&draw.factors) - dr(&f_hat)).norm(),
                    (tm(&draw.factors) - tm(&f_hat)).norm(),
                )
            })
            .collect();
        dr_med.push(median(gaps.iter().map(|g| g.0).collect()));
        tm_med.push(median(gaps.iter().map(|g| g.1).collect()));
    }
    let halves = |m: &[f64]| m.windows(2).all(|w| w[1] <= 0.5 * w[0]);
    let ratios = |m: &[f64]| format!("{:.2e}/{:.2e}/{:.2e} (ratios {:.2}, {:.2})", m[0], m[1], m[2], m[0] / m[1], m[1] / m[2]);
    report(
        6,
        halves(&dr_med) && halves(&tm_med),
        format!(
            "median |M(f)-M(f_hat)| at T=2000/8000/32000: DR {} TM {} (each ratio >=2)",
            ratios(&dr_med),
            ratios(&tm_med)
        ),
    );
}

#[test]
fn criterion_7_order_selection() {
    let k_config = StudyConfig {
        spec: DgpSpec {
            p: 200,
            t: 200,
            n_test: 0,
            seed: SEED + 7,
            ..DgpSpec::default()
        },
        methods: vec![ForecastMethod::Pc],
        n_reps: N_REPS,
        k: OrderPolicy::Auto,
        k_max: 10,
        direction_metrics: false,
        forecast_metrics: false,
        ..StudyConfig::default()
    };
    let table = monte_carlo_study(&k_config).unwrap();
    let k_hits = table.reps.iter().filter(|r| r.error.is_none() && r.k == 6).count();
    let k_rate = k_hits as f64 / N_REPS as f64;

    let spec = DgpSpec {
        link: Link::IV,
        n_test: 0,
        seed: SEED + 70,
        ..DgpSpec::default()
    };
    let dgp = Dgp::new(spec.clone()).unwrap();
    let picks: Vec<(usize, [f64; 3])> = (0..N_REPS as u64)
        .into_par_iter()
        .map(|rep| {
            let draw = dgp.sample(rep).unwrap();
            let fit = fit_factors(&draw.x, spec.k).unwrap();
            let slices = slice(&draw.y, 10).unwrap();
            let kernel = dr_kernel(&fit.factors, &slices, VarianceMode::Identity).unwrap();
            let c_t = default_c_t(KernelMethod::Dr, spec.k, spec.p, spec.t);
            let l_hat = select_dimension(&kernel, spec.t, DEFAULT_CENSORING, c_t).unwrap().l_hat;
            (l_hat, [kernel.eigenvalues[0], kernel.eigenvalues[1], kernel.eigenvalues[2]])
        })
        .collect();
    let lambda = |i: usize| median(picks.iter().map(|p| p.1[i]).collect());
    let picks: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let l_rate = picks.iter().filter(|&&l| l == 2).count() as f64 / N_REPS as f64;
    let mut hist = [0usize; 4];
    for &l in &picks {
        hist[l.min(3)] += 1;
    }
    report(
        7,
        k_rate >= 0.9 && l_rate >= 0.8,
        format!(
            "K_hat=6 in {:.1}% (>=90); L_hat=2 in {:.1}% (>=80), L_hat counts 1/2/3 = {}/{}/{}, median eigenvalues {:.2}/{:.2}/{:.2}",
            100.0 * k_rate,
            100.0 * l_rate,
            hist[1],
            hist[2],
            hist[3],
            lambda(0),
            lambda(1),
            lambda(2)
        ),
    );
}

#[test]
fn criterion_8_symmetric_link() {
    let f = DMatrix::from_column_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
    let y: Vec<f64> = f.iter().map(|v| v * v).collect();
    let slices = slice(&y, 2).unwrap();
    let sir = sir_kernel(&f, &slices).unwrap();
    let dr = dr_kernel(&f, &slices, VarianceMode::Pooled).unwrap();
    let sir_zero = sir.matrix.iter().all(|v| *v == 0.0);
    let dr_value = dr.eigenvalues[0];
    report(
        8,
        sir_zero && dr_value == 4.5,
        format!("SIR kernel {:?} (== 0); DR eigenvalue {dr_value} (== 4.5)", sir.matrix.as_slice()),
    );
}

#[test]
fn criterion_9_determinism() {
    let first = model_one().to_csv();
    let again = monte_carlo_study(&table_config(Link::I)).unwrap().to_csv();
    report(
        9,
        first.as_bytes() == again.as_bytes(),
        format!("{} bytes, identical: {}", first.len(), first == again),
    );
}
