use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use suffcast::forecaster::{ForecastMethod, OrderPolicy, RollingConfig};
use suffcast::panel::parse_csv;
use suffcast::sdr::{build_kernel, KernelMethod};
use suffcast::simulation::{Dgp, DgpSpec, Link};
use suffcast::{extract_directions, rolling_evaluate, slice, subspace_r2, CsvOptions, PanelData, VarianceMode};

fn panel_from_dgp(link: Link, t: usize, seed: u64) -> PanelData {
    let spec = DgpSpec {
        p: 40,
        t,
        n_test: 0,
        link,
        seed,
        ..DgpSpec::default()
    };
    let draw = Dgp::new(spec).unwrap().sample(0).unwrap();
    let mut y = vec![0.0; t];
    y[1..].copy_from_slice(&draw.y[..t - 1]);
    PanelData::new(
        draw.x,
        (0..40).map(|i| format!("x{i}")).collect(),
        (0..t).map(|s| format!("2000-{s:04}")).collect(),
        y,
    )
    .unwrap()
}

#[test]
fn csv_to_rolling_report() {
    let panel = panel_from_dgp(Link::I, 160, 4);
    let text = panel.to_csv_string(b',');
    let loaded = parse_csv(&text, "target", &CsvOptions::default()).unwrap();
    assert_eq!(loaded.drop_count(), 0);
    assert_eq!(loaded.panel.x, panel.x);

    let config = RollingConfig {
        window: 100,
        n_eval: 20,
        k: OrderPolicy::Fixed(6),
        ..RollingConfig::default()
    };
    let pc = rolling_evaluate(&loaded.panel, &RollingConfig { method: ForecastMethod::Pc, ..config.clone() }).unwrap();
    assert_eq!(pc.summary.relative_mse, 1.0);
    assert_eq!(pc.records.len(), 20);

    let dr = rolling_evaluate(&loaded.panel, &config).unwrap();
    assert_eq!(dr.summary.pc_mse, pc.summary.mse);
    assert!(dr.summary.relative_mse.is_finite());
    assert!(dr.records.iter().all(|r| r.l == Some(2)));

    let dir = tempfile::tempdir().unwrap();
    dr.write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("forecasts.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn auto_order_is_recorded_per_origin() {
    let panel = panel_from_dgp(Link::IV, 200, 8);
    let config = RollingConfig {
        window: 150,
        n_eval: 5,
        k: OrderPolicy::Auto,
        l: OrderPolicy::Auto,
        ..RollingConfig::default()
    };
    let report = rolling_evaluate(&panel, &config).unwrap();
    assert_eq!(report.summary.selected_l.len(), 5);
    assert!(report.summary.selected_l.iter().all(|l| l.is_some()));
    assert!(report.summary.selected_k.iter().all(|&k| (1..=config.k_max).contains(&k)));
}

#[test]
fn window_longer_than_panel_is_rejected() {
    let panel = panel_from_dgp(Link::I, 60, 1);
    let config = RollingConfig {
        window: 80,
        ..RollingConfig::default()
    };
    let err = rolling_evaluate(&panel, &config).unwrap_err();
    assert_eq!(err.kind(), suffcast::ErrorKind::Data);
}

/// One symmetric (cos) and one odd (cubic) component; the ensemble kernel
/// picks up both.
#[test]
fn ensemble_recovers_sin_and_cubic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = 2000;
    let f = DMatrix::<f64>::from_fn(t, 4, |_, _| StandardNormal.sample(&mut rng));
    let y: Vec<f64> = (0..t)
        .map(|s| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (f[(s, 0)]).cos() * 2.0 + 0.5 * f[(s, 1)].powi(3) + 0.1 * e
        })
        .collect();
    let slices = slice(&y, 10).unwrap();
    let span = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let kernel = build_kernel(KernelMethod::Ensemble, &f, &slices, VarianceMode::Identity).unwrap();
    let dirs = extract_directions(&kernel, 2).unwrap();
    for j in 0..2 {
        let v: Vec<f64> = dirs.column(j).iter().copied().collect();
        let r2 = subspace_r2(&v, &span).unwrap();
        assert!(r2 > 0.9, "direction {j}: R2 {r2}");
    }
}
