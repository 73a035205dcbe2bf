use pricing_ope::data::{load_csv, write_csv};
use pricing_ope::estimator::{bias_at, point_estimate_with, variance_at};
use pricing_ope::synth::{draw_instance, make_setting_a};
use pricing_ope::{CsvSchema, Weights};

// ── Exact enumeration ───────────────────────────────────────────────────

/// Mean and variance of the estimate over every one of the `2ⁿ` demand outcomes.
fn enumerate(w: &Weights, prices: &[f64], q: &[f64], r_hat: &[f64]) -> (f64, f64) {
    let n = q.len();
    let (mut m1, mut m2) = (0.0, 0.0);
    for mask in 0..1u32 << n {
        let d: Vec<f64> = (0..n).map(|i| f64::from((mask >> i) & 1)).collect();
        let prob: f64 = (0..n).map(|i| if d[i] == 1.0 { q[i] } else { 1.0 - q[i] }).product();
        let est = point_estimate_with(w, &prices[..n], &d, r_hat);
        m1 += prob * est;
        m2 += prob * est * est;
    }
    (m1, m2 - m1 * m1)
}

#[test]
fn moments_match_exhaustive_enumeration() {
    for seed in 0..5 {
        let draw = draw_instance(&make_setting_a(2.0, seed), 8).unwrap();
        let inst = &draw.instance;
        let n = inst.n();
        let prices = inst.price_vector();
        let r_hat: Vec<f64> = prices.iter().map(|p| 0.3 * p).collect();
        let w = Weights::new((0..n).map(|i| 0.5 + 0.25 * i as f64).collect()).unwrap();

        let (mean, var) = enumerate(&w, prices, &draw.purchase_probabilities(), &r_hat);
        let truth = draw.true_revenue();
        let bias = bias_at(&w, &draw.true_r, &r_hat);
        assert!((mean - truth - bias).abs() < 1e-12, "seed {seed}: {mean} vs {}", truth + bias);
        let v = variance_at(&w, &draw.true_r, prices);
        assert!((var - v).abs() < 1e-12 * v.max(1.0), "seed {seed}: {var} vs {v}");
    }
}

#[test]
fn zero_weights_give_the_direct_estimate() {
    let draw = draw_instance(&make_setting_a(2.0, 3), 6).unwrap();
    let inst = &draw.instance;
    let r_hat: Vec<f64> = inst.price_vector().iter().map(|p| 0.5 * p).collect();
    let est = point_estimate_with(&Weights::zeros(6), inst.logged_prices(), inst.demands(), &r_hat);
    let direct = r_hat[6..].iter().sum::<f64>() / 6.0;
    assert_eq!(est, direct);
    assert_eq!(variance_at(&Weights::zeros(6), &draw.true_r, inst.price_vector()), 0.0);
}

// ── CSV ─────────────────────────────────────────────────────────────────

#[test]
fn synthetic_dataset_survives_a_csv_round_trip() {
    let draw = draw_instance(&make_setting_a(2.0, 11), 25).unwrap();
    let ds = draw.instance.dataset();
    let schema = CsvSchema {
        features: vec!["x1".into(), "x2".into()],
        price: "price".into(),
        demand: "bought".into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("draw.csv");
    write_csv(ds, &schema, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_csv(&path, &schema).unwrap();
    assert_eq!(back.features(), ds.features());
    assert_eq!(back.logged_prices(), ds.logged_prices());
    assert_eq!(back.demands(), ds.demands());
}
