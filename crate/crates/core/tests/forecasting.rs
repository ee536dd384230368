use eopt::data::{
    make_token, normalize_reflectance, synth_generate, ObservationSeries, SynthConfig, TokenizedDataset, N_BANDS,
};
use eopt::dates::Day;
use eopt::forecasting::{
    baseline_dataset, evaluate_l1, forecast_dataset, rollout, truth_dataset, ForecastRequest, IndexSpec,
    PhaseFoldBaseline,
};
use eopt::indices::Index;
use eopt::model::{build_model, ModelConfig, ModelParams};
use eopt::numerics::Tensor;
use eopt::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn constant_model(c: f32) -> ModelParams {
    let mut p = build_model(&ModelConfig::preset("nano").unwrap(), 3).unwrap();
    let names = p.names().to_vec();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        if name == "head.weight" {
            t.data_mut().fill(0.0);
        } else if name == "head.bias" {
            t.data_mut().fill(c);
        }
    }
    p
}

fn dataset(n_pixels: usize, seed: u64) -> TokenizedDataset {
    synth_generate(&SynthConfig {
        n_pixels,
        end: Day::from_ymd(2018, 1, 1).unwrap(),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset
}

fn request(data: &TokenizedDataset, horizon: usize) -> ForecastRequest {
    ForecastRequest {
        pixels: None,
        divergence: data.date(data.n_time() - horizon),
        horizon,
        cadence_days: None,
    }
}

#[test]
fn constant_model_rollout() {
    let p = constant_model(0.25);
    let dates: Vec<Day> = (0..10).map(|i| Day::from_ymd(2020, 1, 1).unwrap().plus(5 * i)).collect();
    let hist = vec![[0.1f32; N_BANDS]; 10];
    let future: Vec<Day> = (1..=20).map(|h| dates[9].plus(5 * h)).collect();
    let out = rollout(&p, &hist, &dates, &future).unwrap();
    assert_eq!(out.len(), 20);
    for row in out {
        for v in row {
            assert!((v - 0.25).abs() < 1e-6, "{v}");
        }
    }
}

#[test]
fn single_step_matches_forward() {
    let p = build_model(&ModelConfig::preset("nano").unwrap(), 5).unwrap();
    let data = dataset(2, 1);
    let series = data.series(1);
    let n = 20;
    let hist: Vec<[f32; N_BANDS]> = series.reflectances[..n].iter().map(|r| r.map(normalize_reflectance)).collect();
    let future = [series.dates[n]];
    let out = rollout(&p, &hist, &series.dates[..n], &future).unwrap();
    let tokens: Vec<f32> = (0..n)
        .flat_map(|i| make_token(&hist[i], series.dates[i], series.dates[i + 1]))
        .collect();
    let pred = p.forward(&Tensor::new(&[n, 14], tokens).unwrap()).unwrap();
    assert_eq!(&out[0][..], pred.row(n - 1));
}

#[test]
fn context_keeps_most_recent_tokens() {
    let p = build_model(&ModelConfig::preset("nano").unwrap(), 6).unwrap();
    let data = dataset(1, 2);
    let s = data.series(0);
    let block = p.config().block_size;
    let horizon = 10;
    let n = 150;
    let norm: Vec<[f32; N_BANDS]> = s.reflectances[..n].iter().map(|r| r.map(normalize_reflectance)).collect();
    let future: Vec<Day> = s.dates[n..n + horizon].to_vec();
    let full = rollout(&p, &norm, &s.dates[..n], &future).unwrap();
    let k = block - horizon;
    let short = rollout(&p, &norm[n - k..], &s.dates[n - k..n], &future).unwrap();
    assert_eq!(full, short);
    let shorter = rollout(&p, &norm[n - k + 1..], &s.dates[n - k + 1..n], &future).unwrap();
    assert_ne!(full, shorter);
    // A horizon past the block size slides instead of failing.
    let far: Vec<Day> = (1..=(block as i64 + 5)).map(|h| s.dates[n - 1].plus(5 * h)).collect();
    assert_eq!(rollout(&p, &norm, &s.dates[..n], &far).unwrap().len(), block + 5);
}

#[test]
fn rollout_errors() {
    let p = constant_model(0.0);
    let d = Day::from_ymd(2020, 1, 1).unwrap();
    assert!(matches!(rollout(&p, &[], &[], &[d]), Err(Error::InsufficientHistory { .. })));
    assert!(rollout(&p, &[[0.0; N_BANDS]], &[d], &[]).is_err());
    assert!(rollout(&p, &[[0.0; N_BANDS]], &[d], &[d]).is_err());
}

#[test]
fn forecast_never_reads_future_bands() {
    let p = build_model(&ModelConfig::preset("nano").unwrap(), 7).unwrap();
    let data = dataset(6, 3);
    let req = request(&data, 8);
    let a = forecast_dataset(&p, &data, &req).unwrap();
    let n_hist = data.n_time() - 8;
    let mut series: Vec<ObservationSeries> = (0..6).map(|i| data.series(i)).collect();
    for s in &mut series {
        for r in &mut s.reflectances[n_hist..] {
            *r = [9999.0; N_BANDS];
        }
    }
    let altered = TokenizedDataset::from_series(&series, data.storage()).unwrap();
    let b = forecast_dataset(&p, &altered, &req).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a[0].dates, data.dates()[n_hist..]);
    // Parallel chunked rollout matches per-pixel rollout.
    let single = forecast_dataset(&p, &data, &ForecastRequest { pixels: Some(vec![4]), ..req.clone() }).unwrap();
    assert_eq!(single[0], a[4]);
}

#[test]
fn request_validation() {
    let data = dataset(2, 4);
    let bad = |divergence: Day| ForecastRequest { pixels: None, divergence, horizon: 3, cadence_days: None };
    assert!(truth_dataset(&data, &bad(data.date(0))).is_err());
    assert!(truth_dataset(&data, &bad(data.date(data.n_time() - 1).plus(400))).is_err());
    // Forecast dates past the end have no truth.
    assert!(matches!(
        truth_dataset(&data, &bad(data.date(data.n_time() - 1).plus(1))),
        Err(Error::Alignment(_))
    ));
    let off_grid = ForecastRequest { cadence_days: Some(3), ..request(&data, 4) };
    assert!(matches!(truth_dataset(&data, &off_grid), Err(Error::Alignment(_))));
    let pixel = ForecastRequest { pixels: Some(vec![2]), ..request(&data, 4) };
    assert!(baseline_dataset(&data, &pixel).is_err());
}

fn periodic(doy: u32, amp: f64) -> f32 {
    (3000.0 + amp * (2.0 * std::f64::consts::PI * doy as f64 / 365.0).sin()) as f32
}

/// Observations at the same 73 days of year in each of `years`.
fn folded_dates(years: std::ops::Range<i32>) -> Vec<Day> {
    years
        .flat_map(|y| (0..73).map(move |k| Day::from_ymd(y, 1, 1).unwrap().plus(2 + 5 * k)))
        .collect()
}

#[test]
fn baseline_reproduces_periodic_history() {
    let amp = 2000.0;
    let dates = folded_dates(2015..2022);
    let refl = dates.iter().map(|d| [periodic(d.day_of_year(), amp); N_BANDS]).collect();
    let b = PhaseFoldBaseline::fit(&ObservationSeries::new(0, dates, refl).unwrap()).unwrap();
    let future = folded_dates(2022..2023);
    for (d, p) in future.iter().zip(b.predict(&future)) {
        let want = periodic(d.day_of_year(), amp);
        assert!(((p[0] - want) as f64).abs() <= 1e-3 * amp, "{d}: {} vs {want}", p[0]);
    }
    // Between bin centers the error is bounded by linear interpolation.
    for doy in 0..365 {
        let p = b.predict_day_of_year(doy as f64)[3];
        let err = ((p - periodic(doy, amp)) as f64).abs();
        assert!(err <= 1e-3 * amp, "doy {doy}: {err}");
    }
}

#[test]
fn baseline_noise_matches_gaussian_oracle() {
    let (amp, sigma) = (1500.0, 80.0);
    let hist_dates = folded_dates(2015..2022);
    let future = folded_dates(2022..2023);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n_pixels = 1370;
    let mut errors = Vec::with_capacity(n_pixels * future.len());
    for id in 0..n_pixels {
        let refl = hist_dates
            .iter()
            .map(|d| [(periodic(d.day_of_year(), amp) as f64 + noise.sample(&mut rng)) as f32; N_BANDS])
            .collect();
        let s = ObservationSeries::new(id as u64, hist_dates.clone(), refl).unwrap();
        let pred = PhaseFoldBaseline::fit(&s).unwrap().predict(&future);
        for (d, p) in future.iter().zip(pred) {
            let truth = periodic(d.day_of_year(), amp) as f64 + noise.sample(&mut rng);
            errors.push((p[0] as f64 - truth).abs());
        }
    }
    assert!(errors.len() >= 100_000);
    let s = sigma * (1.0f64 + 1.0 / 7.0).sqrt();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let expected_mean = s * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean / expected_mean - 1.0).abs() < 0.2, "mean {mean} vs {expected_mean}");
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];
    let expected_median = s * 0.674_489_750_196_081_7;
    assert!((median / expected_median - 1.0).abs() < 0.2, "median {median} vs {expected_median}");
}

#[test]
fn perfect_predictions_score_zero_and_buckets_are_shared() {
    let data = dataset(5, 5);
    let req = request(&data, 6);
    let truth = truth_dataset(&data, &req).unwrap();
    let origin = data.date(data.n_time() - 7);
    let r = evaluate_l1("truth", &truth, &truth, origin, IndexSpec::Index(Index::Ndvi)).unwrap();
    assert_eq!(r.buckets.len(), 6);
    for b in &r.buckets {
        assert_eq!((b.median, b.p25, b.p75, b.count), (0.0, 0.0, 0.0, 5));
    }
    let model = forecast_dataset(&constant_model(0.0), &data, &req).unwrap();
    let base = baseline_dataset(&data, &req).unwrap();
    let rm = evaluate_l1("model", &model, &truth, origin, IndexSpec::Index(Index::Ndvi)).unwrap();
    let rb = evaluate_l1("baseline", &base, &truth, origin, IndexSpec::Index(Index::Ndvi)).unwrap();
    let leads = |r: &eopt::forecasting::ForecastReport| r.buckets.iter().map(|b| b.lead_days).collect::<Vec<_>>();
    assert_eq!(leads(&rm), leads(&rb));
    assert_eq!(leads(&rm)[0], 5);
    for b in rm.buckets.iter().chain(&rb.buckets) {
        assert!(b.p25 <= b.median && b.median <= b.p75 && b.count > 0);
    }
}

fn random_series(rng: &mut ChaCha8Rng, id: u64, dates: &[Day]) -> ObservationSeries {
    let refl = dates
        .iter()
        .map(|_| std::array::from_fn(|_| rng.random_range(1.0f32..5000.0)))
        .collect();
    ObservationSeries::new(id, dates.to_vec(), refl).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_is_permutation_invariant(seed in any::<u64>(), n in 1usize..20, shift in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let origin = Day::from_ymd(2023, 1, 1).unwrap();
        let dates: Vec<Day> = (1..=4).map(|h| origin.plus(5 * h)).collect();
        let pred: Vec<_> = (0..n as u64).map(|i| random_series(&mut rng, i, &dates)).collect();
        let truth: Vec<_> = (0..n as u64).map(|i| random_series(&mut rng, i, &dates)).collect();
        let a = evaluate_l1("m", &pred, &truth, origin, IndexSpec::Index(Index::Bsi)).unwrap();
        let mut p2 = pred.clone();
        p2.rotate_left(shift % n);
        let mut t2 = truth.clone();
        t2.reverse();
        let b = evaluate_l1("m", &p2, &t2, origin, IndexSpec::Index(Index::Bsi)).unwrap();
        prop_assert_eq!(a, b);
    }
}
