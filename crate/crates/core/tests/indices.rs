use eopt::data::{assemble_tokens, denormalize_reflectance, ObservationSeries, N_BANDS};
use eopt::dates::Day;
use eopt::indices::{BandVector, Index};
use proptest::prelude::*;

fn band_vector() -> impl Strategy<Value = BandVector> {
    prop::array::uniform10(1.0f32..10_000.0)
}

proptest! {
    #[test]
    fn scale_invariant(b in band_vector(), k in 0.01f32..50.0) {
        let scaled = b.map(|v| v * k);
        for i in Index::ALL {
            let (a, s) = (i.evaluate(&b).0, i.evaluate(&scaled).0);
            prop_assert!((a - s).abs() <= 1e-5 * a.abs().max(1.0), "{i}: {a} vs {s}");
        }
    }

    #[test]
    fn bounded_for_non_negative_inputs(b in prop::array::uniform10(0.0f32..10_000.0)) {
        for i in [Index::Ndvi, Index::Ndwi, Index::Bsi] {
            let v = i.evaluate(&b).0;
            prop_assert!((-1.0..=1.0).contains(&v));
        }
        prop_assert!(Index::Gcvi.evaluate(&b).0 >= -1.0);
    }

    #[test]
    fn swap_antisymmetry(b in band_vector()) {
        let mut s = b;
        s.swap(7, 2);
        prop_assert!((Index::Ndvi.evaluate(&b).0 + Index::Ndvi.evaluate(&s).0).abs() < 1e-12);
        let mut s = b;
        s.swap(7, 1);
        prop_assert!((Index::Ndwi.evaluate(&b).0 + Index::Ndwi.evaluate(&s).0).abs() < 1e-12);
    }

    #[test]
    fn consistent_through_tokenization(a in band_vector(), b in band_vector()) {
        let start = Day::from_ymd(2020, 3, 1).unwrap();
        let series = ObservationSeries::new(0, vec![start, start.plus(5)], vec![a, b]).unwrap();
        let m = assemble_tokens(&series).unwrap();
        let mut back = [0.0f32; N_BANDS];
        for (o, &v) in back.iter_mut().zip(&m.targets.row(0)[..N_BANDS]) {
            *o = denormalize_reflectance(v);
        }
        for i in Index::ALL {
            let (raw, tok) = (i.evaluate(&b).0, i.evaluate(&back).0);
            // GCVI is unbounded; past 1 the tolerance is relative.
            prop_assert!((raw - tok).abs() < 1e-3 * raw.abs().max(1.0), "{i}: {raw} vs {tok}");
        }
    }
}
