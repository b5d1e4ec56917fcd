use chatrecip::pipeline::response_stage;
use chatrecip::stability::{
    calibrate_threshold, chat_mads, mad, mad_histogram, median, monthly_series, CalibrationConfig, CountBasis,
    MIN_QUALIFYING_MONTHS,
};
use chatrecip::synth::{gen_corpus, CorpusSpec, Drift};
use chatrecip::timing::{Aggregation, ResponseRecord};
use chatrecip::Source;
use proptest::prelude::*;

fn responses(spec: &CorpusSpec) -> Vec<ResponseRecord> {
    let corpus = gen_corpus(spec).unwrap();
    response_stage(&corpus.to_donations(), Aggregation::First).0
}

/// Six months of dense chats, about 230 blocks per side and month.
fn monthly_spec(seed: u64) -> CorpusSpec {
    CorpusSpec {
        n_donors: 6,
        chats_per_donor: 5,
        messages_per_chat: 4000,
        months_per_chat: 6,
        ..CorpusSpec::whatsapp_like(seed)
    }
}

#[test]
fn median_and_mad_examples() {
    assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    assert_eq!(mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]).unwrap(), 1.0);
    assert!(mad::<f64>(&[]).is_err());
}

#[test]
fn stationary_chats_stay_inside_the_noise_band() {
    let recs = responses(&monthly_spec(1));
    let series = monthly_series::<f64>(&recs, 70, CountBasis::Merged);
    let mads = chat_mads(&series);
    assert_eq!(mads.len(), 30, "every chat qualifies");
    assert!(mads.iter().all(|m| m.months >= MIN_QUALIFYING_MONTHS));

    let table = calibrate_threshold::<f64>(&recs, &CalibrationConfig::default()).unwrap();
    let band = table.noise_band(70).unwrap();
    for m in &mads {
        assert!(m.mad < band, "{}: MAD {} vs band {band}", m.chat_id, m.mad);
        assert!(m.mad <= 0.07, "{}: MAD {}", m.chat_id, m.mad);
    }
}

#[test]
fn planted_shift_shows_up_in_its_month() {
    let spec = CorpusSpec {
        drift: Some(Drift {
            from_month: 4,
            months: Some(1),
            rp5_ego_target: 0.95,
            rp5_alter_target: 0.15,
        }),
        ..monthly_spec(2)
    };
    let recs = responses(&spec);
    for s in monthly_series::<f64>(&recs, 70, CountBasis::Merged) {
        assert!(s.qualifying);
        let shifted = s.entries[4].similarity;
        let others: Vec<f64> = s
            .entries
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 4)
            .map(|(_, e)| e.similarity)
            .collect();
        let baseline = median(&others).unwrap();
        assert!(baseline - shifted >= 0.15, "{}: {baseline} -> {shifted}", s.chat_id);
    }
}

#[test]
fn raw_counts_admit_at_least_as_many_months() {
    let recs = responses(&monthly_spec(3));
    let merged = monthly_series::<f64>(&recs, 150, CountBasis::Merged);
    let raw = monthly_series::<f64>(&recs, 150, CountBasis::Raw);
    for (m, r) in merged.iter().zip(&raw) {
        assert!(r.entries.len() >= m.entries.len());
    }
}

#[test]
fn calibration_shrinks_with_sample_size_and_is_reproducible() {
    let recs = responses(&monthly_spec(4));
    let cfg = CalibrationConfig::default();
    let a = calibrate_threshold::<f64>(&recs, &cfg).unwrap();
    let b = calibrate_threshold::<f64>(&recs, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for w in a.rows.windows(2) {
        assert!(w[1].sd < w[0].sd, "{} -> {}", w[0].sample_size, w[1].sample_size);
    }
    assert!(a.sd_at(150).unwrap() < a.sd_at(20).unwrap());
    // Subsampling noise scales close to 1/sqrt(n): sqrt(20/70) = 0.53, a
    // little less once the finite month size is accounted for.
    let ratio = a.sd_at(70).unwrap() / a.sd_at(20).unwrap();
    assert!((0.45..0.56).contains(&ratio), "SD(70)/SD(20) = {ratio}");
}

#[test]
fn full_sample_has_no_spread() {
    let recs = responses(&CorpusSpec {
        n_donors: 1,
        chats_per_donor: 1,
        messages_per_chat: 800,
        ..CorpusSpec::whatsapp_like(5)
    });
    let month = recs[0].month_key;
    let recs: Vec<_> = recs.into_iter().filter(|r| r.month_key == month).collect();
    let ego = recs.iter().filter(|r| r.is_ego).count();
    let alter = recs.len() - ego;
    let n = ego.min(alter);
    // Only the smaller side can be drawn in full; use a symmetric subset.
    let keep_ego: Vec<_> = recs.iter().filter(|r| r.is_ego).take(n).cloned().collect();
    let keep_alter: Vec<_> = recs.iter().filter(|r| !r.is_ego).take(n).cloned().collect();
    let sub: Vec<_> = keep_ego.into_iter().chain(keep_alter).collect();
    let cfg = CalibrationConfig {
        min_full: n,
        sizes: vec![n],
        reps: 5,
        seed: 1,
    };
    let t = calibrate_threshold::<f64>(&sub, &cfg).unwrap();
    assert_eq!(t.rows[0].sd, 0.0);
    assert_eq!(t.rows[0].mean_difference, 0.0);

    let one = calibrate_threshold::<f64>(&sub, &CalibrationConfig { reps: 1, sizes: vec![n / 2], ..cfg }).unwrap();
    assert!(one.rows[0].sd.is_finite());
}

#[test]
fn mad_histogram_bins() {
    let h = mad_histogram::<f64>(&[(Source::Whatsapp, 0.012)]);
    let w = &h[&Source::Whatsapp];
    assert_eq!(w.total(), 1);
    assert_eq!(w.counts[2], 1);
    assert!(mad_histogram::<f64>(&[]).is_empty());
}

fn dyadic() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4096i32..4096, 1..40).prop_map(|v| v.into_iter().map(|k| k as f64 / 1024.0).collect())
}

proptest! {
    #[test]
    fn mad_is_translation_invariant(xs in dyadic(), c in -1024i32..1024) {
        let shift = c as f64 / 1024.0;
        let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert_eq!(mad(&xs).unwrap(), mad(&moved).unwrap());
    }

    #[test]
    fn mad_is_permutation_invariant(xs in dyadic(), rot in 0usize..40) {
        let mut ys = xs.clone();
        ys.reverse();
        let k = rot % ys.len();
        ys.rotate_left(k);
        prop_assert_eq!(mad(&xs).unwrap(), mad(&ys).unwrap());
    }
}
