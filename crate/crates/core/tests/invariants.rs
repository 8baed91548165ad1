//! Property tests for schedule, sampler and metric invariants.

use proptest::prelude::*;
use trajlab::data::{make_windows, Track};
use trajlab::eval::{ade, best_of_n, fde};
use trajlab::rng::NoiseStream;
use trajlab::sampler::{
    branch_step_count, d_ddpm_step, ddim_sigma_jump, ddim_step, ddim_subsequence, forward_noise, Trajectory,
};
use trajlab::schedule::NoiseSchedule;

fn schedule() -> impl Strategy<Value = NoiseSchedule> {
    (1usize..300, 1e-5f64..1e-2, 0.0f64..0.3)
        .prop_map(|(k, lo, span)| NoiseSchedule::linear(k, lo, (lo + span).min(0.99)).unwrap())
}

fn points(len: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-50.0f64..50.0), len)
}

proptest! {
    #[test]
    fn alpha_bar_strictly_decreasing(s in schedule()) {
        for k in 1..=s.steps() {
            prop_assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
            prop_assert!(s.alpha_bar(k) > 0.0);
        }
    }

    #[test]
    fn ddim_sigma_bounds(s in schedule(), a in 0.0f64..1.0, b in 0.0f64..1.0, eta in 0.0f64..=1.0) {
        let k_hi = 1 + ((s.steps() - 1) as f64 * a) as usize;
        let k_lo = (k_hi as f64 * b) as usize;
        let sigma = ddim_sigma_jump(&s, k_hi, k_lo, eta).unwrap();
        prop_assert!(sigma >= 0.0);
        prop_assert!(sigma * sigma <= 1.0 - s.alpha_bar(k_lo) + 1e-15);
        prop_assert_eq!(ddim_sigma_jump(&s, k_hi, k_lo, 0.0).unwrap(), 0.0);
        let full = ddim_sigma_jump(&s, k_hi, k_lo, 1.0).unwrap();
        prop_assert!((sigma * sigma - eta * full * full).abs() <= 1e-12 * full * full + 1e-300);
    }

    #[test]
    fn exact_noise_recovers_clean_sample(s in schedule(), y in prop::collection::vec(-5.0f64..5.0, 1..12), seed in any::<u64>(), a in 0.0f64..1.0) {
        // Feeding the true noise into a deterministic DDIM jump to 0 returns Y^0.
        let k = 1 + ((s.steps() - 1) as f64 * a) as usize;
        let eps = NoiseStream::new(seed).normals(y.len());
        let y0 = Trajectory::new(y.clone(), 0);
        let yk = forward_noise(&y0, k, &eps, &s).unwrap();
        let back = ddim_step(&yk, k, 0, &eps, &vec![0.0; y.len()], 0.0, &s).unwrap();
        for (r, t) in back.values.iter().zip(&y) {
            prop_assert!((r - t).abs() <= 1e-9 * (1.0 + t.abs()) / s.alpha_bar(k).sqrt());
        }
        if k == 1 {
            let one = d_ddpm_step(&yk, 1, &eps, &s).unwrap();
            for (r, t) in one.values.iter().zip(&y) {
                prop_assert!((r - t).abs() <= 1e-9 * (1.0 + t.abs()));
            }
        }
    }

    #[test]
    fn subsequence_is_descending_and_ends_at_zero(steps in 1usize..400, ki in 1usize..400, kt in 0usize..400) {
        let ki = ki.min(steps);
        let kt = kt.min(steps);
        let kb = branch_step_count(steps, ki, kt);
        match ddim_subsequence(steps, kt, kb) {
            Ok(pairs) => {
                prop_assert_eq!(pairs.len(), kb);
                if let (Some(first), Some(last)) = (pairs.first(), pairs.last()) {
                    prop_assert_eq!(first.0, steps - kt);
                    prop_assert_eq!(last.1, 0);
                }
                for w in pairs.windows(2) {
                    prop_assert_eq!(w[0].1, w[1].0);
                }
                prop_assert!(pairs.iter().all(|(hi, lo)| lo < hi));
            }
            Err(_) => prop_assert_eq!(kb, 0),
        }
    }

    #[test]
    fn best_of_n_is_min_and_order_free(gt in points(6), preds in prop::collection::vec(points(6), 1..8), rot in 0usize..8) {
        let (a, f) = best_of_n(&preds, &gt).unwrap();
        for p in &preds {
            prop_assert!(a <= ade(p, &gt).unwrap());
            prop_assert!(f <= fde(p, &gt).unwrap());
        }
        let mut rotated = preds.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        prop_assert_eq!(best_of_n(&rotated, &gt).unwrap(), (a, f));
        prop_assert!(f >= 0.0 && a >= 0.0);
    }

    #[test]
    fn window_count_matches_track_lengths(lengths in prop::collection::vec(1usize..60, 1..6), h in 1usize..10, fut in 1usize..14) {
        let tracks: Vec<Track> = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| Track {
                agent_id: i as i64,
                frames: (0..len as i64).map(|f| 10 * f).collect(),
                points: (0..len).map(|f| [f as f64, i as f64]).collect(),
            })
            .collect();
        let w = make_windows("s", &tracks, h, fut, 1).unwrap();
        let expected: usize = lengths.iter().map(|&l| (l + 1).saturating_sub(h + fut)).sum();
        prop_assert_eq!(w.len(), expected);
    }
}
