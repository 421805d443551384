use proptest::prelude::*;
use skmix_core::{mse, ranking_report, segment_stream, spearman, ClipSpec};

pub fn mse_oracle(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - t[i]).powi(2);
    }
    s / p.len() as f64
}

/// Average rank by counting: `#less + (#equal + 1) / 2`.
fn ranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(p: &[f64], t: &[f64]) -> Option<f64> {
    let (rp, rt) = (ranks_by_counting(p), ranks_by_counting(t));
    let n = p.len() as f64;
    let (mp, mt) = (rp.iter().sum::<f64>() / n, rt.iter().sum::<f64>() / n);
    let cov: f64 = rp.iter().zip(&rt).map(|(a, b)| (a - mp) * (b - mt)).sum();
    let vp: f64 = rp.iter().map(|a| (a - mp).powi(2)).sum();
    let vt: f64 = rt.iter().map(|b| (b - mt).powi(2)).sum();
    if vp == 0.0 || vt == 0.0 {
        None
    } else {
        Some(cov / (vp * vt).sqrt())
    }
}

/// Descending 1-based position; ties go to the earlier index.
fn position(v: &[f64], i: usize) -> usize {
    1 + (0..v.len()).filter(|&j| v[j] > v[i] || (v[j] == v[i] && j < i)).count()
}

fn ranking_oracle(p: &[f64], t: &[f64], k: usize) -> Vec<(usize, usize, usize, i64)> {
    let mut out: Vec<_> = (0..p.len())
        .map(|i| (i, position(p, i), position(t, i), position(p, i) as i64 - position(t, i) as i64))
        .collect();
    out.sort_by_key(|e| e.1);
    out.truncate(k);
    out
}

fn windows_oracle(total: usize, clip: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + clip <= total {
        out.push((start, start + clip));
        start += stride;
    }
    out
}

/// Score-like values with frequent ties.
fn scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-20i32..20).prop_map(|v| v as f64 * 0.5), -10.0f64..10.0], n)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| (scores(n), scores(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mse_matches_oracle((p, t) in pair()) {
        prop_assert!((mse(&p, &t).unwrap() - mse_oracle(&p, &t)).abs() <= 1e-12);
    }

    #[test]
    fn spearman_matches_oracle((p, t) in pair()) {
        match spearman_oracle(&p, &t) {
            Some(want) => prop_assert!((spearman(&p, &t).unwrap() - want).abs() <= 1e-10),
            None => prop_assert!(spearman(&p, &t).is_err()),
        }
    }

    #[test]
    fn ranking_matches_oracle((p, t) in pair(), k in 0usize..40) {
        let k = k.min(p.len());
        let r = ranking_report(&p, &t, k).unwrap();
        let got: Vec<_> = r.entries.iter().map(|e| (e.index, e.predicted_rank, e.actual_rank, e.rank_diff)).collect();
        prop_assert_eq!(got, ranking_oracle(&p, &t, k));
        prop_assert_eq!(r.n, p.len());
    }

    #[test]
    fn full_ranking_offsets_sum_to_zero((p, t) in pair()) {
        let r = ranking_report(&p, &t, p.len()).unwrap();
        prop_assert_eq!(r.entries.iter().map(|e| e.rank_diff).sum::<i64>(), 0);
    }

    #[test]
    fn spearman_ignores_increasing_transforms((p, t) in pair()) {
        prop_assume!(spearman_oracle(&p, &t).is_some());
        let q: Vec<f64> = p.iter().map(|x| (x / 4.0).exp() * 3.0 - 7.0).collect();
        prop_assert!((spearman(&p, &t).unwrap() - spearman(&q, &t).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn mse_ignores_common_translation((p, t) in pair(), shift in -100.0f64..100.0) {
        let ps: Vec<f64> = p.iter().map(|x| x + shift).collect();
        let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
        prop_assert!((mse(&p, &t).unwrap() - mse(&ps, &ts).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn segment_stream_matches_enumeration() {
    let specs = [
        ClipSpec::default(),
        ClipSpec { fps: 30, clip_seconds: 2.0, overlap_seconds: 0.0 },
        ClipSpec { fps: 10, clip_seconds: 1.5, overlap_seconds: 0.5 },
    ];
    for i in 0..1000usize {
        let spec = specs[i % 3];
        let clip = spec.clip_frames().unwrap();
        let stride = spec.stride_frames().unwrap();
        let total = (i * 7919) % 2000;
        let want = windows_oracle(total, clip, stride);
        match segment_stream(total, &spec) {
            Ok(got) => assert_eq!(got, want, "total {total}"),
            Err(_) => assert!(want.is_empty() && total < clip, "total {total}"),
        }
    }
}

#[test]
fn signed_zeros_tie_in_rankings() {
    let p = [0.0, -0.0, 1.0, -0.0];
    let t = [2.0, 1.0, 0.0, 3.0];
    let got: Vec<_> = ranking_report(&p, &t, 4)
        .unwrap()
        .entries
        .iter()
        .map(|e| (e.index, e.predicted_rank, e.actual_rank, e.rank_diff))
        .collect();
    assert_eq!(got, ranking_oracle(&p, &t, 4));
}
