use adr::curves::{slice_grid, slice_point};
use adr::losses::{adr_backward_exact, adr_forward};
use adr::simplex::{PhiKind, ProbVector};
use proptest::prelude::*;

fn grad_norm(p: &ProbVector, tau: usize) -> f64 {
    let (_, cache) = adr_forward(p, tau, PhiKind::Entropy).unwrap();
    adr_backward_exact(&cache).iter().map(|g| g * g).sum::<f64>().sqrt()
}

fn weights() -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(0.0f64..1.0, 2..40).prop_flat_map(|w| {
        let c = w.len();
        (Just(w), 1..=c)
    })
}

proptest! {
    #[test]
    fn value_is_non_negative_and_finite((w, tau) in weights(), variance in any::<bool>()) {
        let p = ProbVector::clamped(w).unwrap();
        let kind = if variance { PhiKind::Variance } else { PhiKind::Entropy };
        let (f, cache) = adr_forward(&p, tau, kind).unwrap();
        prop_assert!(f >= 0.0 && f.is_finite());
        prop_assert!(adr_backward_exact(&cache).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn confident_points_score_below_uniform(
        top in 0.99f64..0.9999,
        rest in prop::collection::vec(0.01f64..1.0, 9),
        winner in 0usize..10,
    ) {
        let total: f64 = rest.iter().sum();
        let mut v: Vec<f64> = rest.iter().map(|r| r / total * (1.0 - top)).collect();
        v.insert(winner, top);
        let p = ProbVector::clamped(v).unwrap();
        let u = ProbVector::uniform(10).unwrap();
        let fu = adr_forward(&u, 3, PhiKind::Entropy).unwrap().0;
        let fp = adr_forward(&p, 3, PhiKind::Entropy).unwrap().0;
        prop_assert!(fu > fp);
    }
}

#[test]
fn gradient_vanishes_in_the_low_uncertainty_regime() {
    // With φ ≤ 0.03 on the uniform → one-hot slice, the gradient is below
    // 1e-3 of the largest gradient seen on the slice.
    let (c, tau) = (10, 3);
    let points: Vec<(f64, f64)> = slice_grid(400)
        .into_iter()
        .map(|t| {
            let p = slice_point(c, t).unwrap();
            (PhiKind::Entropy.eval(&p).value(), grad_norm(&p, tau))
        })
        .collect();
    let max = points.iter().map(|x| x.1).fold(0.0, f64::max);
    let low: Vec<_> = points.iter().filter(|x| x.0 <= 0.03).collect();
    assert!(!low.is_empty());
    for (phi, g) in low {
        assert!(*g <= 1e-3 * max, "phi = {phi}: |grad| = {g}, max = {max}");
    }
}

#[test]
fn gradient_tracks_uncertainty_when_uncertain() {
    // For φ ≥ 0.5 on the slice, |∇F| / φ stays within a factor of 10.
    let (c, tau) = (10, 3);
    let ratios: Vec<f64> = slice_grid(400)
        .into_iter()
        .filter_map(|t| {
            let p = slice_point(c, t).unwrap();
            let phi = PhiKind::Entropy.eval(&p).value();
            (phi >= 0.5).then(|| grad_norm(&p, tau) / phi)
        })
        .collect();
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(ratios.len() > 100);
    assert!(hi / lo <= 10.0, "band factor {}", hi / lo);
}

#[test]
fn gradient_at_uniform_matches_reference() {
    // Reference values from an independent high-precision evaluation.
    let u = ProbVector::uniform(10).unwrap();
    let (f, cache) = adr_forward(&u, 3, PhiKind::Entropy).unwrap();
    assert!((f - 0.06254833884763084).abs() < 1e-15);
    let g = adr_backward_exact(&cache);
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((n - 0.172).abs() < 1e-3, "{n}");
    let mean = g.iter().sum::<f64>() / 10.0;
    let tangent = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    assert!((tangent - 0.00906).abs() < 1e-5, "{tangent}");
}
