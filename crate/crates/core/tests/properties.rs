use proptest::prelude::*;

use hoi_head::classifier::{forward, weight_grad, ClassifierWeights};
use hoi_head::dataio::{decode, encode, Dtype, LabelMatrix, Payload, RawMatrix};
use hoi_head::losses::{relative_error, LossKind, Loss, ClassStats};
use hoi_head::metrics::{average_precision, cosine_matrix, map_eval};
use hoi_head::numdiff::central_difference;
use hoi_head::optim::{AdamState, Schedule};
use hoi_head::Matrix;

fn signs(c: usize) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), c)
}

fn logits_and_labels(max_c: usize, range: f64) -> impl Strategy<Value = (Vec<f64>, Vec<i8>)> {
    (1..=max_c).prop_flat_map(move |c| (prop::collection::vec(-range..range, c), signs(c)))
}

fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// (x, W) with C <= 16, D <= 32 and no zero rows.
fn instance() -> impl Strategy<Value = (Vec<f64>, Matrix)> {
    sized_instance(1)
}

fn sized_instance(min_dim: usize) -> impl Strategy<Value = (Vec<f64>, Matrix)> {
    (1..=16usize, min_dim..=32usize).prop_flat_map(|(c, d)| {
        (nonzero_vec(d), prop::collection::vec(nonzero_vec(d), c))
            .prop_map(|(x, rows)| (x, Matrix::from_rows(&rows).unwrap()))
    })
}

fn lse(s: &[f64], y: &[i8]) -> f64 {
    Loss::LseSign.value(s, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn logits_bounded_by_gamma((x, w) in instance(), gamma in 0.5..500.0f64) {
        for s in forward(&x, &w, gamma).unwrap() {
            prop_assert!(s.abs() <= gamma + 1e-6);
        }
    }

    #[test]
    fn forward_scale_invariant((x, w) in instance(), alpha in 1e-3..1e3f64) {
        let xa: Vec<f64> = x.iter().map(|v| v * alpha).collect();
        let a = forward(&x, &w, 100.0).unwrap();
        let b = forward(&xa, &w, 100.0).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn weight_grad_matches_finite_differences((x, w) in sized_instance(2), seed in any::<u64>()) {
        let gamma = 5.0;
        let c = w.rows();
        let y: Vec<i8> = (0..c).map(|i| if (seed >> (i % 64)) & 1 == 1 { 1 } else { -1 }).collect();
        let loss = Loss::LseSign;
        let s = forward(&x, &w, gamma).unwrap();
        let dl_ds = loss.grad(&s, &y).unwrap();
        let analytic = weight_grad(&x, &w, gamma, &dl_ds).unwrap();
        let (rows, cols) = w.shape();
        let numeric = central_difference(
            |p| {
                let m = Matrix::from_vec(rows, cols, p.to_vec()).unwrap();
                loss.value(&forward(&x, &m, gamma).unwrap(), &y).unwrap()
            },
            w.as_slice(),
            1e-4,
        );
        let scale = hoi_head::matrix::norm(analytic.as_slice()).max(hoi_head::matrix::norm(&numeric));
        // near-collinear rows have a vanishing gradient; floor the denominator
        let err = relative_error(analytic.as_slice(), &numeric) * scale / scale.max(1e-6);
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn lse_sign_symmetry((s, y) in logits_and_labels(16, 50.0)) {
        let ns: Vec<f64> = s.iter().map(|v| -v).collect();
        let ny: Vec<i8> = y.iter().map(|v| -v).collect();
        prop_assert_eq!(lse(&s, &y), lse(&ns, &ny));
    }

    #[test]
    fn losses_permutation_invariant((s, y) in logits_and_labels(16, 20.0), rot in 0usize..16) {
        let c = s.len();
        let perm: Vec<usize> = (0..c).rev().map(|i| (i + rot) % c).collect();
        let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
        let py: Vec<i8> = perm.iter().map(|&i| y[i]).collect();
        let stats = ClassStats { positives: vec![10; c], negatives: vec![30; c] };
        for kind in LossKind::ALL {
            let loss = Loss::new(kind, Some(&stats)).unwrap();
            let a = loss.value(&s, &y).unwrap();
            let b = loss.value(&ps, &py).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn lse_sign_monotone((s, y) in logits_and_labels(16, 5.0), idx in 0usize..16, step in 0.01..2.0f64) {
        let i = idx % s.len();
        let mut moved = s.clone();
        moved[i] += y[i] as f64 * step;
        prop_assert!(lse(&moved, &y) < lse(&s, &y));
    }

    #[test]
    fn lse_sign_nonnegative_and_grad_signs((s, y) in logits_and_labels(32, 300.0)) {
        let l = lse(&s, &y);
        prop_assert!(l >= 0.0);
        let g = Loss::LseSign.grad(&s, &y).unwrap();
        let total: f64 = g.iter().map(|v| v.abs()).sum();
        prop_assert!(total <= 1.0 + 8.0 * f64::EPSILON);
        if l < 30.0 {
            prop_assert!(total < 1.0);
        }
        for (gi, yi) in g.iter().zip(&y) {
            prop_assert!(*gi == 0.0 || gi.signum() == -(*yi as f64));
        }
    }

    #[test]
    fn ap_invariant_under_monotone_transform(
        scores in prop::collection::vec(-3.0..3.0f64, 1..40),
        seed in any::<u64>(),
    ) {
        let labels: Vec<i8> = (0..scores.len()).map(|i| if (seed >> (i % 64)) & 1 == 1 { 1 } else { -1 }).collect();
        let t: Vec<f64> = scores.iter().map(|v| (2.0 * v).exp() + 7.0).collect();
        prop_assert_eq!(average_precision(&scores, &labels), average_precision(&t, &labels));
    }

    #[test]
    fn map_class_permutation((n, c) in (2usize..30, 2usize..8), seed in any::<u64>(), rot in 1usize..8) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let positives: Vec<Vec<usize>> = (0..n).map(|_| vec![rng.random_range(0..c)]).collect();
        let labels = LabelMatrix::from_positives(c, &positives).unwrap();
        let scores = Matrix::from_vec(n, c, (0..n * c).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let perm: Vec<usize> = (0..c).map(|j| (j + rot) % c).collect();
        let pl: Vec<Vec<usize>> = positives
            .iter()
            .map(|r| r.iter().map(|&k| perm.iter().position(|&p| p == k).unwrap()).collect())
            .collect();
        let plabels = LabelMatrix::from_positives(c, &pl).unwrap();
        let pscores = Matrix::from_rows(
            &scores.iter_rows().map(|r| perm.iter().map(|&p| r[p]).collect()).collect::<Vec<_>>(),
        ).unwrap();
        let a = map_eval(&scores, &labels).unwrap();
        let b = map_eval(&pscores, &plabels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.map));
        prop_assert!((a.map - b.map).abs() < 1e-12);
        for (j, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.per_class_ap[j], a.per_class_ap[p]);
        }
    }

    #[test]
    fn lr_periodic_and_bounded(
        base in 1e-6..1e-1f64,
        frac in 0.0..1.0f64,
        period in 1usize..8,
        spe in 1usize..50,
        step in 0u64..10_000,
    ) {
        let min = base * frac;
        let sched = Schedule::new(base, min, period, spe).unwrap();
        let lr = sched.lr_at(step);
        prop_assert!(lr >= min && lr <= base);
        prop_assert_eq!(lr, sched.lr_at(step + sched.period()));
    }

    #[test]
    fn adam_follows_gradient_sign(g in prop::collection::vec(-10.0..10.0f64, 1..8)) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let g10: Vec<f64> = g.iter().map(|v| 10.0 * v).collect();
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        let (mut sa, mut sb) = (AdamState::new(g.len()), AdamState::new(g.len()));
        let mut last = (vec![0.0; g.len()], vec![0.0; g.len()]);
        for _ in 0..1000 {
            let (pa, pb) = (a.clone(), b.clone());
            sa.step(&mut a, &g, 1e-3).unwrap();
            sb.step(&mut b, &g10, 1e-3).unwrap();
            last = (
                a.iter().zip(&pa).map(|(x, y)| x - y).collect(),
                b.iter().zip(&pb).map(|(x, y)| x - y).collect(),
            );
        }
        for (da, db) in last.0.iter().zip(&last.1) {
            prop_assert!((da - db).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point(w in prop::collection::vec(-3.0..3.0f64, 1..10)) {
        let mut p = w.clone();
        let mut state = AdamState::new(p.len());
        for _ in 0..100 {
            state.step(&mut p, &vec![0.0; w.len()], 0.1).unwrap();
        }
        prop_assert_eq!(p, w);
    }

    #[test]
    fn embedding_init_preserves_cosine_order(rows in (2usize..8, 1usize..8).prop_flat_map(|(c, d)| prop::collection::vec(nonzero_vec(d), c))) {
        let e = Matrix::from_rows(&rows).unwrap();
        let w = ClassifierWeights::from_embeddings(&e, 100.0).unwrap();
        for r in w.weights().iter_rows() {
            prop_assert!((hoi_head::matrix::norm(r) - 1.0).abs() < 1e-6);
        }
        let a = cosine_matrix(&e).unwrap();
        let b = cosine_matrix(w.weights()).unwrap();
        let n = a.rows();
        for i in 0..n * n {
            for j in 0..n * n {
                let (ai, aj) = (a.as_slice()[i], a.as_slice()[j]);
                if (ai - aj).abs() > 1e-9 {
                    prop_assert_eq!(ai < aj, b.as_slice()[i] < b.as_slice()[j]);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn container_round_trip_is_bit_exact(
        (rows, cols) in (0u64..12, 0u64..12),
        seed in any::<u64>(),
        int8 in any::<bool>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = (rows * cols) as usize;
        let payload = if int8 {
            Payload::I8((0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect())
        } else {
            Payload::F32((0..n).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect())
        };
        let m = RawMatrix { rows, cols, payload };
        let mut bytes = Vec::new();
        encode(&m, &mut bytes).unwrap();
        let width = if int8 { Dtype::I8.width() } else { Dtype::F32.width() };
        prop_assert_eq!(bytes.len(), 24 + n * width);
        let back = decode(bytes.as_slice()).unwrap();
        let same = match (&m.payload, &back.payload) {
            (Payload::F32(a), Payload::F32(b)) => a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())),
            (Payload::I8(a), Payload::I8(b)) => a == b,
            _ => false,
        };
        prop_assert!(same && back.rows == rows && back.cols == cols);
    }
}
