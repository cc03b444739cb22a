use proptest::prelude::*;

use mvprobe::dataset::{generate_nullspace_adversarial, DatasetRecord, Family, RecordMeta, SyntheticSpec};
use mvprobe::eval::{auroc, knn_classify, ovl, sign_test_one_sided, Embedding};
use mvprobe::probing::{
    apply_chain, first_order_response, naive_gram_response, second_order_response, BranchKind, ProbeBank,
};
use mvprobe::tensor::{gaussian, Matrix, Rng};
use mvprobe::theory::{check_thm1, construct_thm1_pair};
use mvprobe::train::{batch_gradient, bce_loss, sample_gradient};
use mvprobe::{MVProbeModel, ModelConfig};

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius() / b.frobenius().max(f64::MIN_POSITIVE)
}

fn permutation(rng: &mut Rng, m: usize) -> Matrix {
    let mut order: Vec<usize> = (0..m).collect();
    rng.shuffle(&mut order);
    let mut p = Matrix::zeros(m, m);
    for (i, j) in order.into_iter().enumerate() {
        p.set(i, j, 1.0);
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = gaussian(&mut rng, 8, 8, 1.0).unwrap();
        let b = gaussian(&mut rng, 8, 8, 1.0).unwrap();
        let c = gaussian(&mut rng, 8, 8, 1.0).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(rel(&left, &right) < 1e-9);
    }

    #[test]
    fn standardize_is_idempotent(seed in any::<u64>(), m in 1usize..12, n in 2usize..12, scale in -4.0f64..4.0) {
        let s = gaussian(&mut Rng::new(seed), m, n, scale.exp()).unwrap();
        // the second pass rescales by σ/(σ+ε), so the drift is about ε·√N/σ
        let (_, sigma) = s.mean_std();
        prop_assume!(1e-8 * (s.len() as f64).sqrt() / sigma < 1e-7);
        let once = s.standardize(1e-8);
        let twice = once.standardize(1e-8);
        prop_assert!(twice.sub(&once).unwrap().frobenius() < 1e-6);
    }

    #[test]
    fn standardize_ignores_positive_scale(seed in any::<u64>(), m in 1usize..10, n in 2usize..10) {
        let s = gaussian(&mut Rng::new(seed), m, n, 1.0).unwrap();
        let base = s.standardize(1e-15);
        for alpha in [1e-3, 1e3] {
            let scaled = s.scale(alpha).standardize(1e-15);
            prop_assert!(scaled.sub(&base).unwrap().max_abs() < 1e-9);
        }
    }

    #[test]
    fn standardized_energy_equals_count(seed in any::<u64>(), kind_idx in 0usize..8, m in 1usize..10, n in 1usize..10, r in 1usize..6) {
        let kind = BranchKind::ALL[kind_idx];
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, m, n, 1.0).unwrap();
        let p = gaussian(&mut rng, kind.probe_rows(m, n), r, 1.0).unwrap();
        let s = apply_chain(&x, kind, &p).unwrap();
        prop_assume!(s.len() >= 2);
        let energy = s.standardize(1e-15).frobenius_sq();
        prop_assert!((energy / s.len() as f64 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn row_probe_is_permutation_equivariant(seed in any::<u64>(), m in 1usize..12, n in 1usize..12, r in 1usize..6) {
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, m, n, 1.0).unwrap();
        let bank = ProbeBank::new(BranchKind::Row, gaussian(&mut rng, n, r, 1.0).unwrap());
        let p = permutation(&mut rng, m);
        let lhs = first_order_response(&p.matmul(&x).unwrap(), &bank).unwrap();
        let rhs = p.matmul(&first_order_response(&x, &bank).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn row_kernel_is_permutation_equivariant(seed in any::<u64>(), m in 1usize..12, n in 1usize..12, r in 1usize..6) {
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, m, n, 1.0).unwrap();
        let w = gaussian(&mut rng, m, r, 1.0).unwrap();
        let p = permutation(&mut rng, m);
        let moved = ProbeBank::new(BranchKind::RowKernel, p.matmul(&w).unwrap());
        let lhs = second_order_response(&p.matmul(&x).unwrap(), &moved).unwrap();
        let rhs = p.matmul(&second_order_response(&x, &ProbeBank::new(BranchKind::RowKernel, w)).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn first_order_is_blind_to_the_nullspace(seed in any::<u64>(), m in 1usize..12, n in 2usize..12) {
        let mut rng = Rng::new(seed);
        let r = 1 + rng.below(n - 1);
        let pair = construct_thm1_pair(&mut rng, m, n, r).unwrap();
        let x = gaussian(&mut rng, m, n, 1.0).unwrap();
        // Z₀ = b wᵀ with w ⟂ col(U)
        let b = gaussian(&mut rng, m, 1, 3.0).unwrap();
        let z0 = b.matmul(&pair.witness_w.transpose()).unwrap();
        let bank = ProbeBank::new(BranchKind::Row, pair.u.clone());
        let moved = first_order_response(&x.add(&z0).unwrap(), &bank).unwrap();
        let fixed = first_order_response(&x, &bank).unwrap();
        prop_assert!(moved.sub(&fixed).unwrap().max_abs() < 1e-12 * (1.0 + fixed.max_abs()));
        let check = check_thm1(&pair).unwrap();
        prop_assert!(check.first_order_diff < 1e-10 && check.separating_diff > 1e-8);
    }

    #[test]
    fn associative_matches_naive_gram(seed in any::<u64>(), m in 1usize..64, n in 1usize..64, r in 1usize..8, kind_idx in 2usize..8) {
        let kind = BranchKind::ALL[kind_idx];
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, m, n, 1.0).unwrap();
        let bank = ProbeBank::new(kind, gaussian(&mut rng, kind.probe_rows(m, n), r, 1.0).unwrap());
        let fast = apply_chain(&x, kind, &bank.probes).unwrap();
        let slow = naive_gram_response(&x, &bank).unwrap();
        prop_assert!(rel(&fast, &slow) < 1e-10);
    }

    #[test]
    fn bce_is_nonnegative(z in prop::collection::vec(-50.0f64..50.0, 1..8), bits in any::<u8>()) {
        let y: Vec<bool> = (0..z.len()).map(|i| bits >> (i % 8) & 1 == 1).collect();
        prop_assert!(bce_loss(&z, &y).0 >= 0.0);
    }

    #[test]
    fn batch_gradient_is_mean_of_samples(seed in any::<u64>(), batch in 1usize..5) {
        let rng = Rng::new(seed);
        let cfg = ModelConfig { r: 2, d: 3, d_h: 4, ..ModelConfig::new(4, 3, 2) };
        let model = MVProbeModel::init(&rng, cfg).unwrap();
        let mut data_rng = rng.fork(9);
        let records: Vec<DatasetRecord> = (0..batch)
            .map(|i| DatasetRecord {
                x: gaussian(&mut data_rng, 4, 3, 1.0).unwrap(),
                y: vec![i % 2 == 0, i % 3 == 0],
                meta: RecordMeta::default(),
            })
            .collect();
        let refs: Vec<&DatasetRecord> = records.iter().collect();
        let (_, batch_grad, _) = batch_gradient(&model, &refs).unwrap();
        let mut sum = None::<Vec<Matrix>>;
        for r in &records {
            let (_, g, _) = sample_gradient(&model, &r.x, &r.y).unwrap();
            sum = Some(match sum {
                None => g.tensors,
                Some(acc) => acc.iter().zip(&g.tensors).map(|(a, b)| a.add(b).unwrap()).collect(),
            });
        }
        for (b, s) in batch_grad.tensors.iter().zip(sum.unwrap()) {
            prop_assert!(b.sub(&s.scale(1.0 / batch as f64)).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn auroc_is_antisymmetric(a in prop::collection::vec(-1.0f64..1.0, 1..30), b in prop::collection::vec(-1.0f64..1.0, 1..30)) {
        let ab = auroc(&a, &b).unwrap();
        let ba = auroc(&b, &a).unwrap();
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ovl_shrinks_as_samples_separate(seed in any::<u64>()) {
        let xs = gaussian(&mut Rng::new(seed), 4000, 1, 0.1).unwrap().into_vec();
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            let shifted: Vec<f64> = xs.iter().map(|x| x + 0.1 * step as f64).collect();
            let v = ovl(&xs, &shifted, 100).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            prop_assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn knn_self_query_returns_own_class(seed in any::<u64>(), pick in 0usize..12) {
        let mut rng = Rng::new(seed);
        let refs: Vec<Embedding> = (0..12)
            .map(|i| {
                let mut labels = vec![false; 3];
                labels[i % 3] = true;
                Embedding { vector: gaussian(&mut rng, 5, 1, 1.0).unwrap().into_vec(), record_id: i as u64, labels }
            })
            .collect();
        let q = &refs[pick];
        prop_assert_eq!(knn_classify(&q.vector, &refs, 1).unwrap(), pick % 3);
    }
}

#[test]
fn bce_at_zero_logits_is_ln2() {
    for y in [[false], [true]] {
        assert!((bce_loss(&[0.0], &y).0 - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn sign_test_matches_direct_summation() {
    fn choose(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }
    for n in 1..=30u64 {
        for k in 0..=n {
            let direct: f64 = (k..=n).map(|i| choose(n, i).round()).sum::<f64>() / 2f64.powi(n as i32);
            assert_eq!(sign_test_one_sided(k, n).unwrap(), direct, "k={k} n={n}");
        }
    }
}

#[test]
fn adversarial_family_is_first_order_blind_without_noise() {
    for (m, n, r) in [(4, 3, 1), (8, 6, 3), (16, 9, 8), (32, 24, 8)] {
        let spec = SyntheticSpec {
            m,
            n,
            noise_sigma: 0.0,
            per_class: 5,
            probe_count: r,
            ..SyntheticSpec::adversarial_default()
        };
        assert_eq!(spec.family, Family::NullspaceAdversarial);
        let rng = Rng::new(m as u64 * 100 + n as u64);
        let u = gaussian(&mut rng.fork(3), n, r, 1.0).unwrap();
        let records = generate_nullspace_adversarial(&rng, &spec, &u).unwrap();
        let reference = records[0].x.matmul(&u).unwrap();
        for rec in &records {
            let resp = rec.x.matmul(&u).unwrap();
            assert!(resp.sub(&reference).unwrap().max_abs() < 1e-10 * (1.0 + reference.max_abs()));
        }
        assert!(records.iter().any(|rec| rec.x.sub(&records[0].x).unwrap().max_abs() > 1e-3));
    }
}

#[test]
fn montecarlo_error_shrinks_with_trials() {
    use mvprobe::theory::scale_ratio_montecarlo;
    let small = scale_ratio_montecarlo(&mut Rng::new(17), 8, 6, 1.0, 2, 1_000).unwrap();
    let large = scale_ratio_montecarlo(&mut Rng::new(17), 8, 6, 1.0, 2, 100_000).unwrap();
    assert!(large.ratio_rel_error() < small.ratio_rel_error().max(0.01), "{small:?} {large:?}");
    assert!(large.ratio_rel_error() < 0.01);
}
