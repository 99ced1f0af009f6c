//! Property tests for the invariants that hold across modules.

use isd_core::augment::{augment, AugmentPolicy, SampleShape};
use isd_core::data::{make_unbalanced, GaussianMixture, LabeledDataset, Split};
use isd_core::eval::{knn_eval, knn_predict_all, linear_probe, recall_at_k, EmbeddingTable, Source};
use isd_core::losses::{byol_loss, isd_loss, moco_loss};
use isd_core::nn::{init_params, mlp_forward, MlpSpec, ModelPair, ParamBuffer, ParamSet, Role};
use isd_core::rng::{stream, Stream};
use isd_core::tensor::{l2_normalize, softmax};
use isd_core::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scaled(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| c * x).collect()
}

#[derive(Debug, Clone)]
struct LossCase {
    b: usize,
    n: usize,
    d: usize,
    teacher: Vec<f64>,
    student: Vec<f64>,
    anchors: Vec<f64>,
    tau: f64,
}

fn loss_case() -> impl Strategy<Value = LossCase> {
    (1usize..4, 2usize..9, 2usize..6, prop::sample::select(vec![0.02, 0.1, 0.5]))
        .prop_flat_map(|(b, n, d, tau)| {
            (matrix(b, d), matrix(b, d), matrix(n, d)).prop_map(move |(teacher, student, anchors)| LossCase {
                b,
                n,
                d,
                teacher,
                student,
                anchors,
                tau,
            })
        })
        .prop_filter("non-degenerate rows", |c| {
            let ok = |m: &[f64]| m.chunks(c.d).all(|r| norm(r) > 1e-3);
            ok(&c.teacher) && ok(&c.student) && ok(&c.anchors)
        })
}

fn all_losses(c: &LossCase, teacher: &[f64], student: &[f64], anchors: &[f64]) -> [f64; 3] {
    let t = Tensor::matrix(c.b, c.d, teacher.to_vec()).unwrap();
    let s = Tensor::matrix(c.b, c.d, student.to_vec()).unwrap();
    let a = Tensor::matrix(c.n, c.d, anchors.to_vec()).unwrap();
    [
        isd_loss(&t, &s, &a, c.tau).unwrap().item().unwrap(),
        moco_loss(&s, &t, &a, c.tau).unwrap().item().unwrap(),
        byol_loss(&s, &t).unwrap().item().unwrap(),
    ]
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-350.0f64..350.0, 1..32)) {
        let p = softmax(&Tensor::vector(logits).unwrap()).unwrap();
        let sum: f64 = p.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        prop_assert!(p.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn l2_normalize_gives_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..32)) {
        prop_assume!(norm(&v) >= 1e-6);
        let u = l2_normalize(&Tensor::vector(v).unwrap(), 1e-12).unwrap();
        prop_assert!((norm(u.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_mlp_rows_have_unit_norm(seed in any::<u64>(), x in matrix(5, 6)) {
        let spec = MlpSpec::new(vec![6, 32, 4], true).unwrap();
        let params = init_params(&spec, seed).unwrap().bind().unwrap();
        let out = mlp_forward(&spec, &params, &Tensor::matrix(5, 6, x).unwrap()).unwrap();
        for row in out.values().chunks(4) {
            prop_assert!((norm(row) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn losses_ignore_positive_rescaling(c in loss_case(), which in 0usize..3, factor in prop::sample::select(vec![0.5, 2.0, 10.0])) {
        let base = all_losses(&c, &c.teacher, &c.student, &c.anchors);
        let moved = match which {
            0 => all_losses(&c, &scaled(&c.teacher, factor), &c.student, &c.anchors),
            1 => all_losses(&c, &c.teacher, &scaled(&c.student, factor), &c.anchors),
            _ => all_losses(&c, &c.teacher, &c.student, &scaled(&c.anchors, factor)),
        };
        for (x, y) in base.iter().zip(&moved) {
            prop_assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn teacher_side_inputs_get_no_gradient(c in loss_case(), which in 0usize..3) {
        let t = Tensor::param(&[c.b, c.d], c.teacher.clone()).unwrap();
        let s = Tensor::param(&[c.b, c.d], c.student.clone()).unwrap();
        let a = Tensor::param(&[c.n, c.d], c.anchors.clone()).unwrap();
        let loss = match which {
            0 => isd_loss(&t, &s, &a, c.tau),
            1 => moco_loss(&s, &t, &a, c.tau),
            _ => byol_loss(&s, &t),
        }
        .unwrap();
        loss.backward().unwrap();
        prop_assert!(t.grad().iter().all(|&g| g == 0.0));
        prop_assert!(a.grad().iter().all(|&g| g == 0.0));
        prop_assert!(s.grad().iter().any(|&g| g != 0.0));
    }
}

fn scalar_encoder(v: f64, role: Role) -> ParamSet {
    // Output width 2 is the smallest valid embedding; both weights move together.
    let spec = MlpSpec::new(vec![1, 2], false).unwrap();
    let buffers = vec![
        ParamBuffer {
            shape: vec![1, 2],
            values: vec![v, v],
        },
        ParamBuffer {
            shape: vec![2],
            values: vec![0.0, 0.0],
        },
    ];
    ParamSet::from_buffers(spec, buffers, role).unwrap()
}

fn scalar_pair(start: f64, m: f64) -> ModelPair {
    let predictor = init_params(&MlpSpec::new(vec![2, 2], false).unwrap(), 0).unwrap();
    ModelPair::from_parts(scalar_encoder(start, Role::Student), predictor, scalar_encoder(start, Role::Teacher), m).unwrap()
}

fn weight(set: &ParamSet) -> f64 {
    set.buffers()[0].values[0]
}

proptest! {
    #[test]
    fn ema_contraction_on_scalar_runs(
        start in -2.0f64..2.0,
        m in 0.01f64..0.999,
        moves in prop::collection::vec(-1.0f64..1.0, 1..50),
    ) {
        let mut pair = scalar_pair(start, m);
        let teacher0 = weight(&pair.teacher_encoder);
        let (mut displacement, mut seen_gaps) = (0.0, 0.0);
        for delta in moves {
            let s = weight(&pair.student_encoder) + delta;
            pair.student_encoder = scalar_encoder(s, Role::Student);
            displacement += delta.abs();
            let before = weight(&pair.teacher_encoder);
            seen_gaps += (s - before).abs();
            pair.ema_update();
            let after = weight(&pair.teacher_encoder);
            // Each update moves the teacher exactly (1 − m) of the way.
            prop_assert!(((after - before).abs() - (1.0 - m) * (s - before).abs()).abs() < 1e-12);
            let gap = (after - s).abs();
            prop_assert!(gap <= m * displacement + 1e-12, "gap {gap} > m·Σ|δ| = {}", m * displacement);
        }
        let travelled = (weight(&pair.teacher_encoder) - teacher0).abs();
        prop_assert!(travelled <= (1.0 - m) * seen_gaps + 1e-12);
    }

    #[test]
    fn ema_with_momentum_one_is_identity(k in 1usize..200, seed in any::<u64>()) {
        let enc = MlpSpec::new(vec![3, 4, 2], true).unwrap();
        let pred = MlpSpec::new(vec![2, 3, 2], false).unwrap();
        let mut pair = ModelPair::new(&enc, &pred, seed, 1.0).unwrap();
        pair.student_encoder = init_params(&enc, seed ^ 1).unwrap();
        let frozen = pair.teacher_encoder.clone();
        for _ in 0..k {
            pair.ema_update();
        }
        prop_assert_eq!(pair.teacher_encoder, frozen);
    }
}

fn labeled(rows: usize, dim: usize, classes: usize, values: Vec<f64>) -> LabeledDataset {
    let labels = (0..rows).map(|i| i % classes).collect();
    LabeledDataset::new(values, SampleShape::Vector(dim), labels, classes, Split::Train).unwrap()
}

proptest! {
    #[test]
    fn make_unbalanced_only_changes_membership(seed in any::<u64>(), small in 0usize..10) {
        let ds = GaussianMixture::new(4, 3, 2.0, seed).unwrap().sample(10, Split::Train).unwrap();
        let out = make_unbalanced(&ds, &[1], small, seed).unwrap();
        let mut cursor = 0;
        for i in 0..out.len() {
            let row = out.sample(i);
            while cursor < ds.len() && ds.sample(cursor) != row {
                cursor += 1;
            }
            prop_assert!(cursor < ds.len(), "row {i} is not an ordered copy of an input row");
            prop_assert_eq!(out.labels()[i], ds.labels()[cursor]);
            cursor += 1;
        }
        let counts = out.class_counts();
        prop_assert_eq!(counts, vec![small, 10, small, small]);
    }

    #[test]
    fn eval_split_stays_balanced(seed in any::<u64>(), per_class in 1usize..20) {
        let g = GaussianMixture::new(5, 4, 1.0, seed).unwrap();
        let eval = g.sample(per_class, Split::Eval).unwrap();
        prop_assert_eq!(eval.class_counts(), vec![per_class; 5]);
    }

    #[test]
    fn views_from_independent_streams_differ(sample in prop::collection::vec(-2.0f64..2.0, 8), seed in any::<u64>()) {
        for policy in [AugmentPolicy::mild(), AugmentPolicy::aggressive()] {
            let mut a = stream(seed, Stream::Augment);
            let mut b = stream(seed.wrapping_add(1), Stream::Augment);
            let va = augment(&sample, SampleShape::Vector(8), &policy, &mut a);
            let vb = augment(&sample, SampleShape::Vector(8), &policy, &mut b);
            prop_assert_ne!(va, vb);
        }
    }

    #[test]
    fn recall_is_monotone_in_k(classes in 2usize..4, per_class in 2usize..6, dim in 2usize..5, seed in any::<u64>()) {
        let n = classes * per_class;
        let values: Vec<f64> = {
            use rand::Rng;
            let mut rng = stream(seed, Stream::Experiment);
            (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        prop_assume!(values.chunks(dim).all(|r| norm(r) > 1e-3));
        let table = EmbeddingTable::from_raw(&values, dim, (0..n).map(|i| i % classes).collect(), Source::raw()).unwrap();
        let ks: Vec<usize> = (1..n).collect();
        let recalls = recall_at_k(&table, &ks).unwrap();
        prop_assert!(recalls.windows(2).all(|w| w[0] <= w[1]), "{recalls:?}");
        prop_assert_eq!(recalls, recall_at_k(&table, &ks).unwrap());
    }

    #[test]
    fn knn_invariant_to_common_rescaling(
        train in matrix(24, 3),
        test in matrix(8, 3),
        factor in prop::sample::select(vec![0.5, 2.0, 10.0]),
        k in 1usize..6,
    ) {
        prop_assume!(train.chunks(3).chain(test.chunks(3)).all(|r| norm(r) > 1e-3));
        let table = |v: &[f64], rows| EmbeddingTable::from_raw(v, 3, (0..rows).map(|i| i % 3).collect(), Source::raw()).unwrap();
        let (m, q) = (table(&train, 24), table(&test, 8));
        let (ms, qs) = (table(&scaled(&train, factor), 24), table(&scaled(&test, factor), 8));
        prop_assert_eq!(knn_predict_all(&m, &q, k).unwrap(), knn_predict_all(&ms, &qs, k).unwrap());
        prop_assert_eq!(knn_eval(&m, &q, k).unwrap(), knn_eval(&m, &q, k).unwrap());
    }

    #[test]
    fn linear_probe_is_pure(values in matrix(12, 3)) {
        prop_assume!(values.chunks(3).all(|r| norm(r) > 1e-3));
        let ds = labeled(12, 3, 3, values.clone());
        let t = EmbeddingTable::from_raw(ds.samples(), 3, ds.labels().to_vec(), Source::raw()).unwrap();
        prop_assert_eq!(linear_probe(&t, &t, 20, 0.5).unwrap(), linear_probe(&t, &t, 20, 0.5).unwrap());
    }
}
