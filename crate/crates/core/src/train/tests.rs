use std::collections::VecDeque;

use super::*;
use crate::data::{gen_gaussian_mixture, GaussianMixture, Split};
use crate::nn::{ParamBuffer, ParamSet, Role};

fn small_config(objective: Objective) -> TrainConfig {
    let mut c = TrainConfig::for_objective(objective);
    c.encoder_hidden = vec![16, 4];
    c.predictor_hidden = 4;
    c.batch_size = 8;
    c.bank_capacity = 16;
    c.epochs = 3;
    c.eval_every = 0;
    c.loss.temperature = 0.2;
    c.teacher_policy = AugmentPolicy::mild();
    c.student_policy = AugmentPolicy::mild();
    c.with_seed(5)
}

fn small_data() -> LabeledDataset {
    gen_gaussian_mixture(3, 12, 5, 3.0, 2).unwrap()
}

fn buffers(shapes_values: &[(&[usize], &[f64])]) -> Vec<ParamBuffer> {
    shapes_values
        .iter()
        .map(|(s, v)| ParamBuffer {
            shape: s.to_vec(),
            values: v.to_vec(),
        })
        .collect()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "{g} vs {w}");
    }
}

#[test]
fn config_validation() {
    let mut c = small_config(Objective::Isd);
    c.distill = true;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    c.momentum = 1.0;
    c.validate().unwrap();
    let mut c = small_config(Objective::Isd);
    c.momentum = 1.5;
    assert!(c.validate().is_err());
    let mut c = small_config(Objective::Isd);
    c.batch_size = 0;
    assert!(c.validate().is_err());
    assert_eq!(TrainConfig::for_objective(Objective::Byol).momentum, 0.99);
}

#[test]
fn hand_traced_single_step() {
    // Encoder [1, 2] with final normalization, linear predictor [2, 2],
    // two anchors, two queries, no augmentation. Reference values come from
    // an explicit chain-rule computation in float64.
    let enc = MlpSpec::new(vec![1, 2], true).unwrap();
    let pred = MlpSpec::new(vec![2, 2], false).unwrap();
    let student = ParamSet::from_buffers(enc.clone(), buffers(&[(&[1, 2], &[0.8, -0.5]), (&[2], &[0.1, 0.2])]), Role::Student).unwrap();
    let head = ParamSet::from_buffers(pred, buffers(&[(&[2, 2], &[1.0, 0.3, -0.2, 0.9]), (&[2], &[0.05, -0.1])]), Role::Student).unwrap();
    let pair = ModelPair::from_parts(student.clone(), head, student.clone(), 0.9).unwrap();

    let mut c = small_config(Objective::Isd);
    c.encoder_hidden = vec![2];
    c.predictor_hidden = 2;
    c.momentum = 0.9;
    c.lr = 0.1;
    c.loss.temperature = 0.5;
    c.bank_capacity = 4;
    c.schedule = ScheduleKind::Constant;
    c.teacher_policy = AugmentPolicy::none();
    c.student_policy = AugmentPolicy::none();
    let mut trainer = Trainer::with_pair(c, pair).unwrap();
    trainer.bank.as_mut().unwrap().enqueue_rows(&[1.0, 0.0, 0.6, 0.8], 2).unwrap();

    let ds = LabeledDataset::new(vec![0.7, -1.3], SampleShape::Vector(1), vec![0, 1], 2, Split::Train).unwrap();
    let m = trainer.train_step(&ds, &[0, 1]).unwrap();

    assert!((m.loss - 0.5070918150626692).abs() < 1e-12);
    assert!((m.teacher_entropy - 0.4963365266466686).abs() < 1e-12);
    let p = trainer.pair();
    assert_close(&p.student_encoder.buffers()[0].values, &[0.7960110651606336, -0.5078273677012989], 1e-12);
    assert_close(&p.student_encoder.buffers()[1].values, &[0.10077284799488201, 0.19595389610677794], 1e-12);
    assert_close(
        &p.student_predictor.buffers()[0].values,
        &[0.9989288615590118, 0.2922776228368829, -0.1990590068116107, 0.9037954554067463],
        1e-12,
    );
    assert_close(&p.student_predictor.buffers()[1].values, &[0.05135809653221254, -0.10072710534918856], 1e-12);
    assert_close(&p.teacher_encoder.buffers()[0].values, &[0.7996011065160634, -0.5007827367701299], 1e-12);
    assert_close(&p.teacher_encoder.buffers()[1].values, &[0.10007728479948821, 0.1995953896106778], 1e-12);

    // The batch's teacher embeddings are appended after the step.
    let snap = trainer.bank().unwrap().snapshot().unwrap();
    assert_eq!(snap.shape(), &[4, 2]);
    assert_close(
        &snap.values()[4..],
        &[0.9751328557914598, -0.2216211035889681, -0.7417226863378119, 0.6707066844544044],
        1e-12,
    );
}

#[test]
fn zero_learning_rate_leaves_everything_fixed() {
    let mut c = small_config(Objective::Isd);
    c.lr = 0.0;
    let ds = small_data();
    let mut trainer = Trainer::new(c, ds.dim()).unwrap();
    let before = trainer.pair().clone();
    trainer.run_epoch(&ds).unwrap();
    let after = trainer.pair();
    assert_eq!(after.student_encoder, before.student_encoder);
    assert_eq!(after.student_predictor, before.student_predictor);
    assert_eq!(after.teacher_encoder, before.teacher_encoder);
}

#[test]
fn frozen_teacher_is_bitwise_constant() {
    let mut c = small_config(Objective::Isd);
    c.momentum = 1.0;
    let ds = small_data();
    let mut trainer = Trainer::new(c, ds.dim()).unwrap();
    let teacher = trainer.pair().teacher_encoder.clone();
    for _ in 0..3 {
        trainer.run_epoch(&ds).unwrap();
    }
    assert_ne!(trainer.pair().student_encoder.buffers(), teacher.buffers());
    assert_eq!(trainer.pair().teacher_encoder, teacher);
}

#[test]
fn cold_start_is_reported() {
    let ds = small_data();
    let mut trainer = Trainer::new(small_config(Objective::Isd), ds.dim()).unwrap();
    assert!(matches!(trainer.train_step(&ds, &[0, 1]), Err(Error::ColdStart { count: 0 })));
    trainer.prefill(&ds).unwrap();
    assert!(trainer.bank().unwrap().is_full());
    trainer.train_step(&ds, &[0, 1]).unwrap();
}

#[test]
fn byol_needs_no_bank() {
    let ds = small_data();
    let mut trainer = Trainer::new(small_config(Objective::Byol), ds.dim()).unwrap();
    assert!(trainer.bank().is_none());
    let m = trainer.train_step(&ds, &[0, 1, 2]).unwrap();
    assert!(m.loss.is_finite() && (0.0..=4.0).contains(&m.loss));
    assert_eq!(m.teacher_entropy, 0.0);
}

#[test]
fn entropy_bounded_and_loss_finite() {
    let ds = small_data();
    let c = small_config(Objective::Isd);
    let n = c.bank_capacity as f64;
    let out = train(&c, &ds, None).unwrap();
    assert_eq!(out.metrics.len(), 3 * 5);
    for row in &out.metrics {
        assert!(row.step.loss.is_finite());
        assert!(row.step.teacher_entropy >= 0.0 && row.step.teacher_entropy <= n.ln() + 1e-12);
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let ds = small_data();
    let mut c = small_config(Objective::Isd);
    c.epochs = 0;
    let out = train(&c, &ds, None).unwrap();
    let fresh = ModelPair::new(&c.encoder_spec(5).unwrap(), &c.predictor_spec().unwrap(), c.init_seed, c.momentum).unwrap();
    assert_eq!(out.checkpoint.pair, fresh);
    assert_eq!(out.checkpoint.pair.teacher_encoder.buffers(), out.checkpoint.pair.student_encoder.buffers());
    assert!(out.metrics.is_empty());
}

#[test]
fn identical_seeds_identical_runs() {
    let ds = small_data();
    let c = small_config(Objective::Isd);
    let a = train(&c, &ds, None).unwrap();
    let b = train(&c, &ds, None).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    let other = train(&c.clone().with_seed(6), &ds, None).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), other.checkpoint.to_bytes());
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let ds = small_data();
    let mut c = small_config(Objective::Moco);
    c.epochs = 4;
    let full = train(&c, &ds, None).unwrap();

    // Stop halfway while keeping the four-epoch schedule.
    let mut first = Trainer::new(c.clone(), ds.dim()).unwrap();
    first.config.epochs = 2;
    first.run(&ds, None).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(restored, first.checkpoint());

    let mut second = Trainer::from_checkpoint(c, &restored).unwrap();
    second.run(&ds, None).unwrap();
    assert_eq!(second.checkpoint().to_bytes(), full.checkpoint.to_bytes());
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Checkpoint(_))));
    let ds = small_data();
    let out = train(&small_config(Objective::Isd), &ds, None).unwrap();
    let bytes = out.checkpoint.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong = small_config(Objective::Isd);
    wrong.encoder_hidden = vec![6, 4];
    assert!(matches!(Trainer::from_checkpoint(wrong, &out.checkpoint), Err(Error::Checkpoint(_))));
}

#[test]
fn eval_columns_on_cadence() {
    let g = GaussianMixture::new(3, 5, 3.0, 4).unwrap();
    let train_set = g.sample(12, Split::Train).unwrap();
    let test_set = g.sample(6, Split::Eval).unwrap();
    let mut c = small_config(Objective::Isd);
    c.epochs = 4;
    c.eval_every = 2;
    let sets = EvalSets {
        memory: &train_set,
        queries: &test_set,
    };
    let out = train(&c, &train_set, Some(sets)).unwrap();
    let evaluated: Vec<usize> = out.metrics.iter().filter(|r| r.teacher_knn.is_some()).map(|r| r.step.epoch).collect();
    assert_eq!(evaluated, vec![1, 3]);
    for r in &out.metrics {
        assert_eq!(r.teacher_knn.is_some(), r.student_knn.is_some());
    }
}

#[test]
fn distill_keeps_the_loaded_teacher() {
    let ds = small_data();
    let c = small_config(Objective::Isd);
    let teacher = train(&c, &ds, None).unwrap().checkpoint;

    let mut zero = c.clone();
    zero.epochs = 0;
    let out = distill(&zero, &teacher, &ds, None).unwrap();
    let fresh = ModelPair::new(&c.encoder_spec(5).unwrap(), &c.predictor_spec().unwrap(), c.init_seed, 1.0).unwrap();
    assert_eq!(out.checkpoint.pair.student_encoder, fresh.student_encoder);

    let out = distill(&c, &teacher, &ds, None).unwrap();
    assert_eq!(out.checkpoint.pair.teacher_encoder.buffers(), teacher.pair.teacher_encoder.buffers());
    assert_ne!(out.checkpoint.pair.student_encoder, fresh.student_encoder);

    let mut wrong = c.clone();
    wrong.encoder_hidden = vec![7, 4];
    assert!(matches!(distill(&wrong, &teacher, &ds, None), Err(Error::Checkpoint(_))));
}

// Independent InfoNCE trainer with hand-written gradients for an encoder
// [d, h, e] (ReLU, normalized output) and a linear predictor [e, e].
struct Manual {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    u: Vec<f64>,
    c: Vec<f64>,
    tw1: Vec<f64>,
    tb1: Vec<f64>,
    tw2: Vec<f64>,
    tb2: Vec<f64>,
    vel: Vec<Vec<f64>>,
    queue: VecDeque<Vec<f64>>,
    dims: (usize, usize, usize),
}

fn matvec(x: &[f64], w: &[f64], b: &[f64], cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * cols + j]).sum::<f64>())
        .collect()
}

fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v.iter().map(|x| x / n).collect(), n)
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Manual {
    fn encode(x: &[f64], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], dims: (usize, usize, usize)) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let a1 = matvec(x, w1, b1, dims.1);
        let r: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
        let h = matvec(&r, w2, b2, dims.2);
        let (z, hn) = normalize(&h);
        (a1, r, z, hn)
    }

    fn step(&mut self, xs: &[Vec<f64>], tau: f64, lr: f64, mu: f64, wd: f64, m: f64, cap: usize) {
        let (d, h, e) = self.dims;
        let bsz = xs.len() as f64;
        let mut g = [vec![0.0; d * h], vec![0.0; h], vec![0.0; h * e], vec![0.0; e], vec![0.0; e * e], vec![0.0; e]];
        let negs: Vec<Vec<f64>> = self.queue.iter().map(|a| normalize(a).0).collect();
        let mut keys = Vec::new();
        for x in xs {
            let (_, _, t, _) = Self::encode(x, &self.tw1, &self.tb1, &self.tw2, &self.tb2, self.dims);
            let (a1, r, z, hn) = Self::encode(x, &self.w1, &self.b1, &self.w2, &self.b2, self.dims);
            let p = matvec(&z, &self.u, &self.c, e);
            let (qn, pn) = normalize(&p);
            let (tn, _) = normalize(&t);
            let mut logits = vec![dotp(&qn, &tn) / tau];
            logits.extend(negs.iter().map(|a| dotp(&qn, a) / tau));
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let zsum: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let mut dq = vec![0.0; e];
            for (j, l) in logits.iter().enumerate() {
                let dl = ((l - mx).exp() / zsum - if j == 0 { 1.0 } else { 0.0 }) / bsz / tau;
                let key = if j == 0 { &tn } else { &negs[j - 1] };
                dq.iter_mut().zip(key).for_each(|(a, k)| *a += dl * k);
            }
            let proj = dotp(&dq, &qn);
            let dp: Vec<f64> = dq.iter().zip(&qn).map(|(a, q)| (a - proj * q) / pn).collect();
            for i in 0..e {
                for j in 0..e {
                    g[4][i * e + j] += z[i] * dp[j];
                }
                g[5][i] += dp[i];
            }
            let dz: Vec<f64> = (0..e).map(|i| (0..e).map(|j| dp[j] * self.u[i * e + j]).sum()).collect();
            let proj = dotp(&dz, &z);
            let dh: Vec<f64> = dz.iter().zip(&z).map(|(a, zi)| (a - proj * zi) / hn).collect();
            for i in 0..h {
                for j in 0..e {
                    g[2][i * e + j] += r[i] * dh[j];
                }
            }
            dh.iter().enumerate().for_each(|(j, v)| g[3][j] += v);
            let da: Vec<f64> = (0..h)
                .map(|i| if a1[i] > 0.0 { (0..e).map(|j| dh[j] * self.w2[i * e + j]).sum() } else { 0.0 })
                .collect();
            for i in 0..d {
                for j in 0..h {
                    g[0][i * h + j] += x[i] * da[j];
                }
            }
            da.iter().enumerate().for_each(|(j, v)| g[1][j] += v);
            keys.push(t);
        }
        let params = [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.u, &mut self.c];
        for ((theta, gr), v) in params.into_iter().zip(&g).zip(self.vel.iter_mut()) {
            for k in 0..theta.len() {
                v[k] = mu * v[k] + gr[k] + wd * theta[k];
                theta[k] -= lr * v[k];
            }
        }
        for (t, s) in [(&mut self.tw1, &self.w1), (&mut self.tb1, &self.b1), (&mut self.tw2, &self.w2), (&mut self.tb2, &self.b2)] {
            t.iter_mut().zip(s.iter()).for_each(|(tv, sv)| *tv = m * *tv + (1.0 - m) * sv);
        }
        for k in keys {
            if self.queue.len() == cap {
                self.queue.pop_front();
            }
            self.queue.push_back(k);
        }
    }
}

#[test]
fn moco_matches_independent_infonce_trainer() {
    let ds = gen_gaussian_mixture(2, 4, 3, 2.0, 9).unwrap();
    let mut c = small_config(Objective::Moco);
    c.encoder_hidden = vec![4, 3];
    c.predictor_hidden = 3;
    c.momentum = 0.9;
    c.lr = 0.05;
    c.bank_capacity = 4;
    c.schedule = ScheduleKind::Constant;
    c.teacher_policy = AugmentPolicy::none();
    c.student_policy = AugmentPolicy::none();
    // Replace the two-layer predictor with a linear one.
    let enc = c.encoder_spec(3).unwrap();
    let mut fresh = ModelPair::new(&enc, &MlpSpec::new(vec![3, 3], false).unwrap(), 3, 0.9).unwrap();
    // Nonzero biases keep every ReLU path alive in this tiny network.
    for set in [&mut fresh.student_encoder, &mut fresh.teacher_encoder] {
        for (i, b) in set.buffers_mut().iter_mut().enumerate().filter(|(i, _)| i % 2 == 1) {
            b.values.iter_mut().for_each(|v| *v = 0.1 * (i as f64));
        }
    }
    let mut trainer = Trainer::with_pair(c.clone(), fresh).unwrap();
    trainer.prefill(&ds).unwrap();

    let p = trainer.pair();
    let vals = |s: &ParamSet, i: usize| s.buffers()[i].values.clone();
    let mut manual = Manual {
        w1: vals(&p.student_encoder, 0),
        b1: vals(&p.student_encoder, 1),
        w2: vals(&p.student_encoder, 2),
        b2: vals(&p.student_encoder, 3),
        u: vals(&p.student_predictor, 0),
        c: vals(&p.student_predictor, 1),
        tw1: vals(&p.teacher_encoder, 0),
        tb1: vals(&p.teacher_encoder, 1),
        tw2: vals(&p.teacher_encoder, 2),
        tb2: vals(&p.teacher_encoder, 3),
        vel: vec![vec![0.0; 12], vec![0.0; 4], vec![0.0; 12], vec![0.0; 3], vec![0.0; 9], vec![0.0; 3]],
        queue: trainer.bank().unwrap().snapshot().unwrap().values().chunks(3).map(<[f64]>::to_vec).collect(),
        dims: (3, 4, 3),
    };

    let script: [&[usize]; 10] = [&[0, 5], &[1, 2], &[7, 3], &[4, 6], &[2, 0], &[5, 1], &[6, 7], &[3, 4], &[0, 7], &[1, 6]];
    for batch in script {
        trainer.train_step(&ds, batch).unwrap();
        let xs: Vec<Vec<f64>> = batch.iter().map(|&i| ds.sample(i).to_vec()).collect();
        manual.step(&xs, c.loss.temperature, c.lr, c.sgd_momentum, c.weight_decay, c.momentum, c.bank_capacity);

        let p = trainer.pair();
        assert_close(&vals(&p.student_encoder, 0), &manual.w1, 1e-8);
        assert_close(&vals(&p.student_encoder, 1), &manual.b1, 1e-8);
        assert_close(&vals(&p.student_encoder, 2), &manual.w2, 1e-8);
        assert_close(&vals(&p.student_encoder, 3), &manual.b2, 1e-8);
        assert_close(&vals(&p.student_predictor, 0), &manual.u, 1e-8);
        assert_close(&vals(&p.student_predictor, 1), &manual.c, 1e-8);
        assert_close(&vals(&p.teacher_encoder, 2), &manual.tw2, 1e-8);
    }
}
