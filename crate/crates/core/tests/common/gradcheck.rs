//! Central finite differences on the f64 references against the tape's
//! analytic gradients.

use super::*;
use loopprune_core::autodiff::{Tape, Var};
use loopprune_core::{ParamId, Parameter, Prng, Tensor};

pub const INSTANCES: usize = 50;
const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-3;
/// Pre-activations closer than this to a ReLU kink trigger a resample.
const KINK_MARGIN: f64 = 1e-3;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn near_kink(t: &T64) -> bool {
    t.data.iter().any(|v| v.abs() < KINK_MARGIN)
}

/// Builds the op on a tape whose leaves are all parameters, closes it with an
/// MAE against targets that sit at least 0.5 away from every output (random
/// side), and compares each leaf's gradient to central differences of the
/// f64 oracle under the same loss.
fn check_case(
    make: impl Fn(&mut Prng) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    oracle: impl Fn(&[T64]) -> T64,
    kinked: impl Fn(&[T64]) -> bool,
) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for instance in 0..INSTANCES {
        let mut rng = Prng::new(0x6752_4144 ^ ((instance as u64) << 8));
        let inputs = loop {
            let candidate = make(&mut rng);
            let as64: Vec<T64> = candidate.iter().map(T64::from).collect();
            if !kinked(&as64) {
                break candidate;
            }
        };
        let mut store: Vec<Parameter> = inputs.iter().cloned().map(Parameter::new).collect();
        let mut tape = Tape::new();
        let leaves: Vec<Var> = store
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p))
            .collect();
        let out = build(&mut tape, &leaves);
        let pred = tape.value(out).clone();
        let target = offset_target(&pred, 0.5, &mut rng);
        let t = tape.constant(target.clone());
        let loss = tape.mae(out, t).unwrap();
        tape.backward(loss, &mut store).unwrap();

        let target64 = T64::from(&target);
        let base: Vec<T64> = inputs.iter().map(T64::from).collect();
        for (k, p) in store.iter().enumerate() {
            let mut fd = vec![0.0; base[k].data.len()];
            for (e, slot) in fd.iter_mut().enumerate() {
                let mut plus = base.clone();
                plus[k].data[e] += STEP;
                let mut minus = base.clone();
                minus[k].data[e] -= STEP;
                *slot = (mae(&oracle(&plus), &target64) - mae(&oracle(&minus), &target64)) / (2.0 * STEP);
            }
            let analytic: Vec<f64> = p.gradient.data().iter().map(|&g| g as f64).collect();
            let err = rel_err(&analytic, &fd);
            worst = worst.max(err);
            if !(err < TOLERANCE) {
                return Err(format!("instance {instance}, input {k}: relative error {err:.3e}"));
            }
        }
    }
    Ok(worst)
}

/// Offsets every element by 0.5 to 1.5 (random sign) so the MAE never
/// evaluates near its kink.
fn offset_target(pred: &Tensor, lo: f32, rng: &mut Prng) -> Tensor {
    let mut t = pred.clone();
    for v in t.data_mut() {
        let side = if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        *v += side * rng.uniform(lo, lo + 1.0);
    }
    t
}

fn uniform(shape: [usize; 4], rng: &mut Prng) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

pub fn conv2d_gradients() -> Result<f64, String> {
    check_case(
        |r| {
            vec![
                uniform([2, 3, 5, 4], r),
                uniform([4, 3, 3, 3], r),
                uniform([1, 4, 1, 1], r),
            ]
        },
        |t, v| t.conv2d(v[0], v[1], v[2]).unwrap(),
        |i| conv2d(&i[0], &i[1], &i[2]),
        |_| false,
    )
}

pub fn dense_gradients() -> Result<f64, String> {
    check_case(
        |r| {
            vec![
                uniform([3, 5, 1, 1], r),
                uniform([4, 5, 1, 1], r),
                uniform([1, 4, 1, 1], r),
            ]
        },
        |t, v| t.dense(v[0], v[1], v[2]).unwrap(),
        |i| dense(&i[0], &i[1], &i[2]),
        |_| false,
    )
}

pub fn relu_gradients() -> Result<f64, String> {
    check_case(
        |r| vec![uniform([2, 3, 4, 4], r)],
        |t, v| t.relu(v[0]),
        |i| relu(&i[0]),
        |i| near_kink(&i[0]),
    )
}

pub fn sigmoid_gradients() -> Result<f64, String> {
    check_case(
        |r| vec![Tensor::rand_uniform([2, 3, 4, 4], -3.0, 3.0, r)],
        |t, v| t.sigmoid(v[0]),
        |i| sigmoid(&i[0]),
        |_| false,
    )
}

pub fn global_avg_pool_gradients() -> Result<f64, String> {
    check_case(
        |r| vec![uniform([2, 3, 5, 3], r)],
        |t, v| t.global_avg_pool(v[0]),
        |i| gap(&i[0]),
        |_| false,
    )
}

pub fn channel_scale_gradients() -> Result<f64, String> {
    check_case(
        |r| vec![uniform([2, 3, 4, 4], r), uniform([2, 3, 1, 1], r)],
        |t, v| t.channel_scale(v[0], v[1]).unwrap(),
        |i| channel_scale(&i[0], &i[1]),
        |_| false,
    )
}

pub fn add_gradients() -> Result<f64, String> {
    check_case(
        |r| vec![uniform([2, 3, 4, 4], r), uniform([2, 3, 4, 4], r)],
        |t, v| t.add(v[0], v[1]).unwrap(),
        |i| add(&i[0], &i[1]),
        |_| false,
    )
}

pub fn concat_gradients() -> Result<f64, String> {
    check_case(
        |r| vec![uniform([2, 2, 3, 3], r), uniform([2, 3, 3, 3], r)],
        |t, v| t.concat_channels(v[0], v[1]).unwrap(),
        |i| concat(&i[0], &i[1]),
        |_| false,
    )
}

pub fn index_add_gradients() -> Result<f64, String> {
    let idx = [0usize, 2, 3];
    check_case(
        |r| vec![uniform([2, 5, 3, 3], r), uniform([2, 3, 3, 3], r)],
        |t, v| t.index_add_channels(v[0], v[1], &idx).unwrap(),
        |i| index_add(&i[0], &i[1], &idx),
        |_| false,
    )
}

pub fn mae_gradients_in_both_arguments() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for instance in 0..INSTANCES {
        let mut rng = Prng::new(900 + instance as u64);
        let p = uniform([2, 2, 3, 3], &mut rng);
        let t = offset_target(&p, 0.1, &mut rng);
        let mut store = vec![Parameter::new(p.clone()), Parameter::new(t.clone())];
        let mut tape = Tape::new();
        let pv = tape.param(ParamId(0), &store[0]);
        let tv = tape.param(ParamId(1), &store[1]);
        let loss = tape.mae(pv, tv).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let base = [T64::from(&p), T64::from(&t)];
        for k in 0..2 {
            let fd: Vec<f64> = (0..base[k].data.len())
                .map(|e| {
                    let mut plus = base.clone();
                    plus[k].data[e] += STEP;
                    let mut minus = base.clone();
                    minus[k].data[e] -= STEP;
                    (mae(&plus[0], &plus[1]) - mae(&minus[0], &minus[1])) / (2.0 * STEP)
                })
                .collect();
            let analytic: Vec<f64> = store[k].gradient.data().iter().map(|&g| g as f64).collect();
            let err = rel_err(&analytic, &fd);
            worst = worst.max(err);
            if !(err < TOLERANCE) {
                return Err(format!("instance {instance}, input {k}: relative error {err:.3e}"));
            }
        }
    }
    Ok(worst)
}

fn block_case(residual: Option<Vec<usize>>) -> Result<f64, String> {
    let (width, c1, c2, d1) = (4usize, 5usize, residual.as_ref().map_or(4, Vec::len), 3usize);
    let unpack = |i: &[T64]| Block64 {
        w1: i[1].clone(),
        b1: i[2].clone(),
        w2: i[3].clone(),
        b2: i[4].clone(),
        wd1: i[5].clone(),
        bd1: i[6].clone(),
        wd2: i[7].clone(),
        bd2: i[8].clone(),
        residual: residual.clone(),
    };
    let idx = residual.clone();
    check_case(
        |r| {
            vec![
                uniform([2, width, 5, 5], r),
                Tensor::randn([c1, width, 3, 3], 0.4, r),
                Tensor::randn([1, c1, 1, 1], 0.2, r),
                Tensor::randn([c2, c1, 3, 3], 0.4, r),
                Tensor::randn([1, c2, 1, 1], 0.2, r),
                Tensor::randn([d1, c2, 1, 1], 0.8, r),
                Tensor::randn([1, d1, 1, 1], 0.2, r),
                Tensor::randn([c2, d1, 1, 1], 0.8, r),
                Tensor::randn([1, c2, 1, 1], 0.2, r),
            ]
        },
        |t, v| {
            let pre1 = t.conv2d(v[0], v[1], v[2]).unwrap();
            let a1 = t.relu(pre1);
            let u2 = t.conv2d(a1, v[3], v[4]).unwrap();
            let g = t.global_avg_pool(u2);
            let pd1 = t.dense(g, v[5], v[6]).unwrap();
            let a2 = t.relu(pd1);
            let pd2 = t.dense(a2, v[7], v[8]).unwrap();
            let s = t.sigmoid(pd2);
            let y = t.channel_scale(u2, s).unwrap();
            match &idx {
                Some(j) => t.index_add_channels(v[0], y, j).unwrap(),
                None => y,
            }
        },
        |i| block(&unpack(i), &i[0]).out,
        |i| {
            let tr = block(&unpack(i), &i[0]);
            near_kink(&tr.pre1) || near_kink(&tr.pre_d1)
        },
    )
}

pub fn residual_block_gradients() -> Result<f64, String> {
    block_case(Some(vec![0, 2, 3]))
}

pub fn non_residual_block_gradients() -> Result<f64, String> {
    block_case(None)
}

pub type GradCase = (&'static str, fn() -> Result<f64, String>);

/// Every case, named.
pub const CASES: &[GradCase] = &[
    ("conv2d", conv2d_gradients),
    ("dense", dense_gradients),
    ("relu", relu_gradients),
    ("sigmoid", sigmoid_gradients),
    ("global_avg_pool", global_avg_pool_gradients),
    ("channel_scale", channel_scale_gradients),
    ("add", add_gradients),
    ("concat_channels", concat_gradients),
    ("index_add_channels", index_add_gradients),
    ("mae", mae_gradients_in_both_arguments),
    ("residual block", residual_block_gradients),
    ("non-residual block", non_residual_block_gradients),
];
