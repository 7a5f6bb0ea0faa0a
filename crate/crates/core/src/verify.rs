//! Registry of gradient checks: every graph primitive, the model blocks
//! built from them, each loss, and the full training objective.

use rand::Rng as _;

use crate::error::Result;
use crate::model::erea::{cam_attention, flip_align, gate_aggregate, split_quadrants};
use crate::model::{Erea, ModelConfig};
use crate::numerics::gradcheck::{grad_check, grad_check_params, DEFAULT_EPS};
use crate::numerics::rng::{stream, substream};
use crate::numerics::{Graph, ParamStore, Rng, Tensor, Var};
use crate::training::horizontal_flip;
use crate::training::losses::graph as loss;

/// Pass threshold on the max relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Random evaluation points per check.
pub const POINTS: usize = 10;

type CheckFn = Box<dyn Fn(&mut Rng) -> Result<f64>>;

/// One named check; `run` draws a random point and returns the max
/// relative error of the autodiff gradient there.
pub struct GradCase {
    pub name: &'static str,
    pub run: CheckFn,
}

impl GradCase {
    pub fn new(name: &'static str, run: impl Fn(&mut Rng) -> Result<f64> + 'static) -> Self {
        GradCase { name, run: Box::new(run) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Uniform in `[-1, 1)`.
pub fn uniform(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Magnitudes in `[lo, hi)` with random sign, keeping clear of kinks and poles.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Contracts an output with fixed random weights so that every output
/// element reaches the scalar with a distinct coefficient.
fn project(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Checks `f` with respect to each of `inputs` in turn, the others held
/// fixed, projecting a non-scalar output with random weights.
pub fn check_all_inputs<F>(rng: &mut Rng, inputs: Vec<Tensor>, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars)?;
        g.shape(y).to_vec()
    };
    let weights = (out_shape.iter().product::<usize>() != 1).then(|| uniform(rng, &out_shape));
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        let err = grad_check(
            |g, x| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == i { x } else { g.constant(t.clone()) })
                    .collect();
                let y = f(g, &vars)?;
                match &weights {
                    Some(w) => project(g, y, w),
                    None => Ok(y),
                }
            },
            &inputs[i],
            DEFAULT_EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

macro_rules! case {
    ($name:literal, |$rng:ident| [$($input:expr),+ $(,)?], |$g:ident, $v:ident| $body:expr) => {
        GradCase::new($name, |$rng: &mut Rng| {
            let inputs = vec![$($input),+];
            check_all_inputs($rng, inputs, |$g: &mut Graph, $v: &[Var]| $body)
        })
    };
}

/// Configuration small enough for a full parameter sweep.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        frames: 4,
        height: 8,
        width: 8,
        in_channels: 3,
        encoder_channels: vec![4, 5],
        feature_size: 4,
        gate_hidden: 0,
        input_norm: true,
    }
}

fn model_objective(rng: &mut Rng) -> Result<f64> {
    let cfg = micro_model_config();
    let mut store = ParamStore::new();
    let model = Erea::new(cfg.clone(), &mut store, rng)?;
    let frames = uniform(rng, &[cfg.frames, cfg.height, cfg.width, cfg.in_channels]).map(|v| 0.5 + 0.5 * v);
    let flipped = horizontal_flip(&frames)?;
    let label = uniform(rng, &[cfg.frames]);
    grad_check_params(
        |g, store| {
            let a = model.forward(g, store, &frames)?;
            let b = model.forward(g, store, &flipped)?;
            let z = g.constant(label.clone());
            let r1 = loss::regression(g, a.signal, z, 0.3)?;
            let r2 = loss::regression(g, b.signal, z, 0.3)?;
            let ac = loss::attention_consistency(g, a.maps, b.maps)?;
            loss::total(g, r1, r2, ac, 0.5)
        },
        &mut store,
        DEFAULT_EPS,
    )
}

/// Every registered check, primitives first.
pub fn registry() -> Vec<GradCase> {
    vec![
        case!("add", |r| [uniform(r, &[3, 4]), uniform(r, &[3, 4])], |g, v| g.add(v[0], v[1])),
        case!("sub", |r| [uniform(r, &[3, 4]), uniform(r, &[3, 4])], |g, v| g.sub(v[0], v[1])),
        case!("mul", |r| [uniform(r, &[3, 4]), uniform(r, &[3, 4])], |g, v| g.mul(v[0], v[1])),
        case!("div", |r| [uniform(r, &[3, 4]), away_from_zero(r, &[3, 4], 0.5, 1.5)], |g, v| g.div(v[0], v[1])),
        case!("scale", |r| [uniform(r, &[5])], |g, v| g.scale(v[0], -1.7)),
        case!("add_const", |r| [uniform(r, &[5])], |g, v| g.add_const(v[0], 0.4)),
        case!("add_broadcast", |r| [uniform(r, &[3, 4]), uniform(r, &[4])], |g, v| g.add_broadcast(v[0], v[1])),
        case!("sum", |r| [uniform(r, &[6])], |g, v| g.sum(v[0])),
        case!("mean", |r| [uniform(r, &[6])], |g, v| g.mean(v[0])),
        case!("sum_axis", |r| [uniform(r, &[2, 3, 4])], |g, v| g.sum_axis(v[0], 1)),
        case!("matmul", |r| [uniform(r, &[3, 4]), uniform(r, &[4, 2])], |g, v| g.matmul(v[0], v[1])),
        case!("batch_matmul", |r| [uniform(r, &[2, 3, 4]), uniform(r, &[2, 4, 5])], |g, v| g.batch_matmul(v[0], v[1])),
        case!(
            "conv2d",
            |r| [uniform(r, &[2, 3, 5, 6]), uniform(r, &[4, 3, 3, 3]), uniform(r, &[4])],
            |g, v| g.conv2d(v[0], v[1], v[2])
        ),
        case!("avgpool2", |r| [uniform(r, &[2, 3, 4, 6])], |g, v| g.avgpool2(v[0])),
        case!("tanh", |r| [away_from_zero(r, &[7], 0.0, 2.0)], |g, v| g.tanh(v[0])),
        case!("relu", |r| [away_from_zero(r, &[7], 0.1, 1.0)], |g, v| g.relu(v[0])),
        case!("abs", |r| [away_from_zero(r, &[7], 0.1, 1.0)], |g, v| g.abs(v[0])),
        case!("sqrt", |r| [uniform(r, &[7]).map(|x| 1.0 + 0.5 * x)], |g, v| g.sqrt(v[0])),
        case!("square", |r| [uniform(r, &[7])], |g, v| g.square(v[0])),
        case!("softmax", |r| [uniform(r, &[3, 5]).map(|x| 2.0 * x)], |g, v| g.softmax(v[0])),
        case!("reshape", |r| [uniform(r, &[2, 6])], |g, v| g.reshape(v[0], &[3, 4])),
        case!(
            "concat",
            |r| [uniform(r, &[2, 3]), uniform(r, &[1, 3]), uniform(r, &[3, 3])],
            |g, v| g.concat(v)
        ),
        case!("row_l2_norm", |r| [uniform(r, &[4, 5])], |g, v| g.row_l2_norm(v[0])),
        case!("permute", |r| [uniform(r, &[2, 3, 4])], |g, v| g.permute(v[0], &[2, 0, 1])),
        case!("split_quadrants", |r| [uniform(r, &[2, 3, 4, 4])], |g, v| {
            let q = split_quadrants(g, v[0])?;
            let flat: Vec<Var> = q.iter().map(|&x| g.reshape(x, &[2 * 3 * 4])).collect::<Result<_>>()?;
            g.concat(&flat)
        }),
        case!("flip_align", |r| [uniform(r, &[2, 4, 2, 3])], |g, v| flip_align(g, v[0])),
        case!("cam_attention", |r| [uniform(r, &[3, 4, 2, 2]), uniform(r, &[3, 4])], |g, v| cam_attention(
            g, v[0], v[1]
        )),
        case!(
            "gate_aggregate",
            |r| [uniform(r, &[5]), uniform(r, &[5]), uniform(r, &[5]), uniform(r, &[5]), uniform(r, &[1, 4])],
            |g, v| gate_aggregate(g, &v[..4], v[4])
        ),
        case!("l1_loss", |r| [uniform(r, &[12]), away_from_zero(r, &[12], 1.2, 2.0)], |g, v| loss::l1(
            g, v[0], v[1]
        )),
        case!("neg_pearson_loss", |r| [uniform(r, &[12]), uniform(r, &[12])], |g, v| loss::neg_pearson(
            g, v[0], v[1]
        )),
        case!(
            "regression_loss",
            |r| [uniform(r, &[12]), away_from_zero(r, &[12], 1.2, 2.0)],
            |g, v| loss::regression(g, v[0], v[1], 0.3)
        ),
        case!(
            "attention_consistency_loss",
            |r| [uniform(r, &[2, 4, 3, 3]), uniform(r, &[2, 4, 3, 3])],
            |g, v| loss::attention_consistency(g, v[0], v[1])
        ),
        case!(
            "total_loss",
            |r| [uniform(r, &[1]), uniform(r, &[1]), uniform(r, &[1])],
            |g, v| loss::total(g, v[0], v[1], v[2], 0.5)
        ),
        GradCase::new("erea_total_objective", model_objective),
    ]
}

/// Runs each case at `points` random points drawn from a per-case stream of
/// `seed`; a case fails on error or when the max relative error reaches
/// [`TOLERANCE`].
pub fn run_checks(cases: &[GradCase], points: usize, seed: u64) -> Vec<CheckResult> {
    cases
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let mut rng = substream(seed, stream::GRADCHECK + ((i as u64 + 1) << 8));
            let mut worst = 0.0f64;
            for _ in 0..points {
                match (case.run)(&mut rng) {
                    Ok(e) => worst = worst.max(e),
                    Err(_) => {
                        worst = f64::INFINITY;
                        break;
                    }
                }
            }
            CheckResult {
                name: case.name,
                max_rel_error: worst,
                passed: worst < TOLERANCE,
            }
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::numerics::Op;

    /// `x^2` whose backward rule forgets the factor 2.
    pub struct BrokenSquare;

    impl Op for BrokenSquare {
        fn name(&self) -> &'static str {
            "broken_square"
        }

        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
            Ok(inputs[0].map(|x| x * x))
        }

        fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
            vec![Some(grad.zip_map(inputs[0], |g, x| g * x))]
        }
    }

    pub fn broken_case() -> GradCase {
        case!("broken_square", |r| [uniform(r, &[6])], |g, v| g.apply(BrokenSquare, &[v[0]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let reg = registry();
        let mut names: Vec<&str> = reg.iter().map(|c| c.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), reg.len());
    }

    #[test]
    fn primitives_pass_at_three_points() {
        let reg: Vec<GradCase> = registry().into_iter().filter(|c| c.name != "erea_total_objective").collect();
        for r in run_checks(&reg, 3, 7) {
            assert!(r.passed, "{} {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let r = run_checks(&[fixtures::broken_case()], 2, 0);
        assert!(!r[0].passed);
        assert!(r[0].max_rel_error > 0.1);
    }
}
