//! Central finite-difference verification of every differentiable operation.
//!
//! Each entry builds a scalar loss from a set of input tensors, runs one
//! analytic backward pass, then perturbs every input element by +-h and
//! compares. The sampling op is excluded here because its backward is the
//! softmax path by definition; that contract has its own direct test.

use crate::autodiff::nn::{self, Activation, Binding, GruCell, Mlp, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a unit floor so near-zero gradients compare by
/// absolute difference instead of blowing up.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Check one scalar-valued graph builder against central finite differences.
/// Returns the maximum relative error over all input elements.
pub fn check<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t, false)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| tape.grad(*v).expect("tracked leaf has gradient").to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let orig = input.data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[ei] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads[ti][ei], numeric));
        }
    }
    Ok(worst)
}

fn rand_tensor(rows: usize, cols: usize, rng: &mut StdRng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

pub struct OpReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Run the whole suite over `seeds` random draws per operation.
pub fn run_suite(base_seed: u64, seeds: usize) -> Result<Vec<OpReport>> {
    type BuildFn = fn(&mut Tape, &[Var]) -> Result<Var>;

    fn mean(tape: &mut Tape, v: Var) -> Result<Var> {
        tape.mean_all(v)
    }

    // Every op is reduced to a scalar through mean_all (itself checked first).
    let cases: Vec<(&'static str, Vec<(usize, usize)>, BuildFn)> = vec![
        ("sum_all", vec![(2, 3)], |t, v| t.sum_all(v[0])),
        ("mean_all", vec![(2, 3)], |t, v| t.mean_all(v[0])),
        ("sum_rows", vec![(3, 4)], |t, v| {
            let s = t.sum_rows(v[0])?;
            let w = t.mul(s, s)?;
            t.sum_all(w)
        }),
        ("matmul", vec![(2, 3), (3, 4)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("add", vec![(2, 3), (2, 3)], |t, v| {
            let y = t.add(v[0], v[1])?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("add_row", vec![(3, 4), (1, 4)], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("sub", vec![(2, 3), (2, 3)], |t, v| {
            let y = t.sub(v[0], v[1])?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("mul", vec![(2, 3), (2, 3)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            mean(t, y)
        }),
        ("scale", vec![(2, 3)], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("neg", vec![(2, 3)], |t, v| {
            let y = t.neg(v[0])?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("tanh", vec![(2, 4)], |t, v| {
            let y = t.tanh(v[0])?;
            mean(t, y)
        }),
        ("sigmoid", vec![(2, 4)], |t, v| {
            let y = t.sigmoid(v[0])?;
            mean(t, y)
        }),
        ("elu", vec![(2, 4)], |t, v| {
            let y = t.elu(v[0])?;
            mean(t, y)
        }),
        ("softplus", vec![(2, 4)], |t, v| {
            let y = t.softplus(v[0])?;
            mean(t, y)
        }),
        ("softmax", vec![(2, 6)], |t, v| {
            let y = t.softmax(v[0], 3)?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("log_softmax", vec![(2, 6)], |t, v| {
            let y = t.log_softmax(v[0], 3)?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("clamp_min", vec![(2, 4)], |t, v| {
            // Inputs are shifted away from the clamp point so the kink is
            // not sampled by the finite difference.
            let shifted = t.scale(v[0], 2.0)?;
            let y = t.clamp_min(shifted, 0.1)?;
            mean(t, y)
        }),
        ("concat_cols", vec![(2, 3), (2, 2)], |t, v| {
            let y = t.concat_cols(v[0], v[1])?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("slice_cols", vec![(2, 5)], |t, v| {
            let y = t.slice_cols(v[0], 1, 3)?;
            let sq = t.mul(y, y)?;
            mean(t, sq)
        }),
        ("kl_categorical", vec![(2, 6), (2, 6)], |t, v| {
            let kl = nn::kl_categorical(t, v[0], v[1], 3)?;
            mean(t, kl)
        }),
        ("categorical_log_prob", vec![(2, 6)], |t, v| {
            let one_hot = Tensor::from_vec(2, 6, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0])
                .expect("static one-hot");
            let oh = t.leaf(&one_hot, false);
            let lp = nn::categorical_log_prob(t, v[0], oh, 3)?;
            mean(t, lp)
        }),
        ("categorical_entropy", vec![(2, 6)], |t, v| {
            let e = nn::categorical_entropy(t, v[0], 3)?;
            mean(t, e)
        }),
        ("gaussian_nll", vec![(2, 5), (2, 5)], |t, v| {
            let n = nn::gaussian_nll(t, v[0], v[1])?;
            mean(t, n)
        }),
        ("bernoulli_nll", vec![(2, 5)], |t, v| {
            let target = Tensor::from_vec(2, 5, vec![1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0, 0.25, 1.0, 0.0])
                .expect("static target");
            let tv = t.leaf(&target, false);
            let n = nn::bernoulli_nll(t, v[0], tv)?;
            mean(t, n)
        }),
    ];

    let mut reports = Vec::new();
    for (name, shapes, build) in cases {
        let mut worst = 0.0f64;
        for s in 0..seeds {
            let mut rng = StdRng::seed_from_u64(base_seed.wrapping_add(s as u64).wrapping_mul(0x9E37_79B9));
            let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| rand_tensor(r, c, &mut rng)).collect();
            worst = worst.max(check(build, &inputs, DEFAULT_STEP)?);
        }
        reports.push(OpReport { name, max_rel_err: worst });
    }

    // Composite networks: one GRU step and a small MLP, parameters included
    // as differentiated inputs.
    reports.push(gru_case(base_seed, seeds)?);
    reports.push(mlp_case(base_seed, seeds)?);
    Ok(reports)
}

fn gru_case(base_seed: u64, seeds: usize) -> Result<OpReport> {
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let mut rng = StdRng::seed_from_u64(base_seed.wrapping_add(1000 + s as u64));
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "g", 3, 4, &mut rng);
        let x = rand_tensor(2, 3, &mut rng);
        let h = rand_tensor(2, 4, &mut rng);
        let mut inputs: Vec<Tensor> = store.tensors().to_vec();
        inputs.push(x);
        inputs.push(h);
        let n_params = store.len();
        let err = check(
            |tape, vars| {
                let bind = Binding::from_vars(vars[..n_params].to_vec());
                let out = gru.forward(tape, &bind, vars[n_params], vars[n_params + 1])?;
                let sq = tape.mul(out, out)?;
                tape.mean_all(sq)
            },
            &inputs,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(OpReport { name: "gru_cell", max_rel_err: worst })
}

fn mlp_case(base_seed: u64, seeds: usize) -> Result<OpReport> {
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let mut rng = StdRng::seed_from_u64(base_seed.wrapping_add(2000 + s as u64));
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", 4, 6, 2, 2, Activation::Elu, &mut rng);
        let x = rand_tensor(3, 4, &mut rng);
        let mut inputs: Vec<Tensor> = store.tensors().to_vec();
        inputs.push(x);
        let n_params = store.len();
        let err = check(
            |tape, vars| {
                let bind = Binding::from_vars(vars[..n_params].to_vec());
                let out = mlp.forward(tape, &bind, vars[n_params])?;
                let sq = tape.mul(out, out)?;
                tape.mean_all(sq)
            },
            &inputs,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(OpReport { name: "mlp", max_rel_err: worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        let reports = run_suite(42, 10).unwrap();
        assert!(reports.len() >= 20);
        for r in &reports {
            assert!(
                r.max_rel_err < 1e-4,
                "{} gradient mismatch: rel err {:.3e}",
                r.name,
                r.max_rel_err
            );
        }
    }
}
