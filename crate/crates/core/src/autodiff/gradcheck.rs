//! Finite-difference gradient checking for every registered op. Used by the
//! test suites and by the `grad-check` CLI subcommand.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{backward, Tensor, TensorError};
use crate::rng::Rng;

/// Relative error with a floor: `rel_err <= 1e-4` is equivalent to
/// `|a - n| <= max(1e-4 * max(|a|, |n|), 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-2);
    (analytic - numeric).abs() / denom
}

/// Central finite-difference step used across the crate.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of checking one op or composite.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= 1e-4
    }
}

/// Compare backward gradients of `build(leaves)` against central finite
/// differences over every element of every `requires_grad` leaf. Returns the
/// maximum relative error (see [`rel_err`]).
pub fn finite_diff_check(
    leaves: &[Tensor],
    build: &dyn Fn(&[Tensor]) -> Result<Tensor, TensorError>,
) -> Result<f64, TensorError> {
    let loss = build(leaves)?;
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    for leaf in leaves {
        leaf.zero_grad();
    }
    backward(&loss)?;
    let analytic: Vec<Option<Vec<f64>>> = leaves.iter().map(|l| l.grad()).collect();

    let mut max_err = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        if !leaf.requires_grad() {
            continue;
        }
        let grads = analytic[li]
            .clone()
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for i in 0..leaf.numel() {
            let orig = leaf.value()[i];
            leaf.update_value(|v| v[i] = orig + FD_STEP);
            let up = build(leaves)?.item();
            leaf.update_value(|v| v[i] = orig - FD_STEP);
            let down = build(leaves)?.item();
            leaf.update_value(|v| v[i] = orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            max_err = max_err.max(rel_err(grads[i], numeric));
        }
    }
    Ok(max_err)
}

/// Random normal leaf whose entries stay at least `margin` away from each
/// listed kink point, so finite differences never straddle a
/// non-differentiable point.
fn randn_leaf_away_from(
    rng: &mut Rng,
    shape: &[usize],
    kinks: &[f64],
    margin: f64,
) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let x = crate::rng::normal(rng);
        if kinks.iter().all(|k| (x - k).abs() > margin) {
            data.push(x);
        }
    }
    Tensor::leaf(shape, data, true).expect("valid leaf")
}

/// Weighted sum so every output element influences the scalar loss with a
/// distinct coefficient (a plain sum would hide sign errors that cancel).
fn probe_loss(out: &Tensor, rng: &mut Rng) -> Result<Tensor, TensorError> {
    let numel = out.numel();
    let coeffs: Vec<f64> = (0..numel).map(|_| crate::rng::normal(rng)).collect();
    let probe = Tensor::constant(out.shape(), coeffs)?;
    Ok(out.mul(&probe)?.sum_all())
}

/// Run the per-op gradient suite: every registered op on at least three
/// random shapes. Returns one entry per op with the worst relative error
/// observed.
pub fn op_gradient_suite(seed: u64) -> Vec<GradCheck> {
    let mut rng = crate::rng::from_seed(seed);
    let mut results: Vec<GradCheck> = Vec::new();

    let shapes2: [&[usize]; 3] = [&[3], &[2, 4], &[5, 3]];

    // Elementwise binary ops.
    for (name, f) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
    ] {
        let mut worst = 0.0f64;
        for shape in shapes2 {
            let a = randn_leaf_away_from(&mut rng, shape, &[], 0.0);
            let b = randn_leaf_away_from(&mut rng, shape, &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, results.len() as u64 + 1);
            let err = finite_diff_check(&[a, b], &move |l| {
                let out = match f {
                    0 => l[0].add(&l[1])?,
                    1 => l[0].sub(&l[1])?,
                    _ => l[0].mul(&l[1])?,
                };
                probe_loss(&out, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from(name),
            max_rel_err: worst,
        });
    }

    // Elementwise unary ops: (name, kinks to avoid, positive-only, builder id)
    struct Unary {
        name: &'static str,
        kinks: &'static [f64],
        positive: bool,
        id: usize,
    }
    let unaries = [
        Unary { name: "neg", kinks: &[], positive: false, id: 0 },
        Unary { name: "add_scalar", kinks: &[], positive: false, id: 1 },
        Unary { name: "mul_scalar", kinks: &[], positive: false, id: 2 },
        Unary { name: "relu", kinks: &[0.0], positive: false, id: 3 },
        Unary { name: "abs", kinks: &[0.0], positive: false, id: 4 },
        Unary { name: "log", kinks: &[], positive: true, id: 5 },
        Unary { name: "exp", kinks: &[], positive: false, id: 6 },
        Unary { name: "sqrt", kinks: &[], positive: true, id: 7 },
        Unary { name: "square", kinks: &[], positive: false, id: 8 },
        Unary { name: "sin", kinks: &[], positive: false, id: 9 },
        Unary { name: "sigmoid", kinks: &[], positive: false, id: 10 },
        Unary { name: "softplus", kinks: &[], positive: false, id: 11 },
        Unary { name: "clamp", kinks: &[-0.8, 0.9], positive: false, id: 12 },
    ];
    for u in unaries {
        let mut worst = 0.0f64;
        for shape in shapes2 {
            let mut a = randn_leaf_away_from(&mut rng, shape, u.kinks, 1e-3);
            if u.positive {
                let data: Vec<f64> = a.value().iter().map(|v| v * v + 0.5).collect();
                a = Tensor::leaf(shape, data, true).unwrap();
            }
            let probe_seed = crate::rng::derive_seed(seed, 100 + results.len() as u64);
            let id = u.id;
            let err = finite_diff_check(&[a], &move |l| {
                let out = match id {
                    0 => l[0].neg(),
                    1 => l[0].add_scalar(1.7),
                    2 => l[0].mul_scalar(-2.3),
                    3 => l[0].relu(),
                    4 => l[0].abs(),
                    5 => l[0].log(),
                    6 => l[0].exp(),
                    7 => l[0].sqrt(),
                    8 => l[0].square(),
                    9 => l[0].sin(),
                    10 => l[0].sigmoid(),
                    11 => l[0].softplus(),
                    _ => l[0].clamp(-0.8, 0.9),
                };
                probe_loss(&out, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from(u.name),
            max_rel_err: worst,
        });
    }

    // matmul
    {
        let mut worst = 0.0f64;
        for (m, k, n) in [(2usize, 3usize, 2usize), (1, 4, 5), (4, 2, 3)] {
            let a = randn_leaf_away_from(&mut rng, &[m, k], &[], 0.0);
            let b = randn_leaf_away_from(&mut rng, &[k, n], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 200 + worst.to_bits() as u64 % 97);
            let err = finite_diff_check(&[a, b], &move |l| {
                probe_loss(&l[0].matmul(&l[1])?, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("matmul"),
            max_rel_err: worst,
        });
    }

    // conv1d (both input and weight gradients, strides and dilations)
    {
        let mut worst = 0.0f64;
        for (c_in, c_out, k, len, stride, dilation) in [
            (1usize, 2usize, 3usize, 9usize, 1usize, 1usize),
            (2, 3, 3, 12, 2, 1),
            (2, 2, 2, 11, 1, 3),
        ] {
            let x = randn_leaf_away_from(&mut rng, &[c_in, len], &[], 0.0);
            let w = randn_leaf_away_from(&mut rng, &[c_out, c_in, k], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 300 + (stride * 7 + dilation) as u64);
            let err = finite_diff_check(&[x, w], &move |l| {
                probe_loss(
                    &l[0].conv1d(&l[1], stride, dilation)?,
                    &mut crate::rng::from_seed(probe_seed),
                )
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("conv1d"),
            max_rel_err: worst,
        });
    }

    // depthwise_conv1d
    {
        let mut worst = 0.0f64;
        for (c, k, len, stride) in [(1usize, 2usize, 8usize, 1usize), (3, 2, 10, 2), (2, 4, 12, 3)] {
            let x = randn_leaf_away_from(&mut rng, &[c, len], &[], 0.0);
            let w = randn_leaf_away_from(&mut rng, &[c, k], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 400 + (c * 13 + k) as u64);
            let err = finite_diff_check(&[x, w], &move |l| {
                probe_loss(
                    &l[0].depthwise_conv1d(&l[1], stride)?,
                    &mut crate::rng::from_seed(probe_seed),
                )
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("depthwise_conv1d"),
            max_rel_err: worst,
        });
    }

    // bias_add
    {
        let mut worst = 0.0f64;
        for (c, t) in [(2usize, 5usize), (4, 3), (1, 7)] {
            let x = randn_leaf_away_from(&mut rng, &[c, t], &[], 0.0);
            let b = randn_leaf_away_from(&mut rng, &[c], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 500 + (c * t) as u64);
            let err = finite_diff_check(&[x, b], &move |l| {
                probe_loss(&l[0].bias_add(&l[1])?, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("bias_add"),
            max_rel_err: worst,
        });
    }

    // reductions
    for (name, id) in [("reduce_sum", 0usize), ("reduce_mean", 1), ("reduce_std", 2)] {
        let mut worst = 0.0f64;
        for (c, t) in [(2usize, 6usize), (3, 4), (1, 9)] {
            let x = randn_leaf_away_from(&mut rng, &[c, t], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 600 + (c * t + id) as u64);
            let err = finite_diff_check(&[x], &move |l| {
                let out = match id {
                    0 => l[0].sum_all(),
                    1 => l[0].row_mean()?,
                    _ => l[0].row_std()?,
                };
                probe_loss(&out, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from(name),
            max_rel_err: worst,
        });
    }

    // softmax_cross_entropy
    {
        let mut worst = 0.0f64;
        for (k, label) in [(2usize, 0usize), (5, 3), (10, 9)] {
            let logits = randn_leaf_away_from(&mut rng, &[k], &[], 0.0);
            let err = finite_diff_check(&[logits], &move |l| l[0].softmax_cross_entropy(label))
                .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("softmax_cross_entropy"),
            max_rel_err: worst,
        });
    }

    // shape ops: reshape / concat / slice
    {
        let mut worst = 0.0f64;
        for (r, c) in [(2usize, 6usize), (3, 4), (4, 2)] {
            let x = randn_leaf_away_from(&mut rng, &[r, c], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 700 + (r * c) as u64);
            let err = finite_diff_check(&[x], &move |l| {
                let flat = l[0].reshape(&[l[0].numel()])?;
                probe_loss(&flat, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("reshape"),
            max_rel_err: worst,
        });
    }
    {
        let mut worst = 0.0f64;
        for (na, nb) in [(3usize, 4usize), (1, 6), (5, 5)] {
            let a = randn_leaf_away_from(&mut rng, &[na], &[], 0.0);
            let b = randn_leaf_away_from(&mut rng, &[nb], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 800 + (na * nb) as u64);
            let err = finite_diff_check(&[a, b], &move |l| {
                probe_loss(&l[0].concat(&l[1])?, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("concat"),
            max_rel_err: worst,
        });
    }
    {
        let mut worst = 0.0f64;
        for (rows, cols, start, len) in [(4usize, 3usize, 1usize, 2usize), (5, 2, 0, 3), (3, 4, 2, 1)] {
            let x = randn_leaf_away_from(&mut rng, &[rows, cols], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 900 + (rows * cols) as u64);
            let err = finite_diff_check(&[x], &move |l| {
                probe_loss(
                    &l[0].slice_rows(start, len)?,
                    &mut crate::rng::from_seed(probe_seed),
                )
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("slice"),
            max_rel_err: worst,
        });
    }

    // hilbert (linear row-wise transform)
    {
        let mut worst = 0.0f64;
        for (rows, cols) in [(1usize, 8usize), (2, 16), (3, 10)] {
            let x = randn_leaf_away_from(&mut rng, &[rows, cols], &[], 0.0);
            let probe_seed = crate::rng::derive_seed(seed, 1000 + (rows * cols) as u64);
            let err = finite_diff_check(&[x], &move |l| {
                probe_loss(&l[0].hilbert_rows()?, &mut crate::rng::from_seed(probe_seed))
            })
            .expect("check runs");
            worst = worst.max(err);
        }
        results.push(GradCheck {
            name: String::from("hilbert"),
            max_rel_err: worst,
        });
    }

    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for check in op_gradient_suite(20240817) {
            assert!(
                check.passed(),
                "{}: max relative error {}",
                check.name,
                check.max_rel_err
            );
        }
    }

    #[test]
    fn suite_covers_the_full_op_set() {
        let names: Vec<String> = op_gradient_suite(1)
            .into_iter()
            .map(|c| c.name)
            .collect();
        for required in [
            "add", "mul", "matmul", "conv1d", "depthwise_conv1d", "relu", "log", "sqrt",
            "square", "reduce_mean", "reduce_std", "softmax_cross_entropy", "reshape",
            "concat", "slice", "hilbert",
        ] {
            assert!(names.iter().any(|n| n == required), "missing {required}");
        }
    }
}
