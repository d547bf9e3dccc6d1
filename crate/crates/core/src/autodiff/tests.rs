use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::check_function;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn eval(build: impl FnOnce(&mut Tape) -> crate::Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    let v = build(&mut tape).unwrap();
    tape.value(v).clone()
}

#[test]
fn matmul_identity_and_annihilator() {
    let x = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let out = eval(|t| {
        let i = t.constant(Tensor::eye(2)?)?;
        let x = t.constant(x.clone())?;
        t.matmul(i, x)
    });
    assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = random(&[3, 5], &mut rng);
    let out = eval(|t| {
        let z = t.constant(Tensor::zeros(&[2, 3])?)?;
        let b = t.constant(b)?;
        t.matmul(z, b)
    });
    assert_eq!(out.shape(), &[2, 5]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]).unwrap()).unwrap();
    let b = tape.constant(Tensor::zeros(&[2, 3]).unwrap()).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = [random(&[3, 4], &mut rng), random(&[4, 2], &mut rng), random(&[3, 2], &mut rng)];
    let report = check_function(&inputs, 1e-5, 1e-8, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        // weight the outputs so each entry of dL/dc differs
        let w = t.mul(c, v[2])?;
        t.sum(w)
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn softmax_examples() {
    let out = eval(|t| {
        let x = t.constant(mat(&[&[0.0, 0.0], &[1000.0, 1000.0]]))?;
        t.softmax_rows(x)
    });
    assert_eq!(out.data(), &[0.5, 0.5, 0.5, 0.5]);

    let out = eval(|t| {
        let x = t.constant(mat(&[&[1.0, 2.0, 3.0]]))?;
        t.softmax_rows(x)
    });
    let denom: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
    for (k, v) in out.data().iter().enumerate() {
        let expected = ((k + 1) as f64).exp() / denom;
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
    }
}

#[test]
fn layer_norm_examples() {
    let ln = |x: Tensor, gamma: Vec<f64>, beta: Vec<f64>, eps: f64| {
        let d = gamma.len();
        eval(|t| {
            let x = t.constant(x)?;
            let g = t.constant(Tensor::new(vec![d], gamma)?)?;
            let b = t.constant(Tensor::new(vec![d], beta)?)?;
            t.layer_norm(x, g, b, eps)
        })
    };
    let out = ln(mat(&[&[3.0, 3.0, 3.0]]), vec![1.0; 3], vec![0.0; 3], 1e-5);
    assert_eq!(out.data(), &[0.0, 0.0, 0.0]);

    let out = ln(mat(&[&[1.0, -1.0]]), vec![1.0; 2], vec![0.0; 2], 1e-300);
    assert_eq!(out.data(), &[1.0, -1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = ln(random(&[3, 4], &mut rng), vec![0.0; 4], vec![0.1, 0.2, 0.3, 0.4], 1e-5);
    for r in 0..3 {
        assert_eq!(out.row(r), &[0.1, 0.2, 0.3, 0.4]);
    }
}

#[test]
fn elementwise_basics() {
    let out = eval(|t| {
        let x = t.constant(Tensor::new(vec![3], vec![0.0, 1e6, -1e6])?)?;
        t.sigmoid(x)
    });
    assert_eq!(out.data()[0], 0.5);
    assert!(out.data()[1] <= 1.0 && out.data()[2] >= 0.0);

    let out = eval(|t| {
        let x = t.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0])?)?;
        t.relu(x)
    });
    assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn dropout_identity_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[4, 5], &mut rng);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone()).unwrap();
    let same = tape.dropout(v, 0.0, true, &mut rng).unwrap();
    assert_eq!(tape.value(same), &x);
    for p in [0.1, 0.5, 0.9] {
        let e = tape.dropout(v, p, false, &mut rng).unwrap();
        assert_eq!(tape.value(e), &x);
    }
    assert!(matches!(tape.dropout(v, 1.0, true, &mut rng), Err(Error::Config(_))));
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::ones(&[100_000]).unwrap()).unwrap();
    let out = tape.dropout(ones, 0.1, true, &mut rng).unwrap();
    let mean = tape.value(out).data().iter().sum::<f64>() / 100_000.0;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    let zeros = tape.value(out).data().iter().filter(|&&v| v == 0.0).count();
    assert!((zeros as f64 / 1e5 - 0.1).abs() < 0.01);
}

#[test]
fn reshape_flatten_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 3, 4], &mut rng);
    let out = eval(|t| {
        let v = t.constant(x.clone())?;
        let f = t.flatten(v)?;
        t.reshape(f, &[2, 3, 4])
    });
    assert_eq!(out, x);
}

#[test]
fn axis_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]).unwrap()).unwrap();
    assert!(matches!(tape.concat(&[a, a], 2), Err(Error::Dimension { .. })));
    assert!(matches!(tape.split(a, 3, 1), Err(Error::Dimension { .. })));
    assert!(matches!(tape.split(a, 1, 2), Err(Error::Dimension { .. })));
    assert!(matches!(tape.stack(&[a, a], 3), Err(Error::Dimension { .. })));
    assert!(matches!(tape.reshape(a, &[4]), Err(Error::Dimension { .. })));
}

#[test]
fn concat_split_stack_layout() {
    let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let b = mat(&[&[5.0, 6.0], &[7.0, 8.0]]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a).unwrap(), tape.constant(b).unwrap());
    let c0 = tape.concat(&[va, vb], 0).unwrap();
    assert_eq!(tape.value(c0).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let c1 = tape.concat(&[va, vb], 1).unwrap();
    assert_eq!(tape.value(c1).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    let parts = tape.split(c1, 1, 2).unwrap();
    assert_eq!(tape.value(parts[0]).data(), &[1.0, 2.0, 3.0, 4.0]);
    let s = tape.stack(&[va, vb], 2).unwrap();
    assert_eq!(tape.value(s).shape(), &[2, 2, 2]);
    assert_eq!(tape.value(s).at(&[1, 0, 1]), 7.0);
}

#[test]
fn conv_patchify_examples() {
    // summing kernel on a single 2×2 patch
    let out = eval(|t| {
        let x = t.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])?)?;
        let k = t.constant(Tensor::ones(&[1, 1, 2, 2])?)?;
        let b = t.constant(Tensor::zeros(&[1])?)?;
        t.conv_patchify(x, k, b)
    });
    assert_eq!(out.shape(), &[1, 1]);
    assert_eq!(out.data(), &[10.0]);

    // 3×3 pads to 4×4 → ceil(3/2)² = 4 patches
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[1, 3, 3], &mut rng);
    let out = eval(|t| {
        let x = t.constant(x.clone())?;
        let k = t.constant(Tensor::ones(&[1, 1, 2, 2])?)?;
        let b = t.constant(Tensor::zeros(&[1])?)?;
        t.conv_patchify(x, k, b)
    });
    assert_eq!(out.shape(), &[1, 4]);
    let d = x.data();
    // bottom-right patch only sees x[2][2]
    assert_eq!(out.data()[3], d[8]);
    assert!((out.data()[1] - (d[2] + d[5])).abs() < 1e-15);

    let out = eval(|t| {
        let x = t.constant(Tensor::zeros(&[1, 6, 6])?)?;
        let k = t.constant(random(&[3, 1, 3, 3], &mut rng))?;
        let b = t.constant(Tensor::zeros(&[3])?)?;
        t.conv_patchify(x, k, b)
    });
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_patchify_rejects_oversized_patch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 2]).unwrap()).unwrap();
    let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]).unwrap()).unwrap();
    let b = tape.constant(Tensor::zeros(&[1]).unwrap()).unwrap();
    assert!(matches!(tape.conv_patchify(x, k, b), Err(Error::Dimension { .. })));
}

/// Unfold-then-linear oracle: explicit loops over patches and kernel taps.
fn patchify_oracle(x: &Tensor, kernel: &Tensor, bias: &[f64], patch: usize) -> Vec<Vec<f64>> {
    let (w, h) = (x.shape()[1], x.shape()[2]);
    let embed = kernel.shape()[0];
    let mut out = vec![Vec::new(); embed];
    for bi in 0..w / patch {
        for bj in 0..h / patch {
            for (e, row) in out.iter_mut().enumerate() {
                let mut acc = bias[e];
                for i in 0..patch {
                    for j in 0..patch {
                        acc += kernel.at(&[e, 0, i, j]) * x.at(&[0, bi * patch + i, bj * patch + j]);
                    }
                }
                row.push(acc);
            }
        }
    }
    out
}

#[test]
fn conv_patchify_matches_unfold_linear_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (w, h, p, e) in [(6, 6, 3, 2), (4, 8, 2, 3), (9, 3, 3, 1)] {
        let x = random(&[1, w, h], &mut rng);
        let k = random(&[e, 1, p, p], &mut rng);
        let b = random(&[e], &mut rng);
        let out = eval(|t| {
            let (xv, kv, bv) = (t.constant(x.clone())?, t.constant(k.clone())?, t.constant(b.clone())?);
            t.conv_patchify(xv, kv, bv)
        });
        assert_eq!(out.shape(), &[e, (w / p) * (h / p)]);
        let oracle = patchify_oracle(&x, &k, b.data(), p);
        for (r, row) in oracle.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((out.at(&[r, c]) - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv1d_embed_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[2, 3], &mut rng);
    let out = eval(|t| {
        let (av, k, b) = (t.constant(a.clone())?, t.constant(Tensor::eye(2)?)?, t.constant(Tensor::zeros(&[2])?)?);
        t.conv1d_embed(av, k, b)
    });
    assert_eq!(out, a);

    let out = eval(|t| {
        let av = t.constant(a.clone())?;
        let k = t.constant(Tensor::zeros(&[3, 2, 1])?)?;
        let b = t.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0])?)?;
        t.conv1d_embed(av, k, b)
    });
    assert_eq!(out.shape(), &[3, 3]);
    for c in 0..3 {
        assert!(out.row(c).iter().all(|&v| v == (c + 1) as f64));
    }

    let k = random(&[4, 2], &mut rng);
    let b = random(&[4], &mut rng);
    let out = eval(|t| {
        let (av, kv, bv) = (t.constant(a.clone())?, t.constant(k.clone())?, t.constant(b.clone())?);
        t.conv1d_embed(av, kv, bv)
    });
    for o in 0..4 {
        for l in 0..3 {
            let mut acc = b.data()[o];
            for i in 0..2 {
                acc += k.at(&[o, i]) * a.at(&[i, l]);
            }
            assert!((out.at(&[o, l]) - acc).abs() < 1e-14);
        }
    }
}

#[test]
fn backward_simple_losses() {
    let mut tape = Tape::new();
    let w = Parameter::new("w", Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
    let v = tape.param(&w).unwrap();
    let s = tape.sum(v).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap(), &[1.0; 6]);

    let mut tape = Tape::new();
    let w = Parameter::new("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let v = tape.param(&w).unwrap();
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap(), &[2.0, 4.0]);

    // a second backward without zeroing accumulates into the parameter
    let mut store = std::collections::BTreeMap::new();
    store.insert("w".to_string(), w);
    tape.accumulate_into(&g, &mut store).unwrap();
    tape.accumulate_into(&g, &mut store).unwrap();
    assert_eq!(store["w"].tensor.grad().unwrap(), &[4.0, 8.0]);

    assert!(matches!(tape.backward(sq), Err(Error::Contract(_))));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::new(vec![1], vec![1e308]).unwrap()).unwrap();
    assert!(matches!(tape.scale(a, 10.0), Err(Error::NonFinite { op: "scale" })));
    assert!(tape.constant(Tensor::new(vec![1], vec![f64::NAN]).unwrap()).is_err());
}

/// Gradient checks for every differentiable op on random small shapes.
#[test]
fn every_op_matches_finite_differences() {
    type Build = fn(&mut Tape, &[Var]) -> crate::Result<Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        ("add_bcast", vec![vec![3, 4], vec![4], vec![3, 4]], |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.mul(y, v[2])?;
            t.sum(y)
        }),
        ("sub_col_bcast", vec![vec![3, 4], vec![3, 1], vec![3, 4]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            let y = t.mul(y, v[2])?;
            t.sum(y)
        }),
        ("mul_bcast", vec![vec![2, 3, 4], vec![3, 1]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("scale_relu", vec![vec![5, 3]], |t, v| {
            let y = t.scale(v[0], 1.7)?;
            let y = t.relu(y)?;
            let y = t.mul(y, y)?;
            t.mean(y)
        }),
        ("sigmoid", vec![vec![4, 4], vec![4, 4]], |t, v| {
            let y = t.sigmoid(v[0])?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("transpose", vec![vec![3, 5], vec![5, 3]], |t, v| {
            let y = t.transpose(v[0])?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("reshape_flatten", vec![vec![2, 6], vec![3, 4]], |t, v| {
            let f = t.flatten(v[0])?;
            let y = t.reshape(f, &[3, 4])?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("concat_split", vec![vec![2, 3], vec![2, 2], vec![2, 5]], |t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            let y = t.mul(c, v[2])?;
            let parts = t.split(y, 0, 2)?;
            let p = t.mul(parts[0], parts[1])?;
            t.sum(p)
        }),
        ("stack", vec![vec![2, 3], vec![2, 3], vec![2, 2, 3]], |t, v| {
            let s = t.stack(&[v[0], v[1]], 1)?;
            let y = t.mul(s, v[2])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("softmax", vec![vec![3, 5], vec![3, 5]], |t, v| {
            let y = t.softmax_rows(v[0])?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("layer_norm", vec![vec![4, 5], vec![5], vec![5], vec![4, 5]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let y = t.mul(y, v[3])?;
            t.sum(y)
        }),
        ("huber", vec![vec![6]], |t, v| {
            let y = t.scale(v[0], 3.0)?;
            let h = t.huber(y, &[0.5, -1.0, 2.0, 0.0, 1.0, -2.5], 1.0)?;
            t.mean(h)
        }),
        ("conv_patchify", vec![vec![1, 5, 4], vec![2, 1, 2, 2], vec![2], vec![2, 6]], |t, v| {
            let y = t.conv_patchify(v[0], v[1], v[2])?;
            let y = t.mul(y, v[3])?;
            t.sum(y)
        }),
        ("conv1d", vec![vec![3, 4], vec![5, 3], vec![5], vec![5, 4]], |t, v| {
            let y = t.conv1d_embed(v[0], v[1], v[2])?;
            let y = t.mul(y, v[3])?;
            t.sum(y)
        }),
        ("dropout", vec![vec![4, 3], vec![4, 3]], |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let y = t.dropout(v[0], 0.3, true, &mut rng)?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (name, shapes, build) in cases {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        let report = check_function(&inputs, 1e-5, 1e-6, build).unwrap();
        assert!(report.max_rel_err < 1e-5, "{name}: {report:?}");
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..8) {
        let rows = values.len().div_ceil(cols);
        let mut data = values.clone();
        data.resize(rows * cols, 0.0);
        let out = eval(|t| {
            let x = t.constant(Tensor::new(vec![rows, cols], data)?)?;
            t.softmax_rows(x)
        });
        for r in 0..rows {
            let s: f64 = out.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(out.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn flatten_reshape_is_bit_exact(dims in proptest::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&dims, &mut rng);
        let out = eval(|t| {
            let v = t.constant(x.clone())?;
            let f = t.flatten(v)?;
            t.reshape(f, &dims)
        });
        prop_assert_eq!(out, x);
    }
}
