//! Reverse-mode gradients against central finite differences and hand derivations.
//!
//! A gradient entry passes when `|analytic - numeric| <= 1e-5 * max(|analytic|, |numeric|, 1e-4)`;
//! the floor keeps entries that are zero up to rounding from failing on noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rd_sandwich::autodiff::{softplus, sigmoid, Activation, AdamConfig, Mlp, MlpSpec, ParamStore, Tape, Tensor, Var};
use rd_sandwich::lower::{lower_objective, CkMode, HillClimb, LowerBoundModel, LowerConfig};
use rd_sandwich::sources::{BatchStream, Source};
use rd_sandwich::upper::{DecoderSpec, PriorSpec, UpperBoundModel, UpperConfig};

const RTOL: f64 = 1e-5;
const FLOOR: f64 = 1e-4;

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= RTOL * a.abs().max(n.abs()).max(FLOOR)
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Checks `d f / d inputs` where `f` builds a scalar from variables on a fresh tape.
fn check_inputs(name: &str, inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.variable(x.clone())).collect();
        let o = f(&mut t, &vs);
        t.value(o).item()
    };
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.wrt(vars[k]).unwrap();
        for i in 0..input.len() {
            let h = 1e-5 * input.data()[i].abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                close(g.data()[i], num),
                "{name}: input {k} entry {i}: analytic {} numeric {num}",
                g.data()[i]
            );
        }
    }
}

/// Checks `d loss / d params` for a loss that reads its parameters from a store.
fn check_params(name: &str, store: &ParamStore, loss: &dyn Fn(&ParamStore) -> f64, analytic: &indexmap::IndexMap<String, Tensor>) {
    for (pname, value) in store.iter() {
        let g = &analytic[pname];
        for i in 0..value.len() {
            let h = 1e-5 * value.data()[i].abs().max(1.0);
            let mut plus = store.clone();
            plus.get_mut(pname).unwrap().data_mut()[i] += h;
            let mut minus = store.clone();
            minus.get_mut(pname).unwrap().data_mut()[i] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                close(g.data()[i], num),
                "{name}: {pname}[{i}]: analytic {} numeric {num}",
                g.data()[i]
            );
        }
    }
}

/// Sum of `out * weights` so every output entry gets a distinct cotangent.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).dims2().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, r, c, -1.0, 1.0));
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

type Case = (&'static str, fn(&mut ChaCha8Rng) -> Vec<Tensor>, fn(&mut Tape, &[Var]) -> Var);

fn primitive_cases() -> Vec<Case> {
    vec![
        ("matmul", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0), rand_tensor(r, 4, 2, -1.0, 1.0)], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted(t, y, 1)
        }),
        ("add-broadcast-row", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0), rand_tensor(r, 1, 4, -1.0, 1.0)], |t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            weighted(t, y, 2)
        }),
        ("sub-broadcast-col", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0), rand_tensor(r, 3, 1, -1.0, 1.0)], |t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            weighted(t, y, 3)
        }),
        ("mul", |r| vec![rand_tensor(r, 2, 3, -2.0, 2.0), rand_tensor(r, 2, 3, -2.0, 2.0)], |t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            weighted(t, y, 4)
        }),
        ("div", |r| vec![rand_tensor(r, 2, 3, -2.0, 2.0), rand_tensor(r, 2, 3, 0.5, 2.0)], |t, v| {
            let y = t.div(v[0], v[1]).unwrap();
            weighted(t, y, 5)
        }),
        ("neg-scale-shift", |r| vec![rand_tensor(r, 2, 2, -1.0, 1.0)], |t, v| {
            let a = t.neg(v[0]);
            let b = t.scale(a, 2.5);
            let y = t.add_scalar(b, -0.3);
            weighted(t, y, 6)
        }),
        ("exp", |r| vec![rand_tensor(r, 3, 3, -2.0, 2.0)], |t, v| {
            let y = t.exp(v[0]);
            weighted(t, y, 7)
        }),
        ("ln", |r| vec![rand_tensor(r, 3, 3, 0.2, 3.0)], |t, v| {
            let y = t.ln(v[0]);
            weighted(t, y, 8)
        }),
        ("square", |r| vec![rand_tensor(r, 3, 3, -2.0, 2.0)], |t, v| {
            let y = t.square(v[0]);
            weighted(t, y, 9)
        }),
        ("tanh", |r| vec![rand_tensor(r, 3, 3, -2.0, 2.0)], |t, v| {
            let y = t.tanh(v[0]);
            weighted(t, y, 10)
        }),
        ("softplus", |r| vec![rand_tensor(r, 3, 3, -4.0, 4.0)], |t, v| {
            let y = t.softplus(v[0]);
            weighted(t, y, 11)
        }),
        ("selu", |r| away_from_zero(rand_tensor(r, 3, 3, -2.0, 2.0)), |t, v| {
            let y = t.selu(v[0]);
            weighted(t, y, 12)
        }),
        ("leaky-relu", |r| away_from_zero(rand_tensor(r, 3, 3, -2.0, 2.0)), |t, v| {
            let y = t.leaky_relu(v[0], 0.01);
            weighted(t, y, 13)
        }),
        ("clamp", |r| vec![rand_tensor(r, 3, 3, -0.9, 0.9)], |t, v| {
            let y = t.clamp(v[0], -1.0, 1.0);
            weighted(t, y, 14)
        }),
        ("sum-mean", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0)], |t, v| {
            let s = t.sum(v[0]);
            let sq = t.square(v[0]);
            let m = t.mean(sq).unwrap();
            let y = t.mul(s, m).unwrap();
            t.sum(y)
        }),
        ("sum-axis-0", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0)], |t, v| {
            let y = t.sum_axis(v[0], 0).unwrap();
            weighted(t, y, 15)
        }),
        ("sum-axis-1", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0)], |t, v| {
            let y = t.sum_axis(v[0], 1).unwrap();
            weighted(t, y, 16)
        }),
        ("logsumexp-0", |r| vec![rand_tensor(r, 4, 3, -5.0, 5.0)], |t, v| {
            let y = t.logsumexp(v[0], 0).unwrap();
            weighted(t, y, 17)
        }),
        ("logsumexp-1", |r| vec![rand_tensor(r, 4, 3, -5.0, 5.0)], |t, v| {
            let y = t.logsumexp(v[0], 1).unwrap();
            weighted(t, y, 18)
        }),
        ("slice-concat", |r| vec![rand_tensor(r, 3, 5, -1.0, 1.0), rand_tensor(r, 3, 2, -1.0, 1.0)], |t, v| {
            let a = t.slice_cols(v[0], 1, 4).unwrap();
            let y = t.concat_cols(a, v[1]).unwrap();
            weighted(t, y, 19)
        }),
        ("reshape", |r| vec![rand_tensor(r, 3, 4, -1.0, 1.0)], |t, v| {
            let a = t.reshape(v[0], 2, 6).unwrap();
            let b = t.exp(a);
            weighted(t, b, 20)
        }),
        ("reused-node", |r| vec![rand_tensor(r, 2, 2, -1.0, 1.0)], |t, v| {
            let a = t.tanh(v[0]);
            let b = t.mul(a, v[0]).unwrap();
            let c = t.add(b, a).unwrap();
            weighted(t, c, 21)
        }),
    ]
}

/// Moves entries off the kinks of piecewise activations.
fn away_from_zero(mut t: Tensor) -> Vec<Tensor> {
    t.data_mut().iter_mut().for_each(|x| {
        if x.abs() < 0.05 {
            *x += 0.1;
        }
    });
    vec![t]
}

/// Smallest |pre-activation| over hidden units, recomputed by hand.
fn nearest_kink(mlp: &Mlp, store: &ParamStore, x: &Tensor) -> f64 {
    let spec = &mlp.spec;
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| (0..x.cols()).map(|c| x.get(r, c)).collect()).collect();
    let mut nearest = f64::INFINITY;
    for l in 0..spec.widths.len() - 2 {
        let w = store.get(&mlp.weight_name(l)).unwrap();
        let b = store.get(&mlp.bias_name(l)).unwrap();
        h = h
            .iter()
            .map(|row| {
                (0..w.cols())
                    .map(|j| {
                        let a = b.data()[j] + row.iter().enumerate().map(|(i, v)| v * w.get(i, j)).sum::<f64>();
                        nearest = nearest.min(a.abs());
                        let mut t = Tape::new();
                        let av = t.constant(Tensor::scalar(a));
                        let y = match spec.hidden {
                            Activation::Selu => t.selu(av),
                            Activation::LeakyRelu => t.leaky_relu(av, 0.01),
                            Activation::Softplus => t.softplus(av),
                            Activation::Linear => av,
                        };
                        t.value(y).item()
                    })
                    .collect()
            })
            .collect();
    }
    nearest
}

fn mlp_loss<'a>(mlp: &'a Mlp, x: &Tensor) -> impl Fn(&ParamStore) -> f64 + 'a {
    let x = x.clone();
    move |store: &ParamStore| {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = mlp.forward(&mut t, store, xv).unwrap();
        let s = t.square(y);
        let l = t.mean(s).unwrap();
        t.value(l).item()
    }
}

/// Runs every configuration and returns how many were checked.
pub fn finite_difference_suite() -> usize {
    let mut configs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    for (name, make, f) in primitive_cases() {
        for _ in 0..4 {
            let inputs = make(&mut rng);
            check_inputs(name, &inputs, &f);
            configs += 1;
        }
    }

    for act in [Activation::Softplus, Activation::Selu, Activation::LeakyRelu, Activation::Linear] {
        for trial in 0..3 {
            let mlp = Mlp::new(MlpSpec::new(vec![3, 5, 4, 2], act, Activation::Linear).unwrap(), "m").unwrap();
            let mut store = ParamStore::new();
            mlp.init(&mut store, &mut rng);
            let mut x = rand_tensor(&mut rng, 6, 3, -1.5, 1.5);
            while nearest_kink(&mlp, &store, &x) < 1e-3 {
                x = rand_tensor(&mut rng, 6, 3, -1.5, 1.5);
            }
            let loss = mlp_loss(&mlp, &x);
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let y = mlp.forward(&mut t, &store, xv).unwrap();
            let s = t.square(y);
            let l = t.mean(s).unwrap();
            let g = t.backward(l).unwrap();
            check_params(&format!("mlp {act:?} #{trial}"), &store, &loss, g.params());
            configs += 1;
        }
    }

    let upper_cases: Vec<(&str, usize, usize, PriorSpec, DecoderSpec)> = vec![
        ("ub gaussian identity", 3, 3, PriorSpec::FactorizedGaussian, DecoderSpec::Identity),
        (
            "ub gaussian mlp",
            3,
            1,
            PriorSpec::FactorizedGaussian,
            DecoderSpec::Mlp {
                hidden: vec![4],
                activation: Activation::Softplus,
            },
        ),
        ("ub flow identity", 2, 2, PriorSpec::AffineCouplingFlow { layers: 2, hidden: 4 }, DecoderSpec::Identity),
        (
            "ub flow mlp",
            2,
            2,
            PriorSpec::AffineCouplingFlow { layers: 3, hidden: 3 },
            DecoderSpec::Mlp {
                hidden: vec![3],
                activation: Activation::Selu,
            },
        ),
    ];
    for (name, n, m, prior, decoder) in upper_cases {
        for lambda in [0.5, 3.0] {
            let cfg = UpperConfig {
                prior: prior.clone(),
                decoder: decoder.clone(),
                encoder_hidden: vec![4],
                seed: configs as u64,
                ..UpperConfig::new(lambda, m)
            };
            let model = UpperBoundModel::new(n, &cfg).unwrap();
            let x = rand_tensor(&mut rng, 5, n, -1.5, 1.5);
            let eps = rand_tensor(&mut rng, 5, m, -1.5, 1.5);
            let loss = |store: &ParamStore| {
                let mut mm = model.clone();
                mm.params = store.clone();
                let mut t = Tape::new();
                let terms = mm.nelbo_with_noise(&mut t, &x, &eps).unwrap();
                t.value(terms.loss).item()
            };
            let mut t = Tape::new();
            let terms = model.nelbo_with_noise(&mut t, &x, &eps).unwrap();
            let g = t.backward(terms.loss).unwrap();
            check_params(&format!("{name} lambda={lambda}"), &model.params, &loss, g.params());
            configs += 1;
        }
    }

    // The C_k term differentiates through a frozen argmax; re-running the
    // climb under each perturbation checks the envelope-theorem gradient.
    let sources = [
        ("lb gaussian", Source::standard_gaussian(2, 5).unwrap()),
        ("lb banana", Source::default_banana(6)),
    ];
    for (name, source) in &sources {
        for (lambda, k) in [(0.5, 8), (2.0, 12)] {
            let cfg = LowerConfig {
                hidden: vec![4],
                seed: configs as u64,
                ..LowerConfig::new(lambda, k)
            };
            let mut model = LowerBoundModel::new(source.dimension(), &cfg).unwrap();
            model.alpha.seed(0.3);
            let mut stream = BatchStream::new(source, configs as u64);
            let batches: Vec<Tensor> = (0..2).map(|_| stream.next_batch(k).unwrap()).collect();
            let climb = HillClimb {
                tol: 1e-13,
                max_iter: 5000,
                merge_radius: 0.0,
            };
            let mut t = Tape::new();
            let terms = lower_objective(&mut model, &mut t, &batches, CkMode::Full, &climb).unwrap();
            let g = t.backward(terms.objective).unwrap();
            let loss = |store: &ParamStore| {
                let mut mm = model.clone();
                mm.params = store.clone();
                let mut t = Tape::new();
                let terms = lower_objective(&mut mm, &mut t, &batches, CkMode::Full, &climb).unwrap();
                t.value(terms.objective).item()
            };
            check_params(&format!("{name} lambda={lambda} k={k}"), &model.params, &loss, g.params());
            configs += 1;
        }
    }

    configs
}

pub fn adam_three_steps_match_closed_form() {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let grads = [0.5, -1.5, 2.0];
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(1.0));
    let mut expect = 1.0;
    for t in 1..=3 {
        let mut g = indexmap::IndexMap::new();
        g.insert("w".to_string(), Tensor::scalar(grads[t - 1]));
        store.adam_step(&g, &cfg).unwrap();
        // m_t = (1 - b1) sum_i b1^(t-i) g_i, and likewise v_t with g_i^2.
        let m: f64 = (1..=t).map(|i| (1.0 - cfg.beta1) * cfg.beta1.powi((t - i) as i32) * grads[i - 1]).sum();
        let v: f64 = (1..=t)
            .map(|i| (1.0 - cfg.beta2) * cfg.beta2.powi((t - i) as i32) * grads[i - 1].powi(2))
            .sum();
        let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
        let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
        expect -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        assert!((store.get("w").unwrap().item() - expect).abs() < 1e-14, "step {t}");
    }
    assert_eq!(store.step(), 3);
}

pub fn one_two_one_mlp_by_hand() {
    let mlp = Mlp::new(MlpSpec::new(vec![1, 2, 1], Activation::Softplus, Activation::Linear).unwrap(), "m").unwrap();
    let (w1, b1, w2, b2) = ([0.7, -1.3], [0.1, 0.4], [1.1, -0.6], 0.25);
    let mut store = ParamStore::new();
    store.insert("m.l0.w", Tensor::matrix(1, 2, w1.to_vec()).unwrap());
    store.insert("m.l0.b", Tensor::matrix(1, 2, b1.to_vec()).unwrap());
    store.insert("m.l1.w", Tensor::matrix(2, 1, w2.to_vec()).unwrap());
    store.insert("m.l1.b", Tensor::scalar(b2));
    assert_eq!(mlp.weight_name(0), "m.l0.w");
    let x = 0.8;
    let a = [w1[0] * x + b1[0], w1[1] * x + b1[1]];
    let h = [softplus(a[0]), softplus(a[1])];
    let y = w2[0] * h[0] + w2[1] * h[1] + b2;

    let mut t = Tape::new();
    let xv = t.constant(Tensor::scalar(x));
    let out = mlp.forward(&mut t, &store, xv).unwrap();
    assert!((t.value(out).item() - y).abs() < 1e-15);
    let loss = t.square(out);
    let g = t.backward(loss).unwrap();
    // L = y^2
    let dy = 2.0 * y;
    let db1 = [dy * w2[0] * sigmoid(a[0]), dy * w2[1] * sigmoid(a[1])];
    let expect = [
        ("m.l1.b", vec![dy]),
        ("m.l1.w", vec![dy * h[0], dy * h[1]]),
        ("m.l0.b", db1.to_vec()),
        ("m.l0.w", vec![db1[0] * x, db1[1] * x]),
    ];
    for (name, want) in expect {
        let got = g.param(name).unwrap().data();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{name}: {a} vs {b}");
        }
    }
}
