//! Fits a small softplus MLP to `sin(3x)` with the tape and Adam.
//!
//! Usage: `cargo run --release --example autodiff_regression`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rd_sandwich::autodiff::{Activation, AdamConfig, Mlp, MlpSpec, ParamStore, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mlp = Mlp::new(MlpSpec::new(vec![1, 32, 32, 1], Activation::Softplus, Activation::Linear)?, "f")?;
    let mut store = ParamStore::new();
    mlp.init(&mut store, &mut rng);
    let adam = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };

    for step in 0..=2000 {
        let xs: Vec<f64> = (0..128).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(&xs));
        let y = tape.constant(Tensor::column(&ys));
        let pred = mlp.forward(&mut tape, &store, x)?;
        let err = tape.sub(pred, y)?;
        let sq = tape.square(err);
        let loss = tape.mean(sq)?;
        if step % 250 == 0 {
            println!("step {step:>5}  mse {:.5}", tape.value(loss).item());
        }
        let grads = tape.backward(loss)?;
        store.adam_step(grads.params(), &adam)?;
    }

    let probe = Tensor::column(&[-1.5, -0.5, 0.0, 0.5, 1.5]);
    let out = mlp.eval(&store, &probe)?;
    for (x, y) in probe.data().iter().zip(out.data()) {
        println!("f({x:+.1}) = {y:+.4}   sin(3x) = {:+.4}", (3.0 * x).sin());
    }
    Ok(())
}
