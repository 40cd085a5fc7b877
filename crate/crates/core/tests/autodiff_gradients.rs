use physio_core::autodiff::gradcheck::{check_gradients, GradCheckOptions};
use physio_core::autodiff::{
    gru_forward, mlp_forward, AutodiffError, GruSpec, MlpSpec, OutputTransform, ParamStore, Tape,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for transform in [
            OutputTransform::Identity,
            OutputTransform::Softplus,
            OutputTransform::Sigmoid,
        ] {
            let spec = MlpSpec::two_layer(4, 6, 3, 0.0, transform);
            let mut store = ParamStore::new(seed);
            spec.init("m", &mut store, &mut rng);
            let x = random_input(&mut rng, 2, 4);
            let report = check_gradients(
                &store,
                GradCheckOptions::default(),
                |tape: &mut Tape, pv| {
                    let xv = tape.constant(x.clone());
                    let y = mlp_forward(tape, &spec, pv, "m", xv)?;
                    Ok::<_, AutodiffError>(tape.sum(y))
                },
            )
            .unwrap();
            assert!(report.checked > 0);
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed} {transform:?}: {report:?}"
            );
        }
    }
}

#[test]
fn gru_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        for bidirectional in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let spec = GruSpec {
                input_dim: 3,
                hidden_dim: 4,
                num_layers: if bidirectional { 2 } else { 1 },
                bidirectional,
            };
            let mut store = ParamStore::new(seed);
            spec.init("g", &mut store, &mut rng);
            let steps: Vec<Tensor> = (0..5).map(|_| random_input(&mut rng, 2, 3)).collect();
            let report = check_gradients(
                &store,
                GradCheckOptions::default(),
                |tape: &mut Tape, pv| {
                    let seq: Vec<_> = steps.iter().map(|s| tape.constant(s.clone())).collect();
                    let out = gru_forward(tape, &spec, pv, "g", &seq, None)?;
                    let all = tape.concat(&out.states);
                    Ok::<_, AutodiffError>(tape.sum(all))
                },
            )
            .unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed} bi={bidirectional}: {report:?}"
            );
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let n = 10_000;
    let rate = 0.1;
    let x = 1.7;
    let mut tape = Tape::training(42);
    let v = tape.constant(Tensor::full(&[n], x));
    let d = tape.dropout(v, rate);
    let vals = tape.value(d).values();
    let mean = vals.iter().sum::<f64>() / n as f64;
    // each sample is x/keep with probability keep, else 0
    let keep = 1.0 - rate;
    let sd = x * ((1.0 - keep) / keep).sqrt();
    assert!(
        (mean - x).abs() < 3.0 * sd / (n as f64).sqrt(),
        "mean {mean}"
    );
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = GruSpec {
            input_dim: 3,
            hidden_dim: 5,
            num_layers: 2,
            bidirectional: true,
        };
        let mut store = ParamStore::new(9);
        spec.init("g", &mut store, &mut rng);
        let mlp = MlpSpec::two_layer(10, 8, 2, 0.2, OutputTransform::Softplus);
        mlp.init("m", &mut store, &mut rng);
        let mut tape = Tape::training(3);
        let pv = store.bind(&mut tape);
        let seq: Vec<_> = (0..7)
            .map(|_| tape.constant(random_input(&mut rng, 2, 3)))
            .collect();
        let out = gru_forward(&mut tape, &spec, &pv, "g", &seq, None).unwrap();
        let y = mlp_forward(&mut tape, &mlp, &pv, "m", out.final_state).unwrap();
        tape.value(y)
            .values()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
