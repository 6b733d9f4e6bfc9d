use flarecdr::models::{decide, Model, ModelConfig, MlpConfig, TransformerConfig};
use flarecdr::tensor::Tensor;
use flarecdr::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn small() -> TransformerConfig {
    TransformerConfig {
        seq_len: 6,
        n_features: 3,
        d_model: 8,
        heads: 2,
        encoder_blocks: 2,
        mlp_hidden: 10,
        dropout: 0.1,
        head_hidden: vec![12, 4],
    }
}

fn set_param(model: &mut Model, name: &str, f: impl Fn(usize, &mut f64)) {
    let store = model.params_mut();
    let id = (0..store.len())
        .map(flarecdr::tensor::ParamId)
        .find(|&id| store.name(id) == name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    store.get_mut(id).data_mut().iter_mut().enumerate().for_each(|(i, v)| f(i, v));
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = ModelConfig::Transformer(small());
    let a = Model::init(&cfg, 3).unwrap();
    let b = Model::init(&cfg, 3).unwrap();
    let c = Model::init(&cfg, 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn default_transformer_parameter_count() {
    // Counted by hand, layer by layer.
    let (t, f, d, mlp) = (40, 10, 16, 32);
    let token = f * d + d;
    let positions = t * d;
    let mha = 4 * (d * d + d);
    let block = mha + 2 * d + (d * mlp + mlp) + (mlp * d + d);
    let head = (2 * t * d + t * d * 64 + 64) + (2 * 64 + 64 * 16 + 16) + (2 * 16 + 16 * 2 + 2);
    let expected = token + positions + 4 * block + head;
    assert_eq!(expected, 53122);
    let model = Model::init(&ModelConfig::default(), 0).unwrap();
    assert_eq!(model.param_count(), expected);
}

#[test]
fn zero_final_layer_gives_even_odds() {
    for cfg in [
        ModelConfig::Transformer(small()),
        ModelConfig::Mlp(MlpConfig { seq_len: 6, n_features: 3, ..MlpConfig::default() }),
    ] {
        let mut model = Model::init(&cfg, 1).unwrap();
        let last = match &cfg {
            ModelConfig::Transformer(_) => "head2.dense",
            ModelConfig::Mlp(_) => "dense1",
        };
        set_param(&mut model, &format!("{last}.w"), |_, v| *v = 0.0);
        set_param(&mut model, &format!("{last}.b"), |_, v| *v = 0.0);
        let x = random(&[6, 3], 9);
        assert_eq!(model.predict_distribution(&[&x]).unwrap()[0], [0.5, 0.5]);
        assert_eq!(model.predict_proba(&x).unwrap(), 0.5);
        assert_eq!(model.predict(&x, 0.5).unwrap(), 1);
    }
}

#[test]
fn positive_bias_shift_raises_probability() {
    let cfg = ModelConfig::Transformer(small());
    let mut model = Model::init(&cfg, 2).unwrap();
    let x = random(&[6, 3], 5);
    let before = model.predict_proba(&x).unwrap();
    set_param(&mut model, "head2.dense.b", |i, v| {
        if i == 1 {
            *v += 0.7
        }
    });
    assert!(model.predict_proba(&x).unwrap() > before);
}

#[test]
fn eval_output_is_batch_invariant_and_normalized() {
    let cfg = ModelConfig::Transformer(small());
    let mut model = Model::init(&cfg, 6).unwrap();
    // Move the running statistics away from their initial values.
    let mut tape = flarecdr::tensor::Tape::new();
    let bound = model.params().bind(&mut tape);
    let xv = tape.constant(random(&[5, 6, 3], 1));
    model
        .forward_train(&mut tape, &bound, xv, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();

    let xs: Vec<Tensor> = (0..5).map(|i| random(&[6, 3], 100 + i)).collect();
    let refs: Vec<&Tensor> = xs.iter().collect();
    let batch = model.predict_distribution(&refs).unwrap();
    let mut reversed = refs.clone();
    reversed.reverse();
    let rev = model.predict_distribution(&reversed).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let single = model.predict_distribution(&[x]).unwrap()[0];
        assert_eq!(single, batch[i]);
        assert_eq!(single, rev[4 - i]);
        assert!((single[0] + single[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_blocks_is_a_head_over_tokens() {
    let cfg = TransformerConfig { encoder_blocks: 0, ..small() };
    let model = Model::init(&ModelConfig::Transformer(cfg), 0).unwrap();
    let p = model.predict_proba(&random(&[6, 3], 2)).unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn wrong_input_shape_rejected() {
    let model = Model::init(&ModelConfig::Transformer(small()), 0).unwrap();
    assert!(matches!(model.predict_proba(&random(&[6, 4], 1)), Err(Error::Shape(_))));
}

#[test]
fn invalid_config_rejected() {
    let cfg = TransformerConfig { heads: 3, ..small() };
    assert!(matches!(Model::init(&ModelConfig::Transformer(cfg), 0), Err(Error::Config(_))));
}

#[test]
fn threshold_rule() {
    assert_eq!(decide(0.5, 0.5).unwrap(), 1);
    assert_eq!(decide(0.49, 0.5).unwrap(), 0);
    assert_eq!(decide(0.0, 0.0).unwrap(), 1);
    assert!(matches!(decide(0.3, 1.5), Err(Error::Config(_))));
    assert!(matches!(decide(0.3, -0.1), Err(Error::Config(_))));
}

#[test]
fn snapshot_round_trip_is_exact() {
    let cfg = ModelConfig::Transformer(small());
    let mut model = Model::init(&cfg, 8).unwrap();
    let mut tape = flarecdr::tensor::Tape::new();
    let bound = model.params().bind(&mut tape);
    let xv = tape.constant(random(&[4, 6, 3], 3));
    model
        .forward_train(&mut tape, &bound, xv, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let json = serde_json::to_string(&model).unwrap();
    let back: Model = serde_json::from_str(&json).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.running_stats(), model.running_stats());
    let x = random(&[6, 3], 4);
    assert_eq!(back.predict_proba(&x).unwrap(), model.predict_proba(&x).unwrap());
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
}
