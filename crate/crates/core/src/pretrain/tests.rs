use super::*;
use crate::backbone::model::ParamCache;
use crate::numcore::tape::Tape;

fn test_signal(leads: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = stream(seed, StreamTag::Synth, &[1000]);
    (0..leads)
        .map(|_| (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
        .collect()
}

fn small_model(depth: usize, seed: u64) -> VitModel<f64> {
    let config = VitConfig {
        leads: 2,
        signal_len: 200,
        patch_len: 50,
        embed_dim: 8,
        depth,
        heads: 2,
        mlp_ratio: 2,
        dropout: 0.0,
    };
    let decoder = DecoderConfig {
        dim: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
    };
    VitModel::new(config, Some(decoder), seed).unwrap()
}

fn plan_for(model: &VitModel<f64>, seed: u64, ratio: f64) -> MaskPlan {
    let mut rng = stream(seed, StreamTag::Mask, &[0]);
    sample_mask(&mut rng, model.config.leads, model.config.num_patches(), ratio).unwrap()
}

#[test]
fn visible_token_counts() {
    // 1 masked of N=20 leaves 19 + 2 tokens per lead
    let config = VitConfig {
        leads: 2,
        signal_len: 1000,
        patch_len: 50,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        dropout: 0.0,
    };
    let model: VitModel<f64> = VitModel::new(config, None, 1).unwrap();
    let signal = test_signal(2, 1000, 2);
    let patches64 = patchify(&signal, 50).unwrap();
    let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
    let plan = MaskPlan {
        num_patches: 20,
        visible: vec![(0..19).collect(), (1..20).collect()],
        masked: vec![vec![19], vec![0]],
    };
    let mut tape = Tape::new();
    let mut cache = ParamCache::new(&model.store);
    let enc = encode_visible(
        &model,
        &mut tape,
        &mut cache,
        &patches,
        &plan,
        &mut Mode::Eval,
        CaptureOpts::none(),
    )
    .unwrap();
    assert_eq!(tape.rows(enc.encoded), 2 * (19 + 2));
    assert_eq!(enc.layout.rows_per_lead(), 21);
}

#[test]
fn depth_zero_visible_encoding_matches_full_rows() {
    let model = small_model(0, 3);
    let signal = test_signal(2, 200, 4);
    let patches64 = patchify(&signal, 50).unwrap();
    let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
    let plan = plan_for(&model, 5, 0.5);

    let mut tape = Tape::new();
    let mut cache = ParamCache::new(&model.store);
    let enc = encode_visible(
        &model,
        &mut tape,
        &mut cache,
        &patches,
        &plan,
        &mut Mode::Eval,
        CaptureOpts::none(),
    )
    .unwrap();
    let vis = tape.value(enc.encoded);

    let full_tokens = model.embed_record(&mut tape, &mut cache, &patches).unwrap();
    let full = tape.value(full_tokens);

    let n2 = model.config.tokens_per_lead();
    let mut vis_row = 0;
    for c in 0..model.config.leads {
        let mut rows = vec![0usize];
        rows.extend(plan.visible[c].iter().map(|&i| i + 1));
        rows.push(n2 - 1);
        for &pos in &rows {
            for j in 0..model.config.embed_dim {
                assert_eq!(
                    vis.at(vis_row, j),
                    full.at(c * n2 + pos, j),
                    "lead {c} pos {pos} dim {j}"
                );
            }
            vis_row += 1;
        }
    }
}

#[test]
fn zero_decoder_weights_reconstruct_bias() {
    let mut model = small_model(1, 6);
    // zero every decoder-side weight, then set the output bias
    let names: Vec<String> = model
        .store
        .iter()
        .map(|p| p.name.clone())
        .filter(|n| n.starts_with("dec."))
        .collect();
    for name in names {
        let idx = model.store.index_of(&name).unwrap();
        let shape = model.store.value(idx).shape().to_vec();
        if name.ends_with("gamma") {
            continue; // norm gains stay at one
        }
        model.store.load_value(&name, Tensor::zeros(shape)).unwrap();
    }
    let bias = 0.37;
    let p = model.config.patch_len;
    model
        .store
        .load_value(
            "dec.out.b_r",
            Tensor::matrix(1, p, vec![bias; p]).unwrap(),
        )
        .unwrap();

    let signal = test_signal(2, 200, 7);
    let patches64 = patchify(&signal, 50).unwrap();
    let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
    let plan = plan_for(&model, 8, 0.5);
    let mut tape = Tape::new();
    let mut cache = ParamCache::new(&model.store);
    let enc = encode_visible(
        &model,
        &mut tape,
        &mut cache,
        &patches,
        &plan,
        &mut Mode::Eval,
        CaptureOpts::none(),
    )
    .unwrap();
    let pred = decode_and_reconstruct(&model, &mut tape, &mut cache, enc.encoded, &plan, &mut Mode::Eval)
        .unwrap();
    for &v in tape.data(pred) {
        assert!((v - bias).abs() < 1e-12, "expected bias {bias}, got {v}");
    }
}

#[test]
fn swapping_masked_slots_permutes_predictions() {
    let model = small_model(1, 9);
    let signal = test_signal(2, 200, 10);
    let patches64 = patchify(&signal, 50).unwrap();
    let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();

    let plan_a = MaskPlan {
        num_patches: 4,
        visible: vec![vec![0, 2], vec![0, 1]],
        masked: vec![vec![1, 3], vec![2, 3]],
    };
    // same sets, masked order swapped on lead 0
    let mut plan_b = plan_a.clone();
    plan_b.masked[0] = vec![3, 1];

    let run = |plan: &MaskPlan| -> Vec<f64> {
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let enc = encode_visible(
            &model,
            &mut tape,
            &mut cache,
            &patches,
            plan,
            &mut Mode::Eval,
            CaptureOpts::none(),
        )
        .unwrap();
        let pred =
            decode_and_reconstruct(&model, &mut tape, &mut cache, enc.encoded, plan, &mut Mode::Eval)
                .unwrap();
        tape.data(pred).to_vec()
    };
    let a = run(&plan_a);
    let b = run(&plan_b);
    let p = model.config.patch_len;
    // rows 0,1 of lead 0 swap; lead 1 rows unchanged
    assert_eq!(&a[0..p], &b[p..2 * p]);
    assert_eq!(&a[p..2 * p], &b[0..p]);
    assert_eq!(&a[2 * p..], &b[2 * p..]);
}

#[test]
fn reconstruction_loss_conventions() {
    let mut tape = Tape::<f64>::new();
    // X_hat == X -> 0
    let x = Tensor::matrix(1, 50, vec![0.3; 50]).unwrap();
    let xhat = tape.input(&x);
    let zero = reconstruction_loss(&mut tape, xhat, &x).unwrap();
    assert_eq!(tape.data(zero)[0], 0.0);

    // all-ones error over one masked patch of length 50 -> 1.0
    let target = Tensor::matrix(1, 50, vec![0.0; 50]).unwrap();
    let ones = tape.input_matrix(1, 50, vec![1.0; 50]);
    let one = reconstruction_loss(&mut tape, ones, &target).unwrap();
    assert!((tape.data(one)[0] - 1.0).abs() < 1e-15);

    // doubling the error scales the loss by 4
    let twos = tape.input_matrix(1, 50, vec![2.0; 50]);
    let four = reconstruction_loss(&mut tape, twos, &target).unwrap();
    assert!((tape.data(four)[0] - 4.0).abs() < 1e-12);

    // empty mask set is a config error
    let empty = Tensor::matrix(0, 50, vec![]).unwrap();
    let pred0 = tape.input_matrix(0, 50, vec![]);
    assert!(reconstruction_loss(&mut tape, pred0, &empty).is_err());
}

#[test]
fn targets_only_read_masked_rows() {
    let signal = test_signal(1, 200, 11);
    let patches = patchify(&signal, 50).unwrap();
    let plan = MaskPlan {
        num_patches: 4,
        visible: vec![vec![0, 2]],
        masked: vec![vec![1, 3]],
    };
    let t: Tensor<f64> = masked_targets(&patches, &plan);
    assert_eq!(t.rows(), 2);
    assert_eq!(t.row(0), patches[0].row(1));
    assert_eq!(t.row(1), patches[0].row(3));
}

#[test]
fn decoder_is_lead_isolated() {
    // perturbing one lead's encoder output only changes that lead's output
    let model = small_model(1, 12);
    let plan = plan_for(&model, 13, 0.5);
    let s = plan.visible_count();
    let rows = model.config.leads * (s + 2);
    let d = model.config.embed_dim;
    let base: Vec<f64> = (0..rows * d).map(|i| ((i * 29) % 17) as f64 * 0.05).collect();

    let run = |data: Vec<f64>| -> Vec<f64> {
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let enc = tape.input_matrix(rows, d, data);
        let pred =
            decode_and_reconstruct(&model, &mut tape, &mut cache, enc, &plan, &mut Mode::Eval)
                .unwrap();
        tape.data(pred).to_vec()
    };
    let a = run(base.clone());
    let mut perturbed = base;
    perturbed[0] += 0.5; // lead 0, first SEP row
    let b = run(perturbed);

    let p = model.config.patch_len;
    let per_lead = plan.masked_count() * p;
    let lead0_changed = a[..per_lead]
        .iter()
        .zip(&b[..per_lead])
        .any(|(x, y)| x != y);
    let lead1_unchanged = a[per_lead..]
        .iter()
        .zip(&b[per_lead..])
        .all(|(x, y)| x == y);
    assert!(lead0_changed);
    assert!(lead1_unchanged);
}

#[test]
fn pooling_averages_captured_layers() {
    let model = small_model(2, 14);
    let signal = test_signal(2, 200, 15);
    let patches64 = patchify(&signal, 50).unwrap();
    let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
    let plan = plan_for(&model, 16, 0.5);
    let mut tape = Tape::new();
    let mut cache = ParamCache::new(&model.store);
    let enc = encode_visible(
        &model,
        &mut tape,
        &mut cache,
        &patches,
        &plan,
        &mut Mode::Eval,
        CaptureOpts::hidden_only(),
    )
    .unwrap();
    let pooled = pool_layers(&mut tape, &enc.capture).unwrap();
    let h0 = tape.value(enc.capture.hidden[0]);
    let h1 = tape.value(enc.capture.hidden[1]);
    let p = tape.value(pooled);
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            let manual = (h0.at(i, j) + h1.at(i, j)) / 2.0;
            assert!((p.at(i, j) - manual).abs() < 1e-15);
        }
    }
}

#[test]
fn ipastmem_depth_one_is_bitwise_stmem() {
    let signal = test_signal(2, 200, 17);
    let run = |scheme: Scheme| -> f64 {
        let model = small_model(1, 18);
        let plan = plan_for(&model, 19, 0.5);
        let mut tape = Tape::new();
        let loss =
            pretrain_step(&model, &mut tape, &signal, &plan, scheme, &mut Mode::Eval).unwrap();
        tape.data(loss)[0]
    };
    let a = run(Scheme::Stmem);
    let b = run(Scheme::Ipastmem);
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn zero_lr_leaves_weights_unchanged() {
    let mut model = small_model(1, 20);
    let before = model.store.checksum();
    let mut opt = AdamW::new(AdamWConfig::default(), &model.store);
    let config = PretrainConfig {
        epochs: 1,
        batch_size: 4,
        base_lr: 0.0,
        warmup_epochs: 0,
        mask_ratio: 0.5,
        mode: Scheme::Stmem,
        seed: 21,
        optimizer: AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        checkpoint_every: 0,
    };
    let signals: Vec<Vec<Vec<f64>>> = (0..4).map(|i| test_signal(2, 200, 100 + i)).collect();
    pretrain_loop(&mut model, &mut opt, &config, &signals, 0, |_, _, _| Ok(())).unwrap();
    assert_eq!(model.store.checksum(), before);
}

#[test]
fn same_seed_reproduces_loss_curve_bitwise() {
    let config = PretrainConfig {
        epochs: 3,
        batch_size: 3,
        base_lr: 1e-3,
        warmup_epochs: 1,
        mask_ratio: 0.5,
        mode: Scheme::Stmem,
        seed: 22,
        optimizer: AdamWConfig::default(),
        checkpoint_every: 0,
    };
    let signals: Vec<Vec<Vec<f64>>> = (0..6).map(|i| test_signal(2, 200, 200 + i)).collect();
    let run = || {
        let mut model = small_model(1, 23);
        let mut opt = AdamW::new(config.optimizer, &model.store);
        pretrain_loop(&mut model, &mut opt, &config, &signals, 0, |_, _, _| Ok(()))
            .unwrap()
            .rows
    };
    let a = run();
    let b = run();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
    }
}

#[test]
fn resume_replays_uninterrupted_trajectory_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("mid.ckpt");
    let config = PretrainConfig {
        epochs: 4,
        batch_size: 3,
        base_lr: 1e-3,
        warmup_epochs: 1,
        mask_ratio: 0.5,
        mode: Scheme::Stmem,
        seed: 24,
        optimizer: AdamWConfig::default(),
        checkpoint_every: 0,
    };
    let signals: Vec<Vec<Vec<f64>>> = (0..6).map(|i| test_signal(2, 200, 300 + i)).collect();

    // straight-through run
    let mut model_a = small_model(1, 25);
    let mut opt_a = AdamW::new(config.optimizer, &model_a.store);
    let full = pretrain_loop(&mut model_a, &mut opt_a, &config, &signals, 0, |_, _, _| Ok(()))
        .unwrap()
        .rows;

    // run 2 epochs, checkpoint, reload, run the remaining 2
    let mut model_b = small_model(1, 25);
    let mut opt_b = AdamW::new(config.optimizer, &model_b.store);
    let mut first = pretrain_loop(
        &mut model_b,
        &mut opt_b,
        &PretrainConfig {
            epochs: 2,
            ..config.clone()
        },
        &signals,
        0,
        |_, _, _| Ok(()),
    )
    .unwrap()
    .rows;
    save_train_checkpoint(&ckpt, &model_b, &opt_b, &config, 2).unwrap();
    let (mut model_c, mut opt_c, next) =
        load_train_checkpoint::<f64>(&ckpt, config.optimizer).unwrap();
    assert_eq!(next, 2);
    let rest = pretrain_loop(&mut model_c, &mut opt_c, &config, &signals, next, |_, _, _| Ok(()))
        .unwrap()
        .rows;
    first.extend(rest);

    assert_eq!(full.len(), first.len());
    for (x, y) in full.iter().zip(&first) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits(), "row {:?} vs {:?}", x, y);
    }
    assert_eq!(model_a.store.checksum(), model_c.store.checksum());
}
