//! Forward-pass structure checks: permutation invariances, masking semantics
//! against a reference full-attention computation, the regulariser's hand
//! cases, and checkpoint persistence.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use pfbo_core::prior::HyperPrior;
use pfbo_core::pt::model::{forward_logits, zscore_stats, PtBinding, PtNet, PtParams};
use pfbo_core::pt::reg::{epsilon_pairs, regulariser};
use pfbo_core::pt::{checkpoint, PtConfig, PtModel, PtVariant};
use pfbo_core::riemann::{RiemannPosterior, RiemannSpec};
use pfbo_tensor::{Dtype, Graph, Tensor};

fn tiny_cfg() -> PtConfig {
    PtConfig {
        emb: 16,
        layers: 2,
        heads: 2,
        n_buckets: 10,
        dataset_size: 24,
        batch_size: 2,
        epochs: 2,
        warmup_epochs: 1,
        ..PtConfig::desk_scale(1)
    }
    .with_precision(Dtype::F64)
}

fn tiny_model(seed: u64) -> PtModel {
    let cfg = tiny_cfg();
    let hp = HyperPrior::default_for_dim(cfg.d);
    PtModel::init(&cfg, &hp, seed).unwrap()
}

fn points(vals: &[f64]) -> Tensor<f64> {
    Tensor::from_f64_slice(&[vals.len(), 1], vals).unwrap()
}

#[test]
fn query_permutation_permutes_outputs_exactly() {
    let model = tiny_model(1);
    let obs_x = points(&[0.1, 0.5, 0.9]);
    let obs_y = [0.4, -1.0, 0.8];
    let pred = points(&[0.2, 0.6, 0.8, 0.35]);
    let post = model.posterior(&obs_x, &obs_y, &pred).unwrap();

    let perm = [2usize, 0, 3, 1];
    let pred_p = points(&[0.8, 0.2, 0.35, 0.6]);
    let post_p = model.posterior(&obs_x, &obs_y, &pred_p).unwrap();
    for (new_row, &old) in perm.iter().enumerate() {
        assert_eq!(post_p.row(new_row), post.row(old), "row {} must match bit for bit", old);
    }
}

#[test]
fn observation_order_does_not_change_posteriors() {
    let model = tiny_model(2);
    let obs_x = points(&[0.1, 0.5, 0.9, 0.3]);
    let obs_y = [0.4, -1.0, 0.8, 0.05];
    let pred = points(&[0.25, 0.7]);
    let a = model.posterior(&obs_x, &obs_y, &pred).unwrap();

    let obs_x_shuffled = points(&[0.9, 0.3, 0.1, 0.5]);
    let obs_y_shuffled = [0.8, 0.05, 0.4, -1.0];
    let b = model.posterior(&obs_x_shuffled, &obs_y_shuffled, &pred).unwrap();
    for j in 0..2 {
        for (p, q) in a.row(j).iter().zip(b.row(j)) {
            assert!(
                (p - q).abs() < 1e-12,
                "row {}: {} vs {} after shuffling observations",
                j,
                p,
                q
            );
        }
    }
}

#[test]
fn duplicate_queries_get_identical_rows() {
    let model = tiny_model(3);
    let obs_x = points(&[0.2, 0.8]);
    let obs_y = [1.0, -0.5];
    let pred = points(&[0.4, 0.4]);
    let post = model.posterior(&obs_x, &obs_y, &pred).unwrap();
    assert_eq!(post.row(0), post.row(1));
}

#[test]
fn empty_observations_yield_the_learned_prior() {
    let model = tiny_model(4);
    let obs_x = Tensor::<f64>::zeros(&[0, 1]);
    let pred = points(&[0.3, 0.9]);
    let post = model.posterior(&obs_x, &[], &pred).unwrap();
    for j in 0..2 {
        let sum: f64 = post.row(j).iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    // with no obs statistics the borders are the raw z-spec
    assert_eq!(post.spec().borders(), model.spec_z().borders());
}

#[test]
fn forward_rejects_bad_inputs() {
    let model = tiny_model(5);
    let obs_x = points(&[0.2]);
    // outside the unit cube
    assert!(model.posterior(&points(&[1.4]), &[0.0], &points(&[0.5])).is_err());
    // dimension mismatch
    let wide = Tensor::from_f64_slice(&[1, 2], &[0.1, 0.2]).unwrap();
    assert!(model.posterior(&wide, &[0.0], &points(&[0.5])).is_err());
    // obs/target length mismatch
    assert!(model.posterior(&obs_x, &[0.0, 1.0], &points(&[0.5])).is_err());
}

/// Reference implementation: one [n_tokens, n_tokens] attention with an
/// explicit mask (obs attend to obs; queries attend to obs and themselves).
/// The production two-block computation must agree to float precision.
#[test]
fn two_block_attention_matches_full_masked_attention() {
    let cfg = PtConfig {
        emb: 8,
        layers: 1,
        heads: 2,
        n_buckets: 6,
        ..tiny_cfg()
    };
    let params = PtParams::<f64>::init(&cfg, 9);
    let n_obs = 3;
    let n_pred = 2;
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let obs_x = Tensor::from_fn(&[n_obs, 1], |_| rng.random::<f64>());
    let obs_y: Vec<f64> = (0..n_obs).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pred_x = Tensor::from_fn(&[n_pred, 1], |_| rng.random::<f64>());

    // production path
    let mut g = Graph::<f64>::new();
    let binding = PtBinding::bind(&mut g, &params, false);
    let logits = forward_logits(&mut g, &binding, &cfg, &obs_x, &obs_y, &pred_x).unwrap();
    let ours = g.value(logits).data().to_vec();

    // reference: dense masked attention over concatenated tokens
    let reference = {
        let mut g = Graph::<f64>::new();
        let n_tok = n_obs + n_pred;
        let emb = cfg.emb;
        let dh = cfg.head_dim();
        // embed tokens
        let xw = g.constant(params.x_embed_w.clone());
        let xb = g.constant(params.x_embed_b.clone());
        let yw = g.constant(params.y_embed_w.clone());
        let yb = g.constant(params.y_embed_b.clone());
        let nt = g.constant(params.no_target.clone());
        let mut all_x = obs_x.data().to_vec();
        all_x.extend_from_slice(pred_x.data());
        let all_x = g.constant(Tensor::new(vec![n_tok, 1], all_x).unwrap());
        let xe = g.matmul(all_x, xw).unwrap();
        let xe = g.add(xe, xb).unwrap();
        let ycol = g.constant(Tensor::new(vec![n_obs, 1], obs_y.clone()).unwrap());
        let ye = g.matmul(ycol, yw).unwrap();
        let ye = g.add(ye, yb).unwrap();
        // add y-embedding to obs rows, no-target vector to query rows
        let mut tok = g.value(xe).clone();
        let yev = g.value(ye).clone();
        let ntv = params.no_target.clone();
        for i in 0..n_tok {
            for j in 0..emb {
                let add = if i < n_obs { yev.data()[i * emb + j] } else { ntv.data()[j] };
                tok.data_mut()[i * emb + j] += add;
            }
        }
        let mut state = g.constant(tok);
        let blk = &params.blocks[0];
        // attention with explicit mask
        let wq = g.constant(blk.wq.clone());
        let bq = g.constant(blk.bq.clone());
        let wk = g.constant(blk.wk.clone());
        let bk = g.constant(blk.bk.clone());
        let wv = g.constant(blk.wv.clone());
        let bv = g.constant(blk.bv.clone());
        let wo = g.constant(blk.wo.clone());
        let bo = g.constant(blk.bo.clone());
        let q = g.matmul(state, wq).unwrap();
        let q = g.add(q, bq).unwrap();
        let k = g.matmul(state, wk).unwrap();
        let k = g.add(k, bk).unwrap();
        let v = g.matmul(state, wv).unwrap();
        let v = g.add(v, bv).unwrap();
        let mut mask = vec![false; n_tok * n_tok];
        for i in 0..n_tok {
            for j in 0..n_tok {
                let allowed = if i < n_obs { j < n_obs } else { j < n_obs || j == i };
                mask[i * n_tok + j] = !allowed;
            }
        }
        let mut heads = Vec::new();
        for h in 0..cfg.heads {
            let qs = g.slice_cols(q, h * dh, (h + 1) * dh).unwrap();
            let ks = g.slice_cols(k, h * dh, (h + 1) * dh).unwrap();
            let vs = g.slice_cols(v, h * dh, (h + 1) * dh).unwrap();
            let scores = g.matmul_tb(qs, ks).unwrap();
            let scores = g.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
            let masked = g.masked_fill(scores, mask.clone(), -1e9).unwrap();
            let attn = g.softmax_rows(masked).unwrap();
            heads.push(g.matmul(attn, vs).unwrap());
        }
        let ctx = g.concat_cols(&heads).unwrap();
        let attn_out = g.matmul(ctx, wo).unwrap();
        let attn_out = g.add(attn_out, bo).unwrap();
        let res = g.add(state, attn_out).unwrap();
        let ln1g = g.constant(blk.ln1_g.clone());
        let ln1b = g.constant(blk.ln1_b.clone());
        state = g.layer_norm(res, ln1g, ln1b, 1e-5).unwrap();
        // feed-forward
        let f1w = g.constant(blk.ff1_w.clone());
        let f1b = g.constant(blk.ff1_b.clone());
        let f2w = g.constant(blk.ff2_w.clone());
        let f2b = g.constant(blk.ff2_b.clone());
        let h1 = g.matmul(state, f1w).unwrap();
        let h1 = g.add(h1, f1b).unwrap();
        let h1 = g.gelu(h1);
        let h2 = g.matmul(h1, f2w).unwrap();
        let h2 = g.add(h2, f2b).unwrap();
        let res2 = g.add(state, h2).unwrap();
        let ln2g = g.constant(blk.ln2_g.clone());
        let ln2b = g.constant(blk.ln2_b.clone());
        let normed = g.layer_norm(res2, ln2g, ln2b, 1e-5).unwrap();
        let hw = g.constant(params.head_w.clone());
        let hb = g.constant(params.head_b.clone());
        let query_rows = g.select_rows(normed, (n_obs..n_tok).collect()).unwrap();
        let logits = g.matmul(query_rows, hw).unwrap();
        let logits = g.add(logits, hb).unwrap();
        g.value(logits).data().to_vec()
    };

    assert_eq!(ours.len(), reference.len());
    for (a, b) in ours.iter().zip(reference.iter()) {
        assert!((a - b).abs() < 1e-10, "two-block {} vs reference {}", a, b);
    }
}

#[test]
fn zscore_stats_identity_without_observations() {
    assert_eq!(zscore_stats(&[]), (0.0, 1.0));
    let (m, s) = zscore_stats(&[3.0]);
    assert_eq!(m, 3.0);
    assert_eq!(s, 1e-6, "single observation floors the std");
}

// ---- regulariser ----------------------------------------------------------

fn make_post(borders: Vec<f64>, rows: Vec<f64>) -> RiemannPosterior {
    RiemannPosterior::new(Arc::new(RiemannSpec::from_borders(borders).unwrap()), rows).unwrap()
}

#[test]
fn regulariser_zero_for_identical_posteriors() {
    let post = make_post(vec![0.0, 0.5, 1.0], vec![0.3, 0.7, 0.3, 0.7]);
    let x = points(&[0.40, 0.42]);
    assert_eq!(regulariser(&post, &x, 0.05).unwrap(), 0.0);
}

#[test]
fn pair_at_exact_radius_has_zero_weight() {
    let x = points(&[0.30, 0.35]);
    let pairs = epsilon_pairs(&x, 0.05);
    assert_eq!(pairs.len(), 2, "ordered pair in each direction");
    for p in pairs {
        assert!((p.weight - 0.0).abs() < 1e-12);
    }
}

#[test]
fn regulariser_hand_case() {
    // distance eps/2 -> weight 1/2; KL([1,0] || [0.5,0.5]) = ln 2, so that
    // ordered pair contributes 0.5 ln 2
    let eps = 0.1;
    let x = points(&[0.30, 0.35]);
    let pairs = epsilon_pairs(&x, eps);
    for p in &pairs {
        assert!((p.weight - 0.5).abs() < 1e-12);
    }

    let post = make_post(vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 0.5, 0.5]);
    let forward = 0.5 * 2f64.ln();
    // reverse direction hits the probability floor: 0.5 ln(0.5/1e-12)... the
    // floored q is only applied to the zero bucket
    let reverse = 0.5 * (0.5 * (0.5f64 / 1.0).ln() + 0.5 * (0.5f64 / 1e-12).ln());
    let expected = (forward + reverse) / 2.0;
    let got = regulariser(&post, &x, eps).unwrap();
    assert!((got - expected).abs() < 1e-9, "got {} expected {}", got, expected);
}

#[test]
fn regulariser_monotone_in_epsilon() {
    // fixed posteriors; growing the ball only adds non-negative weighted terms
    let mut rng = ChaCha12Rng::seed_from_u64(20);
    let n = 12;
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let x = points(&xs);
    let rows: Vec<f64> = (0..n)
        .flat_map(|_| {
            let a: f64 = rng.random_range(0.05..0.95);
            vec![a, 1.0 - a]
        })
        .collect();
    let post = make_post(vec![0.0, 0.5, 1.0], rows);
    // raw (unnormalized) penalty must be monotone in epsilon
    let raw = |eps: f64| -> f64 {
        epsilon_pairs(&x, eps)
            .iter()
            .map(|p| p.weight * pfbo_core::riemann::kl_rows(post.row(p.j), post.row(p.i)))
            .sum()
    };
    let mut prev = 0.0;
    for eps in [0.01, 0.05, 0.1, 0.2, 0.5, 1.0] {
        let v = raw(eps);
        assert!(v >= prev - 1e-12, "raw penalty decreased: {} after {}", v, prev);
        prev = v;
    }
}

// ---- checkpoint persistence -------------------------------------------------

#[test]
fn checkpoint_round_trips_bit_exactly() {
    for precision in [Dtype::F32, Dtype::F64] {
        let cfg = tiny_cfg().with_precision(precision).with_variant(PtVariant::PtNuR);
        let hp = HyperPrior::default_for_dim(1);
        let model = PtModel::init(&cfg, &hp, 77).unwrap();
        let mut bytes = Vec::new();
        checkpoint::write_to(&model, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"PFBO");
        let loaded = checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        checkpoint::write_to(&loaded, &mut bytes2).unwrap();
        assert_eq!(bytes, bytes2, "save -> load -> save must reproduce the file");
        assert_eq!(loaded.cfg(), model.cfg());
        assert_eq!(loaded.train_seed(), model.train_seed());

        // posteriors from the reloaded model are bit-identical
        let obs_x = points(&[0.2, 0.7]);
        let obs_y = [0.5, -0.25];
        let pred = points(&[0.4]);
        let a = model.posterior(&obs_x, &obs_y, &pred).unwrap();
        let b = loaded.posterior(&obs_x, &obs_y, &pred).unwrap();
        assert_eq!(a.row(0), b.row(0));
    }
}

#[test]
fn checkpoint_rejects_corruption() {
    let model = tiny_model(8);
    let mut bytes = Vec::new();
    checkpoint::write_to(&model, &mut bytes).unwrap();
    // bad magic
    let mut broken = bytes.clone();
    broken[0] = b'X';
    assert!(checkpoint::read_from(&mut broken.as_slice()).is_err());
    // truncated payload
    let short = &bytes[..bytes.len() / 2];
    assert!(checkpoint::read_from(&mut &short[..]).is_err());
}

#[test]
fn variant_flags_follow_table_naming() {
    let base = tiny_cfg();
    for (v, non_uniform, regularised) in [
        (PtVariant::Pt, false, false),
        (PtVariant::PtR, false, true),
        (PtVariant::PtNu, true, false),
        (PtVariant::PtNuR, true, true),
    ] {
        let cfg = base.clone().with_variant(v);
        assert_eq!(cfg.non_uniform_split, non_uniform);
        assert_eq!(cfg.lambda_reg > 0.0, regularised);
        assert_eq!(cfg.variant(), v);
        assert_eq!(PtVariant::parse(v.name()).unwrap(), v);
    }
}

#[test]
fn regularised_variant_requires_epsilon() {
    let mut cfg = tiny_cfg().with_variant(PtVariant::PtR);
    cfg.epsilon = 0.0;
    assert!(cfg.validate().is_err());
}
