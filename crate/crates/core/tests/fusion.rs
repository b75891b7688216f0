use iepg_core::fusion::{
    adain, attention, guide_sequence, token_norm, AttnLayer, FusionConfig, FusionModel, SfeBlock,
    SourceBundle, TargetBundle, TpkfBlock, TpkfMode, Variant,
};
use iepg_core::gradcheck::{grad_check, grad_check_params};
use iepg_core::iec::IntermediateQueue;
use iepg_core::pose::{render_image, skeleton_at_yaw, Person, PoseSkeleton};
use iepg_core::{rng_from_seed, Error, ParamStore, Tape, Tensor};
use rand::Rng as _;

fn tokens(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_fn(&[n, d], |_| rng.random_range(-1.0..1.0))
}

fn run_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> (Tensor, Vec<Tensor>) {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let (o, w) = attention(&mut tape, q, k, v, heads).unwrap();
    (tape.value(o).clone(), w.iter().map(|&w| tape.value(w).clone()).collect())
}

#[test]
fn orthogonal_tokens_attend_to_themselves() {
    let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    let scaled = eye.map(|x| 40.0 * x);
    let v = tokens(4, 4, 1);
    let (o, _) = run_attention(&scaled, &scaled, &v, 1);
    assert!(o.max_abs_diff(&v) < 1e-9);
}

#[test]
fn zero_queries_average_the_values() {
    let q = Tensor::zeros(&[3, 4]);
    let k = tokens(5, 4, 2);
    let v = tokens(5, 4, 3);
    let (o, _) = run_attention(&q, &k, &v, 2);
    for r in 0..3 {
        for c in 0..4 {
            let mean = (0..5).map(|i| v.data()[i * 4 + c]).sum::<f64>() / 5.0;
            assert!((o.data()[r * 4 + c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn three_token_attention_matches_direct_formula() {
    let (q, k, v) = (tokens(3, 4, 4), tokens(3, 4, 5), tokens(3, 4, 6));
    let (o, _) = run_attention(&q, &k, &v, 1);
    for i in 0..3 {
        let logits: Vec<f64> = (0..3)
            .map(|j| (0..4).map(|c| q.data()[i * 4 + c] * k.data()[j * 4 + c]).sum::<f64>() / 2.0)
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..4 {
            let want: f64 = (0..3).map(|j| e[j] / z * v.data()[j * 4 + c]).sum();
            assert!((o.data()[i * 4 + c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn indivisible_width_is_a_config_error() {
    let mut tape = Tape::new();
    let x = tape.constant(tokens(3, 5, 0));
    assert!(matches!(attention(&mut tape, x, x, x, 2), Err(Error::Config(_))));
}

fn rows_sum_to_one(w: &Tensor) {
    let (n, m) = w.dims2().unwrap();
    for r in 0..n {
        let s: f64 = w.data()[r * m..(r + 1) * m].iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
    }
}

#[test]
fn attention_rows_are_distributions_in_every_block() {
    let (d, n) = (8, 9);
    let mut s = ParamStore::new();
    let mut rng = rng_from_seed(7);
    let blocks: Vec<_> = (0..3).map(|i| TpkfBlock::new(&mut s, &format!("t{i}"), d, 2, 4, &mut rng)).collect();
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let mut f = tape.constant(tokens(n, d, 8));
    let fs = tape.constant(tokens(n, d, 9));
    let vals = tape.constant(tokens(n, d, 10));
    let mode = TpkfMode { cross: true, adain: true };
    for b in &blocks {
        let (y, w) = b.forward_with_weights(&mut tape, &p, f, fs, vals, mode).unwrap();
        assert_eq!(w.len(), 4);
        for h in w {
            rows_sum_to_one(tape.value(h));
        }
        assert_eq!(tape.shape(y), &[n, d]);
        f = y;
    }
}

fn sfe(d: usize) -> (ParamStore, SfeBlock) {
    let mut s = ParamStore::new();
    let b = SfeBlock::new(&mut s, "sfe", d, 2, 4, &mut rng_from_seed(11));
    (s, b)
}

#[test]
fn sfe_with_zeroed_outputs_is_double_normalization() {
    let (mut s, b) = sfe(8);
    b.attn.merge.zero(&mut s);
    b.ffn.down.zero(&mut s);
    let x = tokens(9, 8, 12);
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let xv = tape.constant(x);
    let y = b.forward(&mut tape, &p, xv).unwrap();
    assert_eq!(tape.shape(y), &[9, 8]);
    let n1 = token_norm(&mut tape, xv).unwrap();
    let n2 = token_norm(&mut tape, n1).unwrap();
    assert!(tape.value(y).max_abs_diff(tape.value(n2)) < 1e-12);
}

#[test]
fn sfe_block_gradients() {
    let (s, b) = sfe(8);
    let x = tokens(9, 8, 13);
    let target = tokens(9, 8, 14);
    let loss = |tape: &mut Tape, p: &iepg_core::Binding, x: iepg_core::Var| {
        let y = b.forward(tape, p, x)?;
        let t = tape.constant(target.clone());
        let y = tape.mul(y, t)?;
        Ok(tape.sum(y))
    };
    let worst = grad_check(
        |tape, v| {
            let p = s.bind_frozen(tape);
            loss(tape, &p, v[0])
        },
        std::slice::from_ref(&x),
        1e-6,
    )
    .unwrap();
    assert!(worst < 1e-4, "input relative error {worst}");
    let worst = grad_check_params(
        &s,
        |tape, p| {
            let xv = tape.constant(x.clone());
            loss(tape, p, xv)
        },
        1e-6,
        6,
    )
    .unwrap();
    assert!(worst < 1e-4, "param relative error {worst}");
}

fn tpkf(d: usize, seed: u64) -> (ParamStore, TpkfBlock) {
    let mut s = ParamStore::new();
    let b = TpkfBlock::new(&mut s, "tpkf", d, 2, 4, &mut rng_from_seed(seed));
    (s, b)
}

fn tpkf_out(s: &ParamStore, b: &TpkfBlock, f: &Tensor, fs: &Tensor, v: &Tensor, mode: TpkfMode) -> Tensor {
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let (f, fs, v) = (tape.constant(f.clone()), tape.constant(fs.clone()), tape.constant(v.clone()));
    let y = b.forward(&mut tape, &p, f, fs, v, mode).unwrap();
    tape.value(y).clone()
}

const FULL: TpkfMode = TpkfMode { cross: true, adain: true };

#[test]
fn tpkf_with_zeroed_value_projection_is_its_self_attention_block() {
    let (mut s, b) = tpkf(8, 15);
    b.cross.v.zero(&mut s);
    let f = tokens(9, 8, 16);
    let got = tpkf_out(&s, &b, &f, &tokens(9, 8, 17), &tokens(9, 8, 18), FULL);
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let fv = tape.constant(f);
    let want = b.base.forward(&mut tape, &p, fv).unwrap();
    assert!(got.max_abs_diff(tape.value(want)) < 1e-9);
}

#[test]
fn tpkf_with_zeroed_merge_ignores_source_and_incremental_paths() {
    let (mut s, b) = tpkf(8, 19);
    b.cross.merge.zero(&mut s);
    let f = tokens(9, 8, 20);
    let a = tpkf_out(&s, &b, &f, &tokens(9, 8, 21), &tokens(9, 8, 22), FULL);
    let c = tpkf_out(&s, &b, &f, &tokens(9, 8, 23), &tokens(9, 8, 24), FULL);
    assert!(a.max_abs_diff(&c) < 1e-12);

    // With the merge in place the paths do matter.
    let (s, b) = tpkf(8, 19);
    let a = tpkf_out(&s, &b, &f, &tokens(9, 8, 21), &tokens(9, 8, 22), FULL);
    let c = tpkf_out(&s, &b, &f, &tokens(9, 8, 23), &tokens(9, 8, 24), FULL);
    assert!(a.max_abs_diff(&c) > 1e-6);
}

#[test]
fn tpkf_rejects_token_count_mismatch() {
    let (s, b) = tpkf(8, 25);
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let f = tape.constant(tokens(9, 8, 0));
    let fs = tape.constant(tokens(4, 8, 1));
    assert!(matches!(b.forward(&mut tape, &p, f, fs, f, FULL), Err(Error::Config(_))));
}

#[test]
fn tpkf_block_gradients() {
    let (s, b) = tpkf(8, 26);
    let (f, fs, v) = (tokens(9, 8, 27), tokens(9, 8, 28), tokens(9, 8, 29));
    let target = tokens(9, 8, 30);
    for mode in [FULL, TpkfMode { cross: true, adain: false }, TpkfMode { cross: false, adain: false }] {
        let worst = grad_check(
            |tape, x| {
                let p = s.bind_frozen(tape);
                let y = b.forward(tape, &p, x[0], x[1], x[2], mode)?;
                let t = tape.constant(target.clone());
                let y = tape.mul(y, t)?;
                Ok(tape.sum(y))
            },
            &[f.clone(), fs.clone(), v.clone()],
            1e-6,
        )
        .unwrap();
        assert!(worst < 1e-4, "{mode:?}: input relative error {worst}");
    }
    let worst = grad_check_params(
        &s,
        |tape, p| {
            let (x, y, z) = (tape.constant(f.clone()), tape.constant(fs.clone()), tape.constant(v.clone()));
            let o = b.forward(tape, p, x, y, z, FULL)?;
            let t = tape.constant(target.clone());
            let o = tape.mul(o, t)?;
            Ok(tape.sum(o))
        },
        1e-6,
        6,
    )
    .unwrap();
    assert!(worst < 1e-4, "param relative error {worst}");
}

fn col_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.dims2().unwrap();
    let mean: Vec<f64> = (0..d).map(|c| (0..n).map(|r| x.data()[r * d + c]).sum::<f64>() / n as f64).collect();
    let var = (0..d)
        .map(|c| (0..n).map(|r| (x.data()[r * d + c] - mean[c]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    (mean, var)
}

#[test]
fn adain_fixed_point_and_style_mean() {
    let x = tokens(16, 6, 31);
    assert!(adain(&x, &x).unwrap().max_abs_diff(&x) < 1e-9);
    let style = tokens(16, 6, 32).map(|v| 3.0 * v + 2.0);
    let y = adain(&x, &style).unwrap();
    let (my, _) = col_stats(&y);
    let (ms, _) = col_stats(&style);
    for (a, b) in my.iter().zip(&ms) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn adain_matches_two_pass_statistics() {
    for seed in 0..5 {
        let c = tokens(12, 5, 40 + seed);
        let s = tokens(12, 5, 50 + seed).map(|v| 0.5 * v - 1.0);
        let (mc, vc) = col_stats(&c);
        let (ms, vs) = col_stats(&s);
        let y = adain(&c, &s).unwrap();
        for r in 0..12 {
            for k in 0..5 {
                let want = vs[k].max(1e-10).sqrt() * (c.data()[r * 5 + k] - mc[k]) / vc[k].max(1e-10).sqrt() + ms[k];
                assert!((y.data()[r * 5 + k] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn adain_is_idempotent_in_its_style() {
    let a = tokens(10, 4, 60);
    let b = tokens(10, 4, 61).map(|v| v * 7.0);
    let once = adain(&a, &b).unwrap();
    let twice = adain(&once, &b).unwrap();
    assert!(once.max_abs_diff(&twice) < 1e-9);
    assert!(adain(&a, &tokens(9, 4, 0)).is_err());
}

fn person() -> Person {
    Person::random(0, 3)
}

fn skel(yaw: f64) -> PoseSkeleton {
    skeleton_at_yaw(&person(), yaw)
}

fn source(size: usize) -> SourceBundle {
    let s = skel(0.0);
    SourceBundle::new(render_image(&person(), &s, size), &s, 1.5)
}

fn model(cfg: &FusionConfig, seed: u64) -> FusionModel {
    FusionModel::new(cfg, &mut rng_from_seed(seed)).unwrap()
}

fn mini(size: usize, d: usize, heads: usize, variant: Variant) -> FusionConfig {
    FusionConfig {
        image_size: size,
        d,
        heads,
        variant,
        enc_channels: 4,
        ffn_mult: 2,
        queue_capacity: 2,
        iec_channels: 2,
        disc_channels: 4,
        ..FusionConfig::default()
    }
}

#[test]
fn source_path_on_64_pixels_yields_256_tokens() {
    let cfg = FusionConfig {
        enc_channels: 8,
        iec_channels: 4,
        disc_channels: 4,
        ..FusionConfig::default()
    };
    let m = model(&cfg, 0);
    let src = source(64);
    let mut tape = Tape::new();
    let p = m.params.bind_frozen(&mut tape);
    let a = m.source_path(&mut tape, &p, &src).unwrap();
    let b = m.source_path(&mut tape, &p, &src).unwrap();
    assert_eq!(tape.shape(a.fs), &[256, 128]);
    assert_eq!(tape.value(a.fs), tape.value(b.fs));
}

#[test]
fn empty_sfe_stack_is_identity() {
    let mut m = model(&mini(16, 8, 2, Variant::S), 1);
    m.sfe.clear();
    let src = source(16);
    let mut tape = Tape::new();
    let p = m.params.bind_frozen(&mut tape);
    let (f0, _) = m.source_tokens(&mut tape, &p, &src).unwrap();
    let fs = m.source_path(&mut tape, &p, &src).unwrap().fs;
    assert_eq!(tape.value(f0), tape.value(fs));
}

#[test]
fn synthesized_image_is_a_deterministic_unit_range_image() {
    let m = model(&mini(16, 8, 2, Variant::S), 2);
    let src = source(16);
    let tgt = TargetBundle::new(&skel(45.0), 16, 1.5);
    let q = IntermediateQueue::cold_start(2, &src.image).unwrap();
    let a = m.synthesize_step(&src, &tgt, &q).unwrap();
    assert_eq!(a.tensor().shape(), &[3, 16, 16]);
    assert!(a.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(a, m.synthesize_step(&src, &tgt, &q).unwrap());
    assert!(matches!(m.synthesize_step(&source(32), &tgt, &q), Err(Error::Contract(_))));
}

fn block_params(d: usize, m: usize) -> usize {
    let attn = 4 * d * d;
    let ffn = d * m * d + m * d + m * d * d + d;
    (attn + ffn) + (attn + ffn + attn)
}

#[test]
fn parameter_count_is_linear_in_depth() {
    let counts: Vec<usize> = [Variant::S, Variant::B, Variant::L]
        .iter()
        .map(|&v| model(&mini(16, 8, 2, v), 3).params.scalar_count())
        .collect();
    let per = block_params(8, 2);
    assert_eq!(counts[1] - counts[0], 2 * per);
    assert_eq!(counts[2] - counts[1], 2 * per);
}

#[test]
fn patch_scores_are_local() {
    let m = model(&mini(32, 8, 2, Variant::S), 4);
    let tgt = TargetBundle::new(&skel(0.0), 32, 1.5);
    let img = source(32).image;
    let base = m.patch_scores(&img, &tgt).unwrap();
    assert_eq!(base.shape(), &[1, 8, 8]);
    assert!(base.data().iter().all(|&s| s > 0.0 && s < 1.0));
    let d = m.image_discriminate(&img, &tgt).unwrap();
    assert!(d > 0.0 && d < 1.0);
    assert_eq!(d, m.image_discriminate(&img, &tgt).unwrap());

    // Repaint the top-left 4×4 corner: only patches whose receptive field
    // reaches it may move.
    let mut t = img.tensor().clone();
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..4 {
                t.data_mut()[c * 1024 + y * 32 + x] = 1.0 - t.data()[c * 1024 + y * 32 + x];
            }
        }
    }
    let moved = m.patch_scores(&iepg_core::pose::ImageTensor::new(t).unwrap(), &tgt).unwrap();
    let mut near = 0.0f64;
    for r in 0..8 {
        for c in 0..8 {
            let diff = (moved.data()[r * 8 + c] - base.data()[r * 8 + c]).abs();
            if r > 2 || c > 2 {
                assert_eq!(diff, 0.0, "patch ({r},{c}) moved");
            } else {
                near = near.max(diff);
            }
        }
    }
    assert!(near > 0.0);
}

#[test]
fn miniature_model_gradients() {
    let m = model(&mini(16, 16, 1, Variant::S), 5);
    let src = source(16);
    let tgt = TargetBundle::new(&skel(30.0), 16, 1.5);
    let mut q = IntermediateQueue::cold_start(2, &src.image).unwrap();
    q.push(source(16).image).unwrap();
    let goal = render_image(&person(), &skel(30.0), 16).into_tensor();
    let worst = grad_check_params(
        &m.params,
        |tape, p| {
            let sv = m.source_path(tape, p, &src)?;
            let y = m.step(tape, p, &sv, &tgt, &q)?;
            let g = tape.constant(goal.clone());
            let d = tape.sub(y, g)?;
            let d = tape.square(d);
            Ok(tape.sum(d))
        },
        // Small enough that no leaky-ReLU kink falls inside the stencil.
        1e-7,
        3,
    )
    .unwrap();
    assert!(worst < 1e-3, "relative error {worst}");
}

#[test]
fn single_step_is_one_shot_generation() {
    let m = model(&mini(16, 8, 2, Variant::S), 6);
    let src = source(16);
    let pt = skel(90.0);
    let mut rng = rng_from_seed(0);
    let (img, seq) = m.synthesize_full(&src, &skel(0.0), &pt, None, 1, &mut rng).unwrap();
    assert_eq!(seq.len(), 1);
    assert_eq!(&seq.last().image, &img);
    let q = IntermediateQueue::cold_start(2, &src.image).unwrap();
    let direct = m.synthesize_step(&src, &TargetBundle::new(&pt, 16, 1.5), &q).unwrap();
    assert_eq!(img, direct);
    assert!(guide_sequence(&skel(0.0), &pt, None, 3, &mut rng).is_err());
    assert!(guide_sequence(&skel(0.0), &pt, None, 0, &mut rng).is_err());
}

#[test]
fn attention_layer_shapes_cross_lengths() {
    let mut s = ParamStore::new();
    let l = AttnLayer::new(&mut s, "a", 8, 4, &mut rng_from_seed(0));
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let q = tape.constant(tokens(3, 8, 1));
    let kv = tape.constant(tokens(7, 8, 2));
    let (o, w) = l.forward(&mut tape, &p, q, kv, kv).unwrap();
    assert_eq!(tape.shape(o), &[3, 8]);
    assert_eq!(w.len(), 4);
    for h in w {
        assert_eq!(tape.shape(h), &[3, 7]);
        rows_sum_to_one(tape.value(h));
    }
}
