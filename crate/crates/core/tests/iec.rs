use iepg_core::gradcheck::grad_check_params;
use iepg_core::iec::{
    assemble_input, iec_forward, update_queue, IeBlock, IecConfig, IecStack, IntermediateQueue,
};
use iepg_core::nn::LEAKY_SLOPE;
use iepg_core::pose::ImageTensor;
use iepg_core::{rng_from_seed, Error, ParamStore, Tape, Tensor};
use rand::Rng as _;

fn img(seed: u64, size: usize) -> ImageTensor {
    let mut rng = rng_from_seed(seed);
    ImageTensor::new(Tensor::from_fn(&[3, size, size], |_| rng.random_range(0.0..1.0))).unwrap()
}

#[test]
fn queue_appends_and_evicts_oldest() {
    let q = IntermediateQueue::new(4).unwrap();
    let q = update_queue(q, img(0, 8)).unwrap();
    assert_eq!(q.len(), 1);
    let mut q = q;
    let history: Vec<_> = (1..7).map(|s| img(s, 8)).collect();
    for h in &history {
        q = update_queue(q, h.clone()).unwrap();
        assert!(q.len() <= 4);
    }
    assert_eq!(q.len(), 4);
    let kept: Vec<_> = q.images().cloned().collect();
    assert_eq!(kept, history[2..].to_vec());
    assert!(matches!(update_queue(q, img(9, 16)), Err(Error::Contract(_))));
}

#[test]
fn assembled_channels_follow_age_then_padding() {
    let mut q = IntermediateQueue::new(4).unwrap();
    let imgs: Vec<_> = (0..4).map(|s| img(s, 8)).collect();
    for i in &imgs {
        q.push(i.clone()).unwrap();
    }
    let t = assemble_input(&q).unwrap();
    assert_eq!(t.shape(), &[12, 8, 8]);
    for (b, i) in imgs.iter().enumerate() {
        assert_eq!(&t.data()[b * 192..(b + 1) * 192], i.tensor().data());
    }

    let cold = IntermediateQueue::cold_start(4, &imgs[0]).unwrap();
    let t = assemble_input(&cold).unwrap();
    assert_eq!(t.shape(), &[12, 8, 8]);
    assert_eq!(&t.data()[..192], imgs[0].tensor().data());
    assert!(t.data()[192..].iter().all(|&v| v == 0.0));
}

fn block(multi: bool) -> (ParamStore, IeBlock) {
    let mut s = ParamStore::new();
    let b = IeBlock::new(&mut s, "b", 8, 8, 16, 2, multi, &mut rng_from_seed(5)).unwrap();
    (s, b)
}

fn input(c: usize, h: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_fn(&[c, h, h], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn block_halves_space_and_doubles_channels() {
    let (s, b) = block(true);
    let mut tape = Tape::new();
    let p = s.bind(&mut tape);
    let x = tape.constant(input(8, 16, 1));
    let y = b.forward(&mut tape, &p, x).unwrap();
    assert_eq!(tape.shape(y), &[16, 8, 8]);
    let odd = tape.constant(input(8, 15, 1));
    assert!(matches!(b.forward(&mut tape, &p, odd), Err(Error::Config(_))));
}

/// Reference: each branch as its own convolution, weighted, then the
/// activation and projection.
fn reference(s: &ParamStore, b: &IeBlock, x: &Tensor, weights: &[f64]) -> Tensor {
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let mut acc = None;
    for (c, &w) in b.branches.iter().zip(weights) {
        let y = c.forward(&mut tape, &p, xv).unwrap();
        let y = tape.scale(y, w);
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(a, y).unwrap(),
        });
    }
    let y = tape.leaky_relu(acc.unwrap(), LEAKY_SLOPE);
    let y = b.proj.forward(&mut tape, &p, y).unwrap();
    let y = tape.leaky_relu(y, LEAKY_SLOPE);
    tape.value(y).clone()
}

fn block_out(s: &ParamStore, b: &IeBlock, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = b.forward(&mut tape, &p, xv).unwrap();
    tape.value(y).clone()
}

#[test]
fn one_hot_scale_attention_selects_the_small_branch() {
    let (mut s, b) = block(true);
    *s.get_mut(b.scale_logits) = Tensor::new(&[3], vec![1e3, 0.0, 0.0]).unwrap();
    let x = input(8, 16, 2);
    let got = block_out(&s, &b, &x);
    assert!(got.max_abs_diff(&reference(&s, &b, &x, &[1.0, 0.0, 0.0])) < 1e-12);
}

#[test]
fn equal_scale_logits_average_the_branches() {
    let (mut s, b) = block(true);
    *s.get_mut(b.scale_logits) = Tensor::new(&[3], vec![0.4, 0.4, 0.4]).unwrap();
    let x = input(8, 16, 3);
    let third = 1.0 / 3.0;
    let got = block_out(&s, &b, &x);
    assert!(got.max_abs_diff(&reference(&s, &b, &x, &[third; 3])) < 1e-12);
}

#[test]
fn scale_weights_are_a_distribution() {
    let (mut s, b) = block(true);
    let mut rng = rng_from_seed(6);
    for _ in 0..50 {
        *s.get_mut(b.scale_logits) = Tensor::from_fn(&[3], |_| rng.random_range(-20.0..20.0));
        let mut tape = Tape::new();
        let p = s.bind(&mut tape);
        let a = b.scale_weights(&mut tape, &p);
        let v = tape.value(a).data();
        assert!(v.iter().all(|&w| w > 0.0));
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn stack(depth: usize, base: usize, cap: usize) -> (ParamStore, IecStack) {
    let mut s = ParamStore::new();
    let cfg = IecConfig {
        capacity: cap,
        base_channels: base,
        depth,
        multi_scale: true,
    };
    let st = IecStack::new(&mut s, &cfg, &mut rng_from_seed(8)).unwrap();
    (s, st)
}

#[test]
fn default_schedule_on_64_pixels() {
    let (s, st) = stack(3, 32, 4);
    let q = IntermediateQueue::cold_start(4, &img(0, 64)).unwrap();
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    let x = tape.constant(q.assemble().unwrap());
    let mut y = x;
    let mut shapes = Vec::new();
    for b in &st.blocks {
        y = b.forward(&mut tape, &p, y).unwrap();
        shapes.push(tape.shape(y).to_vec());
    }
    assert_eq!(shapes, vec![vec![32, 64, 64], vec![64, 32, 32], vec![128, 16, 16]]);
    let direct = iec_forward(&mut tape, &p, &st, &q).unwrap();
    assert_eq!(tape.value(direct), tape.value(y));
}

#[test]
fn every_queue_length_gives_finite_features() {
    let (s, st) = stack(3, 4, 4);
    let mut q = IntermediateQueue::new(4).unwrap();
    for n in 1..=4 {
        q.push(img(n, 16)).unwrap();
        let mut tape = Tape::new();
        let p = s.bind_frozen(&mut tape);
        let y = iec_forward(&mut tape, &p, &st, &q).unwrap();
        assert_eq!(tape.shape(y), &[16, 4, 4]);
        assert!(tape.value(y).is_finite());
        let again = iec_forward(&mut tape, &p, &st, &q).unwrap();
        assert_eq!(tape.value(again), tape.value(y));
    }
}

#[test]
fn deeper_stacks_keep_the_final_shape_and_train() {
    for depth in [6, 9] {
        let (mut s, st) = stack(depth, 2, 2);
        assert_eq!(st.blocks.len(), depth);
        let q = IntermediateQueue::cold_start(2, &img(1, 16)).unwrap();
        let mut state = iepg_core::optim::AdamState::new(&s);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let p = s.bind(&mut tape);
            let y = iec_forward(&mut tape, &p, &st, &q).unwrap();
            assert_eq!(tape.shape(y), &[8, 4, 4]);
            let y = tape.square(y);
            let loss = tape.mean(y);
            let g = tape.backward(loss).unwrap();
            iepg_core::optim::adam_step(&mut s, &g.param_map(), &mut state, &Default::default()).unwrap();
        }
    }
}

#[test]
fn indivisible_input_is_rejected() {
    let (s, st) = stack(3, 2, 1);
    let q = IntermediateQueue::cold_start(1, &img(0, 18)).unwrap();
    let mut tape = Tape::new();
    let p = s.bind_frozen(&mut tape);
    assert!(matches!(iec_forward(&mut tape, &p, &st, &q), Err(Error::Config(_))));
}

#[test]
fn gradients_reach_scale_logits() {
    let (mut s, st) = stack(3, 2, 2);
    let mut rng = rng_from_seed(12);
    for b in &st.blocks {
        *s.get_mut(b.scale_logits) = Tensor::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
    }
    // Only the scale logits stay trainable so every one of them is probed.
    let logits: Vec<_> = st.blocks.iter().map(|b| b.scale_logits).collect();
    for (i, e) in s.entries_mut().iter_mut().enumerate() {
        e.trainable = logits.iter().any(|id| id.0 == i);
    }
    let mut q = IntermediateQueue::new(2).unwrap();
    q.push(img(2, 8)).unwrap();
    q.push(img(3, 8)).unwrap();
    let target = input(8, 2, 4);
    let worst = grad_check_params(
        &s,
        |tape, p| {
            let y = iec_forward(tape, p, &st, &q)?;
            let t = tape.constant(target.clone());
            let d = tape.sub(y, t)?;
            let d = tape.square(d);
            Ok(tape.sum(d))
        },
        1e-6,
        8,
    )
    .unwrap();
    assert!(worst < 1e-4, "relative error {worst}");

    // And through every parameter of the stack.
    for e in s.entries_mut() {
        e.trainable = true;
    }
    let worst = grad_check_params(
        &s,
        |tape, p| {
            let y = iec_forward(tape, p, &st, &q)?;
            let t = tape.constant(target.clone());
            let d = tape.sub(y, t)?;
            let d = tape.square(d);
            Ok(tape.sum(d))
        },
        1e-6,
        4,
    )
    .unwrap();
    assert!(worst < 1e-4, "relative error {worst}");
}
