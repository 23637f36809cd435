use fedmo_core::envs::{TaskKind, TaskLayout, TaskSpec};
use fedmo_core::numeric::RngStream;
use fedmo_core::policy::{sample, surrogate_gradient, PolicyParams, PolicyShape, SampledCompletion};

fn task() -> TaskSpec {
    let mut l = TaskLayout::new("t", TaskKind::MathLike);
    l.keys = 4;
    l.prompt_dim = 4;
    l.max_len = 5;
    l.build(&mut RngStream::new(3, 0)).unwrap()
}

/// Random parameters large enough that every block carries real gradient.
fn rough_params(shape: PolicyShape, rng: &mut RngStream) -> PolicyParams {
    let data = (0..shape.len()).map(|_| rng.uniform_range(-0.8, 0.8)).collect();
    PolicyParams::from_flat(shape, data).unwrap()
}

fn batch(params: &PolicyParams, task: &TaskSpec, n: usize, rng: &mut RngStream) -> Vec<SampledCompletion> {
    (0..n)
        .map(|i| sample(params, task, task.train[i % task.train.len()], rng).unwrap())
        .collect()
}

fn surrogate(params: &PolicyParams, batch: &[SampledCompletion], adv: &[f64]) -> f64 {
    let n = batch.len() as f64;
    -batch
        .iter()
        .zip(adv)
        .map(|(c, a)| a * params.sequence_log_prob(c.slot, &c.completion.tokens))
        .sum::<f64>()
        / n
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let task = task();
    let shape = PolicyShape::for_task(&task, 24);
    let h = 1e-5;
    for pair in 0..5u64 {
        let mut rng = RngStream::new(100 + pair, 0);
        let params = rough_params(shape, &mut rng);
        let b = batch(&params, &task, 6, &mut rng);
        let adv: Vec<f64> = b.iter().map(|_| rng.uniform_range(-1.5, 1.5)).collect();
        let (grad, _) = surrogate_gradient(&params, &b, &adv).unwrap();

        for (name, off, len) in shape.blocks() {
            // Only coordinates the batch touches can carry gradient; the
            // rest are checked to be flat.
            let active: Vec<usize> = (off..off + len).filter(|&i| grad[i] != 0.0).collect();
            let want = 20.min(len);
            assert!(active.len() >= want, "{name}: only {} active coordinates", active.len());
            for _ in 0..want {
                let i = active[rng.below(active.len())];
                let mut p = params.clone();
                p.as_mut_slice()[i] += h;
                let up = surrogate(&p, &b, &adv);
                p.as_mut_slice()[i] -= 2.0 * h;
                let down = surrogate(&p, &b, &adv);
                let fd = (up - down) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs());
                assert!(rel < 1e-4, "{name}[{i}] analytic {} fd {fd} rel {rel}", grad[i]);
            }
            for i in (off..off + len).filter(|&i| grad[i] == 0.0).take(10) {
                let mut p = params.clone();
                p.as_mut_slice()[i] += h;
                let up = surrogate(&p, &b, &adv);
                p.as_mut_slice()[i] -= 2.0 * h;
                let fd = (up - surrogate(&p, &b, &adv)) / (2.0 * h);
                assert!(fd.abs() < 1e-8, "{name}[{i}] has fd {fd} but no analytic gradient");
            }
        }
    }
}

#[test]
fn gradient_is_linear_in_advantages() {
    let task = task();
    let shape = PolicyShape::for_task(&task, 16);
    let mut rng = RngStream::new(9, 9);
    let params = rough_params(shape, &mut rng);
    let b = batch(&params, &task, 8, &mut rng);
    let a1: Vec<f64> = b.iter().map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let a2: Vec<f64> = b.iter().map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let (x, y) = (0.7, -2.3);
    let mix: Vec<f64> = a1.iter().zip(&a2).map(|(p, q)| x * p + y * q).collect();
    let (g1, h1) = surrogate_gradient(&params, &b, &a1).unwrap();
    let (g2, h2) = surrogate_gradient(&params, &b, &a2).unwrap();
    let (gm, hm) = surrogate_gradient(&params, &b, &mix).unwrap();
    for i in 0..g1.len() {
        assert!((gm[i] - (x * g1[i] + y * g2[i])).abs() < 1e-10);
    }
    for j in 0..h1.dim() {
        assert!((hm.0[j] - (x * h1.0[j] + y * h2.0[j])).abs() < 1e-10);
    }
}

#[test]
fn single_completion_unit_advantage_is_nll_gradient() {
    let task = task();
    let shape = PolicyShape::for_task(&task, 8);
    let mut rng = RngStream::new(4, 4);
    let params = rough_params(shape, &mut rng);
    let b = batch(&params, &task, 1, &mut rng);
    let (g, _) = surrogate_gradient(&params, &b, &[1.0]).unwrap();
    let nll = |p: &PolicyParams| -p.sequence_log_prob(b[0].slot, &b[0].completion.tokens);
    for i in (0..shape.len()).step_by(7) {
        let mut p = params.clone();
        p.as_mut_slice()[i] += 1e-6;
        let up = nll(&p);
        p.as_mut_slice()[i] -= 2e-6;
        let fd = (up - nll(&p)) / 2e-6;
        assert!((g[i] - fd).abs() < 1e-7);
    }
}

#[test]
fn zero_policy_samples_uniformly() {
    let task = task();
    let params = PolicyParams::zeros(PolicyShape::for_task(&task, 8));
    let mut rng = RngStream::new(1, 2);
    let mut counts = vec![0usize; task.vocab_size];
    let mut draws = 0;
    while draws < 100_000 {
        let c = sample(&params, &task, 0, &mut rng).unwrap();
        for &t in &c.completion.tokens {
            counts[t] += 1;
        }
        draws += c.len();
    }
    let expect = 1.0 / task.vocab_size as f64;
    for (t, &n) in counts.iter().enumerate() {
        let f = n as f64 / draws as f64;
        assert!((f - expect).abs() <= 0.01, "token {t}: {f}");
    }
}

#[test]
fn boosted_logit_dominates_sampling() {
    let task = task();
    let shape = PolicyShape::for_task(&task, 8);
    let mut params = PolicyParams::zeros(shape);
    // saturate hidden unit 0 at tanh(40) = 1, then route it to token 3
    params.as_mut_slice()[shape.b_in_offset()] = 40.0;
    params.w_out_row_mut(3)[0] = 10.0;
    let mut rng = RngStream::new(5, 5);
    let (mut hits, mut draws) = (0usize, 0usize);
    while draws < 20_000 {
        let c = sample(&params, &task, 1, &mut rng).unwrap();
        hits += c.completion.tokens.iter().filter(|&&t| t == 3).count();
        draws += c.len();
    }
    assert!(hits as f64 / draws as f64 > 0.999);
}

#[test]
fn step_probabilities_are_distributions() {
    let task = task();
    let shape = PolicyShape::for_task(&task, 12);
    let mut rng = RngStream::new(8, 1);
    let params = rough_params(shape, &mut rng);
    for c in batch(&params, &task, 10, &mut rng) {
        for step in c.probs.chunks(task.vocab_size) {
            assert!((step.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for (t, &a) in c.completion.tokens.iter().enumerate() {
            assert!((c.log_probs[t] - c.probs[t * task.vocab_size + a].ln()).abs() < 1e-14);
        }
    }
}
