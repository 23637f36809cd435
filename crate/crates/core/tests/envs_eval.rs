use fedmo_core::envs::{canonical_components, score_all, Completion, RewardComponent, TaskKind, TaskLayout, TaskSpec};
use fedmo_core::eval::evaluate;
use fedmo_core::numeric::RngStream;
use fedmo_core::policy::{PolicyParams, PolicyShape};

fn default_task(kind: TaskKind, eval_prompts: usize) -> TaskSpec {
    let mut l = TaskLayout::new("t", kind);
    l.eval_prompts = eval_prompts;
    l.build(&mut RngStream::new(2, 0)).unwrap()
}

#[test]
fn every_component_scores_into_unit_interval() {
    let mut all = canonical_components(TaskKind::CodeLike);
    all.push(RewardComponent::Format);
    for kind in [TaskKind::MathLike, TaskKind::CodeLike] {
        let task = default_task(kind, 32);
        let mut rng = RngStream::new(3, kind as u64);
        for _ in 0..10_000 {
            let len = rng.below(task.max_len + 1);
            let c = Completion {
                prompt_id: rng.below(task.prompt_count()),
                tokens: (0..len).map(|_| rng.below(task.vocab_size)).collect(),
            };
            let r = score_all(&all, &task, &c);
            assert_eq!(r.len(), all.len());
            assert!(r.iter().all(|x| (0.0..=1.0).contains(x)), "{c:?} -> {r:?}");
            assert_eq!(r, score_all(&all, &task, &c));
        }
    }
}

/// Exact accuracy of i.i.d. uniform tokens, tracking whether an open tag
/// has been seen. A close tag after it fixes the answer at the next
/// position (uniform, so a 1/V hit); otherwise the final token is read.
fn uniform_accuracy(v: usize, len: usize) -> f64 {
    let p = 1.0 / v as f64;
    let (mut before_open, mut after_open, mut acc) = (1.0, 0.0, 0.0);
    for i in 0..len {
        let last = i + 1 == len;
        if last {
            // final token: open or close never match a content answer
            acc += (before_open + after_open) * p;
            break;
        }
        acc += after_open * p * p;
        after_open = after_open * (1.0 - p) + before_open * p;
        before_open *= 1.0 - p;
    }
    acc
}

#[test]
fn uniform_policy_accuracy_matches_exact_expectation() {
    let task = default_task(TaskKind::MathLike, 10_000);
    let params = PolicyParams::zeros(PolicyShape::for_task(&task, 32));
    // every logit ties, so greedy decoding is uniform sampling via the tie stream
    let got = evaluate(&params, &task, &task.canonical, 99).accuracy;
    let exact = uniform_accuracy(task.vocab_size, task.max_len);
    assert!((exact - 1.0 / 16.0).abs() < 0.01);
    assert!((got - exact).abs() <= 0.02, "monte carlo {got} vs exact {exact}");
}

#[test]
fn exact_expectation_agrees_with_enumeration() {
    // brute force over all 4^5 sequences of a 4-token vocabulary
    let (v, len) = (4usize, 5usize);
    let mut l = TaskLayout::new("t", TaskKind::MathLike);
    l.vocab_size = v;
    l.max_len = len;
    l.keys = 1;
    l.prompt_dim = 1;
    let task = l.build(&mut RngStream::new(0, 0)).unwrap();
    let mut hits = 0usize;
    for code in 0..v.pow(len as u32) {
        let tokens = (0..len).map(|i| code / v.pow(i as u32) % v).collect();
        let c = Completion { prompt_id: 0, tokens };
        hits += score_all(&[RewardComponent::Accuracy], &task, &c)[0] as usize;
    }
    let brute = hits as f64 / v.pow(len as u32) as f64;
    assert!((brute - uniform_accuracy(v, len)).abs() < 1e-12);
}

#[test]
fn policy_emitting_the_answer_scores_full_accuracy() {
    let mut l = TaskLayout::new("t", TaskKind::MathLike);
    l.keys = 1;
    l.prompt_dim = 1;
    let task = l.build(&mut RngStream::new(4, 0)).unwrap();
    let mut params = PolicyParams::zeros(PolicyShape::for_task(&task, 8));
    params.b_out_mut()[task.answer_for(0)] = 5.0;
    let f = evaluate(&params, &task, &task.canonical, 0);
    assert_eq!(f.accuracy, 1.0);
    assert_eq!(f.components[1], ("format".to_string(), 0.0));
}

#[test]
fn evaluation_is_pure() {
    let task = default_task(TaskKind::CodeLike, 32);
    let params = PolicyParams::init(PolicyShape::for_task(&task, 16), &mut RngStream::new(1, 1));
    let before = params.clone();
    let a = evaluate(&params, &task, &task.canonical, 5);
    assert_eq!(params, before);
    assert_eq!(a, evaluate(&params, &task, &task.canonical, 5));
    assert!(a.mean_reward >= 0.0 && a.mean_reward <= 1.0);
}
