use fedmo_core::client::{run_local_round, ClientConfig, ClientUpdate};
use fedmo_core::envs::{reward_config, TaskKind, TaskLayout, TaskSpec};
use fedmo_core::numeric::RngStream;
use fedmo_core::policy::{PolicyParams, PolicyShape};
use fedmo_core::server::{cross_cluster_aggregate, intra_cluster_aggregate, make_broadcast};
use fedmo_core::weights::{names_of, ObjectiveWeights};
use proptest::prelude::*;

fn task() -> TaskSpec {
    let mut l = TaskLayout::new("math-like", TaskKind::MathLike);
    l.keys = 4;
    l.prompt_dim = 4;
    l.build(&mut RngStream::new(5, 0)).unwrap()
}

fn client(task: &TaskSpec, id: u32, variant: usize, steps: usize, lambda: f64) -> ClientConfig {
    let mut c = ClientConfig::new(id, task, reward_config(task.kind, variant), task.train.clone());
    c.local_steps = steps;
    c.prompts_per_step = 4;
    c.lr0 = 1.0;
    c.lambda = lambda;
    c.seed = 17;
    c
}

fn global(task: &TaskSpec) -> PolicyParams {
    PolicyParams::init(PolicyShape::for_task(task, 16), &mut RngStream::new(1, 1))
}

#[test]
fn single_step_round_keeps_round_start_weights() {
    let task = task();
    let c = client(&task, 0, 0, 1, 30.0);
    let out = run_local_round(&c, &task, &global(&task), None, None, 0, 3).unwrap();
    assert_eq!(out.steps.len(), 1);
    assert_eq!(out.update.weights, ObjectiveWeights::uniform(&c.component_names()).unwrap());
}

#[test]
fn zero_lambda_freezes_broadcast_weights() {
    let task = task();
    let c = client(&task, 1, 0, 12, 0.0);
    let shared = vec![
        ("accuracy".to_string(), 0.5),
        ("format".to_string(), 0.3),
        ("tag_count".to_string(), 0.2),
    ];
    let out = run_local_round(&c, &task, &global(&task), Some(&shared), None, 1, 3).unwrap();
    assert_eq!(out.update.weights.values(), [0.5, 0.3, 0.2]);
    assert!(out.steps.iter().all(|s| s.weights == [0.5, 0.3, 0.2]));
}

#[test]
fn adaptive_weights_move_and_stay_feasible() {
    let task = task();
    let c = client(&task, 2, 0, 10, 30.0);
    let out = run_local_round(&c, &task, &global(&task), None, None, 0, 1).unwrap();
    let w = out.update.weights.values();
    assert_ne!(w, [1.0 / 3.0; 3]);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(out.update.weights.names(), c.component_names());
}

#[test]
fn client_round_is_deterministic() {
    let task = task();
    let c = client(&task, 3, 1, 5, 30.0);
    let g = global(&task);
    let a = run_local_round(&c, &task, &g, None, None, 0, 2).unwrap();
    let b = run_local_round(&c, &task, &g, None, None, 0, 2).unwrap();
    assert_eq!(a.update, b.update);
    assert_eq!(a.steps, b.steps);
}

#[test]
fn invalid_client_config_fails_the_round() {
    let task = task();
    let mut c = client(&task, 4, 0, 5, 0.0);
    c.prompt_pool = vec![task.eval[0]];
    assert!(run_local_round(&c, &task, &global(&task), None, None, 0, 1).is_err());
}

fn update(id: u32, data: Vec<f64>, w0: f64, n: usize) -> ClientUpdate {
    let shape = PolicyShape::new(1, 4, 1);
    let mut full = data;
    full.resize(shape.len(), 0.0);
    ClientUpdate {
        client_id: id,
        params: PolicyParams::from_flat(shape, full).unwrap(),
        weights: ObjectiveWeights::new(names_of(&["accuracy", "format"]), vec![w0, 1.0 - w0]).unwrap(),
        task_label: "t".into(),
        sample_count: n,
    }
}

fn members() -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 15), 0.0f64..1.0), 1..6)
}

proptest! {
    #[test]
    fn alpha_is_a_positive_distribution(m in members()) {
        let ups: Vec<ClientUpdate> = m.iter().enumerate().map(|(i, (d, w))| update(i as u32, d.clone(), *w, 10)).collect();
        let refs: Vec<&ClientUpdate> = ups.iter().collect();
        let agg = intra_cluster_aggregate("t", &refs, 1e-6, true).unwrap();
        let sum: f64 = agg.alpha.iter().map(|(_, a)| a).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(agg.alpha.iter().all(|(_, a)| *a >= 0.0));
        // exp underflows to zero once scores differ by more than ~745
        let scores: Vec<f64> = m.iter().map(|(_, w)| 1.0 / (w + 1e-6)).collect();
        let spread = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - scores.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if spread < 700.0 {
            prop_assert!(agg.alpha.iter().all(|(_, a)| *a > 0.0));
        }
    }

    #[test]
    fn aggregation_commutes_with_affine_maps(m in members(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let ups: Vec<ClientUpdate> = m.iter().enumerate().map(|(i, (d, w))| update(i as u32, d.clone(), *w, 10)).collect();
        let mapped: Vec<ClientUpdate> = ups
            .iter()
            .map(|u| {
                let mut v = u.clone();
                v.params.as_mut_slice().iter_mut().for_each(|x| *x = a * *x + b);
                v
            })
            .collect();
        let agg = intra_cluster_aggregate("t", &ups.iter().collect::<Vec<_>>(), 1e-6, true).unwrap();
        let agg_m = intra_cluster_aggregate("t", &mapped.iter().collect::<Vec<_>>(), 1e-6, true).unwrap();
        for (x, y) in agg.params.as_slice().iter().zip(agg_m.params.as_slice()) {
            prop_assert!((a * x + b - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn smaller_accuracy_weight_gets_larger_alpha(w1 in 0.0f64..1.0, w2 in 0.0f64..1.0) {
        prop_assume!((w1 - w2).abs() > 1e-3);
        let ups = [update(0, vec![0.0], w1, 1), update(1, vec![0.0], w2, 1)];
        let agg = intra_cluster_aggregate("t", &ups.iter().collect::<Vec<_>>(), 1e-6, true).unwrap();
        let (a1, a2) = (agg.alpha[0].1, agg.alpha[1].1);
        prop_assert_eq!(w1 < w2, a1 > a2);
    }

    #[test]
    fn equal_accuracy_weights_reduce_to_fedavg(m in members(), w0 in 0.0f64..1.0, n in 1usize..50) {
        let ups: Vec<ClientUpdate> = m.iter().enumerate().map(|(i, (d, _))| update(i as u32, d.clone(), w0, n)).collect();
        let agg = intra_cluster_aggregate("t", &ups.iter().collect::<Vec<_>>(), 1e-6, true).unwrap();
        let global = cross_cluster_aggregate(&[agg]).unwrap();
        let total = (n * ups.len()) as f64;
        for (j, g) in global.as_slice().iter().enumerate() {
            let fedavg: f64 = ups.iter().map(|u| n as f64 / total * u.params.as_slice()[j]).sum();
            prop_assert!((g - fedavg).abs() <= 1e-9);
        }
    }
}

#[test]
fn broadcast_carries_each_clusters_weights() {
    let ups = [update(0, vec![1.0], 0.4, 3), update(1, vec![2.0], 0.6, 3)];
    let a = intra_cluster_aggregate("a", &[&ups[0]], 1e-6, true).unwrap();
    let b = intra_cluster_aggregate("b", &[&ups[1]], 1e-6, true).unwrap();
    let g = cross_cluster_aggregate(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(g.as_slice()[0], 1.5);
    let bc = make_broadcast(g, &[a, b]);
    assert_eq!(bc.weights_for("a"), [("accuracy".to_string(), 0.4), ("format".to_string(), 0.6)]);
    assert_eq!(bc.weights_for("b")[0].1, 0.6);
    assert!(bc.weights_for("c").is_empty());
}
