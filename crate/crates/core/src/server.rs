//! Server-side aggregation.
//!
//! Clients are grouped into clusters. Within a cluster every member gets the
//! inverse accuracy-weight score `s_m = 1 / (w_0 + eps)` and the aggregation
//! coefficients are `softmax(s)`; parameters and the reward weights common to
//! all members are averaged with them. Clusters are then combined by their
//! total sample counts, FedAvg style.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::client::ClientUpdate;
use crate::envs::ACCURACY;
use crate::error::{Error, Result};
use crate::numeric::softmax;
use crate::policy::PolicyParams;

pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Upper bound on inverse scores, reached when `w_0` is numerically zero.
pub const MAX_SCORE: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClusterBy {
    /// The task label each client declares.
    #[default]
    TaskLabel,
    /// The client's full reward-name set.
    RewardNames,
}

impl ClusterBy {
    pub fn key(&self, task_label: &str, component_names: &[String]) -> String {
        match self {
            ClusterBy::TaskLabel => task_label.to_string(),
            ClusterBy::RewardNames => component_names.join("+"),
        }
    }

    pub fn key_of(&self, update: &ClientUpdate) -> String {
        self.key(&update.task_label, update.weights.names())
    }
}

/// Partition update indices by cluster key; keys iterate in sorted order.
pub fn cluster_clients(updates: &[ClientUpdate], by: ClusterBy) -> BTreeMap<String, Vec<usize>> {
    let mut clusters: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, u) in updates.iter().enumerate() {
        clusters.entry(by.key_of(u)).or_default().push(i);
    }
    clusters
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAggregate {
    pub key: String,
    pub params: PolicyParams,
    /// Averaged weights of the components every member has: accuracy first,
    /// the rest alphabetical. Not renormalized.
    pub shared_weights: Vec<(String, f64)>,
    /// `(client_id, alpha)` in member order.
    pub alpha: Vec<(u32, f64)>,
    /// Sum of member sample counts.
    pub sample_count: usize,
}

/// `s_m = min(1 / (w_0 + eps), MAX_SCORE)`
pub fn inverse_score(accuracy_weight: f64, epsilon: f64) -> f64 {
    let s = 1.0 / (accuracy_weight + epsilon);
    if s.is_finite() && s > 0.0 {
        s.min(MAX_SCORE)
    } else {
        MAX_SCORE
    }
}

/// Components present in every member, accuracy first then alphabetical.
pub fn shared_components(members: &[&ClientUpdate]) -> Vec<String> {
    let Some(first) = members.first() else {
        return Vec::new();
    };
    let mut shared: Vec<String> = first
        .weights
        .names()
        .iter()
        .filter(|n| members.iter().all(|m| m.weights.names().contains(n)))
        .cloned()
        .collect();
    shared.sort_by(|a, b| (a != ACCURACY).cmp(&(b != ACCURACY)).then_with(|| a.cmp(b)));
    shared
}

/// Aggregate one cluster.
///
/// With `accuracy_aware` off the coefficients are uniform.
pub fn intra_cluster_aggregate(
    key: &str,
    members: &[&ClientUpdate],
    epsilon: f64,
    accuracy_aware: bool,
) -> Result<ClusterAggregate> {
    let Some(first) = members.first() else {
        return Err(Error::Protocol(format!("cluster '{key}' has no members")));
    };
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let shape = first.params.shape();
    for m in members {
        if m.weights.names().first().map(String::as_str) != Some(ACCURACY) {
            return Err(Error::Protocol(format!(
                "client {} sent no leading accuracy weight",
                m.client_id
            )));
        }
        if m.params.shape() != shape {
            return Err(Error::Protocol(format!(
                "client {} parameter shape {:?} differs from {:?}",
                m.client_id,
                m.params.shape(),
                shape
            )));
        }
    }

    let alpha = if accuracy_aware {
        let scores: Vec<f64> = members
            .iter()
            .map(|m| inverse_score(m.weights.accuracy(), epsilon))
            .collect();
        softmax(&scores)?
    } else {
        vec![1.0 / members.len() as f64; members.len()]
    };

    let mut data = vec![0.0; shape.len()];
    for (m, &a) in members.iter().zip(&alpha) {
        for (acc, x) in data.iter_mut().zip(m.params.as_slice()) {
            *acc += a * x;
        }
    }

    let shared_weights = shared_components(members)
        .into_iter()
        .map(|name| {
            let w = members
                .iter()
                .zip(&alpha)
                .fold(0.0, |acc, (m, &a)| acc + a * m.weights.get(&name).unwrap_or(0.0));
            (name, w)
        })
        .collect();

    Ok(ClusterAggregate {
        key: key.to_string(),
        params: PolicyParams::from_flat(shape, data)?,
        shared_weights,
        alpha: members.iter().map(|m| m.client_id).zip(alpha).collect(),
        sample_count: members.iter().map(|m| m.sample_count).sum(),
    })
}

/// `theta_global = sum_c (N_c / sum N) theta_c`
pub fn cross_cluster_aggregate(aggregates: &[ClusterAggregate]) -> Result<PolicyParams> {
    let Some(first) = aggregates.first() else {
        return Err(Error::Protocol("no clusters to aggregate".into()));
    };
    let shape = first.params.shape();
    if let Some(bad) = aggregates.iter().find(|a| a.params.shape() != shape) {
        return Err(Error::Protocol(format!(
            "cluster '{}' parameter shape {:?} differs from {:?}",
            bad.key,
            bad.params.shape(),
            shape
        )));
    }
    let total: usize = aggregates.iter().map(|a| a.sample_count).sum();
    if total == 0 {
        return Err(Error::Protocol("clusters report zero samples".into()));
    }
    let mut data = vec![0.0; shape.len()];
    for a in aggregates {
        let coef = a.sample_count as f64 / total as f64;
        for (acc, x) in data.iter_mut().zip(a.params.as_slice()) {
            *acc += coef * x;
        }
    }
    PolicyParams::from_flat(shape, data)
}

/// What every client receives at the start of the next round.
#[derive(Clone, Debug, PartialEq)]
pub struct Broadcast {
    pub global_params: PolicyParams,
    pub cluster_weights: BTreeMap<String, Vec<(String, f64)>>,
}

impl Broadcast {
    /// Shared weights for a cluster; unknown clusters get an empty set.
    pub fn weights_for(&self, cluster_key: &str) -> &[(String, f64)] {
        self.cluster_weights
            .get(cluster_key)
            .map_or(&[], Vec::as_slice)
    }
}

pub fn make_broadcast(global_params: PolicyParams, aggregates: &[ClusterAggregate]) -> Broadcast {
    Broadcast {
        global_params,
        cluster_weights: aggregates
            .iter()
            .map(|a| (a.key.clone(), a.shared_weights.clone()))
            .collect(),
    }
}
