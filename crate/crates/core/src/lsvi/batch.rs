//! Simultaneous estimation over every policy of a finite set.
//!
//! For a product set, two rules at layer `l` that agree on every state observed at `l` in
//! the data give bit-identical estimates: the regression operator `K_{l-1}` has exact-zero
//! columns for next states that never occur. Rules are therefore grouped into behaviour
//! classes per layer, and the backward recursion is evaluated once per combination of
//! classes, sharing each regression `K_l V` across all classes of layer `l`.

use std::collections::HashMap;

use rayon::prelude::*;

use super::estimate::{er_pass, layer_values, max_column_norm, regress, v_pass, PassStats, RewardTable};
use super::LsviModel;
use crate::error::{Error, Result};
use crate::policy::{ActionTable, DeterministicPolicy, LayerRule, PolicySet};
use crate::scalar::Real;

#[derive(Clone, Debug)]
struct ClassRep {
    /// Lowest rule index in the class.
    rule: usize,
    actions: Vec<usize>,
    size: usize,
}

/// Behaviour classes of the layers `0..=h` of a product policy set.
#[derive(Clone, Debug)]
pub struct ProductClasses {
    h: usize,
    layers: Vec<Vec<ClassRep>>,
    list_sizes: Vec<usize>,
    /// States whose values influence the estimate, per layer.
    states: Vec<Vec<usize>>,
}

impl ProductClasses {
    pub fn build<T: Real>(model: &LsviModel<T>, rules: &[Vec<LayerRule<T>>], h: usize) -> Result<Self> {
        let f = model.features();
        let mut layers = Vec::with_capacity(h + 1);
        let mut states = Vec::with_capacity(h + 1);
        for (l, list) in rules.iter().take(h + 1).enumerate() {
            let relevant: Vec<usize> = if l == 0 {
                vec![model.initial_state()]
            } else {
                (0..f.num_states()).filter(|&s| model.observed(l)[s]).collect()
            };
            let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut reps: Vec<ClassRep> = Vec::new();
            for (r, rule) in list.iter().enumerate() {
                let actions = rule.resolve(f)?;
                let key: Vec<usize> = relevant.iter().map(|&s| actions[s]).collect();
                match index.get(&key) {
                    Some(&k) => reps[k].size += 1,
                    None => {
                        index.insert(key, reps.len());
                        reps.push(ClassRep {
                            rule: r,
                            actions,
                            size: 1,
                        });
                    }
                }
            }
            layers.push(reps);
            states.push(relevant);
        }
        Ok(ProductClasses {
            h,
            list_sizes: rules.iter().take(h + 1).map(Vec::len).collect(),
            layers,
            states,
        })
    }

    pub fn layer(&self) -> usize {
        self.h
    }

    /// Number of class combinations; `None` on overflow.
    pub fn combinations(&self) -> Option<usize> {
        self.layers.iter().try_fold(1usize, |acc, l| acc.checked_mul(l.len()))
    }

    pub fn classes_per_layer(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    /// Per-layer class indices of a combination (layer 0 fastest).
    pub fn digits(&self, mut combo: usize) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| {
                let k = combo % l.len();
                combo /= l.len();
                k
            })
            .collect()
    }

    /// Lowest prefix-enumeration index among the policies of a combination.
    pub fn prefix_index(&self, combo: usize) -> u128 {
        let mut stride = 1u128;
        let mut idx = 0u128;
        for (l, k) in self.digits(combo).into_iter().enumerate() {
            idx += self.layers[l][k].rule as u128 * stride;
            stride *= self.list_sizes[l] as u128;
        }
        idx
    }

    /// Fraction of the uniform prefix mixture carried by a combination.
    pub fn mass<T: Real>(&self, combo: usize) -> T {
        self.digits(combo)
            .into_iter()
            .enumerate()
            .map(|(l, k)| T::from_count(self.layers[l][k].size) / T::from_count(self.list_sizes[l]))
            .fold(T::one(), |a, b| a * b)
    }

    /// The representative policy; layers after `h` use rule 0.
    pub fn policy<T: Real>(&self, rules: &[Vec<LayerRule<T>>], combo: usize) -> DeterministicPolicy<T> {
        let digits = self.digits(combo);
        DeterministicPolicy::new(
            rules
                .iter()
                .enumerate()
                .map(|(l, list)| match digits.get(l) {
                    Some(&k) => list[self.layers[l][k].rule].clone(),
                    None => list[0].clone(),
                })
                .collect(),
        )
    }

    /// Frontier recursion shared by both estimators; output is `[combo·m + c]`.
    fn run<T: Real>(&self, model: &LsviModel<T>, m: usize, mode: Mode<'_, T>) -> (Vec<T>, PassStats) {
        let f = model.features();
        let n = f.num_states();
        let d = f.dim();
        let h = self.h;
        let horizon = model.horizon();
        let caps: Vec<T> = match &mode {
            Mode::Er { caps, .. } => caps.to_vec(),
            Mode::V { .. } => vec![T::from_count(horizon); m],
        };
        let block = n * m;
        let mut stats = PassStats::default();

        let mut frontier = vec![T::zero(); self.layers[h].len() * block];
        for (k, rep) in self.layers[h].iter().enumerate() {
            let out = &mut frontier[k * block..(k + 1) * block];
            stats.clamped += match &mode {
                Mode::Er { reward, .. } => {
                    layer_values(f, &rep.actions, &self.states[h], None, Some(reward), &caps, false, out)
                }
                Mode::V { rewards } => layer_values(
                    f,
                    &rep.actions,
                    &self.states[h],
                    None,
                    Some(&rewards[h]),
                    &caps,
                    true,
                    out,
                ),
            };
        }

        for l in (0..h).rev() {
            let classes = &self.layers[l];
            let states = &self.states[l];
            let k_mat = model.regression(l);
            let bound = match &mode {
                Mode::Er { .. } => ((d as u64 * model.samples(l)) as f64).sqrt(),
                Mode::V { .. } => horizon as f64 * ((d as u64 * model.samples(l)) as f64).sqrt(),
            };
            let reward = match &mode {
                Mode::Er { .. } => None,
                Mode::V { rewards } => Some(&rewards[l]),
            };
            let parts: Vec<(Vec<T>, PassStats)> = frontier
                .par_chunks(block)
                .map(|v| {
                    let w = regress(k_mat, v, m);
                    let mut local = PassStats {
                        clamped: 0,
                        worst_ratio: if bound > 0.0 {
                            max_column_norm(&w, m) / bound
                        } else {
                            0.0
                        },
                    };
                    let mut out = vec![T::zero(); classes.len() * block];
                    for (k, rep) in classes.iter().enumerate() {
                        local.clamped += layer_values(
                            f,
                            &rep.actions,
                            states,
                            Some(&w),
                            reward,
                            &caps,
                            true,
                            &mut out[k * block..(k + 1) * block],
                        );
                    }
                    (out, local)
                })
                .collect();
            frontier = Vec::with_capacity(parts.len() * classes.len() * block);
            for (part, local) in parts {
                stats.merge(local);
                frontier.extend(part);
            }
        }

        let s1 = model.initial_state();
        let values = frontier
            .chunks(block)
            .flat_map(|b| b[s1 * m..(s1 + 1) * m].iter().copied())
            .collect();
        (values, stats)
    }
}

enum Mode<'a, T: Real> {
    Er { reward: &'a RewardTable<T>, caps: &'a [T] },
    V { rewards: &'a [RewardTable<T>] },
}

/// Candidate policies for one layer: behaviour-class representatives of a product set, or
/// every member of a list set.
#[derive(Clone, Debug)]
pub struct Candidates<T: Real> {
    h: usize,
    masses: Vec<T>,
    indices: Vec<u128>,
    kind: Kind<T>,
}

#[derive(Clone, Debug)]
enum Kind<T: Real> {
    Product {
        classes: ProductClasses,
        rules: Vec<Vec<LayerRule<T>>>,
    },
    List {
        policies: Vec<DeterministicPolicy<T>>,
        tables: Vec<ActionTable>,
    },
}

impl<T: Real> Candidates<T> {
    /// Candidates for estimating layer-`h` quantities with policies of `set`.
    pub fn for_layer(model: &LsviModel<T>, set: &PolicySet<T>, h: usize, max: usize) -> Result<Self> {
        if h >= set.horizon() || set.horizon() != model.horizon() {
            return Err(Error::contract(format!(
                "layer {h} invalid for a set of horizon {} and data of horizon {}",
                set.horizon(),
                model.horizon()
            )));
        }
        let f = model.features();
        match set.layer_rules() {
            Some(rules) => {
                let classes = ProductClasses::build(model, rules, h)?;
                let count = classes.combinations().filter(|&c| c <= max).ok_or_else(|| {
                    Error::Size(format!(
                        "{:?} behaviour classes per layer exceed the candidate limit {max}",
                        classes.classes_per_layer()
                    ))
                })?;
                Ok(Candidates {
                    h,
                    masses: (0..count).map(|c| classes.mass(c)).collect(),
                    indices: (0..count).map(|c| classes.prefix_index(c)).collect(),
                    kind: Kind::Product {
                        classes,
                        rules: rules.to_vec(),
                    },
                })
            }
            None => {
                let n = set.len().unwrap_or(0);
                if n > max {
                    return Err(Error::Size(format!("{n} policies exceed the candidate limit {max}")));
                }
                let policies: Vec<DeterministicPolicy<T>> = set.iter().collect();
                let tables = policies.iter().map(|p| p.action_table(f)).collect::<Result<_>>()?;
                Ok(Candidates {
                    h,
                    masses: vec![T::one() / T::from_count(n.max(1)); n],
                    indices: (0..n as u128).collect(),
                    kind: Kind::List { policies, tables },
                })
            }
        }
    }

    pub fn layer(&self) -> usize {
        self.h
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// The `i`-th candidate (built on demand for product sets).
    pub fn policy(&self, i: usize) -> DeterministicPolicy<T> {
        match &self.kind {
            Kind::Product { classes, rules } => classes.policy(rules, i),
            Kind::List { policies, .. } => policies[i].clone(),
        }
    }

    /// Share of the uniform mixture over the set represented by each candidate; sums to 1.
    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    /// Lowest set index (prefix enumeration for product sets) behind each candidate.
    pub fn set_indices(&self) -> &[u128] {
        &self.indices
    }

    pub fn classes(&self) -> Option<&ProductClasses> {
        match &self.kind {
            Kind::Product { classes, .. } => Some(classes),
            Kind::List { .. } => None,
        }
    }

    /// Layer-`h` expectations of `m` rewards for every candidate: `out[i·m + c]`.
    pub(crate) fn estimate_er(&self, model: &LsviModel<T>, reward: &RewardTable<T>, caps: &[T]) -> (Vec<T>, PassStats) {
        let m = caps.len();
        match &self.kind {
            Kind::Product { classes, .. } => classes.run(model, m, Mode::Er { reward, caps }),
            Kind::List { tables, .. } => collect_parts(
                tables
                    .par_iter()
                    .map(|t| {
                        let (v, trace) = er_pass(model, t, self.h, reward, caps);
                        (v, worst_ratio(&trace), trace.total_clamped())
                    })
                    .collect(),
            ),
        }
    }

    /// `V̂^π` for `m` linear rewards for every candidate; requires `h = H − 1`.
    pub(crate) fn estimate_v(&self, model: &LsviModel<T>, rewards: &[RewardTable<T>], m: usize) -> (Vec<T>, PassStats) {
        debug_assert_eq!(self.h + 1, model.horizon());
        match &self.kind {
            Kind::Product { classes, .. } => classes.run(model, m, Mode::V { rewards }),
            Kind::List { tables, .. } => collect_parts(
                tables
                    .par_iter()
                    .map(|t| {
                        let (v, trace) = v_pass(model, t, rewards, m);
                        (v, worst_ratio(&trace), trace.total_clamped())
                    })
                    .collect(),
            ),
        }
    }
}

fn worst_ratio(trace: &super::EstimateTrace) -> f64 {
    trace
        .layers
        .iter()
        .map(|l| {
            if l.weight_bound > 0.0 {
                l.weight_norm / l.weight_bound
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

fn collect_parts<T: Real>(parts: Vec<(Vec<T>, f64, usize)>) -> (Vec<T>, PassStats) {
    let mut stats = PassStats::default();
    let mut out = Vec::new();
    for (v, worst, clamped) in parts {
        stats.merge(PassStats {
            clamped,
            worst_ratio: worst,
        });
        out.extend(v);
    }
    (out, stats)
}
