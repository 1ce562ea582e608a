//! Exhaustive search over every schema assignment.

use super::cost::CostModel;
use super::path::RoutinePath;
use super::problem::Problem;
use super::OptimizerError;
use crate::graph::Net;
use crate::routines::Schema;
use crate::scalar::Cost;

/// Largest search space the oracle accepts by default: 3^12.
pub const DEFAULT_ORACLE_BOUND: u128 = 531_441;

pub fn brute_force_optimal<C: Cost>(
    net: &Net,
    costs: &CostModel<C>,
    lambda: &[Schema],
) -> Result<RoutinePath<C>, OptimizerError> {
    brute_force_optimal_with_bound(net, costs, lambda, DEFAULT_ORACLE_BOUND)
}

/// Works on any DAG, including multi-input and multi-output nets.
///
/// Layers are enumerated in topological order, earlier layers varying
/// slowest and schemas ascending, and only a strictly smaller total replaces
/// the incumbent, so among equal optima the lexicographically smallest
/// schema vector wins.
pub fn brute_force_optimal_with_bound<C: Cost>(
    net: &Net,
    costs: &CostModel<C>,
    lambda: &[Schema],
    bound: u128,
) -> Result<RoutinePath<C>, OptimizerError> {
    let pb = Problem::new(net, costs, lambda)?;
    let mut distinct = lambda.to_vec();
    distinct.sort();
    distinct.dedup();
    let size = (0..pb.free_layers()).fold(1u128, |acc, _| acc.saturating_mul(distinct.len() as u128));
    if size > bound {
        return Err(OptimizerError::TooLarge { size, bound });
    }

    struct Search<'p, 'a, C> {
        pb: &'p Problem<'a, C>,
        assign: Vec<usize>,
        best: Option<(C, Vec<usize>)>,
    }

    impl<C: Cost> Search<'_, '_, C> {
        fn go(&mut self, depth: usize, partial: C) {
            let Some(&l) = self.pb.order.get(depth) else {
                if self.best.as_ref().map_or(true, |(b, _)| partial < *b) {
                    self.best = Some((partial, self.assign.clone()));
                }
                return;
            };
            for o in 0..self.pb.opts[l].len() {
                self.assign[l] = o;
                let mut t = partial + self.pb.opts[l][o].cost;
                for (p, table) in &self.pb.incoming[l] {
                    t = t + table[self.assign[*p]][o];
                }
                self.go(depth + 1, t);
            }
        }
    }

    let mut s = Search {
        pb: &pb,
        assign: vec![0; net.len()],
        best: None,
    };
    s.go(0, C::zero());
    let (_, assign) = s.best.ok_or_else(|| OptimizerError::Internal("oracle found no assignment".into()))?;
    Ok(pb.into_path(&assign, lambda))
}
