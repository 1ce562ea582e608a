use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use crate::optimizer::RoutinePath;
use crate::routines::{render_params, ParamAssignment, RoutineDescriptor, Schema};
use crate::runtime::RuntimeError;

/// What is being measured, so injected timers can answer per item.
#[derive(Debug, Clone, Copy)]
pub enum Probe<'a> {
    Routine {
        layer: &'a str,
        descriptor: &'a RoutineDescriptor,
        params: &'a ParamAssignment,
    },
    Adapt {
        edge: (&'a str, &'a str),
        from: &'a Schema,
        to: &'a Schema,
    },
    /// One inference of the whole net under `path`.
    Net { path: &'a RoutinePath<f64> },
}

impl Probe<'_> {
    pub fn label(&self) -> String {
        match self {
            Probe::Routine {
                layer,
                descriptor,
                params,
            } => format!("{layer} {descriptor} {}", render_params(params)),
            Probe::Adapt { edge, from, to } => format!("{}->{} {from}->{to}", edge.0, edge.1),
            Probe::Net { path } => format!("net {}", path.net),
        }
    }
}

pub type Work<'w> = dyn FnMut() -> Result<(), RuntimeError> + 'w;

pub trait Timer {
    /// Microseconds taken by one call of `work`.
    fn time(&mut self, probe: &Probe<'_>, work: &mut Work<'_>) -> Result<f64, RuntimeError>;
}

/// Monotonic wall clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct WallTimer;

impl Timer for WallTimer {
    fn time(&mut self, _: &Probe<'_>, work: &mut Work<'_>) -> Result<f64, RuntimeError> {
        let t = Instant::now();
        work()?;
        Ok(t.elapsed().as_secs_f64() * 1e6)
    }
}

type CostFn = Box<dyn Fn(&Probe<'_>) -> f64>;

/// Deterministic clock answering from a cost function. The work still runs
/// (unless disabled) so kernel failures surface exactly as with the wall clock.
pub struct FakeTimer {
    cost: CostFn,
    execute: bool,
}

impl FakeTimer {
    pub fn new(cost: impl Fn(&Probe<'_>) -> f64 + 'static) -> Self {
        FakeTimer {
            cost: Box::new(cost),
            execute: true,
        }
    }

    /// Costs derived from a hash of the probe label: routines in [1, 100) us,
    /// adapts in [0.1, 1.1) us, and a whole net the sum of its members.
    pub fn hashed() -> Self {
        FakeTimer::new(hashed_cost)
    }

    pub fn without_execution(mut self) -> Self {
        self.execute = false;
        self
    }
}

fn unit_hash(s: &str) -> f64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    (h.finish() % 10_000) as f64 / 10_000.0
}

pub fn hashed_cost(p: &Probe<'_>) -> f64 {
    match p {
        Probe::Routine { descriptor, .. } if descriptor.algorithm == "void" => 0.0,
        Probe::Routine { .. } => 1.0 + 99.0 * unit_hash(&p.label()),
        Probe::Adapt { .. } => 0.1 + unit_hash(&p.label()),
        Probe::Net { path } => {
            let layers = path.layers.iter().map(|c| {
                hashed_cost(&Probe::Routine {
                    layer: &c.layer,
                    descriptor: &c.descriptor,
                    params: &c.params,
                })
            });
            let adapts = path.adapts.iter().map(|a| {
                hashed_cost(&Probe::Adapt {
                    edge: (&a.edge.0, &a.edge.1),
                    from: &a.from,
                    to: &a.to,
                })
            });
            layers.chain(adapts).sum()
        }
    }
}

impl Timer for FakeTimer {
    fn time(&mut self, probe: &Probe<'_>, work: &mut Work<'_>) -> Result<f64, RuntimeError> {
        if self.execute {
            work()?;
        }
        Ok((self.cost)(probe))
    }
}

/// Summary of repeated measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

impl Stats {
    /// Population statistics; a single run has zero spread.
    pub fn of(samples: &[f64]) -> Stats {
        let n = samples.len();
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        let mean = if n == 0 { 0.0 } else { s.iter().sum::<f64>() / n as f64 };
        let var = if n == 0 {
            0.0
        } else {
            s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
        };
        Stats {
            median,
            mean,
            std: var.sqrt(),
            runs: n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_examples() {
        let s = Stats::of(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert!((s.std - (12.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(Stats::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn hashed_costs_are_stable_and_in_range() {
        let d = RoutineDescriptor::parse("cpu/naive").unwrap();
        let params = ParamAssignment::new();
        let p = Probe::Routine {
            layer: "conv",
            descriptor: &d,
            params: &params,
        };
        let a = hashed_cost(&p);
        assert_eq!(a, hashed_cost(&p));
        assert!((1.0..100.0).contains(&a));
    }
}
