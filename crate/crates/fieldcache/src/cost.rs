//! Query and FLOP accounting for a routed render.

use std::collections::BTreeMap;

use fieldcache_core::fields::{FieldError, Network, SceneModel};
use fieldcache_core::render::QueryRecord;
use fieldcache_core::reuse::{PathCounters, PathDecision};

/// FLOPs (2 × multiply-adds) per query on each path of one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathFlops {
    pub full: usize,
    pub reuse: usize,
}

pub fn path_flops(model: &SceneModel, network: Network) -> PathFlops {
    let f = model.field(network);
    let (first, decode, second) = (f.first_stage_macs(), f.decode_macs(), f.second_stage_macs());
    PathFlops {
        full: 2 * (first + decode + second),
        reuse: 2 * (decode + second),
    }
}

/// Path counters split by network.
pub fn counters_by_network(model: &SceneModel, records: &[QueryRecord]) -> Result<BTreeMap<Network, PathCounters>, FieldError> {
    let mut out: BTreeMap<Network, PathCounters> = BTreeMap::new();
    for r in records {
        out.entry(model.network(r.component)?).or_default().record(r.decision);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cost {
    /// Full-path queries over the baseline's total queries.
    pub query_ratio: f64,
    pub flops: f64,
}

pub fn count_cost(model: &SceneModel, counters: &BTreeMap<Network, PathCounters>, baseline_total: usize) -> Cost {
    let mut flops = 0.0;
    let mut full = 0;
    for (&net, c) in counters {
        let p = path_flops(model, net);
        flops += (c.full * p.full + c.reuse * p.reuse) as f64;
        full += c.full;
    }
    Cost {
        query_ratio: if baseline_total == 0 { 0.0 } else { full as f64 / baseline_total as f64 },
        flops,
    }
}

/// Counters for a list of decisions; convenience for tests and reports.
pub fn tally(decisions: impl IntoIterator<Item = PathDecision>) -> PathCounters {
    let mut c = PathCounters::default();
    decisions.into_iter().for_each(|d| c.record(d));
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use fieldcache_core::fields::FieldConfig;
    use fieldcache_core::presets;

    fn model() -> SceneModel {
        let scene = presets::desk().unwrap().spec.scene_graph().unwrap();
        SceneModel::new(&scene, FieldConfig::default(), 0).unwrap()
    }

    #[test]
    fn reuse_is_cheaper_than_full() {
        let m = model();
        for net in [Network::Background, Network::Class(0), Network::Class(1)] {
            let p = path_flops(&m, net);
            assert!(p.reuse < p.full);
            assert!(p.reuse > 0);
        }
        // Low-rank reconstruction: m⁴ + 2m² multiply-adds.
        let f = m.field(Network::Background);
        assert_eq!(f.decode_macs(), 256 + 32);
    }

    #[test]
    fn all_full_and_all_skip() {
        let m = model();
        let mut c = BTreeMap::new();
        c.insert(Network::Background, tally([PathDecision::Full; 10]));
        let cost = count_cost(&m, &c, 10);
        assert_eq!(cost.query_ratio, 1.0);
        assert_eq!(cost.flops, 10.0 * path_flops(&m, Network::Background).full as f64);

        c.insert(Network::Background, tally([PathDecision::Skip; 10]));
        let cost = count_cost(&m, &c, 10);
        assert_eq!((cost.query_ratio, cost.flops), (0.0, 0.0));
    }
}
