#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use enhant_sim::config::{
    parse_config_file, reference_energy, ConfigFile, EndpointSpec, NodeSection, SimulationSection, SourceSection,
    TopologySection,
};
use enhant_sim::energy::{LedgerReason, RawEnergyParams};
use enhant_sim::engine::{Engine, RunOptions};
use enhant_sim::model::Endpoint;
use enhant_sim::strategy::{PauseLimits, StrategyKind};
use enhant_sim::{load_config, RunConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// One of the shipped reference topologies, 1 to 4.
pub fn reference(n: usize) -> RunConfig {
    load_config(configs_dir().join(format!("topology{n}.json"))).unwrap()
}

pub fn diamond() -> RunConfig {
    reference(1)
}

pub fn from_json(text: &str) -> RunConfig {
    RunConfig::from_file(parse_config_file(text).unwrap(), Path::new(".")).unwrap()
}

fn ep(s: &str) -> EndpointSpec {
    EndpointSpec::parse(s).unwrap()
}

/// A small random instance that passes validation: up to 4 intermediates,
/// up to 2 sources, up to 3 slots, rates up to 2, and batteries low enough
/// that drops happen regularly.
pub fn random_instance(rng: &mut ChaCha8Rng) -> RunConfig {
    loop {
        let n = rng.random_range(2..=4usize);
        let ns = rng.random_range(1..=2usize);
        let mut nodes: Vec<u32> = (1..=n as u32).collect();
        let mut links: BTreeSet<(String, String)> = BTreeSet::new();
        let add = |a: String, b: String, links: &mut BTreeSet<(String, String)>| {
            if a != b {
                links.insert(if a < b { (a, b) } else { (b, a) });
            }
        };
        let mut paths = Vec::new();
        for s in 1..=ns {
            let mut pair: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
            for p in &mut pair {
                nodes.shuffle(rng);
                let len = rng.random_range(1..=n.min(3));
                *p = nodes[..len].to_vec();
                add(format!("s{s}"), p[0].to_string(), &mut links);
                for w in p.windows(2) {
                    add(w[0].to_string(), w[1].to_string(), &mut links);
                }
                add(p[len - 1].to_string(), "d".into(), &mut links);
            }
            paths.push(pair);
            for v in 1..=n {
                if rng.random_bool(0.25) {
                    add(format!("s{s}"), v.to_string(), &mut links);
                }
            }
        }
        for a in 1..=n {
            for b in a + 1..=n {
                if rng.random_bool(0.3) {
                    add(a.to_string(), b.to_string(), &mut links);
                }
            }
        }
        let energy = RawEnergyParams {
            send_bit_energy: rng.random_range(0.1..1.0),
            receive_bit_energy: rng.random_range(0.1..1.0),
            data_packet_bits: 1000.0,
            control_packet_bits: rng.random_range(10.0..100.0),
            data_header_bits: rng.random_range(0.0..200.0),
            control_header_bits: 5.0,
            equiv_detection_bits: 1.0,
        };
        let d = (energy.send_bit_energy + energy.receive_bit_energy) * 1000.0 / 1000.0;
        let b_min = (energy.send_bit_energy + energy.receive_bit_energy) * energy.control_packet_bits / 1000.0;
        let high = rng.random_range(0.0..2.0);
        let low = high + rng.random_range(0.0..3.0);
        let floor_bmax = (b_min + d * low) / 0.9 + 0.5;
        let kind = *[StrategyKind::NoFeedback, StrategyKind::FeedbackWithDangerZones, StrategyKind::Estimate]
            .choose(rng)
            .unwrap();
        let file = ConfigFile {
            description: None,
            topology: TopologySection {
                num_intermediates: n,
                links: links.into_iter().map(|(a, b)| [ep(&a), ep(&b)]).collect(),
                paths,
                positions: None,
            },
            energy,
            simulation: SimulationSection {
                strategy: kind,
                num_slots: rng.random_range(1..=3),
                num_ss_slots: None,
                high_danger: high,
                low_danger: low,
                shift_pause: PauseLimits {
                    up: rng.random_range(0..=3),
                    down: rng.random_range(0..=3),
                    slot: rng.random_range(0..=3),
                },
                allowed_drift: rng.random_range(0.0..0.1),
                drift_mode: Default::default(),
                seed: rng.random(),
            },
            sources: (0..ns)
                .map(|_| SourceSection {
                    rate: rng.random_range(0..=2),
                    h1: rng.random_range(0.0..2.0),
                    h2: rng.random_range(0.0..2.0),
                    initial_route: rng.random_range(1..=2),
                })
                .collect(),
            nodes: (0..n)
                .map(|_| {
                    let b_max = floor_bmax.max(rng.random_range(1.0..8.0));
                    NodeSection {
                        harvest: Some(rng.random_range(0.0..d)),
                        trace_file: None,
                        trace: None,
                        initial_battery: Some(rng.random_range(0.0..(3.0 * d).min(b_max))),
                        b_max,
                    }
                })
                .collect(),
        };
        if let Ok(cfg) = RunConfig::from_file(file, Path::new(".")) {
            return cfg;
        }
    }
}

/// Adjacency as plain pairs, read from the config document rather than
/// the engine's topology tables.
struct Adjacency {
    links: BTreeSet<(Endpoint, Endpoint)>,
}

impl Adjacency {
    fn new(cfg: &RunConfig) -> Self {
        let mut links = BTreeSet::new();
        for [a, b] in &cfg.topology_section.links {
            links.insert((a.0, b.0));
            links.insert((b.0, a.0));
        }
        Adjacency { links }
    }

    fn adjacent(&self, a: Endpoint, b: Endpoint) -> bool {
        self.links.contains(&(a, b))
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SuiteCounts {
    pub instances: usize,
    pub slots: usize,
    pub packets: usize,
    pub drops: usize,
    pub fatal: usize,
}

/// Runs one instance slot by slot and checks it against the brute-force
/// forwarding oracle, the ledger replayer and packet conservation.
pub fn check_instance(cfg: &RunConfig, counts: &mut SuiteCounts) -> Result<(), String> {
    let adj = Adjacency::new(cfg);
    let n = cfg.nodes.len();
    let c = cfg.costs;
    let paths: Vec<[Vec<u32>; 2]> = cfg.topology_section.paths.clone();
    let mut engine = Engine::new(cfg, RunOptions { record_ledger: true, ..Default::default() });
    engine.verify_initial_routing();

    let mut oracle: Vec<f64> = engine.state.energies.iter().map(|e| e.level).collect();
    let mut replayed = oracle.clone();
    let mut ledger_pos = 0;
    counts.instances += 1;

    for slot in 1..=cfg.num_slots {
        let outcome = engine.run_slot(None);

        // Ledger replay of everything logged this slot.
        for entry in &engine.ledger[ledger_pos..] {
            let i = entry.node.idx();
            match entry.reason {
                LedgerReason::Harvest => replayed[i] = (replayed[i] + entry.amount).min(cfg.nodes[i].b_max),
                _ => replayed[i] -= entry.amount,
            }
        }
        let entries = &engine.ledger[ledger_pos..];
        ledger_pos = engine.ledger.len();
        let actual: Vec<f64> = engine.state.energies.iter().map(|e| e.level).collect();
        for i in 0..n {
            if replayed[i].to_bits() != actual[i].to_bits() {
                return Err(format!("slot {slot}: ledger replay gives {} for node {}, engine {}", replayed[i], i + 1, actual[i]));
            }
        }

        let o = match outcome {
            Ok(o) => o,
            Err(f) => {
                if !(engine.state.energies[f.node.idx()].level < c.control_rx) {
                    return Err(format!("slot {slot}: fatal without cause: {f}"));
                }
                counts.fatal += 1;
                return Ok(());
            }
        };
        counts.slots += 1;

        // Brute-force forwarding.
        let active: Vec<&Vec<u32>> =
            o.routing.0.iter().enumerate().map(|(s, sel)| &paths[s][sel.number() as usize - 1]).collect();
        let listening: BTreeSet<u32> = active.iter().flat_map(|p| p.iter().copied()).collect();
        let node = |v: u32| Endpoint::Node(enhant_sim::model::NodeId(v));
        let mut sent = vec![0u32; paths.len()];
        let mut delivered = vec![0u32; paths.len()];
        let mut dropped = vec![0u32; paths.len()];
        for ev in &o.schedule.events {
            let path = active[ev.source];
            sent[ev.source] += 1;
            for &v in &listening {
                if v != path[0] && adj.adjacent(Endpoint::Source(ev.source), node(v)) {
                    let l = &mut oracle[v as usize - 1];
                    if *l > c.data_header_rx + c.b_min {
                        *l -= c.data_header_rx;
                    }
                }
            }
            let mut ok = true;
            for (k, &u) in path.iter().enumerate() {
                let l = &mut oracle[u as usize - 1];
                if !(*l > c.data + c.b_min) {
                    ok = false;
                    break;
                }
                *l -= c.data;
                let next = path.get(k + 1).copied();
                for &v in &listening {
                    if Some(v) != next && v != u && adj.adjacent(node(u), node(v)) {
                        let l = &mut oracle[v as usize - 1];
                        if *l > c.data_header_rx + c.b_min {
                            *l -= c.data_header_rx;
                        }
                    }
                }
            }
            if ok {
                delivered[ev.source] += 1;
            } else {
                dropped[ev.source] += 1;
            }
        }
        for l in oracle.iter_mut() {
            if *l >= c.control_tx {
                *l -= c.control_tx;
            }
        }
        if o.control_sent {
            for l in oracle.iter_mut() {
                *l -= c.control_rx;
            }
        }
        for (i, l) in oracle.iter_mut().enumerate() {
            *l = (*l + cfg.nodes[i].harvest.at(slot - 1)).min(cfg.nodes[i].b_max);
        }

        if (sent.clone(), delivered.clone(), dropped.clone()) != (o.sent.clone(), o.delivered.clone(), o.dropped.clone()) {
            return Err(format!(
                "slot {slot}: oracle sent/delivered/dropped {sent:?}/{delivered:?}/{dropped:?}, engine {:?}/{:?}/{:?}",
                o.sent, o.delivered, o.dropped
            ));
        }
        for i in 0..n {
            if oracle[i].to_bits() != o.levels[i].to_bits() {
                return Err(format!("slot {slot}: oracle level {} for node {}, engine {}", oracle[i], i + 1, o.levels[i]));
            }
        }
        for s in 0..paths.len() {
            if o.sent[s] != o.delivered[s] + o.dropped[s] || o.sent[s] != o.rates[s] || o.delivered[s] > o.rates[s] {
                return Err(format!("slot {slot}: conservation broken for source {}", s + 1));
            }
        }
        // Nodes off every active path pay no forwarding or overhearing.
        for e in entries {
            let v = e.node.0;
            if matches!(e.reason, LedgerReason::Data | LedgerReason::Overhear) && !listening.contains(&v) {
                return Err(format!("slot {slot}: inactive node {v} charged for {:?}", e.reason));
            }
        }
        counts.packets += o.schedule.events.len();
        counts.drops += dropped.iter().sum::<u32>() as usize;
    }
    Ok(())
}

/// Checks `count` random instances from a fixed seed.
pub fn run_oracle_suite(count: usize, seed: u64) -> Result<SuiteCounts, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = SuiteCounts::default();
    for k in 0..count {
        let cfg = random_instance(&mut rng);
        check_instance(&cfg, &mut counts).map_err(|e| format!("instance {k}: {e}"))?;
    }
    Ok(counts)
}

pub fn reference_energy_params() -> RawEnergyParams {
    reference_energy()
}
