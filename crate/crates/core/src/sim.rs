//! Slot-level Monte Carlo simulator of Mode 2 broadcast with blind
//! repetitions on a line of UEs.
//!
//! Each replication draws its own topology and traffic from a ChaCha8 stream:
//! the generator is seeded with [`SimConfig::seed`] and replication `i` uses
//! stream number `i` (`ChaCha8Rng::set_stream`). Replications run in parallel
//! and are reduced in index order, so reports do not depend on the thread
//! count.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::link::{eesm_receive, pathloss};
use crate::params::{ConfigError, Scenario, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{field} out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },
    #[error("no pairs measured")]
    NoPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub num_ues: usize,
    /// Total slots per replication, warm-up included.
    pub num_slots: u64,
    /// Packets whose first attempt falls before this slot are not measured.
    pub warmup_slots: u64,
    pub seed: u64,
    pub replications: usize,
    /// Pairs are measured only when both ends are at least this far from the
    /// ends of the line.
    pub edge_margin: f64,
    /// Transmitters farther than this from a receiver are ignored; `None`
    /// means no cutoff.
    pub interference_cutoff: Option<f64>,
}

/// Distance at which the power received on one subchannel falls to
/// `sigma / 100`.
pub fn default_interference_cutoff(cfg: &ScenarioConfig) -> f64 {
    let ratio = 100.0 * cfg.tx_power_s / (f64::from(cfg.packet_width_m) * cfg.noise_sigma);
    ratio.powf(1.0 / cfg.pathloss_beta) / cfg.pathloss_a
}

/// Two mean renewal cycles `1 / (lambda tau) + W`, in slots.
pub fn default_warmup(cfg: &ScenarioConfig) -> u64 {
    let cycle = 1.0 / (cfg.lambda_rate * cfg.slot_tau) + f64::from(cfg.window());
    (2.0 * cycle).ceil().min(1e9) as u64
}

impl SimConfig {
    /// Defaults: 1000 UEs, 10 replications, edge margin `2R`, cutoff at
    /// `sigma / 100`, warm-up of two renewal cycles followed by 20000
    /// measured slots.
    pub fn new(scenario: ScenarioConfig) -> Self {
        let warmup_slots = default_warmup(&scenario);
        SimConfig {
            num_ues: 1000,
            num_slots: warmup_slots + 20_000,
            warmup_slots,
            seed: 0,
            replications: 10,
            edge_margin: 2.0 * scenario.range_r,
            interference_cutoff: Some(default_interference_cutoff(&scenario)),
            scenario,
        }
    }

    pub fn validate(&self) -> Result<Scenario, SimError> {
        let sc = Scenario::new(self.scenario.clone())?;
        let bad = |field, reason: &str| {
            Err(SimError::OutOfRange {
                field,
                reason: reason.to_string(),
            })
        };
        if self.num_ues < 2 {
            return bad("num_ues", "need at least 2 UEs");
        }
        if self.num_slots < u64::from(sc.derived().window_w) {
            return bad("num_slots", "need at least W slots");
        }
        if self.replications == 0 {
            return bad("replications", "need at least 1 replication");
        }
        if !(self.edge_margin >= self.scenario.range_r) {
            return bad("edge_margin", "must be >= R");
        }
        if let Some(c) = self.interference_cutoff {
            if !(c >= 0.0) {
                return bad("interference_cutoff", "must be >= 0");
            }
        }
        Ok(sc)
    }

    fn rng(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication as u64);
        rng
    }
}

/// UE positions on the line: the first at 0, then exponential gaps with rate
/// `phi`.
pub fn build_topology<R: Rng + ?Sized>(sim: &SimConfig, rng: &mut R) -> Vec<f64> {
    let gap = Exp::new(sim.scenario.phi).expect("phi > 0");
    let mut pos = Vec::with_capacity(sim.num_ues);
    let mut x = 0.0;
    pos.push(x);
    for _ in 1..sim.num_ues {
        x += gap.sample(rng);
        pos.push(x);
    }
    pos
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub plr_estimate: f64,
    /// Half-width of the normal-approximation 95% interval over replication
    /// means.
    pub confidence_interval_95: f64,
    pub pairs_measured: u64,
    pub losses: u64,
    /// Lost pairs where every attempt met a transmitting receiver.
    pub losses_half_duplex: u64,
    /// Lost pairs where at least one attempt was lost to interference.
    pub losses_interference: u64,
    /// Transmissions per UE per slot after warm-up.
    pub transmit_frequency: f64,
    pub replication_plr: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    None,
    HalfDuplex,
    Interference,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::None => "none",
            Cause::HalfDuplex => "half_duplex",
            Cause::Interference => "interference",
        }
    }
}

/// Another transmitter heard by a receiver in the same slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interferer {
    pub ue: u32,
    pub distance: f64,
    /// Subchannels shared with the tagged packet.
    pub overlap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RxOutcome {
    pub rx: u32,
    /// TX-RX distance, m.
    pub distance: f64,
    pub success: bool,
    pub cause: Cause,
    pub interferers: Vec<Interferer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub replication: usize,
    pub packet_id: u64,
    pub tx: u32,
    pub attempt_index: u32,
    pub slot: u64,
    pub subch_start: u32,
    pub receivers: Vec<RxOutcome>,
}

/// One transmission in a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub ue: usize,
    pub subch_start: u32,
}

/// Link-level view of one slot shared by the simulator and its tests.
pub struct SlotChannel<'a> {
    pub cfg: &'a ScenarioConfig,
    pub positions: &'a [f64],
    pub cutoff: f64,
}

impl SlotChannel<'_> {
    /// Outcome at `rx` of transmission `txs[tagged]`, given every
    /// transmission of the slot sorted by UE index and the set of busy UEs.
    pub fn receive(
        &self,
        txs: &[Transmission],
        busy: &[bool],
        tagged: usize,
        rx: usize,
        keep_interferers: bool,
    ) -> RxOutcome {
        let cfg = self.cfg;
        let tx = txs[tagged];
        let x_rx = self.positions[rx];
        let distance = (self.positions[tx.ue] - x_rx).abs();
        let mut out = RxOutcome {
            rx: rx as u32,
            distance,
            success: false,
            cause: Cause::HalfDuplex,
            interferers: Vec::new(),
        };
        if busy[rx] {
            return out;
        }
        let width = cfg.packet_width_m;
        let per_subchannel =
            |d: f64| pathloss(d.max(1e-9), cfg) * cfg.tx_power_s / f64::from(width);
        let signal = per_subchannel(distance);
        let mut interference = [0.0f64; 64];
        let mut interference_vec;
        let interference: &mut [f64] = if width as usize <= interference.len() {
            &mut interference[..width as usize]
        } else {
            interference_vec = vec![0.0; width as usize];
            &mut interference_vec
        };
        // txs are sorted by position since UE indices are
        let lo = txs.partition_point(|t| self.positions[t.ue] < x_rx - self.cutoff);
        for (k, other) in txs.iter().enumerate().skip(lo) {
            let d = (self.positions[other.ue] - x_rx).abs();
            if self.positions[other.ue] > x_rx + self.cutoff {
                break;
            }
            if k == tagged || other.ue == rx || d > self.cutoff {
                continue;
            }
            let start = other.subch_start.max(tx.subch_start);
            let end = (other.subch_start + width).min(tx.subch_start + width);
            let overlap = end.saturating_sub(start);
            if keep_interferers {
                out.interferers.push(Interferer {
                    ue: other.ue as u32,
                    distance: d,
                    overlap,
                });
            }
            if overlap > 0 {
                let power = per_subchannel(d);
                for sub in start..end {
                    interference[(sub - tx.subch_start) as usize] += power;
                }
            }
        }
        let sinr: Vec<f64> = interference
            .iter()
            .map(|i| signal / (i + cfg.noise_sigma))
            .collect();
        out.success = eesm_receive(&sinr, cfg).is_some_and(|o| o.success);
        out.cause = if out.success {
            Cause::None
        } else {
            Cause::Interference
        };
        out
    }
}

struct Packet {
    id: u64,
    attempts: Vec<(u64, u32)>,
    next: usize,
    measured: bool,
    receivers: Vec<usize>,
    delivered: Vec<bool>,
    interfered: Vec<bool>,
}

#[derive(Default)]
struct Tally {
    pairs: u64,
    losses: u64,
    losses_hd: u64,
    losses_int: u64,
    transmissions: u64,
}

struct Replication<'a, F> {
    sim: &'a SimConfig,
    sc: &'a Scenario,
    index: usize,
    trace: Option<&'a F>,
}

impl<F: Fn(usize, u64) -> bool> Replication<'_, F> {
    fn run(&self) -> (Tally, Vec<AttemptRecord>) {
        let sim = self.sim;
        let cfg = self.sc.config();
        let window = self.sc.derived().window_w;
        let nu = cfg.repetitions_nu as usize;
        let starts = cfg.num_subchannels_b - cfg.packet_width_m + 1;
        let mut rng = sim.rng(self.index);
        let positions = build_topology(sim, &mut rng);
        let n = positions.len();
        let line_end = positions[n - 1];
        let in_zone: Vec<bool> = positions
            .iter()
            .map(|&x| x >= sim.edge_margin && x <= line_end - sim.edge_margin)
            .collect();
        // receivers of each UE: measured UEs within R
        let receivers: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                if !in_zone[i] {
                    return Vec::new();
                }
                let x = positions[i];
                let lo = positions.partition_point(|&p| p < x - cfg.range_r);
                let hi = positions.partition_point(|&p| p <= x + cfg.range_r);
                (lo..hi).filter(|&j| j != i && in_zone[j]).collect()
            })
            .collect();
        let idle = Exp::new(cfg.lambda_rate).expect("lambda > 0");
        let channel = SlotChannel {
            cfg,
            positions: &positions,
            cutoff: sim.interference_cutoff.unwrap_or(f64::INFINITY),
        };

        let mut next_id = 0u64;
        let mut new_packet = |ue: usize, ready_at: f64, rng: &mut ChaCha8Rng| -> Packet {
            let arrival = ready_at + idle.sample(rng);
            let first = (arrival / cfg.slot_tau).floor() as u64 + 1;
            let mut slots = vec![first];
            if nu > 0 {
                let mut offsets: Vec<usize> = sample(rng, window as usize - 1, nu).into_vec();
                offsets.sort_unstable();
                slots.extend(offsets.iter().map(|o| first + *o as u64 + 1));
            }
            let attempts = slots
                .into_iter()
                .map(|s| (s, rng.gen_range(0..starts)))
                .collect::<Vec<_>>();
            let last = attempts[attempts.len() - 1].0;
            let measured = first >= sim.warmup_slots && last < sim.num_slots;
            let rx = if measured {
                receivers[ue].clone()
            } else {
                Vec::new()
            };
            let id = next_id;
            next_id += 1;
            Packet {
                id,
                attempts,
                next: 0,
                measured,
                delivered: vec![false; rx.len()],
                interfered: vec![false; rx.len()],
                receivers: rx,
            }
        };

        let mut packets: Vec<Packet> = Vec::with_capacity(n);
        let mut heap = BinaryHeap::with_capacity(n);
        for ue in 0..n {
            let p = new_packet(ue, 0.0, &mut rng);
            heap.push(Reverse((p.attempts[0].0, ue)));
            packets.push(p);
        }

        let mut tally = Tally::default();
        let mut trace = Vec::new();
        let mut busy = vec![false; n];
        let mut txs: Vec<Transmission> = Vec::new();
        while let Some(&Reverse((slot, _))) = heap.peek() {
            if slot >= sim.num_slots {
                break;
            }
            txs.clear();
            while let Some(&Reverse((s, ue))) = heap.peek() {
                if s != slot {
                    break;
                }
                heap.pop();
                let p = &packets[ue];
                txs.push(Transmission {
                    ue,
                    subch_start: p.attempts[p.next].1,
                });
            }
            txs.sort_unstable_by_key(|t| t.ue);
            for t in &txs {
                busy[t.ue] = true;
            }
            if slot >= sim.warmup_slots {
                tally.transmissions += txs.len() as u64;
            }

            for k in 0..txs.len() {
                let ue = txs[k].ue;
                let traced = self.trace.is_some_and(|f| f(self.index, packets[ue].id));
                let packet = &mut packets[ue];
                if packet.measured || traced {
                    let mut record = traced.then(|| AttemptRecord {
                        replication: self.index,
                        packet_id: packet.id,
                        tx: ue as u32,
                        attempt_index: packet.next as u32,
                        slot,
                        subch_start: txs[k].subch_start,
                        receivers: Vec::new(),
                    });
                    for (r, &rx) in packet.receivers.iter().enumerate() {
                        let out = channel.receive(&txs, &busy, k, rx, traced);
                        packet.delivered[r] |= out.success;
                        packet.interfered[r] |= out.cause == Cause::Interference;
                        if let Some(rec) = record.as_mut() {
                            rec.receivers.push(out);
                        }
                    }
                    if let Some(rec) = record {
                        trace.push(rec);
                    }
                }
            }

            for t in &txs {
                busy[t.ue] = false;
                let packet = &mut packets[t.ue];
                packet.next += 1;
                if packet.next < packet.attempts.len() {
                    heap.push(Reverse((packet.attempts[packet.next].0, t.ue)));
                    continue;
                }
                if packet.measured {
                    tally.pairs += packet.receivers.len() as u64;
                    for (ok, hit) in packet.delivered.iter().zip(&packet.interfered) {
                        if !ok {
                            tally.losses += 1;
                            if *hit {
                                tally.losses_int += 1;
                            } else {
                                tally.losses_hd += 1;
                            }
                        }
                    }
                }
                let ready = (slot + 1) as f64 * cfg.slot_tau;
                let p = new_packet(t.ue, ready, &mut rng);
                heap.push(Reverse((p.attempts[0].0, t.ue)));
                *packet = p;
            }
        }
        (tally, trace)
    }
}

fn run_replications<F>(
    sim: &SimConfig,
    trace: Option<&F>,
) -> Result<(Scenario, Vec<(Tally, Vec<AttemptRecord>)>), SimError>
where
    F: Fn(usize, u64) -> bool + Sync,
{
    let sc = sim.validate()?;
    let results = (0..sim.replications)
        .into_par_iter()
        .map(|index| {
            Replication {
                sim,
                sc: &sc,
                index,
                trace,
            }
            .run()
        })
        .collect();
    Ok((sc, results))
}

/// Runs all replications and aggregates them into a report.
pub fn run(sim: &SimConfig) -> Result<SimReport, SimError> {
    let (_, results) = run_replications::<fn(usize, u64) -> bool>(sim, None)?;
    let tallies: Vec<Tally> = results.into_iter().map(|(t, _)| t).collect();
    let pairs: u64 = tallies.iter().map(|t| t.pairs).sum();
    if pairs == 0 {
        return Err(SimError::NoPairs);
    }
    let per_rep: Vec<f64> = tallies
        .iter()
        .filter(|t| t.pairs > 0)
        .map(|t| t.losses as f64 / t.pairs as f64)
        .collect();
    let count = per_rep.len() as f64;
    let mean = per_rep.iter().sum::<f64>() / count;
    let half_width = if per_rep.len() > 1 {
        let var = per_rep.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        1.96 * (var / count).sqrt()
    } else {
        f64::INFINITY
    };
    let measured_slots = sim.num_slots.saturating_sub(sim.warmup_slots).max(1);
    let transmissions: u64 = tallies.iter().map(|t| t.transmissions).sum();
    Ok(SimReport {
        plr_estimate: mean,
        confidence_interval_95: half_width,
        pairs_measured: pairs,
        losses: tallies.iter().map(|t| t.losses).sum(),
        losses_half_duplex: tallies.iter().map(|t| t.losses_hd).sum(),
        losses_interference: tallies.iter().map(|t| t.losses_int).sum(),
        transmit_frequency: transmissions as f64
            / (measured_slots as f64 * sim.num_ues as f64 * sim.replications as f64),
        replication_plr: per_rep,
        seed: sim.seed,
    })
}

/// Per-attempt log of every packet accepted by `packet_filter(replication,
/// packet_id)` whose attempts all fall inside the run. Receivers are listed
/// only for packets sent from inside the measured zone.
pub fn attempt_trace<F>(sim: &SimConfig, packet_filter: F) -> Result<Vec<AttemptRecord>, SimError>
where
    F: Fn(usize, u64) -> bool + Sync,
{
    let (_, results) = run_replications(sim, Some(&packet_filter))?;
    Ok(results.into_iter().flat_map(|(_, t)| t).collect())
}

pub const TRACE_CSV_HEADER: &str =
    "replication,packet_id,attempt_index,slot,subch_start,rx_id,outcome,cause";

/// Writes the trace as CSV, one row per (attempt, receiver).
pub fn write_trace_csv<W: std::io::Write>(
    records: &[AttemptRecord],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for rec in records {
        for rx in &rec.receivers {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                rec.replication,
                rec.packet_id,
                rec.attempt_index,
                rec.slot,
                rec.subch_start,
                rx.rx,
                if rx.success { "ok" } else { "lost" },
                rx.cause.as_str()
            )?;
        }
    }
    Ok(())
}
