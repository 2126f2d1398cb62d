//! Master/worker runtime over abstract transports.

pub mod master;
pub mod transport;
pub mod worker;

use std::sync::{Arc, Mutex};

pub use master::{reduce_stats, run_master, RemoteBackend};
pub use transport::{accept_workers, in_process_pair, ByteLedger, Counting, InProcess, Tcp, Transport};
pub use worker::run_worker;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{shard_ranges, FitConfig, FitResult};

/// Splits `data` into `p` contiguous shards with their first-row offsets.
pub fn shard_data(data: &Dataset, p: usize) -> Result<Vec<(u64, Dataset)>> {
    if data.n() == 0 {
        return Err(Error::config("data", "no rows"));
    }
    Ok(shard_ranges(data.n(), p)?
        .into_iter()
        .map(|r| (r.start as u64, data.slice(r)))
        .collect())
}

/// Runs a master and `p` worker threads in this process, connected by
/// in-process channels. Returns the fit and each worker link's byte ledger
/// as seen by the master.
pub fn fit_local_cluster(data: &Dataset, cfg: &FitConfig, p: usize) -> Result<(FitResult, Vec<ByteLedger>)> {
    let shards = shard_data(data, p)?;
    let mut master_ends = Vec::with_capacity(p);
    let mut ledgers: Vec<Arc<Mutex<ByteLedger>>> = Vec::with_capacity(p);
    let mut worker_ends = Vec::with_capacity(p);
    for _ in 0..p {
        let (m, w) = in_process_pair();
        let (m, ledger) = Counting::new(m);
        master_ends.push(m);
        ledgers.push(ledger);
        worker_ends.push(w);
    }
    let result = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .zip(worker_ends)
            .enumerate()
            .map(|(i, ((start, shard), mut link))| s.spawn(move || run_worker(i as u32 + 1, *start, shard, &mut link)))
            .collect();
        let fit = run_master(cfg, master_ends);
        let mut worker_err = None;
        for h in handles {
            if let Err(e) = h.join().expect("worker thread panicked") {
                worker_err.get_or_insert(e);
            }
        }
        match (fit, worker_err) {
            (Ok(f), None) => Ok(f),
            (Err(e), _) | (Ok(_), Some(e)) => Err(e),
        }
    })?;
    let ledgers = ledgers.into_iter().map(|l| l.lock().unwrap().clone()).collect();
    Ok((result, ledgers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_serial;
    use crate::protocol::{iteration_byte_count, Message};
    use crate::sampler::SuffStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (3.0 * x[i * d]).sin() + x[i * d + 1] * x[i * d + 1] + 0.1 * rng.random::<f64>())
            .collect();
        Dataset::from_rows(d, x, y).unwrap()
    }

    fn cfg(blocks: usize) -> FitConfig {
        FitConfig {
            m: 10,
            draws: 40,
            burn: 10,
            seed: 9,
            reduction_blocks: Some(blocks),
            verify: true,
            ..Default::default()
        }
    }

    fn sigma_bits(f: &FitResult) -> Vec<u64> {
        f.log.iter().map(|l| l.sigma.to_bits()).collect()
    }

    #[test]
    fn shard_sizes_and_round_trip() {
        let d = data(10, 2, 1);
        let shards = shard_data(&d, 3).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.1.n()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let y: Vec<f64> = shards.iter().flat_map(|s| s.1.y().to_vec()).collect();
        assert_eq!(y, d.y());
        let err = shard_data(&d, 11).unwrap_err();
        assert!(err.to_string().contains("more workers than rows"));
    }

    #[test]
    fn distributed_matches_serial() {
        let d = data(600, 3, 2);
        let serial = fit_serial(&d, &cfg(4)).unwrap();
        for p in [1, 2, 4] {
            let (dist, _) = fit_local_cluster(&d, &cfg(4), p).unwrap();
            assert_eq!(sigma_bits(&serial), sigma_bits(&dist), "p = {p}");
            assert_eq!(serial.sample, dist.sample, "p = {p}");
        }
    }

    #[test]
    fn misaligned_blocks_rejected() {
        let d = data(10, 2, 3);
        let err = fit_local_cluster(&d, &cfg(6), 3).unwrap_err();
        assert!(err.to_string().contains("reduction_blocks"), "{err}");
    }

    #[test]
    fn ledger_matches_trace_prediction() {
        let d = data(300, 2, 4);
        for p in [1, 2, 3] {
            let c = FitConfig { m: 6, draws: 1, burn: 0, seed: 5, verify: false, ..Default::default() };
            let serial = {
                let mut b = crate::fit::SerialBackend::new(&d, p).unwrap();
                crate::fit::run_chain(&c, &mut b, true).unwrap()
            };
            let (_, ledgers) = fit_local_cluster(&d, &c, p).unwrap();
            let total: u64 = ledgers.iter().map(ByteLedger::sampler_bytes).sum();
            assert_eq!(total, iteration_byte_count(&serial.traces[0].trees, p), "p = {p}");
        }
    }

    #[test]
    fn reduce_in_rank_order() {
        let parts: Vec<(u32, f64)> = vec![(2, 0.1), (1, 1e16), (3, -1e16)];
        let mut sorted = parts.clone();
        sorted.sort_by_key(|p| p.0);
        let direct = sorted.iter().fold(0.0f64, |a, p| a + p.1);
        assert_eq!(reduce_stats(parts).unwrap().to_bits(), direct.to_bits());
        assert!(reduce_stats(vec![(1, 1.0f64), (3, 2.0)]).is_err());
        assert_eq!(reduce_stats::<SuffStats>(vec![(1, SuffStats::default())]).unwrap(), SuffStats::default());
    }

    #[test]
    fn worker_faults_reach_master() {
        let d = data(20, 2, 6);
        let (mut m, mut w) = in_process_pair();
        let shard = d.clone();
        let h = std::thread::spawn(move || run_worker(1, 0, &shard, &mut w));
        assert!(matches!(m.recv(None).unwrap(), Message::Hello { rank: 1, row_count: 20, .. }));
        m.send(&Message::ShardMeta { n_total: 20, blocks: 1 }).unwrap();
        assert!(matches!(m.recv(None).unwrap(), Message::Summary(_)));
        m.send(&Message::MuValues(vec![1.0])).unwrap();
        assert!(h.join().unwrap().is_err());
        assert!(matches!(m.recv(None).unwrap(), Message::Fault(_)));
    }
}
