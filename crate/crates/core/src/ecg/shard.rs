use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::exec::Exec;
use crate::optim::Dataset;
use crate::tensor::{Scalar, SeededRng};

use super::{prepare_window, EcgError, EcgRecord, RhythmLabel, NUM_CLASSES, WINDOW_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShardId {
    Client(usize),
    Test,
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShardId::Client(k) => write!(f, "c{k}"),
            ShardId::Test => f.write_str("test"),
        }
    }
}

impl FromStr for ShardId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "test" {
            return Ok(ShardId::Test);
        }
        s.strip_prefix('c')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse().ok())
            .map(ShardId::Client)
            .ok_or_else(|| format!("unknown shard {s:?} (expected c<k> or test)"))
    }
}

/// Fixed-length windows held by one client, or the test set.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub id: ShardId,
    pub record_ids: Vec<String>,
    pub windows: Vec<Vec<f32>>,
    pub labels: Vec<RhythmLabel>,
}

impl Shard {
    pub fn new(id: ShardId) -> Self {
        Self {
            id,
            record_ids: Vec::new(),
            windows: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, record_id: String, window: Vec<f32>, label: RhythmLabel) {
        assert_eq!(window.len(), WINDOW_LEN, "window length");
        self.record_ids.push(record_id);
        self.windows.push(window);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Record counts per class, indexed by label code.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for l in &self.labels {
            h[l.code()] += 1;
        }
        h
    }

    pub fn to_dataset<T: Scalar>(&self) -> Dataset<T> {
        Dataset::from_rows(
            WINDOW_LEN,
            self.windows.iter().zip(&self.labels).map(|(w, l)| (w.as_slice(), l.code())),
        )
        .expect("shard windows have the window length")
    }

    /// Seeded hold-out split: `round(fraction·len)` records (at most `len − 1`)
    /// go to the second shard. Both halves keep the original record order.
    pub fn split_holdout(&self, fraction: f64, rng: &mut SeededRng) -> (Shard, Shard) {
        let n = self.len();
        let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let held: HashSet<usize> = order[..n_val].iter().copied().collect();
        let mut train = Shard::new(self.id);
        let mut val = Shard::new(self.id);
        for i in 0..n {
            let dst = if held.contains(&i) { &mut val } else { &mut train };
            dst.push(self.record_ids[i].clone(), self.windows[i].clone(), self.labels[i]);
        }
        (train, val)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub clients: Vec<Shard>,
    pub test: Shard,
}

impl Partition {
    pub fn histograms(&self) -> Vec<(ShardId, [usize; NUM_CLASSES])> {
        self.clients
            .iter()
            .chain(std::iter::once(&self.test))
            .map(|s| (s.id, s.histogram()))
            .collect()
    }
}

/// Windows every record and places it in its assigned shard.
///
/// Records keep their input order within a shard. `num_clients` fixes the
/// number of client shards; some may be empty.
pub fn partition_shards(
    records: &[EcgRecord],
    assignment: &[(String, ShardId)],
    num_clients: usize,
    exec: Exec,
) -> Result<Partition, EcgError> {
    let mut target: HashMap<&str, ShardId> = HashMap::new();
    for (id, shard) in assignment {
        if target.insert(id.as_str(), *shard).is_some() {
            return Err(EcgError::Partition(format!("record {id} assigned more than once")));
        }
        if let ShardId::Client(k) = shard {
            if *k >= num_clients {
                return Err(EcgError::Partition(format!("record {id} assigned to c{k} but only {num_clients} clients")));
            }
        }
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(EcgError::Partition(format!("record {} appears more than once", r.id)));
        }
        if !target.contains_key(r.id.as_str()) {
            return Err(EcgError::Partition(format!("record {} is not assigned to a shard", r.id)));
        }
    }
    let windows = exec.map(records, |_, r| prepare_window(r));
    let mut clients: Vec<Shard> = (0..num_clients).map(|k| Shard::new(ShardId::Client(k))).collect();
    let mut test = Shard::new(ShardId::Test);
    for (r, w) in records.iter().zip(windows) {
        let w = w?;
        let dst = match target[r.id.as_str()] {
            ShardId::Client(k) => &mut clients[k],
            ShardId::Test => &mut test,
        };
        dst.push(r.id.clone(), w, r.label);
    }
    Ok(Partition { clients, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: RhythmLabel) -> EcgRecord {
        EcgRecord {
            id: id.into(),
            fs: 200,
            samples: vec![0.5; 100],
            label,
        }
    }

    #[test]
    fn shard_ids_parse() {
        assert_eq!("c0".parse(), Ok(ShardId::Client(0)));
        assert_eq!("c7".parse(), Ok(ShardId::Client(7)));
        assert_eq!("test".parse(), Ok(ShardId::Test));
        for bad in ["c", "x1", "c-1", "C0", ""] {
            assert!(bad.parse::<ShardId>().is_err(), "{bad}");
        }
        assert_eq!(ShardId::Client(3).to_string(), "c3");
    }

    #[test]
    fn declared_sizes() {
        let mut records = Vec::new();
        let mut assignment = Vec::new();
        for k in 0..8 {
            for i in 0..10 {
                let id = format!("c{k}_{i}");
                records.push(rec(&id, RhythmLabel::ALL[i % 4]));
                assignment.push((id, ShardId::Client(k)));
            }
        }
        for i in 0..7 {
            let id = format!("t{i}");
            records.push(rec(&id, RhythmLabel::Sinus));
            assignment.push((id, ShardId::Test));
        }
        let p = partition_shards(&records, &assignment, 8, Exec::Sequential).unwrap();
        assert!(p.clients.iter().all(|s| s.len() == 10));
        assert_eq!(p.test.len(), 7);
        for (id, h) in p.histograms() {
            let size = if id == ShardId::Test { 7 } else { 10 };
            assert_eq!(h.iter().sum::<usize>(), size);
        }
        assert!(p.clients[0].windows.iter().all(|w| w.len() == WINDOW_LEN));
    }

    #[test]
    fn single_record() {
        let p = partition_shards(&[rec("a", RhythmLabel::Afib)], &[("a".into(), ShardId::Client(2))], 8, Exec::Sequential).unwrap();
        assert_eq!(p.clients[2].len(), 1);
        assert_eq!(p.clients.iter().map(Shard::len).sum::<usize>(), 1);
        assert!(p.test.is_empty());
    }

    #[test]
    fn partition_errors() {
        let r = [rec("a", RhythmLabel::Afib)];
        assert!(partition_shards(&r, &[], 8, Exec::Sequential).is_err());
        let twice = [("a".to_string(), ShardId::Client(0)), ("a".to_string(), ShardId::Test)];
        assert!(partition_shards(&r, &twice, 8, Exec::Sequential).is_err());
        assert!(partition_shards(&r, &[("a".into(), ShardId::Client(8))], 8, Exec::Sequential).is_err());
        let dup = [rec("a", RhythmLabel::Afib), rec("a", RhythmLabel::Sinus)];
        assert!(partition_shards(&dup, &[("a".into(), ShardId::Test)], 8, Exec::Sequential).is_err());
    }

    #[test]
    fn holdout_split_is_a_seeded_partition() {
        let mut s = Shard::new(ShardId::Client(0));
        for i in 0..50 {
            s.push(format!("r{i}"), vec![i as f32; WINDOW_LEN], RhythmLabel::ALL[i % 4]);
        }
        let (a, b) = s.split_holdout(0.1, &mut SeededRng::new(3));
        assert_eq!((a.len(), b.len()), (45, 5));
        let mut all: Vec<_> = a.record_ids.iter().chain(&b.record_ids).cloned().collect();
        all.sort();
        let mut orig = s.record_ids.clone();
        orig.sort();
        assert_eq!(all, orig);
        let (a2, b2) = s.split_holdout(0.1, &mut SeededRng::new(3));
        assert_eq!((a, b), (a2, b2));
    }
}
