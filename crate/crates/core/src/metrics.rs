//! Per-link traffic accounting and run-level result records.
//!
//! Every transmission attempt is counted at admission, before queue-drop or
//! loss resolution, mirroring sender-side wire capture. Stress is the ratio
//! of content-carrying packets to distinct payloads on a link direction;
//! acks, control messages and cross traffic count toward bytes but never
//! toward stress.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::chunking::FileId;
use crate::time::SimTime;
use crate::topology::{Dir, LinkId, LinkKind, NodeId, Topology};

/// Content identity of a packet payload: a file region. Identical content
/// always yields an identical fingerprint, so duplicate detection is free of
/// the header-noise artifacts a byte-level checksum would pick up.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Fingerprint {
    pub file: FileId,
    pub offset: u64,
    pub len: u32,
}

/// Unique per-packet fingerprints for non-content traffic (kept so every
/// payload-bearing packet carries one; they never enter stress accounting).
pub fn opaque_fingerprint(tag: u32, seq: u64) -> Fingerprint {
    Fingerprint {
        file: FileId(u32::MAX - tag),
        offset: seq,
        len: 0,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PacketClass {
    Data,
    Ack,
    Control,
    MulticastData,
    Cbr,
}

impl PacketClass {
    pub fn stress_eligible(self) -> bool {
        matches!(self, PacketClass::Data | PacketClass::MulticastData)
    }
}

/// Counters for one link direction.
#[derive(Default, Debug)]
pub struct DirLedger {
    pub bytes_total: u64,
    pub packets_total: u64,
    pub content_bytes: u64,
    pub eligible_packets: u64,
    pub drops_queue: u64,
    pub drops_loss: u64,
    distinct: HashSet<Fingerprint>,
    log: Option<Vec<Fingerprint>>,
}

impl DirLedger {
    pub fn distinct_payloads(&self) -> u64 {
        self.distinct.len() as u64
    }

    /// Stress for this direction: total content packets over distinct
    /// payloads. Absent when no content traversed.
    pub fn stress(&self) -> Option<f64> {
        if self.eligible_packets == 0 {
            None
        } else {
            Some(self.eligible_packets as f64 / self.distinct.len() as f64)
        }
    }

    pub fn drops(&self) -> u64 {
        self.drops_queue + self.drops_loss
    }

    /// Full fingerprint log, present only when logging was enabled.
    pub fn fingerprint_log(&self) -> Option<&[Fingerprint]> {
        self.log.as_deref()
    }
}

/// Per-(link, direction) accounting for a whole run.
pub struct LedgerBook {
    dirs: Vec<[DirLedger; 2]>,
}

impl LedgerBook {
    pub fn new(links: usize, keep_log: bool) -> Self {
        let mut dirs = Vec::with_capacity(links);
        for _ in 0..links {
            let mk = || DirLedger {
                log: keep_log.then(Vec::new),
                ..DirLedger::default()
            };
            dirs.push([mk(), mk()]);
        }
        LedgerBook { dirs }
    }

    pub fn dir(&self, link: LinkId, dir: Dir) -> &DirLedger {
        &self.dirs[link.0 as usize][dir.index()]
    }

    /// Records one transmission attempt at admission time.
    pub fn record_admission(
        &mut self,
        link: LinkId,
        dir: Dir,
        class: PacketClass,
        size: u64,
        payload_bytes: u32,
        fingerprint: Option<Fingerprint>,
    ) {
        let d = &mut self.dirs[link.0 as usize][dir.index()];
        d.bytes_total += size;
        d.packets_total += 1;
        if class.stress_eligible() && payload_bytes > 0 {
            let fp = fingerprint.expect("content packet carries a fingerprint");
            d.content_bytes += payload_bytes as u64;
            d.eligible_packets += 1;
            d.distinct.insert(fp);
            if let Some(log) = &mut d.log {
                log.push(fp);
            }
        }
    }

    pub fn record_queue_drop(&mut self, link: LinkId, dir: Dir) {
        self.dirs[link.0 as usize][dir.index()].drops_queue += 1;
    }

    pub fn record_loss_drop(&mut self, link: LinkId, dir: Dir) {
        self.dirs[link.0 as usize][dir.index()].drops_loss += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (LinkId, Dir, &DirLedger)> {
        self.dirs.iter().enumerate().flat_map(|(i, pair)| {
            [
                (LinkId(i as u32), Dir::Forward, &pair[0]),
                (LinkId(i as u32), Dir::Reverse, &pair[1]),
            ]
        })
    }

    /// Total content bytes over links of one kind, both directions.
    pub fn content_bytes_by_kind(&self, topo: &Topology, kind: LinkKind) -> u64 {
        self.iter()
            .filter(|(l, _, _)| topo.link(*l).kind == kind)
            .map(|(_, _, d)| d.content_bytes)
            .sum()
    }

    /// Mean stress over all directions of links of one kind where stress is
    /// defined. Absent if no such direction carried content.
    pub fn mean_stress_by_kind(&self, topo: &Topology, kind: LinkKind) -> Option<f64> {
        let values: Vec<f64> = self
            .iter()
            .filter(|(l, _, _)| topo.link(*l).kind == kind)
            .filter_map(|(_, _, d)| d.stress())
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DownloadStatus {
    Completed { finish: SimTime },
    Failed,
}

/// Outcome of one client's download.
#[derive(Clone, Debug)]
pub struct DownloadRecord {
    pub client: NodeId,
    pub client_name: String,
    pub start: SimTime,
    pub status: DownloadStatus,
    pub bytes_received: u64,
    pub retransmissions: u64,
}

impl DownloadRecord {
    pub fn completion_secs(&self) -> Option<f64> {
        match self.status {
            DownloadStatus::Completed { finish } => Some((finish - self.start).as_secs_f64()),
            DownloadStatus::Failed => None,
        }
    }

    pub fn finish(&self) -> Option<SimTime> {
        match self.status {
            DownloadStatus::Completed { finish } => Some(finish),
            DownloadStatus::Failed => None,
        }
    }
}

/// Completion CDF as a nondecreasing step series. The fraction denominator is
/// the total client count, so failed clients cap the curve below 1.0.
pub fn completion_cdf(records: &[DownloadRecord]) -> Vec<(f64, f64)> {
    let total = records.len();
    let mut finishes: Vec<f64> = records
        .iter()
        .filter_map(|r| r.finish().map(|f| f.as_secs_f64()))
        .collect();
    finishes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    finishes
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, (i + 1) as f64 / total as f64))
        .collect()
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes `links.csv`, `completions.csv` and `cdf.csv` under `dir`.
pub fn export_csv(
    book: &LedgerBook,
    topo: &Topology,
    records: &[DownloadRecord],
    dir: &Path,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;

    let mut links = String::from("link,direction,bytes,packets_total,packets_unique,stress,drops\n");
    let mut rows: Vec<(String, String, &DirLedger)> = book
        .iter()
        .filter(|(_, _, d)| d.packets_total > 0)
        .map(|(l, dirn, d)| (topo.link_name(l), topo.dir_name(l, dirn), d))
        .collect();
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    for (link, direction, d) in rows {
        let stress = d.stress().map(fmt6).unwrap_or_default();
        writeln!(
            links,
            "{link},{direction},{},{},{},{stress},{}",
            d.bytes_total,
            d.packets_total,
            d.distinct_payloads(),
            d.drops()
        )
        .unwrap();
    }
    fs::write(dir.join("links.csv"), links)?;

    let mut completions = String::from("client,start_s,finish_s,bytes,retx\n");
    let mut sorted: Vec<&DownloadRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.client_name.cmp(&b.client_name));
    for r in sorted {
        if let Some(finish) = r.finish() {
            writeln!(
                completions,
                "{},{},{},{},{}",
                r.client_name,
                fmt6(r.start.as_secs_f64()),
                fmt6(finish.as_secs_f64()),
                r.bytes_received,
                r.retransmissions
            )
            .unwrap();
        }
    }
    fs::write(dir.join("completions.csv"), completions)?;

    let mut cdf = String::from("time_s,fraction\n");
    for (t, f) in completion_cdf(records) {
        writeln!(cdf, "{},{}", fmt6(t), fmt6(f)).unwrap();
    }
    fs::write(dir.join("cdf.csv"), cdf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_paper_topology;

    fn fp(offset: u64) -> Option<Fingerprint> {
        Some(Fingerprint {
            file: FileId(0),
            offset,
            len: 1250,
        })
    }

    #[test]
    fn data_packets_enter_stress_accounting() {
        let mut book = LedgerBook::new(1, false);
        book.record_admission(LinkId(0), Dir::Forward, PacketClass::Data, 1300, 1250, fp(0));
        let d = book.dir(LinkId(0), Dir::Forward);
        assert_eq!(d.bytes_total, 1300);
        assert_eq!(d.packets_total, 1);
        assert_eq!(d.content_bytes, 1250);
        assert_eq!(d.distinct_payloads(), 1);
    }

    #[test]
    fn acks_count_bytes_only() {
        let mut book = LedgerBook::new(1, false);
        book.record_admission(LinkId(0), Dir::Forward, PacketClass::Ack, 64, 0, None);
        let d = book.dir(LinkId(0), Dir::Forward);
        assert_eq!(d.bytes_total, 64);
        assert_eq!(d.eligible_packets, 0);
        assert_eq!(d.stress(), None);
    }

    #[test]
    fn repeated_payload_counts_once_in_distinct() {
        let mut book = LedgerBook::new(1, false);
        book.record_admission(LinkId(0), Dir::Forward, PacketClass::Data, 1300, 1250, fp(0));
        book.record_admission(LinkId(0), Dir::Forward, PacketClass::Data, 1300, 1250, fp(0));
        let d = book.dir(LinkId(0), Dir::Forward);
        assert_eq!(d.packets_total, 2);
        assert_eq!(d.distinct_payloads(), 1);
        assert_eq!(d.stress(), Some(2.0));
    }

    #[test]
    fn stress_matches_ratio_definition() {
        let mut book = LedgerBook::new(1, false);
        for i in 0..24u64 {
            book.record_admission(
                LinkId(0),
                Dir::Reverse,
                PacketClass::Data,
                1300,
                1250,
                fp(i % 2),
            );
        }
        assert_eq!(book.dir(LinkId(0), Dir::Reverse).stress(), Some(12.0));
    }

    #[test]
    fn cbr_and_control_never_enter_stress() {
        let mut book = LedgerBook::new(1, false);
        book.record_admission(
            LinkId(0),
            Dir::Forward,
            PacketClass::Cbr,
            1000,
            950,
            Some(opaque_fingerprint(1, 7)),
        );
        book.record_admission(LinkId(0), Dir::Forward, PacketClass::Control, 64, 0, None);
        assert_eq!(book.dir(LinkId(0), Dir::Forward).stress(), None);
        assert_eq!(book.dir(LinkId(0), Dir::Forward).bytes_total, 1064);
    }

    #[test]
    fn single_client_cdf_is_one_step() {
        let records = vec![DownloadRecord {
            client: NodeId(0),
            client_name: "node0".into(),
            start: SimTime::ZERO,
            status: DownloadStatus::Completed {
                finish: SimTime::from_secs(3),
            },
            bytes_received: 10,
            retransmissions: 0,
        }];
        assert_eq!(completion_cdf(&records), vec![(3.0, 1.0)]);
    }

    #[test]
    fn failed_clients_cap_the_cdf() {
        let mk = |name: &str, status| DownloadRecord {
            client: NodeId(0),
            client_name: name.into(),
            start: SimTime::ZERO,
            status,
            bytes_received: 0,
            retransmissions: 0,
        };
        let records = vec![
            mk("a", DownloadStatus::Completed { finish: SimTime::from_secs(1) }),
            mk("b", DownloadStatus::Failed),
        ];
        assert_eq!(completion_cdf(&records), vec![(1.0, 0.5)]);
    }

    #[test]
    fn empty_run_exports_headers_only() {
        let topo = build_paper_topology();
        let book = LedgerBook::new(topo.links().len(), false);
        let dir = tempfile::tempdir().unwrap();
        export_csv(&book, &topo, &[], dir.path()).unwrap();
        let links = std::fs::read_to_string(dir.path().join("links.csv")).unwrap();
        assert_eq!(links, "link,direction,bytes,packets_total,packets_unique,stress,drops\n");
        let cdf = std::fs::read_to_string(dir.path().join("cdf.csv")).unwrap();
        assert_eq!(cdf, "time_s,fraction\n");
    }
}
